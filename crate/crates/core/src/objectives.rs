//! Training targets and losses: displacement, raw velocity, and stabilized
//! velocity with its per-sample normalization factor, plus the per-time
//! target-magnitude profiles `S(t)` and their cumulative shares `C(t)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    displacement_target, sample_state, velocity_target_clamped, BridgeSample, EndpointPair,
    NoiseScale, DEFAULT_T_CLAMP,
};
use crate::error::{BridgeError, Result};
use crate::numerics::{compensated_sum, RngStream, Tensor};

/// Relative floor on `||x1 - x0||^2`, scaled by `D`.
pub const DISTANCE_FLOOR_PER_DIM: f64 = 1e-8;

/// Upper limit used to normalize cumulative profiles.
pub const PROFILE_UPPER: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Displacement,
    Velocity,
    #[default]
    StabilizedVelocity,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [
        ObjectiveKind::Displacement,
        ObjectiveKind::Velocity,
        ObjectiveKind::StabilizedVelocity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Displacement => "displacement",
            ObjectiveKind::Velocity => "velocity",
            ObjectiveKind::StabilizedVelocity => "stabilized",
        }
    }

    /// Whether a network trained on this objective outputs displacement
    /// rather than velocity.
    pub fn predicts_displacement(self) -> bool {
        self == ObjectiveKind::Displacement
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "displacement" => Ok(ObjectiveKind::Displacement),
            "velocity" => Ok(ObjectiveKind::Velocity),
            "stabilized" | "stabilized_velocity" => Ok(ObjectiveKind::StabilizedVelocity),
            other => Err(BridgeError::Config(format!("unknown objective '{other}'"))),
        }
    }
}

/// `alpha^2 = E||u_t||^2 / ||x1 - x0||^2`, always at least 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFactor {
    alpha_squared: f64,
}

impl NormalizationFactor {
    pub const ONE: NormalizationFactor = NormalizationFactor { alpha_squared: 1.0 };

    pub fn alpha_squared(self) -> f64 {
        self.alpha_squared
    }

    pub fn alpha(self) -> f64 {
        self.alpha_squared.sqrt()
    }
}

fn floored_distance(squared_distance: f64, dim: usize) -> f64 {
    squared_distance.max(DISTANCE_FLOOR_PER_DIM * dim as f64)
}

fn alpha_from_parts(squared_distance: f64, dim: usize, t: f64, s: NoiseScale) -> NormalizationFactor {
    if dim == 0 || t == 0.0 || s.value() == 0.0 {
        return NormalizationFactor::ONE;
    }
    let denom = (1.0 - t) * floored_distance(squared_distance, dim);
    NormalizationFactor {
        alpha_squared: 1.0 + s.value().powi(2) * t * dim as f64 / denom,
    }
}

/// `alpha^2 = 1 + s^2 t D / ((1 - t) max(||x1 - x0||^2, floor))`.
pub fn alpha_factor(pair: &EndpointPair, t: f64, s: NoiseScale) -> Result<NormalizationFactor> {
    if !(0.0..1.0).contains(&t) {
        return Err(BridgeError::Domain(format!("alpha needs t in [0, 1), got {t}")));
    }
    Ok(alpha_from_parts(pair.squared_distance(), pair.dim(), t, s))
}

/// Regression target for one bridge sample under a given objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTarget {
    pub kind: ObjectiveKind,
    /// Raw target: displacement for the displacement objective, velocity otherwise.
    pub target: Tensor,
    pub alpha: NormalizationFactor,
}

impl TrainingTarget {
    /// Builds the target, rejecting times inside the clamped region.
    pub fn new(
        kind: ObjectiveKind,
        pair: &EndpointPair,
        sample: &BridgeSample,
        s: NoiseScale,
        t_clamp: f64,
    ) -> Result<Self> {
        let (target, alpha) = match kind {
            ObjectiveKind::Displacement => {
                (displacement_target(pair, sample)?, NormalizationFactor::ONE)
            }
            ObjectiveKind::Velocity => (
                velocity_target_clamped(pair, sample, t_clamp)?,
                NormalizationFactor::ONE,
            ),
            ObjectiveKind::StabilizedVelocity => (
                velocity_target_clamped(pair, sample, t_clamp)?,
                alpha_factor(pair, sample.t, s)?,
            ),
        };
        Ok(Self {
            kind,
            target,
            alpha,
        })
    }

    /// Loss weight `1 / alpha^2`; only the residual is rescaled.
    pub fn weight(&self) -> f64 {
        1.0 / self.alpha.alpha_squared()
    }

    pub fn loss(&self, prediction: &Tensor) -> Result<f64> {
        Ok(self.weight() * prediction.squared_distance(&self.target)?)
    }

    pub fn gradient(&self, prediction: &Tensor) -> Result<Tensor> {
        prediction.lincomb(2.0 * self.weight(), &self.target, -2.0 * self.weight())
    }
}

/// `u_t / alpha`.
pub fn stabilized_target(
    pair: &EndpointPair,
    sample: &BridgeSample,
    s: NoiseScale,
) -> Result<Tensor> {
    let u = velocity_target_clamped(pair, sample, DEFAULT_T_CLAMP)?;
    let alpha = alpha_factor(pair, sample.t, s)?;
    Ok(u.scale(1.0 / alpha.alpha()))
}

/// Per-sample loss of `prediction` under `kind`.
pub fn loss(
    kind: ObjectiveKind,
    prediction: &Tensor,
    pair: &EndpointPair,
    sample: &BridgeSample,
    s: NoiseScale,
) -> Result<f64> {
    TrainingTarget::new(kind, pair, sample, s, DEFAULT_T_CLAMP)?.loss(prediction)
}

/// Gradient of [`loss`] with respect to `prediction`.
pub fn loss_gradient(
    kind: ObjectiveKind,
    prediction: &Tensor,
    pair: &EndpointPair,
    sample: &BridgeSample,
    s: NoiseScale,
) -> Result<Tensor> {
    TrainingTarget::new(kind, pair, sample, s, DEFAULT_T_CLAMP)?.gradient(prediction)
}

/// One row of a target profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

/// `n + 1` evenly spaced points `i * 0.999 / n`.
pub fn profile_grid(intervals: usize) -> Vec<f64> {
    let n = intervals.max(1);
    (0..=n)
        .map(|i| {
            if i == n {
                PROFILE_UPPER
            } else {
                i as f64 * PROFILE_UPPER / n as f64
            }
        })
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(BridgeError::Domain("empty time grid".into()));
    }
    if grid[0] != 0.0 || (grid[grid.len() - 1] - PROFILE_UPPER).abs() > 1e-12 {
        return Err(BridgeError::Domain(format!(
            "profile grid must span [0, {PROFILE_UPPER}]"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BridgeError::Domain("profile grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Closed-form `E||tau_t||^2` for an arbitrary pair with the given
/// squared distance and dimension.
pub fn expected_target_sqnorm(
    kind: ObjectiveKind,
    squared_distance: f64,
    dim: usize,
    t: f64,
    s: NoiseScale,
) -> f64 {
    let noise = s.value().powi(2) * dim as f64;
    let velocity = squared_distance + noise * t / (1.0 - t);
    match kind {
        ObjectiveKind::Displacement => {
            (1.0 - t).powi(2) * squared_distance + noise * t * (1.0 - t)
        }
        ObjectiveKind::Velocity => velocity,
        ObjectiveKind::StabilizedVelocity => {
            velocity / alpha_from_parts(squared_distance, dim, t, s).alpha_squared()
        }
    }
}

/// Attaches trapezoidal cumulative shares to `(t, S)` values.
pub fn cumulative_shares(grid: &[f64], values: &[f64]) -> Vec<ProfilePoint> {
    let mut cumulative = Vec::with_capacity(grid.len());
    let mut acc = crate::numerics::CompensatedSum::new();
    cumulative.push(0.0);
    for i in 1..grid.len() {
        acc.add(0.5 * (grid[i] - grid[i - 1]) * (values[i] + values[i - 1]));
        cumulative.push(acc.value());
    }
    let total = *cumulative.last().unwrap_or(&0.0);
    grid.iter()
        .zip(values)
        .zip(cumulative)
        .map(|((&t, &s), c)| ProfilePoint {
            t,
            s,
            c: if total > 0.0 { c / total } else { 0.0 },
        })
        .collect()
}

/// Profile from the closed-form expectations.
pub fn target_profile_closed_form(
    kind: ObjectiveKind,
    pair: &EndpointPair,
    s: NoiseScale,
    grid: &[f64],
) -> Result<Vec<ProfilePoint>> {
    check_grid(grid)?;
    let (dist, dim) = (pair.squared_distance(), pair.dim());
    let values: Vec<f64> = grid
        .iter()
        .map(|&t| expected_target_sqnorm(kind, dist, dim, t, s))
        .collect();
    Ok(cumulative_shares(grid, &values))
}

/// Monte-Carlo mean and standard error of `||tau_t||^2` at one time.
pub fn target_sqnorm_moments(
    kind: ObjectiveKind,
    pair: &EndpointPair,
    s: NoiseScale,
    t: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(BridgeError::Domain("need at least two Monte-Carlo samples".into()));
    }
    let shape = pair.shape().to_vec();
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let sample = sample_state(pair, t, rng.gaussian(&shape), s)?;
        let target = TrainingTarget::new(kind, pair, &sample, s, 0.0)?;
        values.push(target.weight() * target.target.squared_norm());
    }
    let n = samples as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Profile with `S(t)` estimated by Monte-Carlo over the noise draw.
///
/// Grid point `i` draws from `rng.fork(i)`, so the result does not depend on
/// evaluation order.
pub fn target_profile_monte_carlo(
    kind: ObjectiveKind,
    pair: &EndpointPair,
    s: NoiseScale,
    grid: &[f64],
    samples: usize,
    rng: &RngStream,
) -> Result<Vec<ProfilePoint>> {
    check_grid(grid)?;
    let values = grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut stream = rng.fork(i as u64);
            target_sqnorm_moments(kind, pair, s, t, samples, &mut stream).map(|(m, _)| m)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(cumulative_shares(grid, &values))
}

/// Closed form when `mc_samples == 0`, Monte-Carlo otherwise.
pub fn target_profile(
    kind: ObjectiveKind,
    pair: &EndpointPair,
    s: NoiseScale,
    grid: &[f64],
    mc_samples: usize,
    rng: &RngStream,
) -> Result<Vec<ProfilePoint>> {
    if mc_samples == 0 {
        target_profile_closed_form(kind, pair, s, grid)
    } else {
        target_profile_monte_carlo(kind, pair, s, grid, mc_samples, rng)
    }
}

/// Linear interpolation of `C` at time `t` on a computed profile.
pub fn cumulative_at(profile: &[ProfilePoint], t: f64) -> Option<f64> {
    let idx = profile.iter().position(|p| p.t >= t)?;
    if idx == 0 || profile[idx].t == t {
        return Some(profile[idx].c);
    }
    let (a, b) = (profile[idx - 1], profile[idx]);
    Some(a.c + (b.c - a.c) * (t - a.t) / (b.t - a.t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    fn pair(a: &[f64], b: &[f64]) -> EndpointPair {
        EndpointPair::new(tensor(a), tensor(b)).unwrap()
    }

    fn s(v: f64) -> NoiseScale {
        NoiseScale::new(v).unwrap()
    }

    fn midpoint_sample() -> (EndpointPair, BridgeSample) {
        let p = pair(&[0.0], &[1.0]);
        let sample = sample_state(&p, 0.5, tensor(&[0.2]), NoiseScale::UNIT).unwrap();
        (p, sample)
    }

    #[test]
    fn alpha_examples() {
        let p = pair(&[0.0], &[1.0]);
        for sv in [0.0, 1.0, 3.0] {
            assert_eq!(alpha_factor(&p, 0.0, s(sv)).unwrap().alpha_squared(), 1.0);
        }
        let a = alpha_factor(&p, 0.5, NoiseScale::UNIT).unwrap();
        assert!((a.alpha_squared() - 2.0).abs() < 1e-15);
        assert!((a.alpha() - 2f64.sqrt()).abs() < 1e-15);
        let q = pair(&[0.0; 4], &[1.0; 4]);
        assert!((alpha_factor(&q, 0.5, s(2.0)).unwrap().alpha_squared() - 5.0).abs() < 1e-12);
        assert!(alpha_factor(&p, 1.0, NoiseScale::UNIT).is_err());
    }

    #[test]
    fn identical_endpoints_stay_finite() {
        let p = pair(&[0.3, 0.3], &[0.3, 0.3]);
        let a = alpha_factor(&p, 0.5, NoiseScale::UNIT).unwrap();
        assert!(a.alpha_squared().is_finite());
        assert!((a.alpha_squared() - (1.0 + 2.0 / 2e-8)).abs() / a.alpha_squared() < 1e-12);
    }

    #[test]
    fn stabilized_target_examples() {
        let (p, sample) = midpoint_sample();
        let v = stabilized_target(&p, &sample, NoiseScale::UNIT).unwrap();
        assert!((v.data()[0] - 0.8 / 2f64.sqrt()).abs() < 1e-12);

        let q = pair(&[0.5, 1.0], &[2.0, -1.0]);
        let at_zero = sample_state(&q, 0.0, tensor(&[0.7, 0.1]), NoiseScale::UNIT).unwrap();
        assert_eq!(
            stabilized_target(&q, &at_zero, NoiseScale::UNIT).unwrap(),
            crate::bridge::velocity_target(&q, &at_zero).unwrap()
        );
        let flat = sample_state(&q, 0.6, tensor(&[0.7, 0.1]), s(0.0)).unwrap();
        let got = stabilized_target(&q, &flat, s(0.0)).unwrap();
        let want = q.x1().sub(q.x0()).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let (p, sample) = midpoint_sample();
        let zero = tensor(&[0.0]);
        let stab = loss(ObjectiveKind::StabilizedVelocity, &zero, &p, &sample, NoiseScale::UNIT)
            .unwrap();
        assert!((stab - 0.32).abs() < 1e-12);
        let vel = loss(ObjectiveKind::Velocity, &zero, &p, &sample, NoiseScale::UNIT).unwrap();
        assert!((stab - vel / 2.0).abs() < 1e-12);

        for kind in ObjectiveKind::ALL {
            let target = TrainingTarget::new(kind, &p, &sample, NoiseScale::UNIT, DEFAULT_T_CLAMP)
                .unwrap();
            assert_eq!(target.loss(&target.target).unwrap(), 0.0);
            assert_eq!(target.gradient(&target.target).unwrap().data(), &[0.0]);
        }
        assert!(loss(ObjectiveKind::Velocity, &tensor(&[0.0, 1.0]), &p, &sample, NoiseScale::UNIT)
            .is_err());
    }

    #[test]
    fn stabilized_gradient_is_scaled_velocity_gradient() {
        let (p, sample) = midpoint_sample();
        let pred = tensor(&[0.3]);
        let gs = loss_gradient(ObjectiveKind::StabilizedVelocity, &pred, &p, &sample, NoiseScale::UNIT)
            .unwrap();
        let gv = loss_gradient(ObjectiveKind::Velocity, &pred, &p, &sample, NoiseScale::UNIT).unwrap();
        assert!((gs.data()[0] - gv.data()[0] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let mut rng = RngStream::new(8, 8);
        let p = EndpointPair::new(rng.gaussian(&[8]), rng.gaussian(&[8])).unwrap();
        let sample = sample_state(&p, 0.7, rng.gaussian(&[8]), s(1.3)).unwrap();
        let pred = rng.gaussian(&[8]);
        let h = 1e-5;
        for kind in ObjectiveKind::ALL {
            let grad = loss_gradient(kind, &pred, &p, &sample, s(1.3)).unwrap();
            for i in 0..8 {
                let mut plus = pred.clone();
                plus.data_mut()[i] += h;
                let mut minus = pred.clone();
                minus.data_mut()[i] -= h;
                let fd = (loss(kind, &plus, &p, &sample, s(1.3)).unwrap()
                    - loss(kind, &minus, &p, &sample, s(1.3)).unwrap())
                    / (2.0 * h);
                let g = grad.data()[i];
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{kind} {i}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn closed_form_profiles_reproduce_known_integrals() {
        let p = pair(&[0.0], &[1.0]);
        let grid = profile_grid(9990);
        let vel = target_profile_closed_form(ObjectiveKind::Velocity, &p, NoiseScale::UNIT, &grid)
            .unwrap();
        let c = cumulative_at(&vel, 0.9).unwrap();
        assert!((c - 10f64.ln() / 1000f64.ln()).abs() < 0.005, "velocity C(0.9) = {c}");
        let disp =
            target_profile_closed_form(ObjectiveKind::Displacement, &p, NoiseScale::UNIT, &grid)
                .unwrap();
        let c = cumulative_at(&disp, 0.5).unwrap();
        assert!((c - 0.375 / (0.999 - 0.999 * 0.999 / 2.0)).abs() < 1e-6, "displacement C(0.5) = {c}");
        let stab = target_profile_closed_form(
            ObjectiveKind::StabilizedVelocity,
            &p,
            NoiseScale::UNIT,
            &grid,
        )
        .unwrap();
        for pt in &stab {
            assert!((pt.s - 1.0).abs() < 1e-12);
            assert!((pt.c - pt.t / 0.999).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_grid_validation() {
        let p = pair(&[0.0], &[1.0]);
        let rng = RngStream::new(0, 0);
        assert!(target_profile(ObjectiveKind::Velocity, &p, NoiseScale::UNIT, &[], 0, &rng).is_err());
        assert!(target_profile(ObjectiveKind::Velocity, &p, NoiseScale::UNIT, &[0.0, 0.5], 0, &rng)
            .is_err());
        assert!(target_profile(
            ObjectiveKind::Velocity,
            &p,
            NoiseScale::UNIT,
            &[0.0, 0.6, 0.5, 0.999],
            0,
            &rng
        )
        .is_err());
    }

    #[test]
    fn monte_carlo_profile_tracks_closed_form() {
        let p = pair(&[0.0, 1.0], &[1.0, -1.0]);
        let grid = profile_grid(20);
        let rng = RngStream::new(2, 0);
        for kind in ObjectiveKind::ALL {
            let mc = target_profile(kind, &p, NoiseScale::UNIT, &grid, 4000, &rng).unwrap();
            let cf = target_profile(kind, &p, NoiseScale::UNIT, &grid, 0, &rng).unwrap();
            for (a, b) in mc.iter().zip(&cf) {
                if a.t < 0.99 {
                    assert!((a.s - b.s).abs() <= 0.1 * b.s, "{kind} t={} {} vs {}", a.t, a.s, b.s);
                }
            }
            let again = target_profile(kind, &p, NoiseScale::UNIT, &grid, 4000, &rng).unwrap();
            assert_eq!(mc, again);
        }
    }

    proptest! {
        #[test]
        fn alpha_is_monotone_in_t_and_s(
            dist in 0.01f64..10.0,
            dim in 1usize..64,
            t_a in 0.0f64..0.99,
            t_b in 0.0f64..0.99,
            s_a in 0.0f64..4.0,
            s_b in 0.0f64..4.0,
        ) {
            let (t_lo, t_hi) = if t_a <= t_b { (t_a, t_b) } else { (t_b, t_a) };
            let (s_lo, s_hi) = if s_a <= s_b { (s_a, s_b) } else { (s_b, s_a) };
            let a = |t, sv| alpha_from_parts(dist, dim, t, s(sv)).alpha_squared();
            prop_assert!(a(t_lo, s_lo) >= 1.0);
            prop_assert!(a(t_lo, s_hi) <= a(t_hi, s_hi));
            prop_assert!(a(t_hi, s_lo) <= a(t_hi, s_hi));
        }

        #[test]
        fn raw_velocity_diverges_and_displacement_vanishes(
            dist in 0.01f64..4.0,
            dim in 1usize..16,
            sv in 0.1f64..3.0,
            t in 0.5f64..0.999,
        ) {
            let noise = s(sv);
            let vel0 = expected_target_sqnorm(ObjectiveKind::Velocity, dist, dim, 0.0, noise);
            let vel = expected_target_sqnorm(ObjectiveKind::Velocity, dist, dim, t, noise);
            if dim as f64 * sv * sv >= dist {
                prop_assert!(vel / vel0 >= 0.5 / (1.0 - t));
            }
            let disp = expected_target_sqnorm(ObjectiveKind::Displacement, dist, dim, t, noise);
            prop_assert!(disp <= (1.0 - t) * (dist + sv * sv * dim as f64) * (1.0 + 1e-12));
        }

        #[test]
        fn losses_are_non_negative(pred in -5.0f64..5.0, e in -3.0f64..3.0, t in 0.0f64..0.99) {
            let p = pair(&[0.2], &[1.4]);
            let sample = sample_state(&p, t, tensor(&[e]), NoiseScale::UNIT).unwrap();
            for kind in ObjectiveKind::ALL {
                prop_assert!(loss(kind, &tensor(&[pred]), &p, &sample, NoiseScale::UNIT).unwrap() >= 0.0);
            }
        }
    }
}
