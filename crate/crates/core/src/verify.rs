//! Statistical self-checks run by `bridgeflow verify`.
//!
//! Every check reduces to `measured <= bound`. Each check draws from its own
//! stream, derived from the seed and the check name, so a suite gives the
//! same numbers whether it runs alone or as part of `all`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    conditional_mean, conditional_variance, interpolate, marginal_variance, sample_state,
    sample_two_times, EndpointPair, NoiseScale,
};
use crate::error::{BridgeError, Result};
use crate::model::{backward, Activation, ModelConfig, Prediction, VelocityModel};
use crate::numerics::{compensated_sum, RngStream, Tensor};
use crate::objectives::{
    cumulative_at, profile_grid, target_profile_closed_form, target_sqnorm_moments,
    ObjectiveKind, TrainingTarget, PROFILE_UPPER,
};
use crate::sampler::{endpoint_statistics, sample, OracleField, SamplerMode};
use crate::schedule::Schedule;

/// Stream id reserved for verification draws.
pub const STREAM_VERIFY: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bridge,
    Sampler,
    Objectives,
    Schedules,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Bridge => "bridge",
            Suite::Sampler => "sampler",
            Suite::Objectives => "objectives",
            Suite::Schedules => "schedules",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" => Ok(Suite::Bridge),
            "sampler" => Ok(Suite::Sampler),
            "objectives" => Ok(Suite::Objectives),
            "schedules" => Ok(Suite::Schedules),
            "all" => Ok(Suite::All),
            other => Err(BridgeError::Config(format!("unknown verify suite '{other}'"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Monte-Carlo draws per statistical check.
    pub mc: usize,
    /// Relative tolerance on variances and ratios.
    pub rel: f64,
    /// Allowed deviation of means, in standard errors.
    pub sigma: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mc: 100_000,
            rel: 0.03,
            sigma: 3.0,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.mc < 100 {
            return Err(BridgeError::Config(format!("mc must be at least 100, got {}", self.mc)));
        }
        if !(self.rel.is_finite() && self.rel > 0.0) || !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(BridgeError::Config("tolerances must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: Suite, name: String, measured: f64, bound: f64) -> Self {
        Self {
            suite: suite.name().to_string(),
            name,
            measured,
            bound,
            passed: measured <= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run(suite: Suite, seed: u64, tol: &Tolerances) -> Result<VerifyReport> {
    tol.validate()?;
    let ctx = Ctx { seed, tol: *tol };
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Bridge {
        checks.extend(bridge_checks(&ctx)?);
    }
    if all || suite == Suite::Sampler {
        checks.extend(sampler_checks(&ctx)?);
    }
    if all || suite == Suite::Objectives {
        checks.extend(objective_checks(&ctx)?);
    }
    if all || suite == Suite::Schedules {
        checks.extend(schedule_checks());
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        suite,
        seed,
        tolerances: *tol,
        checks,
        passed,
    })
}

struct Ctx {
    seed: u64,
    tol: Tolerances,
}

impl Ctx {
    fn stream(&self, name: &str) -> RngStream {
        RngStream::new(self.seed, STREAM_VERIFY).fork(fnv1a(name))
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn relative_error(measured: f64, expected: f64) -> f64 {
    (measured - expected).abs() / expected.abs()
}

/// Per-coordinate sample means and unbiased variances.
fn moments(draws: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let dim = draws[0].len();
    let n = draws.len() as f64;
    (0..dim)
        .map(|j| {
            let mean = compensated_sum(draws.iter().map(|d| d.data()[j])) / n;
            let var = compensated_sum(draws.iter().map(|d| (d.data()[j] - mean).powi(2))) / (n - 1.0);
            (mean, var)
        })
        .unzip()
}

fn probe_pair() -> EndpointPair {
    EndpointPair::new(
        Tensor::from_vec(vec![0.3, -1.2]).expect("finite"),
        Tensor::from_vec(vec![1.5, 0.7]).expect("finite"),
    )
    .expect("same shape")
}

fn bridge_checks(ctx: &Ctx) -> Result<Vec<Check>> {
    let pair = probe_pair();
    let m = ctx.tol.mc;
    let mut checks = Vec::new();
    for &t in &[0.1, 0.5, 0.9] {
        for &s in &[0.5, 1.0, 2.0] {
            let s = NoiseScale::new(s)?;
            let label = format!("t={t} s={}", s.value());
            let mut rng = ctx.stream(&format!("marginal {label}"));
            let draws = (0..m)
                .map(|_| sample_state(&pair, t, rng.gaussian(&[2]), s).map(|b| b.state))
                .collect::<Result<Vec<_>>>()?;
            let (means, vars) = moments(&draws);
            let expected_var = marginal_variance(t, s)?;
            let centre = interpolate(&pair, t)?;
            let z = means
                .iter()
                .zip(centre.data())
                .map(|(mu, c)| (mu - c).abs() / (expected_var / m as f64).sqrt())
                .fold(0.0, f64::max);
            checks.push(Check::new(Suite::Bridge, format!("marginal mean z-score, {label}"), z, ctx.tol.sigma));
            let rel = vars
                .iter()
                .map(|v| relative_error(*v, expected_var))
                .fold(0.0, f64::max);
            checks.push(Check::new(Suite::Bridge, format!("marginal variance rel. error, {label}"), rel, ctx.tol.rel));
        }
    }
    let scalar = EndpointPair::new(
        Tensor::from_vec(vec![-0.4])?,
        Tensor::from_vec(vec![1.1])?,
    )?;
    for &(t1, t2) in &[(0.25, 0.5), (0.5, 0.75), (0.1, 0.9)] {
        let s = NoiseScale::UNIT;
        let expected = conditional_variance(t1, t2, s)?;
        let label = format!("t1={t1} t2={t2}");

        // Library sampler: residual about the analytic conditional mean.
        let mut rng = ctx.stream(&format!("conditional sampler {label}"));
        let residuals = (0..m)
            .map(|_| {
                let (a, b) = sample_two_times(&scalar, t1, t2, s, &mut rng)?;
                Ok(b.data()[0] - conditional_mean(&scalar, &a, t1, t2)?.data()[0])
            })
            .collect::<Result<Vec<f64>>>()?;
        let var = compensated_sum(residuals.iter().map(|r| r * r)) / m as f64;
        checks.push(Check::new(
            Suite::Bridge,
            format!("conditional variance rel. error (two-time sampler), {label}"),
            relative_error(var, expected),
            ctx.tol.rel,
        ));

        // Independent construction B_t = W_t - t W_1 with regression residuals.
        let mut rng = ctx.stream(&format!("conditional brownian {label}"));
        let (x0, x1) = (scalar.x0().data()[0], scalar.x1().data()[0]);
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m {
            let w1 = t1.sqrt() * rng.normal();
            let w2 = w1 + (t2 - t1).sqrt() * rng.normal();
            let w_end = w2 + (1.0 - t2).sqrt() * rng.normal();
            a.push((1.0 - t1) * x0 + t1 * x1 + s.value() * (w1 - t1 * w_end));
            b.push((1.0 - t2) * x0 + t2 * x1 + s.value() * (w2 - t2 * w_end));
        }
        let n = m as f64;
        let ma = compensated_sum(a.iter().copied()) / n;
        let mb = compensated_sum(b.iter().copied()) / n;
        let vaa = compensated_sum(a.iter().map(|v| (v - ma).powi(2))) / (n - 1.0);
        let vbb = compensated_sum(b.iter().map(|v| (v - mb).powi(2))) / (n - 1.0);
        let vab = compensated_sum(a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb))) / (n - 1.0);
        let residual = vbb - vab * vab / vaa;
        checks.push(Check::new(
            Suite::Bridge,
            format!("conditional variance rel. error (Brownian construction), {label}"),
            relative_error(residual, expected),
            ctx.tol.rel,
        ));
    }
    Ok(checks)
}

const EXACTNESS_BOUND: f64 = 1e-20;

fn sampler_checks(ctx: &Ctx) -> Result<Vec<Check>> {
    let pair = probe_pair();
    let oracle = OracleField::new(pair.x1().clone());
    let runs = (ctx.tol.mc / 10).max(100);
    let mut checks = Vec::new();
    for &n in &[1usize, 2, 4, 16, 64] {
        for &gamma in &[1.0, 5.0] {
            let schedule = Schedule::shifted(n, gamma)?;
            let last = schedule.points()[n] - schedule.points()[n - 1];
            for &s in &[0.0, 1.0, 2.0] {
                let s = NoiseScale::new(s)?;
                let label = format!("N={n} gamma={gamma} s={}", s.value());
                let exact = endpoint_statistics(
                    SamplerMode::Corrected,
                    &oracle,
                    pair.x0(),
                    pair.x1(),
                    None,
                    &schedule,
                    s,
                    16,
                    &ctx.stream(&format!("corrected {label}")),
                )?;
                checks.push(Check::new(
                    Suite::Sampler,
                    format!("corrected oracle endpoint mse, {label}"),
                    exact.mse,
                    EXACTNESS_BOUND,
                ));
                let standard = endpoint_statistics(
                    SamplerMode::Standard,
                    &oracle,
                    pair.x0(),
                    pair.x1(),
                    None,
                    &schedule,
                    s,
                    runs,
                    &ctx.stream(&format!("standard {label}")),
                )?;
                let expected = s.value().powi(2) * last;
                let (measured, bound) = if expected == 0.0 {
                    (standard.variance, EXACTNESS_BOUND)
                } else {
                    (relative_error(standard.variance, expected), 0.05)
                };
                checks.push(Check::new(
                    Suite::Sampler,
                    format!("standard endpoint variance vs s^2 dt_last, {label}"),
                    measured,
                    bound,
                ));
            }
        }
    }

    // Pinned bridge: with x0 = x1 = 0 the corrected sampler's marginals are
    // those of the bridge itself.
    let zero = Tensor::zeros(&[1]);
    let pinned = OracleField::new(zero.clone());
    let schedule = Schedule::uniform(8)?;
    let s = NoiseScale::UNIT;
    let base = ctx.stream("pinned bridge variance law");
    let paths = (0..ctx.tol.mc)
        .into_par_iter()
        .map(|r| {
            let mut rng = base.fork(r as u64);
            sample(SamplerMode::Corrected, &zero, &pinned, None, &schedule, s, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = schedule
        .points()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > 0.0 && t < 1.0)
        .map(|(k, &t)| {
            let second = compensated_sum(paths.iter().map(|p| p[k].data()[0].powi(2)));
            relative_error(second / paths.len() as f64, marginal_variance(t, s).unwrap_or(f64::NAN))
        })
        .fold(0.0, f64::max);
    checks.push(Check::new(
        Suite::Sampler,
        "corrected path variance vs s^2 t (1 - t), N=8".into(),
        worst,
        ctx.tol.rel,
    ));
    Ok(checks)
}

/// Grid for the normalization-law checks.
pub const ALPHA_GRID: [f64; 13] = [
    0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995,
];

fn objective_checks(ctx: &Ctx) -> Result<Vec<Check>> {
    let pair = probe_pair();
    let dist = pair.squared_distance();
    let dim = pair.dim() as f64;
    let m = ctx.tol.mc;
    let mut checks = Vec::new();
    for &s in &[0.5, 1.0, 2.0] {
        let s = NoiseScale::new(s)?;
        for &t in &ALPHA_GRID {
            let label = format!("t={t} s={}", s.value());
            let mut rng = ctx.stream(&format!("alpha law {label}"));
            let (mean, se) = target_sqnorm_moments(ObjectiveKind::StabilizedVelocity, &pair, s, t, m, &mut rng)?;
            checks.push(Check::new(
                Suite::Objectives,
                format!("stabilized E|u/alpha|^2 z-score vs |x1-x0|^2, {label}"),
                (mean - dist).abs() / se,
                ctx.tol.sigma,
            ));
            let mut rng = ctx.stream(&format!("velocity law {label}"));
            let (mean, _) = target_sqnorm_moments(ObjectiveKind::Velocity, &pair, s, t, m, &mut rng)?;
            let expected = 1.0 + s.value().powi(2) * t * dim / ((1.0 - t) * dist);
            checks.push(Check::new(
                Suite::Objectives,
                format!("velocity E|u|^2/|x1-x0|^2 rel. error, {label}"),
                relative_error(mean / dist, expected),
                ctx.tol.rel,
            ));
        }
    }

    let unit = EndpointPair::new(Tensor::from_vec(vec![0.0])?, Tensor::from_vec(vec![1.0])?)?;
    let grid = profile_grid(999);
    let profile = |kind| target_profile_closed_form(kind, &unit, NoiseScale::UNIT, &grid);
    let velocity = profile(ObjectiveKind::Velocity)?;
    let displacement = profile(ObjectiveKind::Displacement)?;
    let stabilized = profile(ObjectiveKind::StabilizedVelocity)?;
    let c_at = |p: &[_], t| cumulative_at(p, t).unwrap_or(f64::NAN);
    checks.push(Check::new(
        Suite::Objectives,
        "profile C_velocity(0.9) vs 1/3".into(),
        (c_at(&velocity, 0.9) - 1.0 / 3.0).abs(),
        0.02,
    ));
    checks.push(Check::new(
        Suite::Objectives,
        "profile C_displacement(0.5) vs 0.751".into(),
        (c_at(&displacement, 0.5) - 0.751).abs(),
        0.02,
    ));
    checks.push(Check::new(
        Suite::Objectives,
        "profile max |C_stabilized(t) - t/0.999|".into(),
        stabilized
            .iter()
            .map(|p| (p.c - p.t / PROFILE_UPPER).abs())
            .fold(0.0, f64::max),
        0.01,
    ));

    for (label, config) in gradient_matrix() {
        let mut rng = ctx.stream(&format!("gradient {label}"));
        for kind in ObjectiveKind::ALL {
            let err = loss_gradient_error(&config, kind, &mut rng)?;
            checks.push(Check::new(
                Suite::Objectives,
                format!("finite-difference gradient rel. error, {label}, {}", kind.name()),
                err,
                1e-6,
            ));
        }
    }
    Ok(checks)
}

/// Small architectures covering every activation, depth and context option.
pub fn gradient_matrix() -> Vec<(String, ModelConfig)> {
    let mut out = Vec::new();
    for activation in [Activation::Tanh, Activation::SmoothRelu] {
        for hidden in [vec![], vec![6], vec![5, 4]] {
            for context_dim in [0, 2] {
                let mut config = ModelConfig::new(3, hidden.clone());
                config.activation = activation;
                config.context_dim = context_dim;
                config.time_features = 4;
                let label = format!("{activation:?} hidden={hidden:?} context={context_dim}");
                out.push((label, config));
            }
        }
    }
    out
}

/// Normwise relative error between the analytic parameter gradient of one
/// sample's loss and central differences with step `1e-5`.
pub fn loss_gradient_error(config: &ModelConfig, kind: ObjectiveKind, rng: &mut RngStream) -> Result<f64> {
    let mut config = config.clone();
    config.prediction = if kind.predicts_displacement() {
        Prediction::Displacement
    } else {
        Prediction::Velocity
    };
    let mut model = VelocityModel::new(config.clone(), rng)?;
    // The output layer starts at zero; perturb everything so all paths carry signal.
    for v in model.params.values_mut().data_mut() {
        *v += 0.5 * rng.normal();
    }
    let dim = config.input_dim;
    let pair = EndpointPair::new(rng.gaussian(&[dim]), rng.gaussian(&[dim]))?;
    let context = (config.context_dim > 0).then(|| rng.gaussian(&[config.context_dim]));
    let t = 0.05 + 0.9 * rng.uniform();
    let s = NoiseScale::UNIT;
    let sample = sample_state(&pair, t, rng.gaussian(&[dim]), s)?;
    let target = TrainingTarget::new(kind, &pair, &sample, s, 0.0)?;

    let loss_at = |m: &VelocityModel| -> Result<f64> {
        target.loss(&m.forward(&sample.state, t, context.as_ref())?)
    };
    let prediction = model.forward(&sample.state, t, context.as_ref())?;
    let upstream = target.gradient(&prediction)?;
    let analytic = backward(&model.params, &config, &sample.state, t, context.as_ref(), &upstream)?.params;

    let h = 1e-5;
    let mut numeric = vec![0.0; model.params.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let original = model.params.values().data()[i];
        model.params.values_mut().data_mut()[i] = original + h;
        let up = loss_at(&model)?;
        model.params.values_mut().data_mut()[i] = original - h;
        let down = loss_at(&model)?;
        model.params.values_mut().data_mut()[i] = original;
        *slot = (up - down) / (2.0 * h);
    }
    let numeric = Tensor::from_vec(numeric)?;
    let scale = analytic.squared_norm().sqrt().max(numeric.squared_norm().sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(analytic.squared_distance(&numeric)?.sqrt() / scale)
}

/// Sizes and shifts exercised by the schedule contract.
pub const SCHEDULE_SIZES: [usize; 10] = [1, 2, 3, 4, 7, 16, 64, 257, 1000, 10_000];
pub const SCHEDULE_GAMMAS: [f64; 6] = [1.0, 1.001, 1.5, 5.0, 20.0, 100.0];

/// Contract violations of one shifted grid, as human-readable strings.
pub fn schedule_violations(n: usize, gamma: f64) -> Vec<String> {
    let schedule = match Schedule::shifted(n, gamma) {
        Ok(s) => s,
        Err(e) => return vec![e.to_string()],
    };
    let p = schedule.points();
    let mut bad = Vec::new();
    if p.len() != n + 1 {
        bad.push(format!("{} points for N={n}", p.len()));
        return bad;
    }
    if p[0] != 0.0 {
        bad.push(format!("t_0 = {}", p[0]));
    }
    if p[n].to_bits().abs_diff(1.0f64.to_bits()) > 1 {
        bad.push(format!("t_N = {}", p[n]));
    }
    if let Some(k) = p.windows(2).position(|w| w[1] <= w[0]) {
        bad.push(format!("not strictly increasing at {k}"));
    }
    if gamma > 1.0 {
        let steps: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(k) = (1..steps.len()).find(|&k| steps[k] < steps[k - 1]) {
            bad.push(format!("step size decreases at {k}"));
        }
    }
    if gamma == 1.0 {
        let uniform = p
            .iter()
            .enumerate()
            .all(|(i, t)| t.to_bits() == (i as f64 / n as f64).to_bits());
        if !uniform {
            bad.push("gamma = 1 differs from the uniform grid".into());
        }
    }
    bad
}

fn schedule_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    for &n in &SCHEDULE_SIZES {
        for &gamma in &SCHEDULE_GAMMAS {
            let violations = schedule_violations(n, gamma);
            checks.push(Check::new(
                Suite::Schedules,
                format!("shifted grid contract, N={n} gamma={gamma}"),
                violations.len() as f64,
                0.0,
            ));
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Tolerances {
        Tolerances {
            mc: 20_000,
            rel: 0.05,
            sigma: 4.0,
        }
    }

    #[test]
    fn suites_parse() {
        for name in ["bridge", "sampler", "objectives", "schedules", "all"] {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn schedule_suite_passes() {
        let report = run(Suite::Schedules, 0, &Tolerances::default()).unwrap();
        assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn bridge_suite_is_order_independent() {
        let alone = run(Suite::Bridge, 3, &quick()).unwrap();
        assert!(alone.passed, "{:?}", alone.failures().collect::<Vec<_>>());
        let again = run(Suite::Bridge, 3, &quick()).unwrap();
        assert_eq!(alone, again);
    }

    #[test]
    fn gradient_errors_are_small() {
        let mut rng = RngStream::new(1, 0);
        for (label, config) in gradient_matrix() {
            for kind in ObjectiveKind::ALL {
                let err = loss_gradient_error(&config, kind, &mut rng).unwrap();
                assert!(err < 1e-6, "{label} {kind:?}: {err}");
            }
        }
    }

    #[test]
    fn rejects_tiny_mc() {
        let tol = Tolerances { mc: 3, ..Tolerances::default() };
        assert!(run(Suite::Bridge, 0, &tol).is_err());
    }
}
