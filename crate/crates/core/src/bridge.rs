//! Closed-form Brownian-bridge mathematics with a constant noise scale `s`.
//!
//! Conditioned on endpoints, the state at time `t` is Gaussian with mean
//! `(1 - t) x0 + t x1` and isotropic per-coordinate variance `s^2 t (1 - t)`.
//! All variances returned here are per coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::numerics::{RngStream, Tensor};

/// Default distance kept from the singular time `t = 1` during training.
pub const DEFAULT_T_CLAMP: f64 = 1e-5;

/// Source/target latents of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPair {
    x0: Tensor,
    x1: Tensor,
}

impl EndpointPair {
    pub fn new(x0: Tensor, x1: Tensor) -> Result<Self> {
        x0.ensure_same_shape(&x1)?;
        Ok(Self { x0, x1 })
    }

    pub fn x0(&self) -> &Tensor {
        &self.x0
    }

    pub fn x1(&self) -> &Tensor {
        &self.x1
    }

    /// Number of latent coordinates `D`.
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.x0.shape()
    }

    /// `||x1 - x0||^2`.
    pub fn squared_distance(&self) -> f64 {
        self.x1
            .squared_distance(&self.x0)
            .expect("endpoint shapes are checked at construction")
    }
}

/// An endpoint pair plus optional conditioning (the instruction analogue).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedPair {
    pub pair: EndpointPair,
    pub context: Option<Tensor>,
}

impl From<EndpointPair> for ConditionedPair {
    fn from(pair: EndpointPair) -> Self {
        Self {
            pair,
            context: None,
        }
    }
}

/// Global diffusion coefficient `s`; zero degenerates to rectified flow.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseScale(f64);

impl NoiseScale {
    pub const UNIT: NoiseScale = NoiseScale(1.0);

    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() || s < 0.0 {
            return Err(BridgeError::Domain(format!(
                "noise scale must be finite and non-negative, got {s}"
            )));
        }
        Ok(Self(s))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NoiseScale {
    type Error = BridgeError;

    fn try_from(s: f64) -> Result<Self> {
        NoiseScale::new(s)
    }
}

impl From<NoiseScale> for f64 {
    fn from(s: NoiseScale) -> f64 {
        s.0
    }
}

/// Training-time tuple: time, noise draw, and the state built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub t: f64,
    pub epsilon: Tensor,
    pub state: Tensor,
}

fn check_unit_interval(t: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(BridgeError::Domain(format!("{what} = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 - t) x0 + t x1`.
pub fn interpolate(pair: &EndpointPair, t: f64) -> Result<Tensor> {
    check_unit_interval(t, "t")?;
    pair.x0.lincomb(1.0 - t, &pair.x1, t)
}

/// Builds `x_t = (1 - t) x0 + t x1 + s sqrt(t (1 - t)) eps`.
pub fn sample_state(
    pair: &EndpointPair,
    t: f64,
    epsilon: Tensor,
    s: NoiseScale,
) -> Result<BridgeSample> {
    if !(0.0..1.0).contains(&t) {
        return Err(BridgeError::Domain(format!(
            "training time t = {t} outside [0, 1)"
        )));
    }
    pair.x0.ensure_same_shape(&epsilon)?;
    let mut state = interpolate(pair, t)?;
    state.axpy(s.value() * (t * (1.0 - t)).sqrt(), &epsilon)?;
    Ok(BridgeSample { t, epsilon, state })
}

/// Velocity target `(x1 - x_t) / (1 - t)` with the default time clamp.
pub fn velocity_target(pair: &EndpointPair, sample: &BridgeSample) -> Result<Tensor> {
    velocity_target_clamped(pair, sample, DEFAULT_T_CLAMP)
}

/// Velocity target, rejecting `t > 1 - t_clamp`.
pub fn velocity_target_clamped(
    pair: &EndpointPair,
    sample: &BridgeSample,
    t_clamp: f64,
) -> Result<Tensor> {
    let t = sample.t;
    if t > 1.0 - t_clamp || t < 0.0 {
        return Err(BridgeError::ClampedTime { t, t_clamp });
    }
    let displacement = pair.x1.sub(&sample.state)?;
    Ok(displacement.scale(1.0 / (1.0 - t)))
}

/// Displacement target `x1 - x_t`.
pub fn displacement_target(pair: &EndpointPair, sample: &BridgeSample) -> Result<Tensor> {
    pair.x1.sub(&sample.state)
}

/// Per-coordinate variance of `x_t` given both endpoints: `s^2 t (1 - t)`.
pub fn marginal_variance(t: f64, s: NoiseScale) -> Result<f64> {
    check_unit_interval(t, "t")?;
    Ok(s.value().powi(2) * t * (1.0 - t))
}

/// Per-coordinate `Var(x_t2 | x_t1) = s^2 (t2 - t1)(1 - t2) / (1 - t1)`.
pub fn conditional_variance(t1: f64, t2: f64, s: NoiseScale) -> Result<f64> {
    check_unit_interval(t1, "t1")?;
    check_unit_interval(t2, "t2")?;
    if t1 > t2 {
        return Err(BridgeError::Domain(format!("t1 = {t1} exceeds t2 = {t2}")));
    }
    if t1 >= 1.0 {
        return Err(BridgeError::Domain("t1 must be below 1".into()));
    }
    Ok(s.value().powi(2) * (t2 - t1) * (1.0 - t2) / (1.0 - t1))
}

/// Mean of `x_t2` given `x_t1`: `x_t1 + (t2 - t1)/(1 - t1) (x1 - x_t1)`.
///
/// Follows from the bridge covariance `Cov(B_t1, B_t2) = t1 (1 - t2)`.
pub fn conditional_mean(
    pair: &EndpointPair,
    state_t1: &Tensor,
    t1: f64,
    t2: f64,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&t1) || t2 < t1 || t2 > 1.0 {
        return Err(BridgeError::Domain(format!(
            "need 0 <= t1 < 1 and t1 <= t2 <= 1, got ({t1}, {t2})"
        )));
    }
    state_t1.lincomb(1.0, &pair.x1.sub(state_t1)?, (t2 - t1) / (1.0 - t1))
}

/// Draws `(x_t1, x_t2)` jointly: the marginal at `t1`, then the conditional
/// Gaussian at `t2`.
pub fn sample_two_times(
    pair: &EndpointPair,
    t1: f64,
    t2: f64,
    s: NoiseScale,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let shape = pair.shape().to_vec();
    let mut first = interpolate(pair, t1)?;
    first.axpy(marginal_variance(t1, s)?.sqrt(), &rng.gaussian(&shape))?;
    let mut second = conditional_mean(pair, &first, t1, t2)?;
    second.axpy(
        conditional_variance(t1, t2, s)?.sqrt(),
        &rng.gaussian(&shape),
    )?;
    Ok((first, second))
}
