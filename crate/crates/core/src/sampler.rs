//! Euler-Maruyama integration of a velocity field from `x0` toward `x1`.
//!
//! Standard mode injects noise `s sqrt(dt)` per step. Corrected mode uses
//! `s sqrt(dt (1 - t_{k+1}) / (1 - t_k))`, the exact conditional standard
//! deviation of the bridge between consecutive grid times; the final step
//! into `t = 1` is therefore noiseless.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::NoiseScale;
use crate::error::{BridgeError, Result};
use crate::numerics::{CompensatedSum, RngStream, Tensor};
use crate::schedule::Schedule;

/// A velocity field `v(x, t, context)`.
pub trait VelocityField: Sync {
    fn velocity(&self, state: &Tensor, t: f64, context: Option<&Tensor>) -> Result<Tensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&Tensor, f64, Option<&Tensor>) -> Result<Tensor> + Sync,
{
    fn velocity(&self, state: &Tensor, t: f64, context: Option<&Tensor>) -> Result<Tensor> {
        self(state, t, context)
    }
}

/// The analytic conditional drift `(x1 - x) / (1 - t)` toward a known target.
#[derive(Debug, Clone)]
pub struct OracleField {
    target: Tensor,
}

impl OracleField {
    pub fn new(target: Tensor) -> Self {
        Self { target }
    }
}

impl VelocityField for OracleField {
    fn velocity(&self, state: &Tensor, t: f64, _context: Option<&Tensor>) -> Result<Tensor> {
        if t >= 1.0 {
            return Err(BridgeError::Domain(format!("oracle drift undefined at t = {t}")));
        }
        Ok(self.target.sub(state)?.scale(1.0 / (1.0 - t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Standard,
    #[default]
    Corrected,
}

impl SamplerMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplerMode::Standard => "standard",
            SamplerMode::Corrected => "corrected",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerMode {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(SamplerMode::Standard),
            "corrected" => Ok(SamplerMode::Corrected),
            other => Err(BridgeError::Config(format!("unknown sampler mode '{other}'"))),
        }
    }
}

/// One grid interval with its noise amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerStep {
    pub k: usize,
    pub t: f64,
    pub t_next: f64,
    pub dt: f64,
    pub eta: f64,
}

impl SamplerStep {
    pub fn new(mode: SamplerMode, k: usize, t: f64, t_next: f64, s: NoiseScale) -> Result<Self> {
        if !(t < t_next && t_next <= 1.0 && t >= 0.0) {
            return Err(BridgeError::Domain(format!(
                "invalid step interval [{t}, {t_next}]"
            )));
        }
        let dt = t_next - t;
        let eta = match mode {
            SamplerMode::Standard => s.value() * dt.sqrt(),
            SamplerMode::Corrected => s.value() * (dt * (1.0 - t_next) / (1.0 - t)).sqrt(),
        };
        Ok(Self {
            k,
            t,
            t_next,
            dt,
            eta,
        })
    }
}

/// `state + dt v(state, t_k) + eta eps`.
pub fn step(
    state: &Tensor,
    field: &dyn VelocityField,
    context: Option<&Tensor>,
    step: &SamplerStep,
    eps: &Tensor,
) -> Result<Tensor> {
    let velocity = field.velocity(state, step.t, context)?;
    if !velocity.is_finite() {
        return Err(BridgeError::Integration { step: step.k });
    }
    let mut next = state.lincomb(1.0, &velocity, step.dt)?;
    next.axpy(step.eta, eps)?;
    if !next.is_finite() {
        return Err(BridgeError::Integration { step: step.k });
    }
    Ok(next)
}

fn integrate(
    mode: SamplerMode,
    x0: &Tensor,
    field: &dyn VelocityField,
    context: Option<&Tensor>,
    schedule: &Schedule,
    s: NoiseScale,
    rng: &mut RngStream,
    mut visit: impl FnMut(&Tensor),
) -> Result<Tensor> {
    let mut state = x0.clone();
    visit(&state);
    for (k, (t, t_next)) in schedule.intervals().enumerate() {
        let params = SamplerStep::new(mode, k, t, t_next, s)?;
        // Drawn even when eta is zero so both modes consume the same stream.
        let eps = rng.gaussian(x0.shape());
        state = step(&state, field, context, &params, &eps)?;
        visit(&state);
    }
    Ok(state)
}

/// Full trajectory `x_{t_0}, ..., x_{t_N}`; the last entry is the output.
pub fn sample(
    mode: SamplerMode,
    x0: &Tensor,
    field: &dyn VelocityField,
    context: Option<&Tensor>,
    schedule: &Schedule,
    s: NoiseScale,
    rng: &mut RngStream,
) -> Result<Vec<Tensor>> {
    let mut trajectory = Vec::with_capacity(schedule.steps() + 1);
    integrate(mode, x0, field, context, schedule, s, rng, |x| {
        trajectory.push(x.clone())
    })?;
    Ok(trajectory)
}

/// Final state only, without retaining the trajectory.
pub fn sample_endpoint(
    mode: SamplerMode,
    x0: &Tensor,
    field: &dyn VelocityField,
    context: Option<&Tensor>,
    schedule: &Schedule,
    s: NoiseScale,
    rng: &mut RngStream,
) -> Result<Tensor> {
    integrate(mode, x0, field, context, schedule, s, rng, |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointStatistics {
    /// Mean over coordinates of `|E[x_hat] - x1|`.
    pub mean_error: f64,
    /// Mean over runs and coordinates of `(x_hat - x1)^2`.
    pub mse: f64,
    /// Mean over coordinates of the unbiased endpoint variance across runs.
    pub variance: f64,
    pub runs: usize,
}

/// Repeated sampling from `x0` of `pair`; run `r` uses `rng.fork(r)`.
pub fn endpoint_statistics(
    mode: SamplerMode,
    field: &dyn VelocityField,
    x0: &Tensor,
    x1: &Tensor,
    context: Option<&Tensor>,
    schedule: &Schedule,
    s: NoiseScale,
    runs: usize,
    rng: &RngStream,
) -> Result<EndpointStatistics> {
    if runs < 2 {
        return Err(BridgeError::Config("endpoint statistics need at least two runs".into()));
    }
    x0.ensure_same_shape(x1)?;
    let endpoints = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.fork(r as u64);
            sample_endpoint(mode, x0, field, context, schedule, s, &mut stream)
        })
        .collect::<Result<Vec<Tensor>>>()?;
    Ok(summarize_endpoints(&endpoints, x1))
}

pub(crate) fn summarize_endpoints(endpoints: &[Tensor], x1: &Tensor) -> EndpointStatistics {
    let dim = x1.len();
    let n = endpoints.len() as f64;
    let mut bias = CompensatedSum::new();
    let mut mse = CompensatedSum::new();
    let mut variance = CompensatedSum::new();
    for j in 0..dim {
        let target = x1.data()[j];
        let mut mean = CompensatedSum::new();
        for e in endpoints {
            mean.add(e.data()[j]);
        }
        let mean = mean.value() / n;
        let mut sq = CompensatedSum::new();
        let mut err = CompensatedSum::new();
        for e in endpoints {
            let v = e.data()[j];
            sq.add((v - mean).powi(2));
            err.add((v - target).powi(2));
        }
        bias.add((mean - target).abs());
        mse.add(err.value() / n);
        variance.add(sq.value() / (n - 1.0));
    }
    let d = dim.max(1) as f64;
    EndpointStatistics {
        mean_error: bias.value() / d,
        mse: mse.value() / d,
        variance: variance.value() / d,
        runs: endpoints.len(),
    }
}
