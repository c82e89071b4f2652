//! Evaluation of trained bridges on fresh task data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{ConditionedPair, NoiseScale};
use crate::error::{BridgeError, Result};
use crate::model::{VelocityModel, WithoutContext};
use crate::numerics::{CompensatedSum, RngStream, Tensor};
use crate::sampler::{sample_endpoint, OracleField, SamplerMode, VelocityField};
use crate::schedule::Schedule;
use crate::tasks::{generate_conditioned, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `E||x1_hat - x1||^2` over fresh pairs.
    pub paired_mse: f64,
    /// Energy distance between generated endpoints and ground-truth targets.
    pub energy_distance: f64,
    /// Energy distance between the sources and targets of the same pairs.
    pub source_energy_distance: f64,
    /// `||mean(x1_hat - x0) - mean(x1 - x0)||`.
    pub mean_displacement_error: f64,
    pub samples: usize,
}

/// Which velocity field drives the sampler.
#[derive(Clone, Copy)]
pub enum FieldSource<'a> {
    Model(&'a VelocityModel),
    /// The model with its conditioning input zeroed.
    ModelWithoutContext(&'a VelocityModel),
    /// Analytic drift toward each pair's true target.
    Oracle,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_pairwise_distance(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let row_sums: Vec<f64> = a
        .par_iter()
        .map(|x| {
            let mut acc = CompensatedSum::new();
            for y in b {
                acc.add(euclidean(x, y));
            }
            acc.value()
        })
        .collect();
    let mut total = CompensatedSum::new();
    total.extend(row_sums);
    total.value() / (a.len() as f64 * b.len() as f64)
}

/// V-statistic energy distance `2 E|a - b| - E|a - a'| - E|b - b'|` with the
/// diagonal terms included, so it is exactly zero for identical sets and
/// never negative.
pub fn energy_distance(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(BridgeError::Domain("energy distance needs non-empty sets".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|t| t.len() != dim) {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![dim],
            actual: a.iter().chain(b).map(Tensor::len).find(|&l| l != dim).into_iter().collect(),
        });
    }
    let av: Vec<&[f64]> = a.iter().map(Tensor::data).collect();
    let bv: Vec<&[f64]> = b.iter().map(Tensor::data).collect();
    let cross = mean_pairwise_distance(&av, &bv);
    let within_a = mean_pairwise_distance(&av, &av);
    let within_b = mean_pairwise_distance(&bv, &bv);
    Ok((2.0 * cross - within_a - within_b).max(0.0))
}

fn with_context(x: &Tensor, context: Option<&Tensor>) -> Tensor {
    match context {
        None => x.clone(),
        Some(c) => {
            let mut data = x.data().to_vec();
            data.extend_from_slice(c.data());
            Tensor::from_parts(vec![data.len()], data)
        }
    }
}

/// Samples one endpoint per pair; pair `i` draws noise from `rng.fork(i)`.
pub fn generate_endpoints(
    field: FieldSource<'_>,
    pairs: &[ConditionedPair],
    schedule: &Schedule,
    mode: SamplerMode,
    s: NoiseScale,
    rng: &RngStream,
) -> Result<Vec<Tensor>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut stream = rng.fork(i as u64);
            let context = item.context.as_ref();
            let x0 = item.pair.x0();
            match field {
                FieldSource::Model(m) => {
                    sample_endpoint(mode, x0, m, context, schedule, s, &mut stream)
                }
                FieldSource::ModelWithoutContext(m) => {
                    let f = WithoutContext(m);
                    sample_endpoint(mode, x0, &f as &dyn VelocityField, context, schedule, s, &mut stream)
                }
                FieldSource::Oracle => {
                    let f = OracleField::new(item.pair.x1().clone());
                    sample_endpoint(mode, x0, &f, context, schedule, s, &mut stream)
                }
            }
        })
        .collect()
}

/// Scores generated endpoints against their ground-truth pairs.
pub fn score(pairs: &[ConditionedPair], generated: &[Tensor]) -> Result<EvalReport> {
    if pairs.is_empty() || pairs.len() != generated.len() {
        return Err(BridgeError::Domain(
            "need one generated endpoint per ground-truth pair".into(),
        ));
    }
    let n = pairs.len() as f64;
    let dim = pairs[0].pair.dim();
    let mut mse = CompensatedSum::new();
    let mut disp_gen = vec![CompensatedSum::new(); dim];
    let mut disp_true = vec![CompensatedSum::new(); dim];
    for (item, x_hat) in pairs.iter().zip(generated) {
        mse.add(x_hat.squared_distance(item.pair.x1())?);
        for j in 0..dim {
            let x0 = item.pair.x0().data()[j];
            disp_gen[j].add(x_hat.data()[j] - x0);
            disp_true[j].add(item.pair.x1().data()[j] - x0);
        }
    }
    let mean_displacement_error = disp_gen
        .iter()
        .zip(&disp_true)
        .map(|(g, t)| ((g.value() - t.value()) / n).powi(2))
        .sum::<f64>()
        .sqrt();

    let generated_set: Vec<Tensor> = pairs
        .iter()
        .zip(generated)
        .map(|(item, x)| with_context(x, item.context.as_ref()))
        .collect();
    let target_set: Vec<Tensor> = pairs
        .iter()
        .map(|item| with_context(item.pair.x1(), item.context.as_ref()))
        .collect();
    let source_set: Vec<Tensor> = pairs
        .iter()
        .map(|item| with_context(item.pair.x0(), item.context.as_ref()))
        .collect();

    Ok(EvalReport {
        paired_mse: mse.value() / n,
        energy_distance: energy_distance(&generated_set, &target_set)?,
        source_energy_distance: energy_distance(&source_set, &target_set)?,
        mean_displacement_error,
        samples: pairs.len(),
    })
}

/// Draws `runs` fresh pairs from `rng.fork(0)`, samples endpoints with
/// noise from `rng.fork(1)`, and scores them.
///
/// For conditioned tasks both distance sets carry the context next to the
/// latent, so the energy distance compares joint (latent, context) laws.
pub fn evaluate(
    field: FieldSource<'_>,
    spec: &TaskSpec,
    schedule: &Schedule,
    mode: SamplerMode,
    s: NoiseScale,
    runs: usize,
    rng: &RngStream,
) -> Result<EvalReport> {
    if let FieldSource::Model(m) | FieldSource::ModelWithoutContext(m) = field {
        if m.config.input_dim != spec.dim() || m.config.context_dim != spec.context_dim() {
            return Err(BridgeError::Config(format!(
                "model dims ({}, context {}) do not fit task {} ({}, context {})",
                m.config.input_dim,
                m.config.context_dim,
                spec,
                spec.dim(),
                spec.context_dim()
            )));
        }
    }
    let pairs = generate_conditioned(spec, runs, &mut rng.fork(0))?;
    let generated = generate_endpoints(field, &pairs, schedule, mode, s, &rng.fork(1))?;
    score(&pairs, &generated)
}
