//! Training loop: per sample draw `t ~ U(0, 1 - t_clamp)` and `eps ~ N(0, I)`,
//! build the bridge state, form the objective's target and weight, and back
//! the residual gradient through the network; then take one optimizer step
//! on the batch mean.
//!
//! Pairs come from one RNG stream and `(t, eps)` from another, so runs that
//! differ only in objective see identical `(pair, t, eps)` sequences.

mod optim;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind};

use crate::bridge::{sample_state, BridgeSample, ConditionedPair, NoiseScale, DEFAULT_T_CLAMP};
use crate::error::{BridgeError, Result};
use crate::model::{backward_accumulate, Prediction, VelocityModel};
use crate::numerics::{CompensatedSum, RngStream, Tensor};
use crate::objectives::{ObjectiveKind, TrainingTarget};
use crate::tasks::{generate_conditioned, TaskSpec};

/// Stream id for training pairs.
pub const STREAM_DATA: u64 = 1;
/// Stream id for per-sample `(t, eps)` draws.
pub const STREAM_NOISE: u64 = 2;
/// Stream id for parameter initialization.
pub const STREAM_INIT: u64 = 3;
/// Stream id for evaluation data; disjoint from the training streams.
pub const STREAM_EVAL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub s: NoiseScale,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub t_clamp: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::StabilizedVelocity,
            s: NoiseScale::UNIT,
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            t_clamp: DEFAULT_T_CLAMP,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(BridgeError::Config(why.into()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if !(self.t_clamp > 0.0 && self.t_clamp < 0.1) {
            return bad("t_clamp must lie in (0, 0.1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Prediction kind a model must have to be trained on this objective.
    pub fn prediction(&self) -> Prediction {
        if self.objective.predicts_displacement() {
            Prediction::Displacement
        } else {
            Prediction::Velocity
        }
    }
}

/// Pull-based source of training pairs.
pub trait PairProvider {
    fn next_batch(&mut self, size: usize, rng: &mut RngStream) -> Result<Vec<ConditionedPair>>;
}

/// Fresh pairs from a synthetic task.
pub struct TaskProvider {
    pub spec: TaskSpec,
}

impl PairProvider for TaskProvider {
    fn next_batch(&mut self, size: usize, rng: &mut RngStream) -> Result<Vec<ConditionedPair>> {
        generate_conditioned(&self.spec, size, rng)
    }
}

/// Uniformly resampled pairs from a fixed list (e.g. loaded from a file).
pub struct FixedPairs {
    pairs: Vec<ConditionedPair>,
}

impl FixedPairs {
    pub fn new(pairs: Vec<ConditionedPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(BridgeError::Config("empty pair list".into()));
        }
        Ok(Self { pairs })
    }
}

impl PairProvider for FixedPairs {
    fn next_batch(&mut self, size: usize, rng: &mut RngStream) -> Result<Vec<ConditionedPair>> {
        Ok((0..size)
            .map(|_| self.pairs[rng.below(self.pairs.len() as u64) as usize].clone())
            .collect())
    }
}

/// Wraps a provider and replaces every context with zeros.
pub struct ZeroedContext<P>(pub P);

impl<P: PairProvider> PairProvider for ZeroedContext<P> {
    fn next_batch(&mut self, size: usize, rng: &mut RngStream) -> Result<Vec<ConditionedPair>> {
        let mut batch = self.0.next_batch(size, rng)?;
        for item in &mut batch {
            if let Some(c) = &item.context {
                item.context = Some(Tensor::zeros(c.shape()));
            }
        }
        Ok(batch)
    }
}

/// Everything the loop computed for one training sample.
pub struct SampleRecord<'a> {
    pub step: usize,
    pub index: usize,
    pub item: &'a ConditionedPair,
    pub sample: &'a BridgeSample,
    pub target: &'a TrainingTarget,
    pub prediction: &'a Tensor,
    pub loss: f64,
}

/// Hook receiving every training sample (debug logs, audits, spies).
pub trait TrainObserver {
    fn on_sample(&mut self, record: &SampleRecord<'_>);
}

impl TrainObserver for () {
    fn on_sample(&mut self, _record: &SampleRecord<'_>) {}
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub max_target_sqnorm: f64,
    pub grad_norm: f64,
}

/// One logged row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Mean batch loss over the steps since the previous row.
    pub loss: f64,
    /// Largest squared norm of the raw target since the previous row.
    pub max_target_sqnorm: f64,
    /// Gradient norm at the logged step.
    pub grad_norm: f64,
    /// Wall time since the start of training.
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub rows: Vec<StepStats>,
    pub max_target_sqnorm: f64,
    pub final_loss: f64,
}

/// A run stopped by a non-finite value; keeps the rows logged so far.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TrainAborted {
    pub stats: TrainStats,
    #[source]
    pub error: BridgeError,
}

impl From<TrainAborted> for BridgeError {
    fn from(aborted: TrainAborted) -> Self {
        aborted.error
    }
}

/// Single optimizer step on `batch`.
pub fn train_step(
    model: &mut VelocityModel,
    optimizer: &mut Optimizer,
    batch: &[ConditionedPair],
    config: &TrainConfig,
    step: usize,
    rng: &mut RngStream,
    observer: &mut dyn TrainObserver,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(BridgeError::Config("empty training batch".into()));
    }
    if model.config.prediction != config.prediction() {
        return Err(BridgeError::Config(format!(
            "a {:?}-predicting model cannot train on the {} objective",
            model.config.prediction, config.objective
        )));
    }
    let fail = |what| BridgeError::Training {
        step,
        objective: config.objective.to_string(),
        what,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = CompensatedSum::new();
    let mut max_target_sqnorm = 0.0f64;
    for (index, item) in batch.iter().enumerate() {
        let pair = &item.pair;
        if pair.dim() != model.config.input_dim {
            return Err(BridgeError::ShapeMismatch {
                expected: vec![model.config.input_dim],
                actual: pair.shape().to_vec(),
            });
        }
        let t = rng.uniform() * (1.0 - config.t_clamp);
        let eps = rng.gaussian(pair.shape());
        let sample = sample_state(pair, t, eps, config.s)?;
        let target = TrainingTarget::new(config.objective, pair, &sample, config.s, config.t_clamp)?;
        let context = item.context.as_ref();
        let prediction = model.forward(&sample.state, t, context)?;
        let sample_loss = target.loss(&prediction)?;
        if !sample_loss.is_finite() {
            return Err(fail("loss"));
        }
        max_target_sqnorm = max_target_sqnorm.max(target.target.squared_norm());
        let upstream = target.gradient(&prediction)?.scale(scale);
        backward_accumulate(
            &model.params,
            &model.config,
            &sample.state,
            t,
            context,
            &upstream,
            &mut grad,
        )?;
        observer.on_sample(&SampleRecord {
            step,
            index,
            item,
            sample: &sample,
            target: &target,
            prediction: &prediction,
            loss: sample_loss,
        });
        loss.add(sample_loss);
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(fail("gradient"));
    }
    optimizer.update(model.params.values_mut().data_mut(), &grad);
    if !model.params.values().is_finite() {
        return Err(fail("parameters"));
    }
    Ok(StepOutcome {
        loss: loss.value() * scale,
        max_target_sqnorm,
        grad_norm,
    })
}

/// Runs `config.steps` optimizer steps. Pairs come from
/// `(seed, STREAM_DATA)` and `(t, eps)` from `(seed, STREAM_NOISE)`.
pub fn train(
    model: &mut VelocityModel,
    provider: &mut dyn PairProvider,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> std::result::Result<TrainStats, TrainAborted> {
    let mut stats = TrainStats::default();
    let abort = |stats: TrainStats, error| TrainAborted { stats, error };
    if let Err(error) = config.validate() {
        return Err(abort(stats, error));
    }
    let mut data_rng = RngStream::new(config.seed, STREAM_DATA);
    let mut noise_rng = RngStream::new(config.seed, STREAM_NOISE);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.params.len());
    let started = Instant::now();
    let mut window_loss = CompensatedSum::new();
    let mut window_len = 0usize;
    let mut window_max = 0.0f64;
    for step in 1..=config.steps {
        let outcome = provider
            .next_batch(config.batch_size, &mut data_rng)
            .and_then(|batch| {
                train_step(model, &mut optimizer, &batch, config, step, &mut noise_rng, observer)
            });
        let outcome = match outcome {
            Ok(o) => o,
            Err(error) => return Err(abort(stats, error)),
        };
        window_loss.add(outcome.loss);
        window_len += 1;
        window_max = window_max.max(outcome.max_target_sqnorm);
        stats.max_target_sqnorm = stats.max_target_sqnorm.max(outcome.max_target_sqnorm);
        stats.final_loss = outcome.loss;
        if step % config.log_every == 0 || step == config.steps {
            stats.rows.push(StepStats {
                step,
                loss: window_loss.value() / window_len as f64,
                max_target_sqnorm: window_max,
                grad_norm: outcome.grad_norm,
                ms: started.elapsed().as_secs_f64() * 1e3,
            });
            window_loss = CompensatedSum::new();
            window_len = 0;
            window_max = 0.0;
        }
    }
    Ok(stats)
}

/// Mean objective loss of `model` over `pairs`, one `(t, eps)` draw per pair.
pub fn mean_loss(
    model: &VelocityModel,
    pairs: &[ConditionedPair],
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for item in pairs {
        let t = rng.uniform() * (1.0 - config.t_clamp);
        let sample = sample_state(&item.pair, t, rng.gaussian(item.pair.shape()), config.s)?;
        let target =
            TrainingTarget::new(config.objective, &item.pair, &sample, config.s, config.t_clamp)?;
        acc.add(target.loss(&model.forward(&sample.state, t, item.context.as_ref())?)?);
    }
    Ok(acc.value() / pairs.len().max(1) as f64)
}
