//! Training, sampling and ablation commands and their resolved configs.
//!
//! Each config is built from defaults, then the JSON file given with
//! `--config` (a plain config or a previous manifest), then explicit flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{now_ms, RunManifest};
use super::{AblateArgs, CmdResult, Failure, SampleArgs, TrainArgs};
use crate::bridge::{ConditionedPair, NoiseScale};
use crate::error::{BridgeError, Result};
use crate::eval::{generate_endpoints, score, EvalReport, FieldSource};
use crate::io::{trajectory_csv, write_json, CsvTable};
use crate::model::{Activation, ModelConfig, VelocityModel, WithoutContext};
use crate::numerics::{RngStream, Tensor};
use crate::objectives::alpha_factor;
use crate::sampler::{sample, OracleField, SamplerMode, VelocityField};
use crate::schedule::Schedule;
use crate::tasks::{generate_conditioned, TaskSpec};
use crate::trainer::{
    train, SampleRecord, TaskProvider, TrainAborted, TrainConfig, TrainObserver, TrainStats,
    ZeroedContext, STREAM_EVAL, STREAM_INIT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            time_features: 8,
        }
    }
}

fn default_task() -> TaskSpec {
    TaskSpec::preset("gaussian_shift").expect("built-in preset")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub zero_context: bool,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            task: default_task(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            zero_context: false,
        }
    }
}

impl TrainRun {
    pub fn model_config(&self) -> ModelConfig {
        let mut config = ModelConfig::new(self.task.dim(), self.model.hidden.clone());
        config.context_dim = self.task.context_dim();
        config.activation = self.model.activation;
        config.time_features = self.model.time_features;
        config.prediction = self.train.prediction();
        config
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.model_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleRun {
    pub task: TaskSpec,
    /// Parameter file; `None` samples with the oracle field.
    pub params: Option<PathBuf>,
    pub steps: usize,
    pub gamma: f64,
    pub mode: SamplerMode,
    pub s: NoiseScale,
    pub runs: usize,
    pub trajectories: usize,
    pub zero_context: bool,
    /// Resolved time grid, echoed for the manifest; ignored on input.
    #[serde(skip_deserializing)]
    pub schedule: Vec<f64>,
}

impl Default for SampleRun {
    fn default() -> Self {
        Self {
            task: default_task(),
            params: None,
            steps: 16,
            gamma: 1.0,
            mode: SamplerMode::Corrected,
            s: NoiseScale::UNIT,
            runs: 1000,
            trajectories: 0,
            zero_context: false,
            schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Objective,
    NoiseScale,
    Steps,
    Gamma,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Objective => "objective",
            Axis::NoiseScale => "noise_scale",
            Axis::Steps => "steps",
            Axis::Gamma => "gamma",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(Axis::Objective),
            "noise_scale" | "noise-scale" | "s" => Ok(Axis::NoiseScale),
            "steps" | "N" => Ok(Axis::Steps),
            "gamma" => Ok(Axis::Gamma),
            other => Err(BridgeError::Config(format!("unknown ablation axis '{other}'"))),
        }
    }
}

/// Sampling settings shared by every ablation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateSampling {
    pub steps: usize,
    pub gamma: f64,
    pub mode: SamplerMode,
    pub runs: usize,
}

impl Default for AblateSampling {
    fn default() -> Self {
        Self {
            steps: 16,
            gamma: 1.0,
            mode: SamplerMode::Corrected,
            runs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateRun {
    pub axis: Axis,
    pub values: Vec<String>,
    pub train: TrainRun,
    pub sample: AblateSampling,
}

impl Default for AblateRun {
    fn default() -> Self {
        Self {
            axis: Axis::Objective,
            values: Vec::new(),
            train: TrainRun::default(),
            sample: AblateSampling::default(),
        }
    }
}

/// Reads a JSON config; a run manifest contributes its `config` object.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| BridgeError::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| BridgeError::format(path, e.to_string()))?;
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).map_err(|e| BridgeError::format(path, e.to_string()))
}

pub fn resolve_train(args: &TrainArgs) -> Result<TrainRun> {
    let mut run: TrainRun = load_config(args.config.as_deref())?;
    if let Some(task) = &args.task {
        run.task = TaskSpec::preset(task)?;
    }
    let t = &mut run.train;
    if let Some(v) = args.objective {
        t.objective = v;
    }
    if let Some(v) = args.s {
        t.s = NoiseScale::new(v)?;
    }
    if let Some(v) = args.steps {
        t.steps = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.optimizer {
        t.optimizer = v;
    }
    if let Some(v) = args.t_clamp {
        t.t_clamp = v;
    }
    if let Some(v) = args.log_every {
        t.log_every = v;
    }
    t.seed = args.seed;
    if let Some(v) = &args.hidden {
        run.model.hidden = v.clone();
    }
    if let Some(v) = args.activation {
        run.model.activation = v;
    }
    if let Some(v) = args.time_features {
        run.model.time_features = v;
    }
    if args.zero_context {
        run.zero_context = true;
    }
    run.validate()?;
    Ok(run)
}

/// Per-sample debug rows plus a hash of every consumed `(pair, t, eps)`.
struct DebugLog {
    table: CsvTable,
    hasher: Sha256,
    s: NoiseScale,
}

impl DebugLog {
    fn new(s: NoiseScale) -> Self {
        Self {
            table: CsvTable::new(["step", "i", "t", "alpha", "target_sqnorm"]),
            hasher: Sha256::new(),
            s,
        }
    }

    fn absorb(&mut self, values: &[f64]) {
        for v in values {
            self.hasher.update(v.to_le_bytes());
        }
    }
}

impl TrainObserver for DebugLog {
    fn on_sample(&mut self, r: &SampleRecord<'_>) {
        self.absorb(r.item.pair.x0().data());
        self.absorb(r.item.pair.x1().data());
        if let Some(c) = &r.item.context {
            self.absorb(c.data());
        }
        self.absorb(&[r.sample.t]);
        self.absorb(r.sample.epsilon.data());
        let alpha = alpha_factor(&r.item.pair, r.sample.t, self.s)
            .map(|a| a.alpha())
            .unwrap_or(f64::NAN);
        self.table.row([
            r.step.to_string(),
            r.index.to_string(),
            r.sample.t.to_string(),
            alpha.to_string(),
            r.target.target.squared_norm().to_string(),
        ]);
    }
}

/// Builds and trains the model described by `run`.
pub fn train_model(
    run: &TrainRun,
    observer: &mut dyn TrainObserver,
) -> Result<(VelocityModel, std::result::Result<TrainStats, TrainAborted>)> {
    let mut model = VelocityModel::new(
        run.model_config(),
        &mut RngStream::new(run.train.seed, STREAM_INIT),
    )?;
    let tasks = TaskProvider {
        spec: run.task.clone(),
    };
    let outcome = if run.zero_context {
        train(&mut model, &mut ZeroedContext(tasks), &run.train, observer)
    } else {
        train(&mut model, &mut { tasks }, &run.train, observer)
    };
    Ok((model, outcome))
}

fn stats_table(stats: &TrainStats) -> CsvTable {
    let mut table = CsvTable::new(["step", "loss", "max_target_sqnorm", "grad_norm", "ms"]);
    for row in &stats.rows {
        table.row([
            row.step.to_string(),
            row.loss.to_string(),
            row.max_target_sqnorm.to_string(),
            row.grad_norm.to_string(),
            format!("{:.3}", row.ms),
        ]);
    }
    table
}

#[derive(Serialize)]
struct TrainResults {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    final_loss: f64,
    max_target_sqnorm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stream_sha256: Option<String>,
}

pub fn train_command(args: &TrainArgs, out: &Path) -> CmdResult {
    let started = now_ms();
    let run = resolve_train(args)?;
    let mut debug = args.debug.then(|| DebugLog::new(run.train.s));
    let (model, outcome) = match debug.as_mut() {
        Some(log) => train_model(&run, log)?,
        None => train_model(&run, &mut ())?,
    };
    let (stats, error) = match outcome {
        Ok(stats) => (stats, None),
        Err(aborted) => (aborted.stats, Some(aborted.error)),
    };

    let mut manifest = RunManifest::new("train", &run, run.train.seed, started);
    if error.is_none() {
        model.save(&out.join("model.bin"))?;
        manifest.output("model.bin");
    }
    stats_table(&stats).save(&out.join("stats.csv"))?;
    manifest.output("stats.csv");
    let mut stream_sha256 = None;
    if let Some(log) = debug {
        log.table.save(&out.join("debug.csv"))?;
        manifest.output("debug.csv");
        stream_sha256 = Some(hex::encode(log.hasher.finalize()));
    }
    manifest.results = serde_json::to_value(TrainResults {
        status: if error.is_none() { "ok" } else { "aborted" },
        error: error.as_ref().map(ToString::to_string),
        final_loss: stats.final_loss,
        max_target_sqnorm: stats.max_target_sqnorm,
        stream_sha256,
    })
    .expect("results serialize");
    manifest.write(out)?;
    match error {
        None => {
            eprintln!(
                "train: {} steps, final loss {:.6}, written to {}",
                run.train.steps,
                stats.final_loss,
                out.display()
            );
            Ok(())
        }
        Some(e) => Err(Failure::Error(e)),
    }
}

pub fn resolve_sample(args: &SampleArgs) -> Result<SampleRun> {
    let mut run: SampleRun = load_config(args.config.as_deref())?;
    if let Some(task) = &args.task {
        run.task = TaskSpec::preset(task)?;
    }
    if args.oracle {
        run.params = None;
    } else if let Some(p) = &args.params {
        run.params = Some(p.clone());
    } else if run.params.is_none() {
        return Err(BridgeError::Config("sample needs --params or --oracle".into()));
    }
    if let Some(v) = args.steps {
        run.steps = v;
    }
    if let Some(v) = args.gamma {
        run.gamma = v;
    }
    if let Some(v) = args.mode {
        run.mode = v;
    }
    if let Some(v) = args.s {
        run.s = NoiseScale::new(v)?;
    }
    if let Some(v) = args.runs {
        run.runs = v;
    }
    if let Some(v) = args.trajectories {
        run.trajectories = v;
    }
    if args.zero_context {
        run.zero_context = true;
    }
    run.task.validate()?;
    if run.runs < 2 {
        return Err(BridgeError::Config("runs must be at least 2".into()));
    }
    if run.trajectories > run.runs {
        return Err(BridgeError::Config("cannot export more trajectories than runs".into()));
    }
    run.schedule = Schedule::shifted(run.steps, run.gamma)?.points().to_vec();
    Ok(run)
}

fn field_source<'a>(model: Option<&'a VelocityModel>, zero_context: bool) -> FieldSource<'a> {
    match model {
        None => FieldSource::Oracle,
        Some(m) if zero_context => FieldSource::ModelWithoutContext(m),
        Some(m) => FieldSource::Model(m),
    }
}

fn check_model_fits(model: &VelocityModel, spec: &TaskSpec) -> Result<()> {
    if model.config.input_dim != spec.dim() || model.config.context_dim != spec.context_dim() {
        return Err(BridgeError::Config(format!(
            "model dims ({}, context {}) do not fit task {spec} ({}, context {})",
            model.config.input_dim,
            model.config.context_dim,
            spec.dim(),
            spec.context_dim()
        )));
    }
    Ok(())
}

/// Fresh pairs from `fork(0)` of the evaluation stream, endpoints from `fork(1)`.
fn sample_pairs(
    field: FieldSource<'_>,
    spec: &TaskSpec,
    schedule: &Schedule,
    mode: SamplerMode,
    s: NoiseScale,
    runs: usize,
    seed: u64,
) -> Result<(Vec<ConditionedPair>, Vec<Tensor>, EvalReport)> {
    let rng = RngStream::new(seed, STREAM_EVAL);
    let pairs = generate_conditioned(spec, runs, &mut rng.fork(0))?;
    let endpoints = generate_endpoints(field, &pairs, schedule, mode, s, &rng.fork(1))?;
    let report = score(&pairs, &endpoints)?;
    Ok((pairs, endpoints, report))
}

/// Re-runs pair `i` with the same stream as [`generate_endpoints`], keeping the path.
fn trajectory(
    field: FieldSource<'_>,
    item: &ConditionedPair,
    i: usize,
    run: &SampleRun,
    schedule: &Schedule,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let mut stream = RngStream::new(seed, STREAM_EVAL).fork(1).fork(i as u64);
    let oracle;
    let without;
    let f: &dyn VelocityField = match field {
        FieldSource::Model(m) => m,
        FieldSource::ModelWithoutContext(m) => {
            without = WithoutContext(m);
            &without
        }
        FieldSource::Oracle => {
            oracle = OracleField::new(item.pair.x1().clone());
            &oracle
        }
    };
    sample(run.mode, item.pair.x0(), f, item.context.as_ref(), schedule, run.s, &mut stream)
}

fn endpoints_table(pairs: &[ConditionedPair], endpoints: &[Tensor]) -> CsvTable {
    let dim = pairs.first().map_or(0, |p| p.pair.dim());
    let ctx = pairs.first().and_then(|p| p.context.as_ref()).map_or(0, Tensor::len);
    let header = std::iter::once("i".to_string())
        .chain((0..dim).map(|j| format!("x0_{j}")))
        .chain((0..dim).map(|j| format!("x1_{j}")))
        .chain((0..dim).map(|j| format!("xhat_{j}")))
        .chain((0..ctx).map(|j| format!("context_{j}")));
    let mut table = CsvTable::new(header);
    for (i, (item, x)) in pairs.iter().zip(endpoints).enumerate() {
        let context = item.context.as_ref().map_or(&[][..], Tensor::data);
        table.row(
            std::iter::once(i.to_string()).chain(
                item.pair
                    .x0()
                    .data()
                    .iter()
                    .chain(item.pair.x1().data())
                    .chain(x.data())
                    .chain(context)
                    .map(f64::to_string),
            ),
        );
    }
    table
}

pub fn sample_command(args: &SampleArgs, out: &Path) -> CmdResult {
    let started = now_ms();
    let run = resolve_sample(args)?;
    let model = run.params.as_deref().map(VelocityModel::load).transpose()?;
    if let Some(m) = &model {
        check_model_fits(m, &run.task)?;
    }
    let field = field_source(model.as_ref(), run.zero_context);
    let schedule = Schedule::from_points(run.schedule.clone())?;
    let (pairs, endpoints, report) =
        sample_pairs(field, &run.task, &schedule, run.mode, run.s, run.runs, args.seed)?;

    let mut manifest = RunManifest::new("sample", &run, args.seed, started);
    endpoints_table(&pairs, &endpoints).save(&out.join("endpoints.csv"))?;
    manifest.output("endpoints.csv");
    write_json(&out.join("report.json"), &report)?;
    manifest.output("report.json");
    for i in 0..run.trajectories {
        let path = trajectory(field, &pairs[i], i, &run, &schedule, args.seed)?;
        let name = format!("trajectory_{i}.csv");
        trajectory_csv(&schedule, &path).save(&out.join(&name))?;
        manifest.output(name);
    }
    manifest.results = serde_json::to_value(report).expect("report serializes");
    manifest.write(out)?;
    eprintln!(
        "sample: {} runs, paired mse {:.6}, energy distance {:.6}",
        report.samples, report.paired_mse, report.energy_distance
    );
    Ok(())
}

pub fn resolve_ablate(args: &AblateArgs) -> Result<AblateRun> {
    let mut run: AblateRun = load_config(args.config.as_deref())?;
    run.axis = args.axis;
    run.values = args.values.clone();
    if let Some(task) = &args.task {
        run.train.task = TaskSpec::preset(task)?;
    }
    if let Some(v) = args.steps {
        run.train.train.steps = v;
    }
    run.train.train.seed = args.seed;
    if run.values.len() < 2 {
        return Err(BridgeError::Config("ablation needs at least two axis values".into()));
    }
    run.train.validate()?;
    for v in &run.values {
        cell_settings(&run, v)?;
    }
    Ok(run)
}

/// Training run and sampler settings for one axis value.
fn cell_settings(run: &AblateRun, value: &str) -> Result<(TrainRun, AblateSampling, NoiseScale)> {
    let mut train = run.train.clone();
    let mut sampling = run.sample.clone();
    let bad = |what: &str| BridgeError::Config(format!("bad {what} value '{value}'"));
    match run.axis {
        Axis::Objective => train.train.objective = value.parse()?,
        Axis::NoiseScale => {
            train.train.s = NoiseScale::new(value.parse().map_err(|_| bad("noise scale"))?)?
        }
        Axis::Steps => sampling.steps = value.parse().map_err(|_| bad("steps"))?,
        Axis::Gamma => sampling.gamma = value.parse().map_err(|_| bad("gamma"))?,
    }
    Schedule::shifted(sampling.steps, sampling.gamma)?;
    let s = train.train.s;
    Ok((train, sampling, s))
}

#[derive(Debug, Clone, Default)]
struct CellRow {
    status: String,
    report: Option<EvalReport>,
    final_loss: Option<f64>,
    max_target_sqnorm: Option<f64>,
    error: String,
}

fn evaluate_cell(
    model: &VelocityModel,
    train: &TrainRun,
    sampling: &AblateSampling,
    s: NoiseScale,
    seed: u64,
) -> Result<EvalReport> {
    let schedule = Schedule::shifted(sampling.steps, sampling.gamma)?;
    let field = field_source(Some(model), train.zero_context);
    let (_, _, report) = sample_pairs(field, &train.task, &schedule, sampling.mode, s, sampling.runs, seed)?;
    Ok(report)
}

pub fn ablate_command(args: &AblateArgs, out: &Path) -> CmdResult {
    let started = now_ms();
    let run = resolve_ablate(args)?;
    let seed = args.seed;
    // Steps and gamma only change sampling, so one trained model serves all cells.
    let shared = match run.axis {
        Axis::Steps | Axis::Gamma => Some(train_model(&run.train, &mut ())?),
        _ => None,
    };
    let mut rows = Vec::new();
    for value in &run.values {
        let (train, sampling, s) = cell_settings(&run, value)?;
        let trained;
        let (model, outcome) = match &shared {
            Some((m, o)) => (m, o.as_ref()),
            None => {
                trained = train_model(&train, &mut ())?;
                (&trained.0, trained.1.as_ref())
            }
        };
        let mut row = CellRow::default();
        match outcome {
            Err(aborted) => {
                row.status = "train_failed".into();
                row.error = aborted.error.to_string();
                row.max_target_sqnorm = Some(aborted.stats.max_target_sqnorm);
            }
            Ok(stats) => {
                row.final_loss = Some(stats.final_loss);
                row.max_target_sqnorm = Some(stats.max_target_sqnorm);
                match evaluate_cell(model, &train, &sampling, s, seed) {
                    Ok(report) => {
                        row.status = "ok".into();
                        row.report = Some(report);
                    }
                    Err(e) => {
                        row.status = "sample_failed".into();
                        row.error = e.to_string();
                    }
                }
            }
        }
        if row.status != "ok" {
            eprintln!("ablate: {}={value} failed: {}", run.axis, row.error);
        }
        rows.push((value.clone(), row));
    }

    let mut table = CsvTable::new([
        "axis",
        "value",
        "status",
        "paired_mse",
        "energy_distance",
        "source_energy_distance",
        "mean_displacement_error",
        "samples",
        "final_loss",
        "max_target_sqnorm",
        "error",
    ]);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (value, row) in &rows {
        let r = row.report.as_ref();
        table.row([
            run.axis.name().to_string(),
            value.clone(),
            row.status.clone(),
            opt(r.map(|r| r.paired_mse)),
            opt(r.map(|r| r.energy_distance)),
            opt(r.map(|r| r.source_energy_distance)),
            opt(r.map(|r| r.mean_displacement_error)),
            r.map(|r| r.samples.to_string()).unwrap_or_default(),
            opt(row.final_loss),
            opt(row.max_target_sqnorm),
            row.error.clone(),
        ]);
    }
    table.save(&out.join("summary.csv"))?;
    let mut manifest = RunManifest::new("ablate", &run, seed, started);
    manifest.output("summary.csv");
    manifest.write(out)?;
    let ok = rows.iter().filter(|(_, r)| r.status == "ok").count();
    eprintln!("ablate: {ok}/{} cells completed, summary in {}", rows.len(), out.display());
    Ok(())
}
