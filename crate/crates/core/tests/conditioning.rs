//! Context input matters on the rotation task: the same network trained and
//! sampled with zeroed context matches the target law worse.

use bridgeflow::eval::{evaluate, FieldSource};
use bridgeflow::tasks::TaskSpec;
use bridgeflow::trainer::{train, TaskProvider, TrainConfig, ZeroedContext, STREAM_EVAL, STREAM_INIT};
use bridgeflow::{ModelConfig, NoiseScale, RngStream, SamplerMode, Schedule, VelocityModel};

fn trained(spec: &TaskSpec, zero_context: bool, config: &TrainConfig) -> VelocityModel {
    let mut mc = ModelConfig::new(spec.dim(), vec![64, 64]);
    mc.context_dim = spec.context_dim();
    let mut model = VelocityModel::new(mc, &mut RngStream::new(config.seed, STREAM_INIT)).unwrap();
    let tasks = TaskProvider { spec: spec.clone() };
    if zero_context {
        train(&mut model, &mut ZeroedContext(tasks), config, &mut ()).unwrap();
    } else {
        train(&mut model, &mut { tasks }, config, &mut ()).unwrap();
    }
    model
}

#[test]
fn context_lowers_energy_distance_on_moons_rotate() {
    let spec = TaskSpec::preset("moons_rotate").unwrap();
    let config = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let schedule = Schedule::uniform(16).unwrap();
    let eval_rng = RngStream::new(11, STREAM_EVAL);
    let with = trained(&spec, false, &config);
    let without = trained(&spec, true, &config);
    let score = |field| {
        evaluate(field, &spec, &schedule, SamplerMode::Corrected, NoiseScale::UNIT, 2000, &eval_rng)
            .unwrap()
    };
    let a = score(FieldSource::Model(&with));
    let b = score(FieldSource::ModelWithoutContext(&without));
    assert!(a.energy_distance < b.energy_distance, "{a:?} vs {b:?}");
    assert_eq!(a.source_energy_distance, b.source_energy_distance);
}
