//! Target magnitudes seen by the three objectives on gaussian_shift.

use bridgeflow::tasks::TaskSpec;
use bridgeflow::trainer::{train, SampleRecord, TaskProvider, TrainConfig, TrainObserver, TrainStats, STREAM_INIT};
use bridgeflow::{ModelConfig, ObjectiveKind, RngStream, VelocityModel};

#[derive(Default)]
struct ByTime {
    early: (f64, usize),
    late: (f64, usize),
}

impl TrainObserver for ByTime {
    fn on_sample(&mut self, r: &SampleRecord<'_>) {
        let sq: f64 = r.target.target.data().iter().map(|v| v * v).sum();
        let slot = if r.sample.t < 0.1 {
            &mut self.early
        } else if r.sample.t > 0.9 {
            &mut self.late
        } else {
            return;
        };
        slot.0 += sq;
        slot.1 += 1;
    }
}

fn run(kind: ObjectiveKind, observer: &mut dyn TrainObserver) -> TrainStats {
    let spec = TaskSpec::preset("gaussian_shift").unwrap();
    let config = TrainConfig {
        objective: kind,
        seed: 7,
        steps: 2000,
        ..TrainConfig::default()
    };
    let mut mc = ModelConfig::new(spec.dim(), vec![64, 64]);
    mc.prediction = config.prediction();
    let mut model = VelocityModel::new(mc, &mut RngStream::new(7, STREAM_INIT)).unwrap();
    train(&mut model, &mut TaskProvider { spec }, &config, observer).unwrap()
}

#[test]
fn stabilized_losses_stay_finite() {
    let stats = run(ObjectiveKind::StabilizedVelocity, &mut ());
    assert_eq!(stats.rows.last().unwrap().step, 2000);
    assert!(stats.rows.iter().all(|r| r.loss.is_finite() && r.grad_norm.is_finite()));
}

#[test]
fn raw_velocity_targets_reach_the_singular_tail() {
    // With 128000 draws of t on [0, 1 - 1e-5], some t lands close enough to 1
    // that s^2 t |eps|^2 / (1 - t) alone passes 1e4 per coordinate.
    let stats = run(ObjectiveKind::Velocity, &mut ());
    assert!(stats.max_target_sqnorm > 1e4 * 2.0, "{}", stats.max_target_sqnorm);
}

#[test]
fn displacement_targets_are_dominated_by_early_times() {
    let mut by_time = ByTime::default();
    run(ObjectiveKind::Displacement, &mut by_time);
    let early = by_time.early.0 / by_time.early.1 as f64;
    let late = by_time.late.0 / by_time.late.1 as f64;
    assert!(late < 0.2 * early, "late {late} vs early {early}");
}
