use std::path::Path;

use serde::Serialize;

use super::manifest::{now_ms, RunManifest};
use super::svg::profile_plot;
use super::{CmdResult, Failure, ProfileArgs, SimulateArgs, VerifyArgs};
use crate::bridge::{interpolate, marginal_variance, sample_state, EndpointPair, NoiseScale};
use crate::error::{BridgeError, Result};
use crate::io::{pairs_csv, write_atomic, CsvTable};
use crate::numerics::{RngStream, Tensor};
use crate::objectives::{profile_grid, target_profile, ObjectiveKind};
use crate::schedule::Schedule;
use crate::tasks::{generate_pairs, TaskSpec};
use crate::verify::{self, Suite, Tolerances};

/// Stream id for the profile command's Monte-Carlo draws.
const STREAM_PROFILE: u64 = 6;
/// Stream id for `simulate`.
const STREAM_SIMULATE: u64 = 7;

#[derive(Serialize)]
struct SimulateConfig<'a> {
    task: &'a TaskSpec,
    count: usize,
    s: NoiseScale,
    times: &'a [f64],
}

pub fn simulate(args: &SimulateArgs, out: &Path) -> CmdResult {
    let started = now_ms();
    let spec = TaskSpec::preset(&args.task)?;
    let s = NoiseScale::new(args.s)?;
    let root = RngStream::new(args.seed, STREAM_SIMULATE);
    let pairs = generate_pairs(&spec, args.count, &mut root.fork(0))?;
    let times: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();

    let mut table = CsvTable::new(["t", "empirical_variance", "bridge_variance"]);
    let mut noise = root.fork(1);
    for &t in &times {
        let mut total = 0.0;
        let mut count = 0usize;
        for pair in &pairs {
            let state = sample_state(pair, t, noise.gaussian(pair.shape()), s)?.state;
            let deviation = state.sub(&interpolate(pair, t)?)?;
            total += deviation.squared_norm();
            count += pair.dim();
        }
        table.row([
            t.to_string(),
            (total / count as f64).to_string(),
            marginal_variance(t, s)?.to_string(),
        ]);
    }
    table.save(&out.join("bridge.csv"))?;
    pairs_csv(&pairs).save(&out.join("pairs.csv"))?;

    let config = SimulateConfig {
        task: &spec,
        count: args.count,
        s,
        times: &times,
    };
    let mut manifest = RunManifest::new("simulate", &config, args.seed, started);
    manifest.output("pairs.csv");
    manifest.output("bridge.csv");
    manifest.write(out)?;
    eprintln!("simulate: {} pairs written to {}", pairs.len(), out.display());
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> CmdResult {
    let started = now_ms();
    let defaults = Tolerances::default();
    let tol = Tolerances {
        mc: args.mc.unwrap_or(defaults.mc),
        rel: args.tol_rel.unwrap_or(defaults.rel),
        sigma: args.sigma.unwrap_or(defaults.sigma),
    };
    let report = verify::run(args.suite, args.seed, &tol)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        write_atomic(&dir.join("verify_report.json"), text.as_bytes())?;
        #[derive(Serialize)]
        struct VerifyConfig {
            suite: Suite,
            tolerances: Tolerances,
        }
        let mut manifest = RunManifest::new(
            "verify",
            &VerifyConfig {
                suite: args.suite,
                tolerances: tol,
            },
            args.seed,
            started,
        );
        manifest.output("verify_report.json");
        manifest.write(dir)?;
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    eprintln!(
        "verify {}: {} checks, {} failed",
        args.suite,
        report.checks.len(),
        failed.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join("; ")))
    }
}

#[derive(Serialize)]
struct ProfileConfig<'a> {
    objectives: &'a [ObjectiveKind],
    dim: usize,
    distance_sq: f64,
    s: NoiseScale,
    intervals: usize,
    mc: usize,
}

fn profile_pair(dim: usize, distance_sq: f64) -> Result<EndpointPair> {
    if dim == 0 {
        return Err(BridgeError::Config("profile dimension must be at least 1".into()));
    }
    if !(distance_sq.is_finite() && distance_sq > 0.0) {
        return Err(BridgeError::Config("distance-sq must be positive".into()));
    }
    // Target profiles depend on the pair only through |x1 - x0|^2 and D.
    let mut x1 = vec![0.0; dim];
    x1[0] = distance_sq.sqrt();
    EndpointPair::new(Tensor::zeros(&[dim]), Tensor::from_vec(x1)?)
}

pub fn profile(args: &ProfileArgs, out: &Path) -> CmdResult {
    let started = now_ms();
    if args.intervals < 2 {
        return Err(BridgeError::Config("need at least two grid intervals".into()).into());
    }
    let s = NoiseScale::new(args.s)?;
    let pair = profile_pair(args.dim, args.distance_sq)?;
    let grid = profile_grid(args.intervals);
    let rng = RngStream::new(args.seed, STREAM_PROFILE);
    let mut manifest = RunManifest::new(
        "profile",
        &ProfileConfig {
            objectives: &args.objective,
            dim: args.dim,
            distance_sq: args.distance_sq,
            s,
            intervals: args.intervals,
            mc: args.mc,
        },
        args.seed,
        started,
    );
    let mut profiles = Vec::new();
    for (i, &kind) in args.objective.iter().enumerate() {
        let profile = target_profile(kind, &pair, s, &grid, args.mc, &rng.fork(i as u64))?;
        let mut table = CsvTable::new(["t", "S", "C"]);
        for p in &profile {
            table.row([p.t.to_string(), p.s.to_string(), p.c.to_string()]);
        }
        let name = format!("profile_{}.csv", kind.name());
        table.save(&out.join(&name))?;
        manifest.output(name);
        profiles.push((kind.name(), profile));
    }
    if args.svg {
        let series: Vec<(&str, &[_])> = profiles.iter().map(|(n, p)| (*n, p.as_slice())).collect();
        write_atomic(&out.join("profile.svg"), profile_plot(&series).as_bytes())?;
        manifest.output("profile.svg");
    }
    manifest.write(out)?;
    eprintln!("profile: {} objective(s) written to {}", profiles.len(), out.display());
    Ok(())
}

pub fn schedule_dump(steps: usize, gamma: f64, out_dir: Option<&Path>) -> CmdResult {
    let started = now_ms();
    let schedule = Schedule::shifted(steps, gamma)?;
    let mut table = CsvTable::new(["i", "t"]);
    for (i, t) in schedule.points().iter().enumerate() {
        table.row([i.to_string(), t.to_string()]);
    }
    match out_dir {
        None => {
            print!("{}", String::from_utf8_lossy(&table.into_bytes()));
        }
        Some(dir) => {
            table.save(&dir.join("schedule.csv"))?;
            #[derive(Serialize)]
            struct DumpConfig {
                steps: usize,
                gamma: f64,
            }
            let mut manifest = RunManifest::new("schedule dump", &DumpConfig { steps, gamma }, 0, started);
            manifest.output("schedule.csv");
            manifest.write(dir)?;
        }
    }
    Ok(())
}
