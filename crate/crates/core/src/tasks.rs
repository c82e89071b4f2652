//! Synthetic paired translation tasks.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bridge::{ConditionedPair, EndpointPair};
use crate::error::{BridgeError, Result};
use crate::numerics::{RngStream, Tensor};

/// Largest grid edge for `grid_colorize` (8x8x3 = 192 coordinates).
pub const MAX_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TaskSpec {
    /// `x0 ~ N(0, I)`, `x1 = x0 + shift`.
    GaussianShift { shift: Vec<f64> },
    /// Two-moons source rotated by `+angle` or `-angle`; the rotation is
    /// supplied as context `(cos, sin)`.
    MoonsRotate { angle: f64, noise: f64 },
    /// Grayscale `size x size x 3` gradient images to their colored originals.
    GridColorize { size: usize },
    /// Coarse signal (every `repeat`-th value held `repeat` times) to the
    /// smooth original.
    SignalRefine { length: usize, repeat: usize },
}

impl TaskSpec {
    pub const NAMES: [&'static str; 4] =
        ["gaussian_shift", "moons_rotate", "grid_colorize", "signal_refine"];

    /// Default parameters for a task name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gaussian_shift" => Ok(TaskSpec::GaussianShift {
                shift: vec![2.0, 0.0],
            }),
            "moons_rotate" => Ok(TaskSpec::MoonsRotate {
                angle: PI / 4.0,
                noise: 0.05,
            }),
            "grid_colorize" => Ok(TaskSpec::GridColorize { size: 4 }),
            "signal_refine" => Ok(TaskSpec::SignalRefine {
                length: 16,
                repeat: 4,
            }),
            other => Err(BridgeError::Config(format!(
                "unknown task '{other}', expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::GaussianShift { .. } => "gaussian_shift",
            TaskSpec::MoonsRotate { .. } => "moons_rotate",
            TaskSpec::GridColorize { .. } => "grid_colorize",
            TaskSpec::SignalRefine { .. } => "signal_refine",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::GaussianShift { shift } => shift.len(),
            TaskSpec::MoonsRotate { .. } => 2,
            TaskSpec::GridColorize { size } => size * size * 3,
            TaskSpec::SignalRefine { length, .. } => *length,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            TaskSpec::MoonsRotate { .. } => 2,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(BridgeError::Config(why));
        match self {
            TaskSpec::GaussianShift { shift } => {
                if shift.is_empty() || shift.iter().any(|v| !v.is_finite()) {
                    return bad("gaussian_shift needs a non-empty finite shift".into());
                }
            }
            TaskSpec::MoonsRotate { angle, noise } => {
                if !angle.is_finite() || !noise.is_finite() || *noise < 0.0 {
                    return bad("moons_rotate needs a finite angle and non-negative noise".into());
                }
            }
            TaskSpec::GridColorize { size } => {
                if !(2..=MAX_GRID).contains(size) {
                    return bad(format!("grid size must lie in 2..={MAX_GRID}, got {size}"));
                }
            }
            TaskSpec::SignalRefine { length, repeat } => {
                if *repeat == 0 || *length == 0 || length % repeat != 0 {
                    return bad(format!(
                        "signal length {length} must be a positive multiple of repeat {repeat}"
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn vector(data: Vec<f64>) -> Tensor {
    Tensor::from_vec(data).expect("task generators produce finite values")
}

fn moon_point(rng: &mut RngStream, noise: f64) -> [f64; 2] {
    let theta = PI * rng.uniform();
    let (x, y) = if rng.below(2) == 0 {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    };
    [x - 0.5 + noise * rng.normal(), y - 0.25 + noise * rng.normal()]
}

fn color_grid(size: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
    let (sin, cos) = (TAU * rng.uniform()).sin_cos();
    let span = (size - 1) as f64;
    let mut color = Vec::with_capacity(size * size * 3);
    let mut gray = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        for j in 0..size {
            let u = i as f64 / span - 0.5;
            let v = j as f64 / span - 0.5;
            let w = (0.5 + (u * cos + v * sin) / 2f64.sqrt()).clamp(0.0, 1.0);
            let rgb: Vec<f64> = (0..3).map(|c| (1.0 - w) * a[c] + w * b[c]).collect();
            let luma = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for c in 0..3 {
                color.push(rgb[c] - 0.5);
                gray.push(luma - 0.5);
            }
        }
    }
    (gray, color)
}

fn smooth_signal(length: usize, rng: &mut RngStream) -> Vec<f64> {
    let components: Vec<(f64, f64, f64)> = (1..=3)
        .map(|m| (m as f64, rng.normal() / m as f64, TAU * rng.uniform()))
        .collect();
    (0..length)
        .map(|n| {
            components
                .iter()
                .map(|&(f, a, phase)| a * (TAU * f * n as f64 / length as f64 + phase).sin())
                .sum()
        })
        .collect()
}

/// I.i.d. pairs with their conditioning, drawn from `rng`.
pub fn generate_conditioned(
    spec: &TaskSpec,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<ConditionedPair>> {
    spec.validate()?;
    if count == 0 {
        return Err(BridgeError::Config("pair count must be positive".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let item = match spec {
            TaskSpec::GaussianShift { shift } => {
                let x0 = rng.gaussian(&[shift.len()]);
                let x1 = vector(x0.data().iter().zip(shift).map(|(a, b)| a + b).collect());
                ConditionedPair::from(EndpointPair::new(x0, x1)?)
            }
            TaskSpec::MoonsRotate { angle, noise } => {
                let p = moon_point(rng, *noise);
                let phi = if rng.below(2) == 0 { *angle } else { -*angle };
                let (sin, cos) = phi.sin_cos();
                let x1 = vec![cos * p[0] - sin * p[1], sin * p[0] + cos * p[1]];
                ConditionedPair {
                    pair: EndpointPair::new(vector(p.to_vec()), vector(x1))?,
                    context: Some(vector(vec![cos, sin])),
                }
            }
            TaskSpec::GridColorize { size } => {
                let (gray, color) = color_grid(*size, rng);
                ConditionedPair::from(EndpointPair::new(vector(gray), vector(color))?)
            }
            TaskSpec::SignalRefine { length, repeat } => {
                let fine = smooth_signal(*length, rng);
                let coarse = (0..*length).map(|n| fine[n - n % repeat]).collect();
                ConditionedPair::from(EndpointPair::new(vector(coarse), vector(fine))?)
            }
        };
        out.push(item);
    }
    Ok(out)
}

/// Endpoint pairs without conditioning.
pub fn generate_pairs(spec: &TaskSpec, count: usize, rng: &mut RngStream) -> Result<Vec<EndpointPair>> {
    Ok(generate_conditioned(spec, count, rng)?
        .into_iter()
        .map(|c| c.pair)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::compensated_sum;

    #[test]
    fn gaussian_shift_mean_displacement() {
        let spec = TaskSpec::preset("gaussian_shift").unwrap();
        let pairs = generate_pairs(&spec, 10_000, &mut RngStream::new(1, 0)).unwrap();
        for j in 0..2 {
            let mean = compensated_sum(pairs.iter().map(|p| p.x1().data()[j] - p.x0().data()[j]))
                / pairs.len() as f64;
            assert!((mean - [2.0, 0.0][j]).abs() < 0.05);
        }
    }

    #[test]
    fn signal_refine_holds_kept_values() {
        let spec = TaskSpec::SignalRefine {
            length: 16,
            repeat: 4,
        };
        let pairs = generate_pairs(&spec, 3, &mut RngStream::new(2, 0)).unwrap();
        for p in &pairs {
            let (x0, x1) = (p.x0().data(), p.x1().data());
            for block in 0..4 {
                for r in 0..4 {
                    assert_eq!(x0[block * 4 + r], x1[block * 4]);
                }
            }
            assert_ne!(x0, x1);
        }
    }

    #[test]
    fn same_seed_same_pairs() {
        for name in TaskSpec::NAMES {
            let spec = TaskSpec::preset(name).unwrap();
            let a = generate_conditioned(&spec, 5, &mut RngStream::new(3, 0)).unwrap();
            let b = generate_conditioned(&spec, 5, &mut RngStream::new(3, 0)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a[0].pair.dim(), spec.dim());
            assert_eq!(a[0].context.as_ref().map_or(0, Tensor::len), spec.context_dim());
        }
    }

    #[test]
    fn moons_rotation_preserves_norm_and_matches_context() {
        let spec = TaskSpec::preset("moons_rotate").unwrap();
        let items = generate_conditioned(&spec, 200, &mut RngStream::new(4, 0)).unwrap();
        for item in items {
            let (x0, x1) = (item.pair.x0(), item.pair.x1());
            assert!((x0.squared_norm() - x1.squared_norm()).abs() < 1e-12);
            let c = item.context.unwrap();
            let (cos, sin) = (c.data()[0], c.data()[1]);
            let rotated = [cos * x0.data()[0] - sin * x0.data()[1], sin * x0.data()[0] + cos * x0.data()[1]];
            assert!((rotated[0] - x1.data()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_colorize_source_is_luma() {
        let spec = TaskSpec::GridColorize { size: 3 };
        let pairs = generate_pairs(&spec, 2, &mut RngStream::new(5, 0)).unwrap();
        for p in pairs {
            assert_eq!(p.dim(), 27);
            for px in p.x0().data().chunks(3) {
                assert_eq!(px[0], px[1]);
                assert_eq!(px[1], px[2]);
            }
            for (g, c) in p.x0().data().chunks(3).zip(p.x1().data().chunks(3)) {
                // Luma weights sum to one, so the centering offset cancels.
                let luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
                assert!((g[0] - luma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(TaskSpec::preset("nope").is_err());
        assert!(TaskSpec::SignalRefine { length: 10, repeat: 4 }.validate().is_err());
        assert!(TaskSpec::GridColorize { size: 9 }.validate().is_err());
        assert!(TaskSpec::GaussianShift { shift: vec![] }.validate().is_err());
        let spec = TaskSpec::preset("gaussian_shift").unwrap();
        assert!(generate_pairs(&spec, 0, &mut RngStream::new(0, 0)).is_err());
    }
}
