//! Inference time grids on [0, 1].
//!
//! The shifted grid maps `u = i / N` through `t(u) = u / (gamma - (gamma - 1) u)`,
//! i.e. `t_i = i / (gamma N - (gamma - 1) i)`. Its slope at `u = 0` is
//! `1 / gamma`, so `gamma > 1` packs steps toward `t = 0` while keeping both
//! boundaries exact.

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    points: Vec<f64>,
    gamma: f64,
}

impl Schedule {
    /// `t_i = i / N`.
    pub fn uniform(steps: usize) -> Result<Self> {
        Self::shifted(steps, 1.0)
    }

    pub fn shifted(steps: usize, gamma: f64) -> Result<Self> {
        if steps == 0 {
            return Err(BridgeError::Config("schedule needs at least one step".into()));
        }
        if !gamma.is_finite() || gamma < 1.0 {
            return Err(BridgeError::Config(format!("shift gamma must be >= 1, got {gamma}")));
        }
        let n = steps as f64;
        let mut points: Vec<f64> = (0..=steps)
            .map(|i| {
                let i = i as f64;
                i / (gamma * n - (gamma - 1.0) * i)
            })
            .collect();
        // Rounding in the denominator can leave the last point a few ulps off.
        points[steps] = 1.0;
        Ok(Self { points, gamma })
    }

    /// Arbitrary grid; must start at 0, end at 1 and increase strictly.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(BridgeError::Config("schedule must run from 0 to 1".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BridgeError::Config("schedule must be strictly increasing".into()));
        }
        Ok(Self { points, gamma: f64::NAN })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Shift parameter; NaN for grids built from explicit points.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Consecutive `(t_k, t_{k+1})` pairs.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(Schedule::uniform(4).unwrap().points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(Schedule::uniform(1).unwrap().points(), &[0.0, 1.0]);
        assert!(Schedule::uniform(0).is_err());
    }

    #[test]
    fn shifted_example() {
        let s = Schedule::shifted(4, 5.0).unwrap();
        let want = [0.0, 1.0 / 16.0, 1.0 / 6.0, 3.0 / 8.0, 1.0];
        for (a, b) in s.points().iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert_eq!(s.points()[4], 1.0);
        assert!(Schedule::shifted(4, 0.5).is_err());
        assert!(Schedule::shifted(4, f64::NAN).is_err());
    }

    #[test]
    fn explicit_points_are_validated() {
        assert!(Schedule::from_points(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(Schedule::from_points(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Schedule::from_points(vec![0.1, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn gamma_one_is_bitwise_uniform(n in 1usize..2000) {
            let shifted = Schedule::shifted(n, 1.0).unwrap();
            for (i, &t) in shifted.points().iter().enumerate() {
                prop_assert_eq!(t.to_bits(), (i as f64 / n as f64).to_bits());
            }
        }

        #[test]
        fn shifted_grids_are_valid(n in 1usize..3000, gamma in 1.001f64..100.0) {
            let s = Schedule::shifted(n, gamma).unwrap();
            let p = s.points();
            prop_assert_eq!(p[0], 0.0);
            prop_assert_eq!(p[n], 1.0);
            let steps: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
            prop_assert!(steps.iter().all(|&d| d > 0.0));
            prop_assert!(steps.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(n == 1 || p[1] < 1.0 / n as f64);
        }
    }
}
