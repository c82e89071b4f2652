use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::BridgeError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" | "adaptive-moment" | "adaptive_moment" => Ok(OptimizerKind::Adam),
            other => Err(crate::BridgeError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam {
        learning_rate: f64,
        first: Vec<f64>,
        second: Vec<f64>,
        steps: i32,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, parameter_count: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam {
                learning_rate,
                first: vec![0.0; parameter_count],
                second: vec![0.0; parameter_count],
                steps: 0,
            },
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *learning_rate * g;
                }
            }
            Optimizer::Adam {
                learning_rate,
                first,
                second,
                steps,
            } => {
                *steps = steps.saturating_add(1);
                let c1 = 1.0 - BETA1.powi(*steps);
                let c2 = 1.0 - BETA2.powi(*steps);
                for i in 0..params.len() {
                    let g = grad[i];
                    first[i] = BETA1 * first[i] + (1.0 - BETA1) * g;
                    second[i] = BETA2 * second[i] + (1.0 - BETA2) * g * g;
                    let m = first[i] / c1;
                    let v = second[i] / c2;
                    params[i] -= *learning_rate * m / (v.sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.05, 2);
            let mut p = vec![3.0, -2.0];
            for _ in 0..2000 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
                opt.update(&mut p, &g);
            }
            assert!(p.iter().all(|x| x.abs() < 1e-2), "{kind:?}: {p:?}");
        }
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 1);
        let mut p = vec![0.0];
        opt.update(&mut p, &[123.0]);
        assert!((p[0] + 0.1).abs() < 1e-9);
    }
}
