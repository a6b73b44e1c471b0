//! First-order optimizers over flat parameter slices. All minimise; callers
//! that ascend pass the negated gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::Float;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "defaults::b1")]
        b1: f64,
        #[serde(default = "defaults::b2")]
        b2: f64,
        #[serde(default = "defaults::eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

mod defaults {
    pub fn b1() -> f64 {
        0.9
    }
    pub fn b2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64, eps: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps,
            weight_decay: 0.0,
        }
    }

    /// Decoupled weight decay with library defaults.
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let moments = matches!(config, OptimizerConfig::Adam { .. });
        Self {
            config,
            step: 0,
            m: if moments { vec![0.0; len] } else { Vec::new() },
            v: if moments { vec![0.0; len] } else { Vec::new() },
        }
    }

    pub fn update<F: Float>(&mut self, params: &mut [F], grad: &[F]) {
        assert_eq!(params.len(), grad.len(), "optimizer gradient length");
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p = F::from_f64(p.to_f64() - lr * g.to_f64());
                }
            }
            OptimizerConfig::Adam {
                lr,
                b1,
                b2,
                eps,
                weight_decay,
            } => {
                let t = self.step as i32;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for (k, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let g = g.to_f64();
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                    let mhat = self.m[k] / c1;
                    let vhat = self.v[k] / c2;
                    let pv = p.to_f64();
                    *p = F::from_f64(pv - lr * (mhat / (vhat.sqrt() + eps) + weight_decay * pv));
                }
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Float>(grads: &mut [&mut [F]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x.to_f64() * x.to_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = F::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut o = Optimizer::new(OptimizerConfig::Sgd { lr: 0.5 }, 2);
        let mut p = [1.0, 2.0];
        o.update(&mut p, &[2.0, -2.0]);
        assert_eq!(p, [0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut o = Optimizer::new(OptimizerConfig::adam(0.1, 1e-12), 2);
        let mut p = [0.0f64, 0.0];
        o.update(&mut p, &[3.0, -0.01]);
        assert!((p[0] + 0.1).abs() < 1e-9);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn adamw_decays_with_zero_gradient() {
        let mut o = Optimizer::new(OptimizerConfig::adamw(0.1), 1);
        let mut p = [2.0f64];
        o.update(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 0.1 * 1e-4 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut o = Optimizer::new(OptimizerConfig::adam(0.05, 1e-8), 1);
        let mut p = [3.0f64];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            o.update(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn clipping() {
        let mut a = [3.0f32, 0.0];
        let mut b = [4.0f32];
        let n = clip_global_norm(&mut [&mut a[..], &mut b[..]], 1.0);
        assert!((n - 5.0).abs() < 1e-6);
        assert!((a[0] - 0.6).abs() < 1e-6 && (b[0] - 0.8).abs() < 1e-6);
    }
}
