//! Actor-critic losses over recorded sequences, with their gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_reverse, Ops, Tape, Tensor};
use crate::error::{Error, Result};
use crate::policy::{self, NetParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlAlgorithm {
    Ppo,
    A2c,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub algorithm: RlAlgorithm,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub clip_value: bool,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            algorithm: RlAlgorithm::Ppo,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            clip_value: true,
            epochs: 4,
            minibatches: 2,
            max_grad_norm: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.clip_eps <= 0.0 {
            return Err(Error::config(
                format!("{prefix}.clip_eps"),
                "must be positive",
            ));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err(Error::config(
                format!("{prefix}.epochs"),
                "epochs and minibatches must be at least 1",
            ));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.max_grad_norm <= 0.0 {
            return Err(Error::config(
                format!("{prefix}.value_coef"),
                "coefficients must be non-negative",
            ));
        }
        Ok(())
    }
}

/// A sequence minibatch; per-step arrays are indexed `[l][row]`.
pub struct SeqBatch<'a> {
    pub obs: &'a [Tensor<f32>],
    pub reset: &'a [bool],
    pub actions: &'a [Vec<usize>],
    pub old_logp: &'a [Vec<f64>],
    pub old_values: &'a [Vec<f64>],
    pub advantages: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

fn column(v: &[f64]) -> Tensor<f32> {
    Tensor::from_vec(v.len(), 1, v.iter().map(|&x| x as f32).collect())
}

/// Builds the mean per-step loss on a tape and returns its gradient.
///
/// Policy term: PPO's clipped surrogate or A2C's `-log pi * A`. Value term:
/// `value_coef * (V - target)^2`, with PPO-style value clipping around the
/// behaviour values when enabled. Entropy is subtracted with its coefficient.
pub fn policy_value_loss(
    params: &NetParams<f32>,
    batch: &SeqBatch<'_>,
    cfg: &LossConfig,
) -> Result<(Vec<Tensor<f32>>, LossStats)> {
    let steps = batch.obs.len();
    if steps == 0 {
        return Err(Error::Shape("empty sequence batch".into()));
    }
    let rows = batch.obs[0].rows;
    let tape = Tape::<f32>::new();
    let ops = &tape;
    let net = policy::lift_tape(&tape, params);
    let inputs: Vec<_> = batch.obs.iter().map(|o| tape.input(o.clone())).collect();
    let seq = policy::forward(&ops, &net, &inputs, batch.reset, None)?;
    let n = (steps * rows) as f64;
    let eps = cfg.clip_eps;

    let mut stats = LossStats::default();
    let mut total = None;
    for l in 0..steps {
        let logp_all = ops.log_softmax(&seq.logits[l]);
        let logp = ops.gather(&logp_all, &batch.actions[l]);
        let adv = ops.constant(column(&batch.advantages[l]));
        let policy_term = match cfg.algorithm {
            RlAlgorithm::A2c => ops.mul(&logp, &adv),
            RlAlgorithm::Ppo => {
                let old = ops.constant(column(&batch.old_logp[l]));
                let ratio = ops.exp(&ops.sub(&logp, &old));
                let unclipped = ops.mul(&ratio, &adv);
                let clipped = ops.mul(&ops.clamp(&ratio, 1.0 - eps, 1.0 + eps), &adv);
                for (r, &a) in ratio.value().data.iter().zip(&batch.advantages[l]) {
                    let r = *r as f64;
                    let lr = r.ln();
                    stats.approx_kl += (r - 1.0) - lr;
                    if (r - 1.0).abs() > eps && a != 0.0 {
                        stats.clip_fraction += 1.0;
                    }
                }
                ops.minimum(&unclipped, &clipped)
            }
        };
        let target = ops.constant(column(&batch.targets[l]));
        let v = &seq.values[l];
        let mut sq = ops.square(&ops.sub(v, &target));
        if cfg.clip_value && cfg.algorithm == RlAlgorithm::Ppo {
            let old_v = ops.constant(column(&batch.old_values[l]));
            let moved = ops.clamp(&ops.sub(v, &old_v), -eps, eps);
            let clipped = ops.square(&ops.sub(&ops.add(&old_v, &moved), &target));
            sq = ops.maximum(&sq, &clipped);
        }
        let entropy = ops.scale(&ops.sum(&ops.mul(&ops.exp(&logp_all), &logp_all)), -1.0);

        let p_sum = ops.sum(&policy_term);
        let v_sum = ops.sum(&sq);
        stats.policy_loss -= p_sum.value().item() as f64;
        stats.value_loss += v_sum.value().item() as f64;
        stats.entropy += entropy.value().item() as f64;

        let step_loss = ops.sub(
            &ops.add(&ops.scale(&p_sum, -1.0), &ops.scale(&v_sum, cfg.value_coef)),
            &ops.scale(&entropy, cfg.entropy_coef),
        );
        total = Some(match total {
            None => step_loss,
            Some(t) => ops.add(&t, &step_loss),
        });
    }
    let loss = ops.scale(&total.expect("non-empty"), 1.0 / n);
    stats.loss = loss.value().item() as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    if !stats.loss.is_finite() {
        return Err(Error::NumericAbort(format!("non-finite loss {stats:?}")));
    }
    let grads = grad_reverse(&tape, &loss, net.params())?;
    Ok((grads, stats))
}
