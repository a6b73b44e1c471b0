//! Exactly enumerable batched shaping game used to test estimator bias.
//!
//! Each of `B` parallel trajectories plays `M` one-step prisoner's dilemma
//! episodes against one naive learner with a single logit `psi`. After every
//! interior episode boundary the naive learner takes one policy-gradient step
//! on the whole batch with batch-centred rewards, so every meta action
//! influences every trajectory's later episodes. All `4^(B*M)` outcomes are
//! enumerated, giving exact expectations of both the return and each
//! estimator.

use serde::Serialize;

use super::{reinforce_gradient, EstimatorMode};
use crate::autodiff::{gradient, value_and_gradient, Dual, Scalar};
use crate::envs::ipd::PAYOFF;
use crate::error::{Error, Result};

/// Meta-policy parameter count (unused entries get zero gradient).
pub const N_PARAMS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaPolicy {
    /// Logit `theta[0]` in the first episode, then `theta[1 + n]` where `n`
    /// is the naive learner's action in the previous episode.
    HistoryConditioned,
    /// Logit `theta[0]` in every episode (inner-episode conditioning).
    EpisodeConditioned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MicroPomdp {
    pub batch: usize,
    pub episodes: usize,
    pub eta: f64,
    /// Naive learner's initial logit for defection.
    pub psi0: f64,
    pub policy: MetaPolicy,
}

impl Default for MicroPomdp {
    fn default() -> Self {
        Self {
            batch: 2,
            episodes: 2,
            eta: 4.0,
            psi0: 0.2,
            policy: MetaPolicy::HistoryConditioned,
        }
    }
}

fn logit_index(policy: MetaPolicy, episode: usize, prev_naive: Option<usize>) -> usize {
    match (policy, episode, prev_naive) {
        (MetaPolicy::HistoryConditioned, e, Some(n)) if e > 0 => 1 + n,
        _ => 0,
    }
}

fn bernoulli<S: Scalar>(logit: S, action: usize) -> S {
    let p = logit.sigmoid();
    if action == 1 {
        p
    } else {
        S::one() - p
    }
}

/// Batch-centred naive rewards of one episode.
fn naive_advantages(meta: &[usize], naive: &[usize]) -> Vec<f64> {
    let r: Vec<f64> = meta
        .iter()
        .zip(naive)
        .map(|(&a, &n)| PAYOFF[a][n].1)
        .collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|x| x - mean).collect()
}

/// The naive update as an explicit derivative of the batch surrogate
/// `(eta / B) sum_b A_b log pi_psi(n_b)`.
fn naive_update<S: Scalar>(psi: S, meta: &[usize], naive: &[usize], eta: f64) -> Result<S> {
    let adv = naive_advantages(meta, naive);
    let b = naive.len() as f64;
    let g = gradient::<S, 1>(
        |d| {
            let mut s = Dual::lift(S::zero());
            for (&n, &a) in naive.iter().zip(&adv) {
                s += bernoulli(d[0], n).ln().scale(a);
            }
            Ok(s.scale(eta / b))
        },
        [psi],
    )?;
    Ok(psi + g[0])
}

/// One enumerated outcome: actions `[episode][b]` for both players.
struct Leaf {
    meta: Vec<Vec<usize>>,
    naive: Vec<Vec<usize>>,
    naive_prob: f64,
}

fn leaves(cfg: &MicroPomdp) -> Result<Vec<Leaf>> {
    let (b, m) = (cfg.batch, cfg.episodes);
    let bits = 2 * b * m;
    if bits > 16 {
        return Err(Error::InvalidParameter(format!(
            "{} outcomes are too many to enumerate",
            1u64 << bits
        )));
    }
    let mut out = Vec::with_capacity(1 << bits);
    for code in 0u32..(1 << bits) {
        let bit = |k: usize| ((code >> k) & 1) as usize;
        let meta: Vec<Vec<usize>> = (0..m)
            .map(|e| (0..b).map(|j| bit(2 * (e * b + j))).collect())
            .collect();
        let naive: Vec<Vec<usize>> = (0..m)
            .map(|e| (0..b).map(|j| bit(2 * (e * b + j) + 1)).collect())
            .collect();
        let mut psi = vec![cfg.psi0];
        let mut naive_prob = 1.0;
        for e in 0..m {
            for &n in &naive[e] {
                naive_prob *= bernoulli(psi[e], n);
            }
            if e + 1 < m {
                psi.push(naive_update(psi[e], &meta[e], &naive[e], cfg.eta)?);
            }
        }
        out.push(Leaf {
            meta,
            naive,
            naive_prob,
        });
    }
    Ok(out)
}

fn meta_log_prob_terms<S: Scalar>(cfg: &MicroPomdp, leaf: &Leaf, theta: &[S; N_PARAMS]) -> S {
    let mut p = S::one();
    for e in 0..cfg.episodes {
        for j in 0..cfg.batch {
            let prev = (e > 0).then(|| leaf.naive[e - 1][j]);
            p *= bernoulli(theta[logit_index(cfg.policy, e, prev)], leaf.meta[e][j]);
        }
    }
    p
}

fn leaf_rewards(cfg: &MicroPomdp, leaf: &Leaf) -> Vec<Vec<f64>> {
    (0..cfg.batch)
        .map(|j| {
            (0..cfg.episodes)
                .map(|e| PAYOFF[leaf.meta[e][j]][leaf.naive[e][j]].0)
                .collect()
        })
        .collect()
}

/// Gradient of the exact expected shaping return
/// `E[(1/B) sum_b sum_l r_l^b]`, by forward-mode duals.
pub fn exact_gradient(cfg: &MicroPomdp, theta: [f64; N_PARAMS]) -> Result<(f64, [f64; N_PARAMS])> {
    let all = leaves(cfg)?;
    value_and_gradient(
        |t| {
            let mut j = Dual::lift(0.0);
            for leaf in &all {
                let ret: f64 =
                    leaf_rewards(cfg, leaf).iter().flatten().sum::<f64>() / cfg.batch as f64;
                j += meta_log_prob_terms(cfg, leaf, t).scale(leaf.naive_prob * ret);
            }
            Ok(j)
        },
        theta,
    )
}

/// Exact expectation of a raw-return estimator.
pub fn estimator_expectation(
    cfg: &MicroPomdp,
    theta: [f64; N_PARAMS],
    mode: EstimatorMode,
) -> Result<[f64; N_PARAMS]> {
    let mut g = [0.0; N_PARAMS];
    for leaf in &leaves(cfg)? {
        let prob = leaf.naive_prob * meta_log_prob_terms(cfg, leaf, &theta);
        let scores: Vec<Vec<Vec<f64>>> = (0..cfg.batch)
            .map(|j| {
                (0..cfg.episodes)
                    .map(|e| {
                        let prev = (e > 0).then(|| leaf.naive[e - 1][j]);
                        let k = logit_index(cfg.policy, e, prev);
                        let mut s = vec![0.0; N_PARAMS];
                        s[k] = leaf.meta[e][j] as f64 - crate::autodiff::sigmoid(theta[k]);
                        s
                    })
                    .collect()
            })
            .collect();
        let est = reinforce_gradient(&leaf_rewards(cfg, leaf), &scores, 1, mode)?;
        for (gi, e) in g.iter_mut().zip(est) {
            *gi += prob * e;
        }
    }
    Ok(g)
}

/// Per-episode expected meta reward `J(phi, psi)` of the one-step game.
fn episode_return<S: Scalar>(phi: S, psi: S) -> S {
    let mut j = S::zero();
    for a in 0..2 {
        for n in 0..2 {
            j += (bernoulli(phi, a) * bernoulli(psi, n)).scale(PAYOFF[a][n].0);
        }
    }
    j
}

/// Total derivative of `sum_m E[J(phi, psi_0 + sum_{q<=m} Delta_q)]` for the
/// episode-conditioned policy, where each `Delta_q` is itself computed by an
/// inner derivative and the expectation runs over the sampled batches that
/// feed the naive updates.
pub fn lookahead_total_derivative(cfg: &MicroPomdp, phi: f64) -> Result<f64> {
    fn level<S: Scalar>(cfg: &MicroPomdp, phi: S, psi: S, prob: S, episode: usize) -> Result<S> {
        let mut acc = prob * episode_return(phi, psi);
        if episode + 1 == cfg.episodes {
            return Ok(acc);
        }
        let b = cfg.batch;
        for code in 0u32..(1 << (2 * b)) {
            let meta: Vec<usize> = (0..b).map(|j| ((code >> (2 * j)) & 1) as usize).collect();
            let naive: Vec<usize> = (0..b)
                .map(|j| ((code >> (2 * j + 1)) & 1) as usize)
                .collect();
            let mut p = prob;
            for j in 0..b {
                p *= bernoulli(phi, meta[j]) * bernoulli(psi, naive[j]);
            }
            let next = naive_update(psi, &meta, &naive, cfg.eta)?;
            acc += level(cfg, phi, next, p, episode + 1)?;
        }
        Ok(acc)
    }
    let g = gradient::<f64, 1>(
        |d| level(cfg, d[0], Dual::lift(cfg.psi0), Dual::lift(1.0), 0),
        [phi],
    )?;
    Ok(g[0])
}

#[derive(Clone, Debug, Serialize)]
pub struct UnbiasednessReport {
    pub exact: [f64; N_PARAMS],
    pub coala: [f64; N_PARAMS],
    pub mfos: [f64; N_PARAMS],
    pub batch_unaware: [f64; N_PARAMS],
    pub coala_error: f64,
    pub mfos_gap: f64,
    pub batch_unaware_gap: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Compares every estimator's exact expectation with the true gradient.
pub fn unbiasedness(cfg: &MicroPomdp, theta: [f64; N_PARAMS]) -> Result<UnbiasednessReport> {
    let (_, exact) = exact_gradient(cfg, theta)?;
    let coala = estimator_expectation(cfg, theta, EstimatorMode::Coala)?;
    let mfos = estimator_expectation(cfg, theta, EstimatorMode::Mfos)?;
    let batch_unaware = estimator_expectation(cfg, theta, EstimatorMode::BatchUnaware)?;
    Ok(UnbiasednessReport {
        coala_error: max_abs_diff(&exact, &coala),
        mfos_gap: max_abs_diff(&exact, &mfos),
        batch_unaware_gap: max_abs_diff(&exact, &batch_unaware),
        exact,
        coala,
        mfos,
        batch_unaware,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LookaheadReport {
    pub coala: f64,
    pub total_derivative: f64,
    pub error: f64,
}

/// Episode-conditioned meta policy, naive learner initialised at the
/// co-player's parameters `psi0`.
pub fn lookahead_equivalence(cfg: &MicroPomdp, phi: f64) -> Result<LookaheadReport> {
    let cfg = MicroPomdp {
        policy: MetaPolicy::EpisodeConditioned,
        ..*cfg
    };
    let coala = estimator_expectation(&cfg, [phi, 0.0, 0.0], EstimatorMode::Coala)?[0];
    let total_derivative = lookahead_total_derivative(&cfg, phi)?;
    Ok(LookaheadReport {
        coala,
        total_derivative,
        error: (coala - total_derivative).abs(),
    })
}
