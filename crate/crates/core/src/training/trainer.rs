//! Population training loop, meta-agent updates and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::pool::{sample_opponent, stream_rng, AgentPool, Draw};
use super::rollout::{apply_gradient, run_meta_episode, transpose, MetaEpisodeRecord, Opponent};
use crate::autodiff::Tensor;
use crate::envs::EnvKind;
use crate::error::Result;
use crate::estimators::loss::SeqBatch;
use crate::estimators::{
    advantage_normalize, compute_advantages, compute_value_targets, norm_ratio, policy_value_loss,
    rescale_rewards, split_returns, EstimatorMode, LossStats, OpponentKind, RlAlgorithm,
};
use crate::optim::Optimizer;
use crate::policy::{self, Checkpoint, NetParams};

const DOMAIN_REFRESH: u64 = 1;
const DOMAIN_OPPONENT: u64 = 2;
const DOMAIN_ROLLOUT: u64 = 3;
const DOMAIN_UPDATE: u64 = 4;

/// Records per gradient chunk. Fixed so reductions do not depend on the
/// number of workers.
const CHUNK: usize = 4;

/// One metrics row per iteration and opponent kind. Rates are per step and
/// per agent; rewards are unscaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub seed: u64,
    pub opponent_kind: OpponentKind,
    pub reward_meta: f64,
    pub reward_opponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defection_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleaning_discrepancy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zap_rate_meta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zap_rate_opponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pollution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apples: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_ratio: Option<f64>,
}

/// Averages over a set of meta-episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub meta_episodes: usize,
    pub reward_meta: f64,
    pub reward_opponent: f64,
    /// Fraction of defect actions over both players.
    pub defection_rate: f64,
    /// `|mean_b (cleans_meta - cleans_opponent) / L|`.
    pub cleaning_discrepancy: f64,
    /// Standard deviation of the per-trajectory signed cleaning difference.
    pub cleaning_sd: f64,
    pub zap_rate_meta: f64,
    pub zap_rate_opponent: f64,
    pub pollution: f64,
    pub apples: f64,
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a MetaEpisodeRecord>) -> Summary {
    let mut s = Summary::default();
    let (mut steps, mut traj) = (0usize, 0usize);
    let (mut defect, mut zaps) = (0usize, [0usize; 2]);
    let (mut diff, mut diff_sq) = (0.0, 0.0);
    for r in records {
        let st = &r.stats;
        s.meta_episodes += 1;
        steps += st.steps;
        traj += st.trajectories;
        s.reward_meta += st.reward[0];
        s.reward_opponent += st.reward[1];
        defect += st.defections[0] + st.defections[1];
        zaps[0] += st.zaps[0];
        zaps[1] += st.zaps[1];
        diff += st.cleaning_diff;
        diff_sq += st.cleaning_diff_sq;
        s.pollution += st.dirt;
        s.apples += st.apples;
    }
    if steps == 0 {
        return s;
    }
    let n = steps as f64;
    s.reward_meta /= n;
    s.reward_opponent /= n;
    s.defection_rate = defect as f64 / (2.0 * n);
    s.zap_rate_meta = zaps[0] as f64 / n;
    s.zap_rate_opponent = zaps[1] as f64 / n;
    s.pollution /= n;
    s.apples /= n;
    if traj > 0 {
        let mean = diff / traj as f64;
        s.cleaning_discrepancy = mean.abs();
        s.cleaning_sd = (diff_sq / traj as f64 - mean * mean).max(0.0).sqrt();
    }
    s
}

fn row(
    iter: usize,
    seed: u64,
    kind: OpponentKind,
    env: EnvKind,
    s: &Summary,
    grad_ratio: Option<f64>,
) -> MetricsRow {
    let ipd = env == EnvKind::Ipd;
    let cu = |v: f64| (!ipd).then_some(v);
    MetricsRow {
        iter,
        seed,
        opponent_kind: kind,
        reward_meta: s.reward_meta,
        reward_opponent: s.reward_opponent,
        defection_rate: ipd.then_some(s.defection_rate),
        cleaning_discrepancy: cu(s.cleaning_discrepancy),
        zap_rate_meta: cu(s.zap_rate_meta),
        zap_rate_opponent: cu(s.zap_rate_opponent),
        pollution: cu(s.pollution),
        apples: cu(s.apples),
        grad_ratio,
    }
}

/// Estimator used for a record: the configured one against naive learners,
/// plain flattened policy gradients against meta co-players.
pub fn mode_for(kind: OpponentKind, configured: EstimatorMode) -> EstimatorMode {
    match kind {
        OpponentKind::Naive => configured,
        OpponentKind::Meta => EstimatorMode::BatchUnaware,
    }
}

/// Training arrays of one record, per-step layout `[l][b]`.
struct Prepared {
    advantages: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossStats,
    pub grad_norm: f64,
    pub steps: usize,
}

fn chunk_loss(
    params: &NetParams<f32>,
    records: &[&MetaEpisodeRecord],
    prepared: &[&Prepared],
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor<f32>>, LossStats)> {
    let steps = records[0].len();
    let stack =
        |f: &dyn Fn(usize) -> Vec<f64>| -> Vec<f64> { (0..prepared.len()).flat_map(f).collect() };
    let obs: Vec<Tensor<f32>> = (0..steps)
        .map(|l| Tensor::stack_rows(&records.iter().map(|r| &r.obs[l]).collect::<Vec<_>>()))
        .collect();
    let per_step = |get: &dyn Fn(usize, usize) -> Vec<f64>| -> Vec<Vec<f64>> {
        (0..steps).map(|l| stack(&|i| get(i, l))).collect()
    };
    let actions: Vec<Vec<usize>> = (0..steps)
        .map(|l| {
            records
                .iter()
                .flat_map(|r| r.actions[l].iter().copied())
                .collect()
        })
        .collect();
    let old_logp = per_step(&|i, l| records[i].logp[l].clone());
    let old_values = per_step(&|i, l| prepared[i].values[l].clone());
    let advantages = per_step(&|i, l| prepared[i].advantages[l].clone());
    let targets = per_step(&|i, l| prepared[i].targets[l].clone());
    let reset: Vec<bool> = (0..steps).map(|l| l == 0).collect();
    let batch = SeqBatch {
        obs: &obs,
        reset: &reset,
        actions: &actions,
        old_logp: &old_logp,
        old_values: &old_values,
        advantages: &advantages,
        targets: &targets,
    };
    policy_value_loss(params, &batch, &cfg.meta.loss)
}

/// Mean-loss gradient over `idx`, computed in fixed chunks and reduced in
/// index order.
fn minibatch_gradient(
    params: &NetParams<f32>,
    records: &[MetaEpisodeRecord],
    prepared: &[Prepared],
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor<f32>>, LossStats)> {
    let parts: Vec<(Vec<Tensor<f32>>, LossStats, usize)> = idx
        .par_chunks(CHUNK)
        .map(|c| {
            let r: Vec<_> = c.iter().map(|&i| &records[i]).collect();
            let p: Vec<_> = c.iter().map(|&i| &prepared[i]).collect();
            let rows: usize = r.iter().map(|x| x.batch).sum();
            chunk_loss(params, &r, &p, cfg).map(|(g, s)| (g, s, rows))
        })
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.2).sum();
    let mut grads: Vec<Tensor<f32>> = params
        .tensors
        .iter()
        .map(|t| Tensor::zeros(t.rows, t.cols))
        .collect();
    let mut stats = LossStats::default();
    for (g, s, rows) in &parts {
        let w = *rows as f64 / total as f64;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(&gi.map(|x| x * w as f32));
        }
        stats.loss += w * s.loss;
        stats.policy_loss += w * s.policy_loss;
        stats.value_loss += w * s.value_loss;
        stats.entropy += w * s.entropy;
        stats.clip_fraction += w * s.clip_fraction;
        stats.approx_kl += w * s.approx_kl;
    }
    Ok((grads, stats))
}

/// Updates one meta agent from its own records: advantages per opponent
/// kind, optional per-kind centring, then PPO epochs over shuffled
/// minibatches of meta-episodes, or a single A2C step.
pub fn meta_update<R: Rng>(
    params: &mut NetParams<f32>,
    opt: &mut Optimizer,
    records: &[MetaEpisodeRecord],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let rc = &cfg.meta.returns;
    let mut adv = Vec::with_capacity(records.len());
    let mut prepared = Vec::with_capacity(records.len());
    for r in records {
        let rewards = rescale_rewards(&r.rewards, rc.reward_rescaling);
        let mode = mode_for(r.opponent_kind, cfg.estimator);
        adv.push(compute_advantages(
            &rewards, &r.values, rc, r.horizon, mode,
        )?);
        prepared.push(Prepared {
            advantages: Vec::new(),
            targets: transpose(&compute_value_targets(&rewards, &r.values, rc, r.horizon)?),
            values: transpose(&r.values),
        });
    }
    if cfg.meta.normalize_advantages {
        let mut groups: Vec<_> = records
            .iter()
            .zip(adv.iter_mut())
            .map(|(r, a)| (r.opponent_kind, &mut a[..]))
            .collect();
        advantage_normalize(&mut groups, rc.scale_advantages);
    }
    for (p, a) in prepared.iter_mut().zip(&adv) {
        p.advantages = transpose(a);
    }

    let loss = &cfg.meta.loss;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let (epochs, minibatches) = match loss.algorithm {
        RlAlgorithm::Ppo => (loss.epochs, loss.minibatches.min(records.len())),
        RlAlgorithm::A2c => (1, 1),
    };
    let mut out = UpdateStats::default();
    for _ in 0..epochs {
        if loss.algorithm == RlAlgorithm::Ppo {
            order.shuffle(rng);
        }
        let base = order.len() / minibatches;
        let extra = order.len() % minibatches;
        let mut start = 0;
        for k in 0..minibatches {
            let len = base + usize::from(k < extra);
            let idx = &order[start..start + len];
            start += len;
            let (grads, stats) = minibatch_gradient(params, records, &prepared, idx, cfg)?;
            out.grad_norm = apply_gradient(params, opt, &grads, loss.max_grad_norm)?;
            out.loss = stats;
            out.steps += 1;
        }
    }
    Ok(out)
}

/// Mean current-episode and future-episode gradient contributions of the
/// raw-return estimator for `mode`, over `records` (all from the same
/// policy and batch size).
///
/// Each weight is baselined by the mean weight at the same step over the
/// other records, which does not depend on the record's own actions, so both
/// means stay unbiased while the variance drops.
pub fn gradient_contributions(
    params: &NetParams<f32>,
    records: &[&MetaEpisodeRecord],
    mode: EstimatorMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = records.len();
    let split: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = records
        .iter()
        .map(|r| split_returns(&r.rewards, r.horizon, mode))
        .collect::<Result<_>>()?;
    let steps = records.first().map_or(0, |r| r.len());
    let step_means = |w: &[Vec<f64>]| -> Vec<f64> {
        (0..steps)
            .map(|l| w.iter().map(|row| row[l]).sum::<f64>() / w.len() as f64)
            .collect()
    };
    let means: Vec<(Vec<f64>, Vec<f64>)> = split
        .iter()
        .map(|(c, f)| (step_means(c), step_means(f)))
        .collect();
    let mut total = (vec![0.0; steps], vec![0.0; steps]);
    for (c, f) in &means {
        (0..steps).for_each(|l| {
            total.0[l] += c[l];
            total.1[l] += f[l];
        });
    }
    let p64 = params.cast::<f64>();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let reset: Vec<bool> = (0..r.len()).map(|l| l == 0).collect();
            let obs: Vec<Tensor<f64>> = r.obs.iter().map(|o| o.cast()).collect();
            let baseline = |tot: &[f64], own: &[f64]| -> Vec<f64> {
                if n < 2 {
                    return vec![0.0; steps];
                }
                tot.iter()
                    .zip(own)
                    .map(|(t, o)| (t - o) / (n - 1) as f64)
                    .collect()
            };
            let grad = |w: &[Vec<f64>], base: Vec<f64>| -> Result<Vec<f64>> {
                let centred: Vec<Vec<f64>> = w
                    .iter()
                    .map(|row| row.iter().zip(&base).map(|(x, b)| x - b).collect())
                    .collect();
                let g =
                    policy::logprob_gradient(&p64, &obs, &reset, &r.actions, &transpose(&centred))?;
                Ok(g.into_iter().flat_map(|t| t.data).collect())
            };
            let (c, f) = &split[i];
            Ok((
                grad(c, baseline(&total.0, &means[i].0))?,
                grad(f, baseline(&total.1, &means[i].1))?,
            ))
        })
        .collect::<Result<_>>()?;
    let dim = params.len();
    let (mut cur, mut fut) = (vec![0.0; dim], vec![0.0; dim]);
    for (c, f) in &parts {
        cur.iter_mut().zip(c).for_each(|(a, b)| *a += b / n as f64);
        fut.iter_mut().zip(f).for_each(|(a, b)| *a += b / n as f64);
    }
    Ok((cur, fut))
}

/// `|future| / |current|` of the mean gradient contributions.
pub fn gradient_ratio(
    params: &NetParams<f32>,
    records: &[&MetaEpisodeRecord],
    mode: EstimatorMode,
) -> Result<f64> {
    let (cur, fut) = gradient_contributions(params, records, mode)?;
    Ok(norm_ratio(&fut, &cur))
}

/// Population trainer. The metrics stream for a given `(config, seed)` does
/// not depend on the rayon pool it runs in.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub seed: u64,
    pub pool: AgentPool,
    pub iter: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let pool = AgentPool::new(&cfg, seed);
        Ok(Trainer {
            cfg,
            seed,
            pool,
            iter: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.iter >= self.cfg.iterations
    }

    fn opponent(&self, d: Draw) -> Opponent {
        let params = match d.kind {
            OpponentKind::Naive => self.pool.naive[d.id].clone(),
            OpponentKind::Meta => self.pool.meta[d.id].clone(),
        };
        Opponent {
            kind: d.kind,
            id: d.id,
            params,
        }
    }

    /// Rolls out every meta agent's meta-batch against its drawn opponents,
    /// from the current parameters.
    pub fn rollouts(&self) -> Result<Vec<Vec<MetaEpisodeRecord>>> {
        let (it, mb) = (self.iter as u64, self.cfg.meta_batch);
        let mut jobs = Vec::with_capacity(self.pool.meta.len() * mb);
        for a in 0..self.pool.meta.len() {
            for u in 0..mb {
                let unit = (a * mb + u) as u64;
                let mut rng = stream_rng(self.seed, DOMAIN_OPPONENT, it, unit);
                let d = sample_opponent(&self.pool, self.cfg.p_naive, a, &mut rng)?;
                jobs.push((a, unit, self.opponent(d)));
            }
        }
        let flat: Vec<MetaEpisodeRecord> = jobs
            .par_iter()
            .map(|(a, unit, opp)| {
                let mut rng = stream_rng(self.seed, DOMAIN_ROLLOUT, it, *unit);
                run_meta_episode(&self.pool.meta[*a], opp, &self.cfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut out: Vec<Vec<MetaEpisodeRecord>> = Vec::with_capacity(self.pool.meta.len());
        let mut it = flat.into_iter();
        for _ in 0..self.pool.meta.len() {
            out.push(it.by_ref().take(mb).collect());
        }
        Ok(out)
    }

    /// One training iteration; returns its metrics rows.
    pub fn step(&mut self) -> Result<Vec<MetricsRow>> {
        let it = self.iter as u64;
        if self.pool.dynamic_naive {
            self.pool
                .refresh_naive(&mut stream_rng(self.seed, DOMAIN_REFRESH, it, 0));
        }
        let records = self.rollouts()?;

        let diag =
            self.cfg.diagnostics_every > 0 && self.iter.is_multiple_of(self.cfg.diagnostics_every);
        let grad_ratio = if diag {
            let naive: Vec<_> = records[0]
                .iter()
                .filter(|r| r.opponent_kind == OpponentKind::Naive)
                .collect();
            if naive.is_empty() {
                None
            } else {
                Some(gradient_ratio(
                    &self.pool.meta[0],
                    &naive,
                    self.cfg.estimator,
                )?)
            }
        } else {
            None
        };

        let cfg = &self.cfg;
        let seed = self.seed;
        self.pool
            .meta
            .iter_mut()
            .zip(self.pool.meta_opt.iter_mut())
            .zip(&records)
            .enumerate()
            .try_for_each(|(a, ((p, opt), recs))| {
                let mut rng = stream_rng(seed, DOMAIN_UPDATE, it, a as u64);
                meta_update(p, opt, recs, cfg, &mut rng).map(|_| ())
            })?;

        let mut rows = Vec::new();
        for kind in [OpponentKind::Naive, OpponentKind::Meta] {
            let sel: Vec<_> = records
                .iter()
                .flatten()
                .filter(|r| r.opponent_kind == kind)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let s = summarize(sel.iter().copied());
            let gr = if kind == OpponentKind::Naive {
                grad_ratio
            } else {
                None
            };
            rows.push(row(self.iter, self.seed, kind, cfg.env.kind, &s, gr));
        }
        self.iter += 1;
        Ok(rows)
    }

    /// Runs to completion, passing each row to `sink` and every checkpoint
    /// due to `on_checkpoint`.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(&MetricsRow) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
        fingerprint: &str,
    ) -> Result<()> {
        while !self.done() {
            for r in self.step()? {
                sink(&r)?;
            }
            let every = self.cfg.checkpoint_every;
            if (every > 0 && self.iter.is_multiple_of(every)) || self.done() {
                on_checkpoint(&self.checkpoint(fingerprint))?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self, fingerprint: &str) -> Checkpoint {
        let mut c = Checkpoint::new(fingerprint.to_string(), self.iter as u64);
        for (i, p) in self.pool.meta.iter().enumerate() {
            c.push_params(&format!("meta{i}"), p);
        }
        for (i, p) in self.pool.naive.iter().enumerate() {
            c.push_params(&format!("naive{i}"), p);
        }
        c
    }

    /// Restores meta and naive parameters from a checkpoint of the same shape.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (i, p) in self.pool.meta.iter_mut().enumerate() {
            *p = ckpt.params(&format!("meta{i}"))?;
        }
        for (i, p) in self.pool.naive.iter_mut().enumerate() {
            *p = ckpt.params(&format!("naive{i}"))?;
        }
        self.iter = ckpt.iteration as usize;
        Ok(())
    }
}

/// One evaluation pairing: meta agent `meta` against `opponent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matchup {
    pub meta: usize,
    pub opponent_kind: OpponentKind,
    pub opponent: usize,
}

/// Plays `episodes` meta-episodes per matchup without updating the pool
/// (naive opponents still learn within each meta-episode) and averages.
pub fn evaluate_pool(
    pool: &AgentPool,
    matchups: &[Matchup],
    episodes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<(Matchup, Summary)>> {
    matchups
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let params = match m.opponent_kind {
                OpponentKind::Naive => &pool.naive[m.opponent],
                OpponentKind::Meta => &pool.meta[m.opponent],
            };
            let opp = Opponent {
                kind: m.opponent_kind,
                id: m.opponent,
                params: params.clone(),
            };
            let recs: Vec<MetaEpisodeRecord> = (0..episodes)
                .into_par_iter()
                .map(|e| {
                    run_meta_episode(
                        &pool.meta[m.meta],
                        &opp,
                        cfg,
                        &mut stream_rng(seed, 5, k as u64, e as u64),
                    )
                })
                .collect::<Result<_>>()?;
            Ok((*m, summarize(&recs)))
        })
        .collect()
}

/// Parameters that always pick `action`: zero readout weights and a
/// saturated readout bias.
pub fn fixed_policy(obs_dim: usize, n_actions: usize, action: usize) -> NetParams<f32> {
    let mut p = NetParams::init(obs_dim, n_actions, &mut stream_rng(0, 0, 0, 0));
    let pw = policy::NAMES
        .iter()
        .position(|&n| n == "policy.w")
        .expect("policy readout");
    p.tensors[pw].data.iter_mut().for_each(|x| *x = 0.0);
    for (a, b) in p.tensors[pw + 1].data.iter_mut().enumerate() {
        *b = if a == action { 20.0 } else { -20.0 };
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ipd;
    use crate::training::config::Preset;

    fn tiny(p: Preset) -> TrainConfig {
        TrainConfig {
            iterations: 2,
            meta_batch: 4,
            batch: 3,
            episodes: 3,
            horizon: 4,
            ..p.config(EstimatorMode::Coala)
        }
    }

    #[test]
    fn mode_selection() {
        for m in EstimatorMode::ALL {
            assert_eq!(mode_for(OpponentKind::Naive, m), m);
            assert_eq!(mode_for(OpponentKind::Meta, m), EstimatorMode::BatchUnaware);
        }
    }

    #[test]
    fn one_iteration_is_finite_and_leaves_static_naive() {
        let mut t = Trainer::new(tiny(Preset::IpdShaping), 3).unwrap();
        let before = t.pool.naive.clone();
        let meta_before = t.pool.meta.clone();
        let rows = t.step().unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].reward_meta.is_finite() && rows[0].defection_rate.is_some());
        assert!(rows[0].pollution.is_none());
        assert_eq!(t.pool.naive, before);
        assert_ne!(t.pool.meta, meta_before);
        assert!(t.pool.meta.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn dynamic_naive_copies_meta() {
        let mut cfg = tiny(Preset::IpdMixed);
        cfg.dynamic_naive = true;
        let mut t = Trainer::new(cfg, 1).unwrap();
        t.step().unwrap();
        let meta_after_first = t.pool.meta.clone();
        t.pool
            .refresh_naive(&mut stream_rng(1, DOMAIN_REFRESH, 1, 0));
        assert!(t.pool.naive.iter().all(|n| meta_after_first.contains(n)));
    }

    #[test]
    fn deterministic_across_workers() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut t = Trainer::new(tiny(Preset::IpdMixed), 9).unwrap();
                let mut out = Vec::new();
                t.run(
                    |r| {
                        out.push(serde_json::to_string(r).unwrap());
                        Ok(())
                    },
                    |_| Ok(()),
                    "fp",
                )
                .unwrap();
                (out, t.pool.meta)
            })
        };
        let (a, pa) = run(1);
        let (b, pb) = run(3);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn a2c_meta_update_runs() {
        let mut cfg = tiny(Preset::CleanupMixed);
        cfg.horizon = 3;
        cfg.episodes = 2;
        let mut t = Trainer::new(cfg, 2).unwrap();
        let rows = t.step().unwrap();
        assert!(rows
            .iter()
            .all(|r| r.apples.is_some() && r.defection_rate.is_none()));
    }

    #[test]
    fn zero_advantage_is_value_only() {
        let mut cfg = tiny(Preset::IpdShaping);
        cfg.meta.loss.value_coef = 0.0;
        cfg.meta.optimizer = crate::optim::OptimizerConfig::Sgd { lr: 1.0 };
        let t = Trainer::new(cfg.clone(), 4).unwrap();
        cfg.meta.returns.reward_rescaling = 0.0;
        let recs = t.rollouts().unwrap();
        let mut p = t.pool.meta[0].clone();
        // Zero rewards and zero initial value readout give zero advantages.
        meta_update(
            &mut p,
            &mut Optimizer::new(cfg.meta.optimizer, t.pool.meta[0].len()),
            &recs[0],
            &cfg,
            &mut stream_rng(0, 0, 0, 0),
        )
        .unwrap();
        assert_eq!(p, t.pool.meta[0]);
    }

    #[test]
    fn fixed_policy_outcomes() {
        let cfg = TrainConfig {
            p_naive: 0.0,
            meta_population: 2,
            ..tiny(Preset::IpdMixed)
        };
        for (action, reward, defect) in [(ipd::D, 0.0, 1.0), (ipd::C, 1.0, 0.0)] {
            let mut pool = AgentPool::new(&cfg, 0);
            pool.meta = vec![fixed_policy(5, 2, action); 2];
            let m = Matchup {
                meta: 0,
                opponent_kind: OpponentKind::Meta,
                opponent: 1,
            };
            let res = evaluate_pool(&pool, &[m], 4, &cfg, 0).unwrap();
            let s = res[0].1;
            assert!(
                (s.reward_meta - reward).abs() < 1e-9 && (s.reward_opponent - reward).abs() < 1e-9
            );
            assert!((s.defection_rate - defect).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_cleaning_discrepancy() {
        let cfg = TrainConfig {
            p_naive: 0.0,
            meta_population: 2,
            batch: 1,
            episodes: 1,
            horizon: 64,
            ..Preset::CleanupMixed.config(EstimatorMode::Coala)
        };
        let mut pool = AgentPool::new(&cfg, 0);
        pool.meta[1] = pool.meta[0].clone();
        let m = Matchup {
            meta: 0,
            opponent_kind: OpponentKind::Meta,
            opponent: 1,
        };
        let s = evaluate_pool(&pool, &[m], 100, &cfg, 0).unwrap()[0].1;
        assert!(
            s.cleaning_discrepancy < 2.0 * s.cleaning_sd / 10.0 + 1e-12,
            "{s:?}"
        );
    }
}
