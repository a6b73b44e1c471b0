//! Meta-episode rollouts: `B` environments stepped in lockstep for `M * T`
//! steps, with the naive opponent updating at interior episode boundaries.

use rand::Rng;

use super::config::{NaiveConfig, TrainConfig};
use crate::autodiff::{Eager, Tensor};
use crate::envs::{ipd, Env};
use crate::error::{Error, Result};
use crate::estimators::{
    advantage_normalize, compute_advantages, compute_value_targets, EstimatorMode, OpponentKind,
};
use crate::estimators::{loss::SeqBatch, policy_value_loss, rescale_rewards, LossStats};
use crate::optim::{clip_global_norm, Optimizer};
use crate::policy::{self, NetParams};

/// The co-player of one meta-episode, owned by the rollout.
#[derive(Clone, Debug)]
pub struct Opponent {
    pub kind: OpponentKind,
    pub id: usize,
    pub params: NetParams<f32>,
}

/// Behaviour counters accumulated over a meta-episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub reward: [f64; 2],
    pub defections: [usize; 2],
    pub zaps: [usize; 2],
    pub trajectories: usize,
    /// Sums over trajectories of `d = (cleans_meta - cleans_opponent) / L` and `d^2`.
    pub cleaning_diff: f64,
    pub cleaning_diff_sq: f64,
    pub dirt: f64,
    pub apples: f64,
}

/// One meta-episode from the meta agent's side. Per-step arrays are `[l][b]`,
/// per-trajectory arrays `[b][l]`.
#[derive(Clone, Debug)]
pub struct MetaEpisodeRecord {
    pub opponent_kind: OpponentKind,
    pub opponent_id: usize,
    pub batch: usize,
    pub horizon: usize,
    pub obs: Vec<Tensor<f32>>,
    pub actions: Vec<Vec<usize>>,
    pub logp: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub opponent_rewards: Vec<Vec<f64>>,
    /// Number of naive updates applied during the meta-episode.
    pub naive_updates: usize,
    pub opponent_final: Option<NetParams<f32>>,
    pub stats: EpisodeStats,
}

impl MetaEpisodeRecord {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// One inner episode from the naive learner's side.
pub struct InnerBatch {
    pub obs: Vec<Tensor<f32>>,
    pub actions: Vec<Vec<usize>>,
    /// `[b][t]`.
    pub rewards: Vec<Vec<f64>>,
    /// `[b][t]`, the learner's value estimates during play.
    pub values: Vec<Vec<f64>>,
}

pub(crate) fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols)
        .map(|c| a.iter().map(|r| r[c]).collect())
        .collect()
}

pub(crate) fn flatten_grads(grads: &[Tensor<f32>]) -> Vec<f32> {
    grads.iter().flat_map(|t| t.data.iter().copied()).collect()
}

/// Clips, checks and applies a gradient to `params` with `opt`.
pub(crate) fn apply_gradient(
    params: &mut NetParams<f32>,
    opt: &mut Optimizer,
    grads: &[Tensor<f32>],
    max_norm: f64,
) -> Result<f64> {
    let mut g = flatten_grads(grads);
    let norm = clip_global_norm(&mut [&mut g[..]], max_norm);
    if !norm.is_finite() {
        return Err(Error::NumericAbort(format!("gradient norm {norm}")));
    }
    let mut flat = params.flat();
    opt.update(&mut flat, &g);
    params.set_flat(&flat);
    if !params.is_finite() {
        return Err(Error::NumericAbort("parameters became non-finite".into()));
    }
    Ok(norm)
}

/// One A2C step on a finished inner episode: discounted returns without
/// bootstrapping, advantages `G - V` (centred when enabled), value loss.
pub fn naive_a2c_update(
    params: &mut NetParams<f32>,
    opt: &mut Optimizer,
    cfg: &NaiveConfig,
    batch: &InnerBatch,
) -> Result<LossStats> {
    let t = batch.obs.len();
    let rewards = rescale_rewards(&batch.rewards, cfg.returns.reward_rescaling);
    let targets = compute_value_targets(&rewards, &batch.values, &cfg.returns, t)?;
    let mut adv = compute_advantages(
        &rewards,
        &batch.values,
        &cfg.returns,
        t,
        EstimatorMode::BatchUnaware,
    )?;
    if cfg.normalize_advantages {
        advantage_normalize(
            &mut [(OpponentKind::Naive, &mut adv[..])],
            cfg.returns.scale_advantages,
        );
    }
    let reset: Vec<bool> = (0..t).map(|l| l == 0).collect();
    let values_t = transpose(&batch.values);
    let seq = SeqBatch {
        obs: &batch.obs,
        reset: &reset,
        actions: &batch.actions,
        old_logp: &values_t,
        old_values: &values_t,
        advantages: &transpose(&adv),
        targets: &transpose(&targets),
    };
    let (grads, stats) = policy_value_loss(params, &seq, &cfg.loss())?;
    apply_gradient(params, opt, &grads, cfg.max_grad_norm)?;
    Ok(stats)
}

fn check_finite(t: &Tensor<f32>, what: &str) -> Result<()> {
    if t.data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericAbort(format!(
            "non-finite {what} during rollout"
        )))
    }
}

/// Plays one meta-episode of `meta` against `opponent`.
///
/// The meta agent keeps its recurrent state across inner episodes; a naive
/// opponent resets at every boundary and takes one A2C step after each of
/// the first `M - 1` inner episodes. A meta opponent keeps long context and
/// never updates. Environments restart at every boundary.
pub fn run_meta_episode<R: Rng>(
    meta: &NetParams<f32>,
    opponent: &Opponent,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<MetaEpisodeRecord> {
    let (b, m, t) = (cfg.batch, cfg.episodes, cfg.horizon);
    let l_total = m * t;
    let obs_dim = cfg.env.obs_dim();
    let meta_net = policy::lift(&Eager, meta);
    let mut opp_params = opponent.params.clone();
    let mut opp_net = policy::lift(&Eager, &opp_params);
    let mut opp_opt = Optimizer::new(cfg.naive.optimizer, opp_params.len());
    let naive = opponent.kind == OpponentKind::Naive;

    let mut rec = MetaEpisodeRecord {
        opponent_kind: opponent.kind,
        opponent_id: opponent.id,
        batch: b,
        horizon: t,
        obs: Vec::with_capacity(l_total),
        actions: Vec::with_capacity(l_total),
        logp: Vec::with_capacity(l_total),
        values: vec![Vec::with_capacity(l_total); b],
        rewards: vec![Vec::with_capacity(l_total); b],
        opponent_rewards: vec![Vec::with_capacity(l_total); b],
        naive_updates: 0,
        opponent_final: None,
        stats: EpisodeStats::default(),
    };
    let mut cleans = vec![[0usize; 2]; b];
    let mut h_meta: Option<Tensor<f32>> = None;
    let mut h_opp: Option<Tensor<f32>> = None;

    for episode in 0..m {
        let mut envs: Vec<Env> = (0..b).map(|_| cfg.env.reset(rng)).collect();
        if naive {
            h_opp = None;
        }
        let mut inner = InnerBatch {
            obs: Vec::with_capacity(t),
            actions: Vec::with_capacity(t),
            rewards: vec![Vec::with_capacity(t); b],
            values: vec![Vec::with_capacity(t); b],
        };
        for _ in 0..t {
            let mut o_meta = Tensor::zeros(b, obs_dim);
            let mut o_opp = Tensor::zeros(b, obs_dim);
            for (k, env) in envs.iter().enumerate() {
                env.write_observation(0, o_meta.row_mut(k));
                env.write_observation(1, o_opp.row_mut(k));
            }
            let sm = policy::step(&Eager, &meta_net, &o_meta, h_meta.as_ref());
            let so = policy::step(&Eager, &opp_net, &o_opp, h_opp.as_ref());
            check_finite(&sm.logits, "meta logits")?;
            check_finite(&so.logits, "opponent logits")?;
            h_meta = Some(sm.hidden);
            h_opp = Some(so.hidden);

            let mut a_meta = Vec::with_capacity(b);
            let mut lp_meta = Vec::with_capacity(b);
            let mut a_opp = Vec::with_capacity(b);
            for k in 0..b {
                let (a, lp) = policy::sample_action(sm.logits.row(k), rng);
                a_meta.push(a);
                lp_meta.push(lp);
                a_opp.push(policy::sample_action(so.logits.row(k), rng).0);
            }
            for (k, env) in envs.iter_mut().enumerate() {
                let res = env.step([a_meta[k], a_opp[k]], t, rng);
                rec.rewards[k].push(res.rewards[0]);
                rec.opponent_rewards[k].push(res.rewards[1]);
                rec.values[k].push(sm.value.data[k] as f64);
                inner.rewards[k].push(res.rewards[1]);
                inner.values[k].push(so.value.data[k] as f64);
                let st = &mut rec.stats;
                st.reward[0] += res.rewards[0];
                st.reward[1] += res.rewards[1];
                match (&res.events, &*env) {
                    (Some(ev), Env::Cleanup(s)) => {
                        for i in 0..2 {
                            st.zaps[i] += ev.zap_attempted[i] as usize;
                            cleans[k][i] += ev.cleaned[i] as usize;
                        }
                        st.dirt += s.count(crate::envs::Cell::Dirt) as f64;
                        st.apples += s.count(crate::envs::Cell::Apple) as f64;
                    }
                    _ => {
                        st.defections[0] += (a_meta[k] == ipd::D) as usize;
                        st.defections[1] += (a_opp[k] == ipd::D) as usize;
                    }
                }
            }
            rec.stats.steps += b;
            rec.obs.push(o_meta);
            rec.actions.push(a_meta);
            rec.logp.push(lp_meta);
            inner.obs.push(o_opp);
            inner.actions.push(a_opp);
        }
        if naive && episode + 1 < m {
            naive_a2c_update(&mut opp_params, &mut opp_opt, &cfg.naive, &inner)?;
            opp_net = policy::lift(&Eager, &opp_params);
            rec.naive_updates += 1;
        }
    }
    rec.stats.trajectories = b;
    for c in &cleans {
        let d = (c[0] as f64 - c[1] as f64) / l_total as f64;
        rec.stats.cleaning_diff += d;
        rec.stats.cleaning_diff_sq += d * d;
    }
    if naive {
        rec.opponent_final = Some(opp_params);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::config::Preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> TrainConfig {
        TrainConfig {
            batch: 4,
            episodes: 3,
            horizon: 5,
            ..Preset::IpdShaping.config(EstimatorMode::Coala)
        }
    }

    fn opponent(kind: OpponentKind, seed: u64) -> Opponent {
        Opponent {
            kind,
            id: 0,
            params: NetParams::init(5, 2, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    #[test]
    fn shapes_and_update_count() {
        let cfg = small();
        let meta = NetParams::init(5, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let rec = run_meta_episode(
            &meta,
            &opponent(OpponentKind::Naive, 2),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(rec.len(), 15);
        assert_eq!(rec.rewards.len(), 4);
        assert_eq!(rec.rewards[0].len(), 15);
        assert_eq!(rec.naive_updates, 2);
        assert_ne!(
            rec.opponent_final.as_ref().unwrap(),
            &opponent(OpponentKind::Naive, 2).params
        );

        let meta_rec = run_meta_episode(
            &meta,
            &opponent(OpponentKind::Meta, 2),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(meta_rec.naive_updates, 0);
        assert_eq!(meta_rec.opponent_kind, OpponentKind::Meta);
    }

    #[test]
    fn single_episode_leaves_naive_unchanged() {
        let cfg = TrainConfig {
            episodes: 1,
            ..small()
        };
        let meta = NetParams::init(5, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let opp = opponent(OpponentKind::Naive, 2);
        let rec = run_meta_episode(&meta, &opp, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(rec.opponent_final.unwrap(), opp.params);
    }

    #[test]
    fn uniform_play_reward() {
        let cfg = TrainConfig {
            batch: 50,
            episodes: 10,
            horizon: 20,
            naive: NaiveConfig {
                optimizer: crate::optim::OptimizerConfig::Sgd { lr: 0.0 },
                ..Default::default()
            },
            ..small()
        };
        let meta = NetParams::init(5, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let rec = run_meta_episode(
            &meta,
            &opponent(OpponentKind::Naive, 2),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let mean = rec.stats.reward[0] / rec.stats.steps as f64;
        assert_eq!(rec.stats.steps, 10_000);
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn bandit_learning() {
        // One-step episodes where action 0 pays 1 and action 1 pays 0.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = NetParams::<f32>::init(5, 2, &mut rng);
        let cfg = NaiveConfig::default();
        let mut opt = Optimizer::new(cfg.optimizer, p.len());
        let mut obs = Tensor::zeros(16, 5);
        (0..16).for_each(|r| obs.data[r * 5] = 1.0);
        let prob0 = |p: &NetParams<f32>| {
            let out = policy::step(&Eager, &policy::lift(&Eager, p), &obs, None);
            policy::log_probs(out.logits.row(0))[0].exp()
        };
        for _ in 0..200 {
            let out = policy::step(&Eager, &policy::lift(&Eager, &p), &obs, None);
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            let mut values = Vec::new();
            for r in 0..16 {
                let a = policy::sample_action(out.logits.row(r), &mut rng).0;
                actions.push(a);
                rewards.push(vec![if a == 0 { 1.0 } else { 0.0 }]);
                values.push(vec![out.value.data[r] as f64]);
            }
            let batch = InnerBatch {
                obs: vec![obs.clone()],
                actions: vec![actions],
                rewards,
                values,
            };
            naive_a2c_update(&mut p, &mut opt, &cfg, &batch).unwrap();
        }
        assert!(prob0(&p) > 0.9, "{}", prob0(&p));
    }

    #[test]
    fn zero_lr_is_identity_and_constant_rewards_leave_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p0 = NetParams::<f32>::init(5, 2, &mut rng);
        let obs = vec![Tensor::from_vec(
            2,
            5,
            vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 0.],
        )];
        let batch = InnerBatch {
            obs,
            actions: vec![vec![0, 1]],
            rewards: vec![vec![1.0], vec![1.0]],
            values: vec![vec![0.0], vec![0.0]],
        };
        let cfg = NaiveConfig {
            optimizer: crate::optim::OptimizerConfig::Sgd { lr: 0.0 },
            ..Default::default()
        };
        let mut p = p0.clone();
        naive_a2c_update(
            &mut p,
            &mut Optimizer::new(cfg.optimizer, p0.len()),
            &cfg,
            &batch,
        )
        .unwrap();
        assert_eq!(p, p0);

        let cfg = NaiveConfig {
            optimizer: crate::optim::OptimizerConfig::Sgd { lr: 0.1 },
            ..Default::default()
        };
        naive_a2c_update(
            &mut p,
            &mut Optimizer::new(cfg.optimizer, p0.len()),
            &cfg,
            &batch,
        )
        .unwrap();
        assert_eq!(p.tensors[13], p0.tensors[13]);
        assert_eq!(p.tensors[14], p0.tensors[14]);
    }
}
