use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::game::{
    expected_return, logit, lola_dice_gradient, mix, naive_trajectory, partial_gradient,
    shaping_objective, IpdPayoffs, Logits, NaiveObjective, NaiveSpec,
};
use crate::autodiff::value_and_gradient;
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};

/// How a meta agent's gradient against its naive co-players is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    /// Differentiate the summed returns over fresh random naive learners.
    #[default]
    Shaping,
    /// Differentiate the final look-ahead return of a learner started at the
    /// co-player's parameters.
    Lola,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Standard normal logits.
    #[default]
    Random,
    Defect,
    TitForTat,
}

impl InitKind {
    pub fn sample(self, rng: &mut ChaCha8Rng) -> Logits {
        let lo = logit(0.01);
        let hi = logit(0.99);
        match self {
            InitKind::Random => std::array::from_fn(|_| StandardNormal.sample(rng)),
            InitKind::Defect => [lo; 5],
            InitKind::TitForTat => [hi, hi, lo, hi, lo],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedGroupConfig {
    pub p_naive: f64,
    /// Fresh naive learners per meta update.
    pub metabatch: usize,
    pub eta_naive: f64,
    pub eta_meta: f64,
    /// Naive updates per meta-trajectory (look-aheads for LOLA).
    pub look_ahead: usize,
    pub steps: usize,
    pub seeds: usize,
    /// One agent trains purely against naive learners; two also face each other.
    pub agents: usize,
    pub learner: Learner,
    pub naive_objective: NaiveObjective,
    /// Naive learners climb the per-step return `(1 - gamma) J` rather than
    /// the discounted sum, which divides their effective step by `1/(1 - gamma)`.
    pub naive_per_step: bool,
    /// Divide the shaping objective by the `look_ahead + 1` inner episodes it
    /// sums, putting it on the same per-episode footing as meta-vs-meta play.
    pub shaping_average: bool,
    pub naive_init_std: f64,
    pub init: InitKind,
    pub payoffs: IpdPayoffs,
    /// From this step on, `p_naive_after_switch` replaces `p_naive`.
    pub switch_step: Option<usize>,
    pub p_naive_after_switch: f64,
    pub log_every: usize,
}

impl Default for MixedGroupConfig {
    fn default() -> Self {
        Self {
            p_naive: 0.75,
            metabatch: 16,
            eta_naive: 5.0,
            eta_meta: 0.005,
            look_ahead: 20,
            steps: 1000,
            seeds: 32,
            agents: 2,
            learner: Learner::Shaping,
            naive_objective: NaiveObjective::Own,
            naive_per_step: true,
            shaping_average: true,
            naive_init_std: 1.0,
            init: InitKind::Random,
            payoffs: IpdPayoffs::default(),
            switch_step: None,
            p_naive_after_switch: 0.0,
            log_every: 10,
        }
    }
}

impl MixedGroupConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("p_naive", self.p_naive),
            ("p_naive_after_switch", self.p_naive_after_switch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {p}")));
            }
        }
        if self.metabatch == 0 {
            return Err(Error::config("metabatch", "must be positive"));
        }
        if !(1..=2).contains(&self.agents) {
            return Err(Error::config("agents", "must be 1 or 2"));
        }
        if self.agents == 1 && (self.p_naive < 1.0 || self.switch_step.is_some()) {
            return Err(Error::config(
                "agents",
                "a single agent can only train against naive learners",
            ));
        }
        if self.learner == Learner::Lola && self.look_ahead == 0 {
            return Err(Error::config(
                "look_ahead",
                "LOLA needs at least one look-ahead",
            ));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        self.payoffs
            .validate()
            .map_err(|e| Error::config("payoffs.gamma", e.to_string()))
    }

    pub fn naive_spec(&self) -> NaiveSpec {
        let scale = if self.naive_per_step {
            1.0 - self.payoffs.gamma
        } else {
            1.0
        };
        NaiveSpec {
            eta: self.eta_naive * scale,
            steps: self.look_ahead,
            objective: self.naive_objective,
        }
    }

    fn p_at(&self, step: usize) -> f64 {
        match self.switch_step {
            Some(s) if step >= s => self.p_naive_after_switch,
            _ => self.p_naive,
        }
    }
}

/// One logged training step. Rewards are per-step (discount-normalised).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub seed: u64,
    /// First agent's reward against fresh naive learners, averaged over the
    /// naive learning trajectory.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shaping_reward: Option<f64>,
    /// The naive learners' reward over the same trajectories.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub naive_reward: Option<f64>,
    /// First agent's reward against the second agent.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub otherplay_reward: Option<f64>,
    /// Second agent's reward against the first.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub otherplay_reward_other: Option<f64>,
    pub params: Vec<Logits>,
}

fn sample_naive(rng: &mut ChaCha8Rng, std: f64) -> Logits {
    std::array::from_fn(|_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Mean shaping gradient and mean per-step reward of `shaper` over `batch`.
fn shaping_batch(
    shaper: &Logits,
    batch: &[Logits],
    config: &MixedGroupConfig,
) -> Result<(Logits, f64)> {
    let spec = config.naive_spec();
    let mut g = [0.0; 5];
    let mut total = 0.0;
    for naive in batch {
        let (v, gb) = value_and_gradient(
            |p| shaping_objective(p, naive, &config.payoffs, &spec),
            *shaper,
        )?;
        total += v;
        for k in 0..5 {
            g[k] += gb[k];
        }
    }
    let n = batch.len() as f64;
    let episodes = (spec.steps + 1) as f64;
    let per_step = config.payoffs.per_step(total / n / episodes);
    let norm = if config.shaping_average {
        n * episodes
    } else {
        n
    };
    Ok((g.map(|x| x / norm), per_step))
}

/// Mean per-step rewards of shaper and naive learners along the unrolled
/// naive trajectories.
pub fn evaluate_shaping(
    shaper: &Logits,
    batch: &[Logits],
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<(f64, f64)> {
    let probs = shaper.map(crate::autodiff::sigmoid);
    let (mut a, mut b, mut n) = (0.0, 0.0, 0usize);
    for naive in batch {
        for (j1, j2) in naive_trajectory(&probs, naive, payoffs, spec)? {
            a += j1;
            b += j2;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    Ok((payoffs.per_step(a / n), payoffs.per_step(b / n)))
}

/// Trains a naive learner from `init` against a fixed policy and returns the
/// final per-step rewards `(fixed, naive)`.
pub fn train_naive_against(
    fixed: &Logits,
    init: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<(f64, f64)> {
    let probs = fixed.map(crate::autodiff::sigmoid);
    let traj = naive_trajectory(&probs, init, payoffs, spec)?;
    let (j1, j2) = traj[traj.len() - 1];
    Ok((payoffs.per_step(j1), payoffs.per_step(j2)))
}

fn check_finite(params: &[Logits], step: usize) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericAbort(format!(
                "agent {i} parameters became non-finite at step {step}: {p:?}"
            )));
        }
    }
    Ok(())
}

/// Runs one seed of mixed-group training from the given initial parameters.
pub fn mixed_group_train(
    config: &MixedGroupConfig,
    inits: Vec<Logits>,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    if inits.len() != config.agents {
        return Err(Error::InvalidParameter(format!(
            "expected {} initial policies, got {}",
            config.agents,
            inits.len()
        )));
    }
    let mut params = inits;
    let mut opts: Vec<Optimizer> = (0..config.agents)
        .map(|_| Optimizer::new(OptimizerConfig::adamw(config.eta_meta), 5))
        .collect();
    let spec = config.naive_spec();
    let mut rows = Vec::new();
    for step in 0..=config.steps {
        let p = config.p_at(step);
        let batch: Vec<Logits> = (0..config.metabatch)
            .map(|_| sample_naive(rng, config.naive_init_std))
            .collect();
        let log = step % config.log_every == 0 || step == config.steps;
        if log {
            let (shaping, naive) = evaluate_shaping(&params[0], &batch, &config.payoffs, &spec)?;
            let (op, op_other) = if config.agents == 2 {
                let (a, b) = expected_return(&params[0], &params[1], &config.payoffs)?;
                (
                    Some(config.payoffs.per_step(a)),
                    Some(config.payoffs.per_step(b)),
                )
            } else {
                (None, None)
            };
            rows.push(TraceRow {
                step,
                seed,
                shaping_reward: Some(shaping),
                naive_reward: Some(naive),
                otherplay_reward: op,
                otherplay_reward_other: op_other,
                params: params.clone(),
            });
        }
        if step == config.steps {
            break;
        }
        let mut grads = Vec::with_capacity(config.agents);
        for i in 0..config.agents {
            let me = &params[i];
            let other = (config.agents == 2).then(|| &params[1 - i]);
            let g_naive = if p > 0.0 {
                match (config.learner, other) {
                    (Learner::Shaping, _) => shaping_batch(me, &batch, config)?.0,
                    (Learner::Lola, Some(o)) => lola_dice_gradient(me, o, &config.payoffs, &spec)?,
                    (Learner::Lola, None) => {
                        return Err(Error::config("learner", "LOLA needs a co-player"))
                    }
                }
            } else {
                [0.0; 5]
            };
            let g_meta = match other {
                Some(o) if p < 1.0 => partial_gradient(me, o, &config.payoffs)?,
                _ => [0.0; 5],
            };
            grads.push(mix(p, &g_naive, &g_meta));
        }
        for ((param, opt), g) in params.iter_mut().zip(&mut opts).zip(grads) {
            opt.update(param, &g.map(|x| -x));
        }
        check_finite(&params, step)?;
    }
    Ok(rows)
}

/// Independent RNG stream for seed index `k` under `base_seed`.
pub fn seed_rng(base_seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(k);
    rng
}

/// Runs `config.seeds` independent seeds in parallel; results are in seed order.
pub fn run_seeds(config: &MixedGroupConfig, base_seed: u64) -> Result<Vec<Vec<TraceRow>>> {
    config.validate()?;
    (0..config.seeds as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed_rng(base_seed, k);
            let inits = (0..config.agents)
                .map(|_| config.init.sample(&mut rng))
                .collect();
            mixed_group_train(config, inits, k, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> MixedGroupConfig {
        MixedGroupConfig {
            metabatch: 2,
            look_ahead: 2,
            steps: 4,
            seeds: 3,
            log_every: 2,
            ..Default::default()
        }
    }

    #[test]
    fn rows_logged_on_schedule() {
        let rows = run_seeds(&quick(), 1).unwrap();
        assert_eq!(rows.len(), 3);
        let steps: Vec<usize> = rows[0].iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 2, 4]);
        assert!(rows[0][0].otherplay_reward.is_some());
    }

    #[test]
    fn deterministic_across_runs() {
        let a = run_seeds(&quick(), 9).unwrap();
        let b = run_seeds(&quick(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = MixedGroupConfig {
            p_naive: 1.5,
            ..quick()
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }
}
