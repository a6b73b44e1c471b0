use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::estimators::OpponentKind;
use crate::optim::Optimizer;
use crate::policy::NetParams;

/// Meta agents with their optimizer states, and the naive initialisations.
#[derive(Clone, Debug)]
pub struct AgentPool {
    pub meta: Vec<NetParams<f32>>,
    pub meta_opt: Vec<Optimizer>,
    pub naive: Vec<NetParams<f32>>,
    pub dynamic_naive: bool,
}

/// An opponent draw: which pool, and the index within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub kind: OpponentKind,
    pub id: usize,
}

/// Independent stream for `(seed, domain, a, b)`.
pub fn stream_rng(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_mut(8).zip([seed, domain, a, b]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

impl AgentPool {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Self {
        let (obs, act) = (cfg.env.obs_dim(), cfg.env.n_actions());
        let mut rng = stream_rng(seed, 0, 0, 0);
        let meta: Vec<_> = (0..cfg.meta_population)
            .map(|_| NetParams::init(obs, act, &mut rng))
            .collect();
        let naive = (0..cfg.naive_population)
            .map(|_| NetParams::init(obs, act, &mut rng))
            .collect();
        let meta_opt = meta
            .iter()
            .map(|p| Optimizer::new(cfg.meta.optimizer, p.len()))
            .collect();
        AgentPool {
            meta,
            meta_opt,
            naive,
            dynamic_naive: cfg.dynamic_naive,
        }
    }

    /// Sets every naive initialisation to a copy of a uniformly chosen meta agent.
    pub fn refresh_naive<R: Rng>(&mut self, rng: &mut R) {
        for slot in self.naive.iter_mut() {
            *slot = self
                .meta
                .choose(rng)
                .expect("meta pool is never empty")
                .clone();
        }
    }
}

/// Naive with probability `p_naive`, else a uniformly drawn meta agent
/// other than `self_id`. Draws are with replacement.
pub fn sample_opponent<R: Rng>(
    pool: &AgentPool,
    p_naive: f64,
    self_id: usize,
    rng: &mut R,
) -> Result<Draw> {
    let naive = p_naive >= 1.0 || (p_naive > 0.0 && rng.gen::<f64>() < p_naive);
    if naive {
        if pool.naive.is_empty() {
            return Err(Error::EmptyPool("naive"));
        }
        return Ok(Draw {
            kind: OpponentKind::Naive,
            id: rng.gen_range(0..pool.naive.len()),
        });
    }
    let others = pool.meta.len().saturating_sub(1);
    if others == 0 {
        return Err(Error::EmptyPool("meta (self-play excluded)"));
    }
    let k = rng.gen_range(0..others);
    Ok(Draw {
        kind: OpponentKind::Meta,
        id: if k >= self_id { k + 1 } else { k },
    })
}
