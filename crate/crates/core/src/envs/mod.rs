//! The two inner games behind a common two-player interface.

pub mod cleanup;
pub mod ipd;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cleanup::{Cell, CleanupConfig, CleanupEvents, CleanupState};
pub use ipd::{IpdLabel, IpdState};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Ipd,
    Cleanup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub cleanup: CleanupConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Ipd,
            cleanup: CleanupConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.cleanup.validate()
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Ipd => ipd::OBS_DIM,
            EnvKind::Cleanup => self.cleanup.obs_dim(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::Ipd => ipd::N_ACTIONS,
            EnvKind::Cleanup => cleanup::N_ACTIONS,
        }
    }

    pub fn reset<R: Rng>(&self, rng: &mut R) -> Env {
        match self.kind {
            EnvKind::Ipd => Env::Ipd(IpdState::reset()),
            EnvKind::Cleanup => Env::Cleanup(CleanupState::reset(self.cleanup, rng)),
        }
    }
}

/// Result of one joint step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub rewards: [f64; 2],
    pub done: bool,
    pub events: Option<CleanupEvents>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    Ipd(IpdState),
    Cleanup(CleanupState),
}

impl Env {
    pub fn step<R: Rng>(&mut self, actions: [usize; 2], horizon: usize, rng: &mut R) -> StepResult {
        match self {
            Env::Ipd(s) => {
                let (rewards, done) = s.step(actions[0], actions[1], horizon);
                StepResult {
                    rewards,
                    done,
                    events: None,
                }
            }
            Env::Cleanup(s) => {
                let (ev, done) = s.step(actions, horizon, rng);
                StepResult {
                    rewards: ev.rewards,
                    done,
                    events: Some(ev),
                }
            }
        }
    }

    /// Writes `agent`'s observation into `out`, which must be zeroed.
    pub fn write_observation(&self, agent: usize, out: &mut [f32]) {
        match self {
            Env::Ipd(s) => out[s.views()[agent].index()] = 1.0,
            Env::Cleanup(s) => out.copy_from_slice(&s.observation(agent)),
        }
    }

    pub fn observation(&self, agent: usize) -> Vec<f32> {
        let len = match self {
            Env::Ipd(_) => ipd::OBS_DIM,
            Env::Cleanup(s) => s.config.obs_dim(),
        };
        let mut o = vec![0.0; len];
        self.write_observation(agent, &mut o);
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ipd_reset_ignores_rng() {
        let cfg = EnvConfig::default();
        let a = cfg.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let b = cfg.reset(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.observation(0), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dims() {
        let mut cfg = EnvConfig::default();
        assert_eq!((cfg.obs_dim(), cfg.n_actions()), (5, 2));
        cfg.kind = EnvKind::Cleanup;
        assert_eq!((cfg.obs_dim(), cfg.n_actions()), (102, 6));
    }
}
