use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorMode, LossConfig, ReturnsConfig, RlAlgorithm};
use crate::optim::OptimizerConfig;

/// Learning-aware agent settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub returns: ReturnsConfig,
    /// Centre advantages per opponent kind.
    pub normalize_advantages: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::adam(3e-4, 1e-5),
            returns: ReturnsConfig {
                reward_rescaling: 0.05,
                ..Default::default()
            },
            normalize_advantages: false,
        }
    }
}

/// Naive learner settings: one A2C step per interior inner-episode boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveConfig {
    pub optimizer: OptimizerConfig,
    pub returns: ReturnsConfig,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(0.005, 1e-5),
            returns: ReturnsConfig {
                gamma: 0.99,
                reward_rescaling: 0.05,
                ..Default::default()
            },
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            normalize_advantages: true,
        }
    }
}

impl NaiveConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            algorithm: RlAlgorithm::A2c,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            clip_value: false,
            epochs: 1,
            minibatches: 1,
            max_grad_norm: self.max_grad_norm,
            ..LossConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub iterations: usize,
    /// Meta-episodes per meta agent per iteration.
    pub meta_batch: usize,
    /// Parallel trajectories per meta-episode (B).
    pub batch: usize,
    /// Inner episodes per meta-trajectory (M).
    pub episodes: usize,
    /// Inner episode length (T).
    pub horizon: usize,
    pub p_naive: f64,
    pub meta_population: usize,
    pub naive_population: usize,
    pub dynamic_naive: bool,
    pub estimator: EstimatorMode,
    pub meta: MetaConfig,
    pub naive: NaiveConfig,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    /// Compute the gradient-balance ratio every this many iterations (0: never).
    pub diagnostics_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Preset::IpdShaping.config(EstimatorMode::Coala)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    IpdShaping,
    IpdMixed,
    CleanupShaping,
    CleanupMixed,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::IpdShaping,
        Preset::IpdMixed,
        Preset::CleanupShaping,
        Preset::CleanupMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::IpdShaping => "ipd_shaping",
            Preset::IpdMixed => "ipd_mixed",
            Preset::CleanupShaping => "cleanup_shaping",
            Preset::CleanupMixed => "cleanup_mixed",
        }
    }

    /// Table settings for this experiment and estimator.
    pub fn config(self, estimator: EstimatorMode) -> TrainConfig {
        let mut c = TrainConfig {
            env: EnvConfig::default(),
            iterations: 3000,
            meta_batch: 128,
            batch: 16,
            episodes: 20,
            horizon: 10,
            p_naive: 1.0,
            meta_population: 1,
            naive_population: 10,
            dynamic_naive: false,
            estimator,
            meta: MetaConfig::default(),
            naive: NaiveConfig::default(),
            checkpoint_every: 0,
            diagnostics_every: 0,
        };
        match self {
            Preset::IpdShaping => {}
            Preset::IpdMixed => {
                c.p_naive = 0.75;
                c.meta_population = 4;
            }
            Preset::CleanupShaping | Preset::CleanupMixed => {
                c.env.kind = EnvKind::Cleanup;
                c.meta_batch = 512;
                c.horizon = 64;
                c.meta.normalize_advantages = true;
                c.naive.returns.reward_rescaling = 0.1;
                let coala = estimator == EstimatorMode::Coala;
                if self == Preset::CleanupShaping {
                    c.batch = 32;
                    c.episodes = 100;
                    c.meta.returns.reward_rescaling = if coala { 0.1 } else { 1.0 };
                    let lr = if estimator == EstimatorMode::Mfos {
                        0.003
                    } else {
                        0.001
                    };
                    c.meta.optimizer = OptimizerConfig::adam(lr, 1e-5);
                } else {
                    c.iterations = 30000;
                    c.batch = 64;
                    c.episodes = 5;
                    c.p_naive = 0.75;
                    c.meta_population = 3;
                    c.naive_population = 3;
                    c.dynamic_naive = true;
                    c.meta.returns.reward_rescaling = 0.1;
                    c.meta.loss.algorithm = RlAlgorithm::A2c;
                    c.meta.optimizer = OptimizerConfig::Sgd {
                        lr: if coala { 0.1 } else { 0.03 },
                    };
                    c.naive.optimizer = OptimizerConfig::Sgd { lr: 1.0 };
                    c.naive.returns.gamma = 1.0;
                }
            }
        }
        c
    }
}

impl TrainConfig {
    /// Halves meta-batch size and iteration count.
    pub fn desk_scale(mut self) -> Self {
        self.meta_batch = (self.meta_batch / 2).max(1);
        self.iterations = (self.iterations / 2).max(1);
        self
    }

    pub fn steps(&self) -> usize {
        self.episodes * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        for (key, v) in [
            ("iterations", self.iterations),
            ("meta_batch", self.meta_batch),
            ("batch", self.batch),
            ("episodes", self.episodes),
            ("horizon", self.horizon),
            ("meta_population", self.meta_population),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_naive) {
            return Err(Error::config("p_naive", "must lie in [0, 1]"));
        }
        if self.p_naive > 0.0 && self.naive_population == 0 {
            return Err(Error::config(
                "naive_population",
                "naive opponents are reachable but the pool is empty",
            ));
        }
        if self.p_naive < 1.0 && self.meta_population < 2 {
            return Err(Error::config(
                "meta_population",
                "meta opponents are reachable but no other meta agent exists",
            ));
        }
        if self.meta_batch > 1 << 16 || self.meta_population > 1 << 8 {
            return Err(Error::config(
                "meta_batch",
                "too many rollout units per iteration",
            ));
        }
        if self.meta.loss.algorithm == RlAlgorithm::Ppo
            && self.meta.loss.minibatches > self.meta_batch
        {
            return Err(Error::config("meta.loss.minibatches", "exceeds meta_batch"));
        }
        self.meta.loss.validate("meta.loss")?;
        self.meta.returns.validate("meta.returns")?;
        self.naive.returns.validate("naive.returns")?;
        if self.naive.max_grad_norm <= 0.0 {
            return Err(Error::config("naive.max_grad_norm", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in Preset::ALL {
            for m in EstimatorMode::ALL {
                p.config(m).validate().unwrap();
                p.config(m).desk_scale().validate().unwrap();
            }
        }
        let c = Preset::CleanupMixed.config(EstimatorMode::Coala);
        assert_eq!(
            (c.batch, c.episodes, c.horizon, c.meta_population),
            (64, 5, 64, 3)
        );
        assert!(c.dynamic_naive);
    }

    #[test]
    fn range_checks() {
        let mut c = TrainConfig {
            p_naive: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.p_naive = 0.5;
        assert!(
            c.validate().is_err(),
            "single meta agent cannot face a meta co-player"
        );
        c.meta_population = 2;
        c.validate().unwrap();
    }
}
