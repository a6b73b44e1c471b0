//! Batched co-player shaping: opponent sampling, meta-episode rollouts with
//! in-loop naive learners, meta-agent updates and evaluation.

pub mod config;
pub mod pool;
pub mod rollout;
pub mod trainer;

pub use config::{MetaConfig, NaiveConfig, Preset, TrainConfig};
pub use pool::{sample_opponent, stream_rng, AgentPool, Draw};
pub use rollout::{
    naive_a2c_update, run_meta_episode, EpisodeStats, InnerBatch, MetaEpisodeRecord, Opponent,
};
pub use trainer::{
    evaluate_pool, fixed_policy, gradient_contributions, gradient_ratio, meta_update, mode_for,
    summarize, Matchup, MetricsRow, Summary, Trainer, UpdateStats,
};
