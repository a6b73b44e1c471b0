//! Closed-form infinitely iterated prisoner's dilemma with exact gradients.

pub mod experiments;
pub mod game;
pub mod train;
pub mod zd;

pub use experiments::{
    run_experiment, AnalyticConfig, Experiment, ExperimentOutput, ExperimentSummary, RunSummary,
};
pub use game::{
    expected_return, lola_dice_gradient, markov_and_s0, naive_step, partial_gradient,
    shaping_gradient, IpdPayoffs, Logits, NaiveObjective, NaiveSpec,
};
pub use train::{mixed_group_train, run_seeds, InitKind, Learner, MixedGroupConfig, TraceRow};
pub use zd::{fit_zd, projected_ascent_step, zd_policy, ZdFit};
