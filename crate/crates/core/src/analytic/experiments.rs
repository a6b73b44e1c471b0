//! Named analytic experiments: presets, runners and summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::game::{expected_return_probs, shaping_objective_probs, NaiveSpec};
use super::train::{
    run_seeds, seed_rng, train_naive_against, InitKind, Learner, MixedGroupConfig, TraceRow,
};
use super::zd::{fit_zd, projected_ascent_step};
use crate::autodiff::{gradient, sigmoid, Dual};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Finding1,
    Finding2,
    Finding3,
    LolaSweep,
    ZdFit,
    DefectInit,
    TftInit,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Finding1,
        Experiment::Finding2,
        Experiment::Finding3,
        Experiment::LolaSweep,
        Experiment::ZdFit,
        Experiment::DefectInit,
        Experiment::TftInit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Finding1 => "finding1",
            Experiment::Finding2 => "finding2",
            Experiment::Finding3 => "finding3",
            Experiment::LolaSweep => "lola-sweep",
            Experiment::ZdFit => "zd-fit",
            Experiment::DefectInit => "defect-init",
            Experiment::TftInit => "tft-init",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::config("experiment", format!("unknown analytic experiment `{s}`"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticConfig {
    pub group: MixedGroupConfig,
    /// Look-ahead counts for the LOLA sweep.
    pub look_aheads: Vec<usize>,
    /// Mixing factor paired with each look-ahead count for the mixture runs.
    pub lola_mixture: Vec<f64>,
    /// Naive step size used with a single look-ahead.
    pub lola_eta_one: f64,
    /// Updates of the fresh naive learner trained against a fixed LOLA policy.
    pub probe_steps: usize,
    /// Uniform random policies fitted as the ZD baseline.
    pub random_policies: usize,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        Self {
            group: MixedGroupConfig::default(),
            look_aheads: vec![1, 2, 3, 10, 20],
            lola_mixture: vec![1.0, 1.0, 0.75, 0.6, 0.4],
            lola_eta_one: 10.0,
            probe_steps: 200,
            random_policies: 64,
        }
    }
}

impl AnalyticConfig {
    /// Desk-scale defaults for each experiment.
    pub fn preset(exp: Experiment) -> Self {
        let base = MixedGroupConfig {
            metabatch: 8,
            steps: 3000,
            seeds: 32,
            log_every: 50,
            ..MixedGroupConfig::default()
        };
        let group = match exp {
            Experiment::Finding1 | Experiment::ZdFit => MixedGroupConfig {
                agents: 1,
                p_naive: 1.0,
                init: InitKind::Defect,
                look_ahead: 50,
                steps: 1500,
                seeds: if exp == Experiment::ZdFit { 64 } else { 32 },
                ..base
            },
            Experiment::Finding2 => MixedGroupConfig {
                p_naive: 1.0,
                switch_step: Some(1500),
                p_naive_after_switch: 0.0,
                ..base
            },
            Experiment::Finding3 => base,
            Experiment::LolaSweep => MixedGroupConfig {
                learner: Learner::Lola,
                p_naive: 1.0,
                metabatch: 1,
                ..base
            },
            Experiment::DefectInit => MixedGroupConfig {
                init: InitKind::Defect,
                seeds: 8,
                ..base
            },
            Experiment::TftInit => MixedGroupConfig {
                init: InitKind::TitForTat,
                seeds: 8,
                ..base
            },
        };
        Self {
            group,
            ..Self::default()
        }
    }

    pub fn validate(&self, exp: Experiment) -> Result<()> {
        self.group.validate()?;
        if exp == Experiment::LolaSweep {
            if self.look_aheads.is_empty() || self.look_aheads.contains(&0) {
                return Err(Error::config(
                    "look_aheads",
                    "needs positive look-ahead counts",
                ));
            }
            if self.lola_mixture.len() != self.look_aheads.len() {
                return Err(Error::config(
                    "lola_mixture",
                    "needs one mixing factor per look-ahead count",
                ));
            }
            if let Some(p) = self.lola_mixture.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::config(
                    "lola_mixture",
                    format!("mixing factor {p} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }
}

/// One training configuration run over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub label: String,
    pub config: MixedGroupConfig,
    pub traces: Vec<Vec<TraceRow>>,
}

/// Medians over seeds of the final logged row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shaping_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otherplay_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otherplay_reward_other: Option<f64>,
    /// Fraction of seeds whose final shaping reward exceeds mutual cooperation
    /// while the naive learner still earns a positive reward.
    pub extortion_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub runs: Vec<RunSummary>,
    pub extras: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<Run>,
    pub summary: ExperimentSummary,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn final_median(traces: &[Vec<TraceRow>], field: impl Fn(&TraceRow) -> Option<f64>) -> Option<f64> {
    let mut v: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.last().and_then(&field))
        .collect();
    median(&mut v)
}

impl Run {
    pub fn summarize(&self) -> RunSummary {
        let finals: Vec<&TraceRow> = self.traces.iter().filter_map(|t| t.last()).collect();
        let extorting = finals
            .iter()
            .filter(|r| {
                r.shaping_reward.unwrap_or(f64::NAN) > 1.0
                    && r.naive_reward.unwrap_or(f64::NAN) > 0.0
            })
            .count();
        RunSummary {
            label: self.label.clone(),
            seeds: self.traces.len(),
            shaping_reward: final_median(&self.traces, |r| r.shaping_reward),
            naive_reward: final_median(&self.traces, |r| r.naive_reward),
            otherplay_reward: final_median(&self.traces, |r| r.otherplay_reward),
            otherplay_reward_other: final_median(&self.traces, |r| r.otherplay_reward_other),
            extortion_fraction: extorting as f64 / finals.len().max(1) as f64,
        }
    }

    pub fn final_params(&self, agent: usize) -> Vec<[f64; 5]> {
        self.traces
            .iter()
            .filter_map(|t| t.last().map(|r| r.params[agent]))
            .collect()
    }
}

fn run(label: impl Into<String>, config: MixedGroupConfig, seed: u64) -> Result<Run> {
    Ok(Run {
        label: label.into(),
        traces: run_seeds(&config, seed)?,
        config,
    })
}

/// Gradient of the mixed objective in probability space at `(me, other)`,
/// averaged over `batch` naive initialisations.
pub fn probability_space_gradient(
    me: &[f64; 5],
    other: &[f64; 5],
    batch: &[[f64; 5]],
    config: &MixedGroupConfig,
) -> Result<[f64; 5]> {
    let spec: NaiveSpec = config.naive_spec();
    let payoffs = config.payoffs;
    let mut shaping = [0.0; 5];
    for naive in batch {
        let g = gradient(|p| shaping_objective_probs(p, naive, &payoffs, &spec), *me)?;
        for k in 0..5 {
            shaping[k] += g[k] / (batch.len() as f64 * (spec.steps + 1) as f64);
        }
    }
    let fixed = other.map(Dual::lift);
    let partial = gradient(|p| Ok(expected_return_probs(p, &fixed, &payoffs)?.0), *me)?;
    let p = config.p_naive;
    Ok(std::array::from_fn(|k| {
        p * shaping[k] + (1.0 - p) * partial[k]
    }))
}

fn nash_probe(
    config: &MixedGroupConfig,
    seed: u64,
    at: [f64; 5],
    extras: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let mut rng = seed_rng(seed, u64::MAX);
    let batch: Vec<[f64; 5]> = (0..config.metabatch.max(32))
        .map(|_| {
            InitKind::Random
                .sample(&mut rng)
                .map(|x| x * config.naive_init_std)
        })
        .collect();
    let g = probability_space_gradient(&at, &at, &batch, config)?;
    let stepped = projected_ascent_step(&at, &g, 1e-3);
    for (k, name) in ["s0", "cc", "cd", "dc", "dd"].iter().enumerate() {
        extras.insert(format!("probe_grad_{name}"), g[k]);
        extras.insert(
            format!("probe_moved_{name}"),
            (stepped[k] != at[k]) as u8 as f64,
        );
    }
    Ok(())
}

/// Runs an experiment. `seed` selects the base RNG stream; seed `k` of every
/// run uses stream `k` under it.
pub fn run_experiment(
    exp: Experiment,
    config: &AnalyticConfig,
    seed: u64,
) -> Result<ExperimentOutput> {
    config.validate(exp)?;
    let g = &config.group;
    let mut extras = BTreeMap::new();
    let runs = match exp {
        Experiment::Finding1 | Experiment::Finding2 | Experiment::Finding3 => {
            vec![run(format!("p_naive={}", g.p_naive), g.clone(), seed)?]
        }
        Experiment::DefectInit | Experiment::TftInit => {
            let at = match exp {
                Experiment::DefectInit => [0.0; 5],
                _ => [1.0, 1.0, 0.0, 1.0, 0.0],
            };
            nash_probe(g, seed, at, &mut extras)?;
            vec![run(format!("p_naive={}", g.p_naive), g.clone(), seed)?]
        }
        Experiment::LolaSweep => {
            let mut runs = Vec::new();
            for (&l, &mixture) in config.look_aheads.iter().zip(&config.lola_mixture) {
                let eta = if l == 1 {
                    config.lola_eta_one
                } else {
                    g.eta_naive
                };
                let base = MixedGroupConfig {
                    look_ahead: l,
                    eta_naive: eta,
                    ..g.clone()
                };
                runs.push(run(format!("lookahead={l}"), base.clone(), seed)?);
                if mixture < 1.0 {
                    let mixed = MixedGroupConfig {
                        p_naive: mixture,
                        ..base
                    };
                    runs.push(run(
                        format!("lookahead={l},p_naive={mixture}"),
                        mixed,
                        seed,
                    )?);
                }
            }
            let deepest = *config.look_aheads.iter().max().unwrap_or(&1);
            let probe_run = runs
                .iter()
                .find(|r| r.label == format!("lookahead={deepest}"))
                .ok_or_else(|| Error::config("look_aheads", "missing deepest run"))?;
            let spec = NaiveSpec {
                steps: config.probe_steps,
                ..probe_run.config.naive_spec()
            };
            let results: Vec<(f64, f64)> = probe_run
                .final_params(0)
                .par_iter()
                .enumerate()
                .map(|(k, fixed)| {
                    let mut rng = seed_rng(seed ^ 0x9e37_79b9, k as u64);
                    let init = InitKind::Random
                        .sample(&mut rng)
                        .map(|x| x * g.naive_init_std);
                    train_naive_against(fixed, &init, &g.payoffs, &spec)
                })
                .collect::<Result<_>>()?;
            let mut fixed: Vec<f64> = results.iter().map(|r| r.0).collect();
            let mut naive: Vec<f64> = results.iter().map(|r| r.1).collect();
            let below =
                results.iter().filter(|r| r.1 < r.0).count() as f64 / results.len().max(1) as f64;
            extras.insert(
                "probe_lola_reward".into(),
                median(&mut fixed).unwrap_or(f64::NAN),
            );
            extras.insert(
                "probe_naive_reward".into(),
                median(&mut naive).unwrap_or(f64::NAN),
            );
            extras.insert("probe_naive_below_fraction".into(), below);
            runs
        }
        Experiment::ZdFit => {
            let r = run("shaping", g.clone(), seed)?;
            let mut trained: Vec<f64> = r
                .final_params(0)
                .iter()
                .map(|p| fit_zd(&[sigmoid(p[1]), sigmoid(p[2]), sigmoid(p[3]), sigmoid(p[4])]).loss)
                .collect();
            let mut rng = seed_rng(seed ^ 0x5bd1_e995, 0);
            let mut random: Vec<f64> = (0..config.random_policies)
                .map(|_| fit_zd(&std::array::from_fn(|_| rng.gen::<f64>())).loss)
                .collect();
            let (t, u) = (median(&mut trained), median(&mut random));
            extras.insert("median_fit_loss_trained".into(), t.unwrap_or(f64::NAN));
            extras.insert("median_fit_loss_random".into(), u.unwrap_or(f64::NAN));
            vec![r]
        }
    };
    let summary = ExperimentSummary {
        experiment: exp.name().to_string(),
        runs: runs.iter().map(Run::summarize).collect(),
        extras,
    };
    Ok(ExperimentOutput { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(exp: Experiment) -> AnalyticConfig {
        let mut c = AnalyticConfig::preset(exp);
        c.group.steps = 3;
        c.group.seeds = 2;
        c.group.metabatch = 2;
        c.group.look_ahead = c.group.look_ahead.min(2);
        c.group.log_every = 1;
        c.group.switch_step = c.group.switch_step.map(|_| 2);
        c.look_aheads = vec![1, 2];
        c.lola_mixture = vec![1.0, 0.5];
        c.probe_steps = 3;
        c.random_policies = 4;
        c
    }

    #[test]
    fn every_experiment_runs() {
        for exp in Experiment::ALL {
            let out = run_experiment(exp, &tiny(exp), 0).unwrap();
            assert!(!out.runs.is_empty(), "{exp}");
            assert_eq!(exp.name().parse::<Experiment>().unwrap(), exp);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn mutual_defection_moves_only_dc() {
        let c = AnalyticConfig::preset(Experiment::DefectInit).group;
        let mut extras = BTreeMap::new();
        nash_probe(&c, 0, [0.0; 5], &mut extras).unwrap();
        for name in ["s0", "cc", "cd", "dd"] {
            assert_eq!(extras[&format!("probe_moved_{name}")], 0.0, "{name}");
        }
        assert_eq!(extras["probe_moved_dc"], 1.0);
    }
}
