use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use coala::analytic::{run_experiment, Experiment};
use coala::checks;
use coala::estimators::OpponentKind;
use coala::policy::checkpoint::fingerprint;
use coala::policy::{load_checkpoint, save_checkpoint};
use coala::runconfig::{output_dir, to_toml, write_json, MetricsWriter, RawConfig};
use coala::training::{evaluate_pool, Matchup, MetricsRow, Trainer};
use coala::{Error, Result};

/// Learning-aware policy gradients: analytic IPD experiments, batched
/// co-player shaping training and oracle checks.
#[derive(Parser)]
#[command(name = "coala", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; keys mirror the config structs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set meta.loss.clip_eps=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: $COALA_OUT_DIR/<run name>, else runs/<run name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Shortcut for `--set p_naive=<P>` (`group.p_naive` for analytic runs).
    #[arg(long)]
    p_naive: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an analytic IPD experiment.
    Analytic {
        /// finding1, finding2, finding3, lola-sweep, zd-fit, defect-init or tft-init.
        experiment: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train a population of meta agents.
    Train {
        #[command(flatten)]
        common: Common,
        /// ipd_shaping, ipd_mixed, cleanup_shaping or cleanup_mixed.
        #[arg(long)]
        preset: Option<String>,
        /// coala, mfos or batch_unaware.
        #[arg(long)]
        estimator: Option<String>,
        /// Halve meta-batch size and iteration count relative to the tables.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Evaluate a checkpointed population on every matchup.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Meta-episodes per matchup.
        #[arg(long, default_value_t = 16)]
        episodes: usize,
    },
    /// Run the oracle suites.
    Check {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient-balance sweep over the inner batch size.
    Diagnose {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        meta_episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::config("workers", e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn echo_config(dir: &Path, text: &str) -> Result<()> {
    fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn load(common: &Common, p_naive_key: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(p) = common.p_naive {
        raw.set(p_naive_key, p)?;
    }
    Ok(raw)
}

fn workers(common: &Common, raw: &RawConfig) -> Result<Option<usize>> {
    Ok(common.workers.or(raw.workers()?))
}

fn analytic(name: &str, common: &Common) -> Result<()> {
    let exp: Experiment = name.parse()?;
    let raw = load(common, "group.p_naive")?;
    let cfg = raw.analytic(exp)?;
    let dir = output_dir(
        common.out.as_deref(),
        &format!("analytic-{name}-s{}", common.seed),
    );
    prepare_dir(&dir)?;
    echo_config(&dir, &to_toml(&cfg)?)?;
    let out =
        thread_pool(workers(common, &raw)?)?.install(|| run_experiment(exp, &cfg, common.seed))?;
    let mut w = MetricsWriter::create(&dir.join("metrics.jsonl"))?;
    for run in &out.runs {
        for trace in &run.traces {
            for row in trace {
                let mut v = serde_json::to_value(row)?;
                v["run"] = json!(run.label);
                w.write(&v)?;
            }
        }
    }
    write_json(&dir.join("summary.json"), &out.summary)?;
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    println!("outputs in {}", dir.display());
    Ok(())
}

fn train(
    common: &Common,
    preset: Option<&str>,
    estimator: Option<&str>,
    desk_scale: bool,
) -> Result<()> {
    let mut raw = load(common, "p_naive")?;
    if let Some(p) = preset {
        raw.set("preset", p)?;
    }
    if let Some(e) = estimator {
        raw.set("estimator", e)?;
    }
    let cfg = raw.train(desk_scale)?;
    let text = to_toml(&cfg)?;
    let fp = fingerprint(&text);
    let name = format!(
        "train-{}-{}-s{}",
        raw.table
            .get("preset")
            .and_then(|v| v.as_str())
            .unwrap_or("ipd_shaping"),
        cfg.estimator.name(),
        common.seed
    );
    let dir = output_dir(common.out.as_deref(), &name);
    prepare_dir(&dir)?;
    echo_config(&dir, &text)?;
    let ckpt_dir = dir.join("checkpoints");
    prepare_dir(&ckpt_dir)?;

    let mut w = MetricsWriter::create(&dir.join("metrics.jsonl"))?;
    let mut last: Vec<MetricsRow> = Vec::new();
    let mut trainer = Trainer::new(cfg, common.seed)?;
    let pool = thread_pool(workers(common, &raw)?)?;
    let result = pool.install(|| {
        trainer.run(
            |row| {
                last.retain(|r| r.opponent_kind != row.opponent_kind);
                last.push(row.clone());
                w.write(row)
            },
            |ckpt| {
                save_checkpoint(
                    &ckpt_dir.join(format!("iter-{:06}.json", ckpt.iteration)),
                    ckpt,
                )
            },
            &fp,
        )
    });
    let summary = json!({
        "seed": common.seed,
        "iterations": trainer.iter,
        "fingerprint": fp,
        "completed": result.is_ok(),
        "final": last,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    result?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("outputs in {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    #[serde(flatten)]
    matchup: Matchup,
    #[serde(flatten)]
    summary: coala::training::Summary,
}

fn eval(common: &Common, checkpoint: &Path, episodes: usize) -> Result<()> {
    let raw = load(common, "p_naive")?;
    let cfg = raw.train(false)?;
    let fp = fingerprint(&to_toml(&cfg)?);
    let ckpt = load_checkpoint(checkpoint, Some(&fp))?;
    let mut trainer = Trainer::new(cfg.clone(), common.seed)?;
    trainer.restore(&ckpt)?;
    let pool = &trainer.pool;
    let mut matchups = Vec::new();
    for m in 0..pool.meta.len() {
        for o in 0..pool.meta.len() {
            if o != m {
                matchups.push(Matchup {
                    meta: m,
                    opponent_kind: OpponentKind::Meta,
                    opponent: o,
                });
            }
        }
        for o in 0..pool.naive.len() {
            matchups.push(Matchup {
                meta: m,
                opponent_kind: OpponentKind::Naive,
                opponent: o,
            });
        }
    }
    let dir = output_dir(common.out.as_deref(), &format!("eval-s{}", common.seed));
    prepare_dir(&dir)?;
    let res = thread_pool(workers(common, &raw)?)?
        .install(|| evaluate_pool(pool, &matchups, episodes, &cfg, common.seed))?;
    let mut w = MetricsWriter::create(&dir.join("eval.jsonl"))?;
    for (matchup, summary) in res {
        println!(
            "meta{} vs {:?}{}: reward {:.4} / {:.4}",
            matchup.meta,
            matchup.opponent_kind,
            matchup.opponent,
            summary.reward_meta,
            summary.reward_opponent
        );
        w.write(&EvalRow { matchup, summary })?;
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn check(out: Option<&Path>) -> Result<bool> {
    let results = checks::oracle_suites()?;
    for c in &results {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if let Some(dir) = out {
        prepare_dir(dir)?;
        write_json(&dir.join("check.json"), &results)?;
    }
    Ok(results.iter().all(|c| c.passed))
}

fn diagnose(
    batches: &[usize],
    meta_episodes: usize,
    seed: u64,
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<()> {
    if batches.contains(&0) || meta_episodes < 2 {
        return Err(Error::config(
            "batches",
            "batch sizes must be positive and meta_episodes at least 2",
        ));
    }
    let rows =
        thread_pool(workers)?.install(|| checks::balance_sweep(batches, meta_episodes, seed))?;
    let dir = output_dir(out, &format!("diagnose-s{seed}"));
    prepare_dir(&dir)?;
    let mut w = MetricsWriter::create(&dir.join("balance.jsonl"))?;
    println!(
        "{:>6} {:>10} {:>10} {:>14}",
        "B", "coala", "mfos", "batch_unaware"
    );
    for r in &rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>14.4}",
            r.batch, r.coala, r.mfos, r.batch_unaware
        );
        w.write(r)?;
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Analytic { experiment, common } => analytic(experiment, common)?,
        Command::Train {
            common,
            preset,
            estimator,
            desk_scale,
        } => train(common, preset.as_deref(), estimator.as_deref(), *desk_scale)?,
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => eval(common, checkpoint, *episodes)?,
        Command::Check { out } => {
            if !check(out.as_deref())? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Diagnose {
            batches,
            meta_episodes,
            seed,
            out,
            workers,
        } => diagnose(batches, *meta_episodes, *seed, out.as_deref(), *workers)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
