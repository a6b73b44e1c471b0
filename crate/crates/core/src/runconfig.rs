//! Run configuration files and result persistence.
//!
//! Config files are TOML. Tables mirror the nested config structs, so
//! `meta.loss.clip_eps = 0.1` and a `[meta.loss]` section are equivalent.
//! Command-line overrides use the same dotted key paths. Resolution order:
//! preset defaults, optional desk scaling, file values, overrides.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::analytic::{AnalyticConfig, Experiment};
use crate::error::{Error, Result};
use crate::estimators::EstimatorMode;
use crate::training::{Preset, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "COALA_OUT_DIR";
pub const DEFAULT_OUT: &str = "runs";

/// Keys consumed by the runner rather than the config structs.
const RUNNER_KEYS: [&str; 2] = ["preset", "workers"];

/// Parsed file plus overrides, before resolution against a preset.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    pub table: Table,
}

fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(text.to_string()),
    }
}

fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "malformed key path"));
    }
    let mut cur = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::config(
                    parts[..=i].join("."),
                    "is a value, not a table",
                ))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RawConfig {
    /// Reads `path` (if any) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                text.parse::<Table>()
                    .map_err(|e| Error::config(p.display().to_string(), e.message().to_string()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        Ok(RawConfig { table })
    }

    pub fn set(&mut self, path: &str, value: impl Into<Value>) -> Result<()> {
        set_path(&mut self.table, path, value.into())
    }

    fn take_str(&self, key: &str) -> Result<Option<String>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(key, "expected a string")),
        }
    }

    pub fn workers(&self) -> Result<Option<usize>> {
        match self.table.get("workers") {
            None => Ok(None),
            Some(Value::Integer(n)) if *n >= 1 => Ok(Some(*n as usize)),
            Some(_) => Err(Error::config("workers", "expected a positive integer")),
        }
    }

    fn body(&self) -> Table {
        let mut t = self.table.clone();
        for k in RUNNER_KEYS {
            t.remove(k);
        }
        t
    }

    /// Resolves a training config: preset and estimator choose the table
    /// defaults, then file values and overrides apply on top.
    pub fn train(&self, desk_scale: bool) -> Result<TrainConfig> {
        let preset = match self.take_str("preset")? {
            None => Preset::IpdShaping,
            Some(s) => *Preset::ALL
                .iter()
                .find(|p| p.name() == s)
                .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}`")))?,
        };
        let estimator = match self.take_str("estimator")? {
            None => EstimatorMode::Coala,
            Some(s) => *EstimatorMode::ALL
                .iter()
                .find(|m| m.name() == s)
                .ok_or_else(|| Error::config("estimator", format!("unknown estimator `{s}`")))?,
        };
        let mut base = preset.config(estimator);
        if desk_scale {
            base = base.desk_scale();
        }
        let cfg: TrainConfig = resolve(&base, self.body())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn analytic(&self, exp: Experiment) -> Result<AnalyticConfig> {
        let cfg: AnalyticConfig = resolve(&AnalyticConfig::preset(exp), self.body())?;
        cfg.validate(exp)?;
        Ok(cfg)
    }
}

/// Deep-merges `over` into `base`. A table carrying a `kind` tag replaces
/// the base table when the tag changes, so variant fields do not mix.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => {
                let retag = o
                    .get("kind")
                    .is_some_and(|kind| b.get("kind") != Some(kind));
                if retag {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn resolve<T: Serialize + DeserializeOwned>(base: &T, over: Table) -> Result<T> {
    let mut table =
        Table::try_from(base).map_err(|e| Error::config("<defaults>", e.to_string()))?;
    merge(&mut table, over);
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." { "<root>".into() } else { path },
            e.into_inner().to_string(),
        )
    })
}

/// Canonical TOML text of a resolved config.
pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::config("<resolved>", e.to_string()))
}

/// Output directory: explicit, else `$COALA_OUT_DIR/<name>`, else `runs/<name>`.
pub fn output_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            PathBuf::from(std::env::var(OUT_ENV).unwrap_or_else(|_| DEFAULT_OUT.into())).join(name)
        }
    }
}

/// Single-writer JSON-lines sink, flushed per record.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(MetricsWriter {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::MetricsRow;

    fn raw(text: &str, overrides: &[&str]) -> RawConfig {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RawConfig::load(Some(&p), &o).unwrap()
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(raw("", &[]).train(false).unwrap(), TrainConfig::default());
        assert_eq!(
            raw("", &[]).analytic(Experiment::Finding3).unwrap(),
            AnalyticConfig::preset(Experiment::Finding3)
        );
    }

    #[test]
    fn file_then_override() {
        let c = raw(
            "batch = 4\n[meta.loss]\nclip_eps = 0.1\n",
            &["batch=1", "p_naive=0.5", "meta_population=2"],
        )
        .train(false)
        .unwrap();
        assert_eq!(c.batch, 1);
        assert_eq!(c.meta.loss.clip_eps, 0.1);
        assert_eq!(c.p_naive, 0.5);
    }

    #[test]
    fn preset_and_estimator_choose_tables() {
        let c = raw("preset = \"cleanup_shaping\"\nestimator = \"mfos\"\n", &[])
            .train(false)
            .unwrap();
        assert_eq!(c, Preset::CleanupShaping.config(EstimatorMode::Mfos));
        let d = raw("preset = \"cleanup_shaping\"\n", &[])
            .train(true)
            .unwrap();
        assert_eq!(d.meta_batch, 256);
    }

    #[test]
    fn optimizer_kind_switch() {
        let c = raw("", &["naive.optimizer={kind=\"sgd\", lr=0.5}"])
            .train(false)
            .unwrap();
        assert_eq!(
            c.naive.optimizer,
            crate::optim::OptimizerConfig::Sgd { lr: 0.5 }
        );
    }

    #[test]
    fn rejections_name_the_key() {
        let err = |text: &str, o: &[&str]| match raw(text, o).train(false) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(err("", &["p_naive=1.5"]), "p_naive");
        assert_eq!(
            err("[meta.loss]\nclip_epz = 0.1\n", &[]),
            "meta.loss.clip_epz"
        );
        assert_eq!(err("", &["batch=abc"]), "batch");
        assert_eq!(err("preset = \"nope\"\n", &[]), "preset");
    }

    #[test]
    fn resolved_round_trip() {
        let c = raw("", &["preset=\"ipd_mixed\"", "horizon=7"])
            .train(true)
            .unwrap();
        let text = to_toml(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.toml");
        fs::write(&p, &text).unwrap();
        assert_eq!(
            RawConfig::load(Some(&p), &[])
                .unwrap()
                .train(false)
                .unwrap(),
            c
        );
    }

    #[test]
    fn metrics_rows_round_trip_and_omit_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let row = MetricsRow {
            iter: 3,
            seed: 1,
            opponent_kind: crate::estimators::OpponentKind::Naive,
            reward_meta: 0.25,
            reward_opponent: -0.125,
            defection_rate: Some(0.5),
            cleaning_discrepancy: None,
            zap_rate_meta: None,
            zap_rate_opponent: None,
            pollution: None,
            apples: None,
            grad_ratio: None,
        };
        let mut w = MetricsWriter::create(&p).unwrap();
        w.write(&row).unwrap();
        drop(w);
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains("null") && !text.contains("apples"));
        let back: MetricsRow = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, row);
    }
}
