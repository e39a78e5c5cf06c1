//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! workload = runs/workload.json
//! policy = countdown_dvfs
//! policy.timeout_us = 250
//! hw.sample_period_us = 250
//! power.uncore_w = 0
//! ```
//!
//! Entries are collected first and interpreted once, so command-line flags
//! can override any file entry regardless of order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use slackdown_core::rational::{parse_decimal, rat};
use slackdown_core::{HwConfig, LoadMetric, PolicyKind, PolicySpec, PowerModel, Rat};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Entries {
    map: BTreeMap<String, String>,
    /// Directory relative paths in file entries are resolved against.
    base: Option<PathBuf>,
}

impl Entries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, found `{}`", i + 1, raw.trim()))?;
            let key = k.trim();
            if key.is_empty() {
                bail!("config line {}: empty key", i + 1);
            }
            map.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Entries { map, base: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut e = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        e.base = path.parent().map(Path::to_path_buf);
        Ok(e)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    /// Flag-supplied paths are taken as given, not relative to the config file.
    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.set(key, path.to_string_lossy());
        if self.base.is_some() {
            self.map.insert(format!("{key}.absolute"), "1".into());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let p = PathBuf::from(self.get(key)?);
        let flagged = self.map.contains_key(&format!("{key}.absolute"));
        Some(match &self.base {
            Some(base) if p.is_relative() && !flagged => base.join(p),
            _ => p,
        })
    }
}

/// Everything a simulate, sweep or analyze run needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub workload: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub policy: PolicySpec,
    pub baseline: PolicySpec,
    pub hw: HwConfig,
    pub power: PowerModel,
    pub load_metric: LoadMetric,
    pub threshold_us: Rat,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

const TOP_KEYS: [&str; 8] = ["workload", "segments", "policy", "baseline", "load_metric", "threshold_us", "out", "seed"];

impl RunConfig {
    pub fn from_entries(e: &Entries) -> Result<Self> {
        let mut policy_params = BTreeMap::new();
        let mut baseline_params = BTreeMap::new();
        let mut hw = HwConfig::default();
        let mut power = PowerModel::default();
        for (key, value) in &e.map {
            if key.ends_with(".absolute") {
                continue;
            }
            let ctx = || format!("config key `{key}`");
            if let Some(k) = key.strip_prefix("policy.") {
                policy_params.insert(k.to_string(), value.clone());
            } else if let Some(k) = key.strip_prefix("baseline.") {
                baseline_params.insert(k.to_string(), value.clone());
            } else if let Some(k) = key.strip_prefix("hw.") {
                hw.set(k, value).with_context(ctx)?;
            } else if let Some(k) = key.strip_prefix("power.") {
                power.set(k, value).with_context(ctx)?;
            } else if !TOP_KEYS.contains(&key.as_str()) {
                bail!("unknown config key `{key}`");
            }
        }
        hw.validate()?;
        power.validate()?;
        let policy_name = e.get("policy").unwrap_or(PolicyKind::CountdownDvfs.as_str());
        let baseline_name = e.get("baseline").unwrap_or(PolicyKind::BusyWait.as_str());
        let policy = PolicySpec::from_params(policy_name, &policy_params)?;
        let baseline = PolicySpec::from_params(baseline_name, &baseline_params)?;
        policy.check(&hw)?;
        baseline.check(&hw)?;
        let load_metric = match e.get("load_metric") {
            Some(v) => v.parse()?,
            None => LoadMetric::default(),
        };
        let threshold_us = match e.get("threshold_us") {
            Some(v) => parse_decimal(v).map_err(|_| anyhow!("invalid threshold_us `{v}`"))?,
            None => rat(500),
        };
        let seed = match e.get("seed") {
            Some(v) => Some(v.parse().map_err(|_| anyhow!("invalid seed `{v}`"))?),
            None => None,
        };
        Ok(RunConfig {
            workload: e.path("workload"),
            segments: e.path("segments"),
            policy,
            baseline,
            hw,
            power,
            load_metric,
            threshold_us,
            out: e.path("out"),
            seed,
        })
    }
}
