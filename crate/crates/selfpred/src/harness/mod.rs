//! Experiment plumbing: flat key-value configs with content hashing,
//! seed fan-out over a bounded worker pool, median/IQR aggregation,
//! and the registered pass/fail claims behind the CLI exit code.

mod plot;
mod run;

pub use plot::{emit_plot, log_ticks, PlotSpec, Series};
pub use run::{
    collapse_study, desk_config, distractor_study, env_factory, oracle_study, plot_collapse_csv,
    rank_study, train_study, CollapseStudy, DistractorStudy, RankStudy, TrainStudy,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::AgentError;
use crate::envs::EnvError;
use crate::linearlab::LinearLabError;
use crate::oracle::OracleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line} is not `key = value`: {text}")]
    BadLine { line: usize, text: String },
    #[error("duplicate config key {0}")]
    DuplicateKey(String),
    #[error("missing config key {0}")]
    MissingKey(String),
    #[error("bad value for {key}: {value}")]
    BadValue { key: String, value: String },
    #[error("unknown experiment kind {0}")]
    UnknownKind(String),
    #[error("no completed records to aggregate")]
    NoRecords,
    #[error("no finite points to plot")]
    EmptyPlot,
    #[error(transparent)]
    Lab(#[from] LinearLabError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    OracleSuite,
    LinearCollapse,
    BoundCheck,
    Train,
    RankReport,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "oracle-suite" => Ok(ExperimentKind::OracleSuite),
            "linear-collapse" => Ok(ExperimentKind::LinearCollapse),
            "bound-check" => Ok(ExperimentKind::BoundCheck),
            "train" => Ok(ExperimentKind::Train),
            "rank-report" => Ok(ExperimentKind::RankReport),
            other => Err(HarnessError::UnknownKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::OracleSuite => "oracle-suite",
            ExperimentKind::LinearCollapse => "linear-collapse",
            ExperimentKind::BoundCheck => "bound-check",
            ExperimentKind::Train => "train",
            ExperimentKind::RankReport => "rank-report",
        }
    }
}

/// One experiment: a kind, its seeds, an output directory, and flat
/// string parameters. Hashing runs over the sorted key set, so key
/// order in the source file never changes the hash.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub params: BTreeMap<String, String>,
}

/// Seed lists accept `a..b` (half-open) or comma-separated values.
pub fn parse_seeds(text: &str) -> Option<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        if a >= b {
            return None;
        }
        return Some((a..b).collect());
    }
    text.split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<u64>>>()
        .filter(|v: &Vec<u64>| !v.is_empty())
}

impl ExperimentConfig {
    /// Parse the flat `key = value` format; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if pairs.insert(k.clone(), v).is_some() {
                return Err(HarnessError::DuplicateKey(k));
            }
        }
        let kind_text = pairs
            .remove("kind")
            .ok_or_else(|| HarnessError::MissingKey("kind".into()))?;
        let kind = ExperimentKind::parse(&kind_text)?;
        let seed_text = pairs
            .remove("seeds")
            .ok_or_else(|| HarnessError::MissingKey("seeds".into()))?;
        let seeds = parse_seeds(&seed_text).ok_or_else(|| HarnessError::BadValue {
            key: "seeds".into(),
            value: seed_text,
        })?;
        let out_dir = PathBuf::from(pairs.remove("out").unwrap_or_else(|| "out".into()));
        Ok(ExperimentConfig {
            kind,
            seeds,
            out_dir,
            params: pairs,
        })
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn param_or(&self, key: &str, default: &str) -> String {
        self.param(key).unwrap_or(default).to_string()
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError> {
        match self.param(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| HarnessError::BadValue {
                key: key.into(),
                value: v.into(),
            }),
        }
    }

    /// Canonical serialization: sorted keys, one `key=value` per line.
    pub fn canonical_text(&self) -> String {
        let mut out = format!("kind={}\n", self.kind.name());
        out.push_str(&format!("out={}\n", self.out_dir.display()));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("seeds={}\n", seeds.join(",")));
        for (k, v) in &self.params {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// First 12 hex chars of the SHA-256 of the canonical text; embeds
    /// in artifact file names.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub median: f64,
    pub iqr: f64,
}

/// A registered acceptance claim: passes iff its measured margin is
/// non-negative.
#[derive(Debug, Clone, Serialize)]
pub struct ClaimResult {
    pub name: String,
    pub margin: f64,
    pub pass: bool,
}

impl ClaimResult {
    pub fn new(name: impl Into<String>, margin: f64) -> Self {
        ClaimResult {
            name: name.into(),
            margin,
            pass: margin >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct AggregateSummary {
    pub metrics: Vec<MetricSummary>,
    pub claims: Vec<ClaimResult>,
    /// Seeds whose runs did not complete; excluded from the metrics.
    pub incomplete_seeds: Vec<u64>,
}

impl AggregateSummary {
    pub fn all_claims_pass(&self) -> bool {
        self.claims.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain fields")
    }
}

/// Interpolated quantile via partial selection (the tests recompute
/// it with a full sort).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    let mut v = values.to_vec();
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (_, lo_val, rest) = v.select_nth_unstable_by(lo, |a, b| a.partial_cmp(b).unwrap());
    let lo_val = *lo_val;
    if hi == lo {
        return lo_val;
    }
    let hi_val = rest
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    lo_val + (pos - lo as f64) * (hi_val - lo_val)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Median/IQR per metric over completed seeds only.
pub fn aggregate(metrics: &[(String, Vec<f64>)]) -> Result<AggregateSummary, HarnessError> {
    if metrics.iter().all(|(_, v)| v.is_empty()) {
        return Err(HarnessError::NoRecords);
    }
    let summaries = metrics
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(name, v)| MetricSummary {
            name: name.clone(),
            median: median(v),
            iqr: iqr(v),
        })
        .collect();
    Ok(AggregateSummary {
        metrics: summaries,
        claims: Vec::new(),
        incomplete_seeds: Vec::new(),
    })
}

/// Worker count from `SELFPRED_WORKERS`, default 1.
pub fn worker_count() -> usize {
    std::env::var("SELFPRED_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Run `f` once per seed on a bounded pool; results come back in seed
/// order regardless of scheduling.
pub fn fan_out<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let workers = worker_count().min(seeds.len().max(1));
    if workers <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..seeds.len()).map(|_| None).collect();
    let slot_refs: Vec<std::sync::Mutex<&mut Option<T>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let out = f(seeds[i]);
                **slot_refs[i].lock().expect("no panics hold this lock") = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
