//! Config file plus command-line overrides, and where outputs go.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;
use tgnv2_core::config::KvConfig;
use tgnv2_core::events::{
    chronological_split, compute_affinity_labels, ingest_csv, AffinityLabel, CsvSchema, EventStream, LabelSplit,
    Split, SplitRatios,
};

pub const OUT_DIR_ENV: &str = "TGNV2_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "tgnv2-out";

/// A config key the command does not understand. Reported as a usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Options every subcommand accepts.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// key = value config file; flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $TGNV2_OUT_DIR, then `out` in the config, then ./tgnv2-out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print summaries as line-delimited JSON
    #[arg(long)]
    pub json: bool,
}

pub struct Settings {
    pub cfg: KvConfig,
    pub out_dir: PathBuf,
    pub json: bool,
}

impl Settings {
    /// Loads the config file, applies `overrides` and rejects keys outside
    /// `known` (plus `out`).
    pub fn resolve(common: &Common, overrides: Vec<(&str, Option<String>)>, known: &[&str]) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => KvConfig::load(path)?,
            None => KvConfig::new(),
        };
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v);
            }
        }
        let mut allowed = known.to_vec();
        allowed.push("out");
        if let Some(bad) = cfg.keys().find(|k| !allowed.contains(k)) {
            return Err(UsageError(format!("unknown config key `{bad}`")).into());
        }
        let out_dir = common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| cfg.get("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            cfg,
            out_dir,
            json: common.json,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn create(&self, name: &str) -> Result<fs::File> {
        let path = self.path(name);
        fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
    }

    /// Prints one summary record, as JSON or as `key: value` lines.
    pub fn report(&self, record: Value) {
        if self.json {
            println!("{record}");
            return;
        }
        if let Value::Object(map) = record {
            let parts: Vec<String> = map
                .iter()
                .map(|(k, v)| match v {
                    Value::String(s) => format!("{k}={s}"),
                    other => format!("{k}={other}"),
                })
                .collect();
            println!("{}", parts.join("  "));
        }
    }
}

pub fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

pub const DATA_KEYS: [&str; 9] = [
    "data",
    "period",
    "split",
    "train_ratio",
    "val_ratio",
    "test_ratio",
    "src",
    "dst",
    "time",
];

/// Data keys plus the CSV `features` column list.
pub fn data_keys() -> Vec<&'static str> {
    let mut keys = DATA_KEYS.to_vec();
    keys.push("features");
    keys
}

pub struct Dataset {
    pub stream: EventStream,
    pub labels: Vec<AffinityLabel>,
    pub split: LabelSplit,
    pub period: f64,
}

impl Dataset {
    pub fn targets(&self, which: &str) -> Result<Vec<AffinityLabel>> {
        Ok(match which {
            "all" => self.labels.clone(),
            "train" => self.split.get(Split::Train).to_vec(),
            "val" => self.split.get(Split::Val).to_vec(),
            "test" => self.split.get(Split::Test).to_vec(),
            other => anyhow::bail!("unknown split `{other}` (expected all, train, val or test)"),
        })
    }
}

/// Default label period: the stream's span cut into this many windows.
pub const DEFAULT_WINDOWS: f64 = 20.0;

pub fn load_dataset(cfg: &KvConfig) -> Result<Dataset> {
    let path = cfg
        .get("data")
        .context("no dataset given; pass --data or set `data` in the config")?;
    let schema = CsvSchema::from_config(cfg)?;
    let stream = ingest_csv(Path::new(path), &schema)?;
    let period = match cfg.parse_value::<f64>("period")? {
        Some(p) => p,
        None => match stream.time_span() {
            Some((a, b)) if b > a => (b - a) / DEFAULT_WINDOWS * (1.0 + 1e-9),
            _ => 1.0,
        },
    };
    let labels = compute_affinity_labels(&stream, period, false)?;
    if labels.is_empty() {
        anyhow::bail!("dataset {path} has no events");
    }
    let d = SplitRatios::default();
    let ratios = SplitRatios {
        train: cfg.parse_or("train_ratio", d.train)?,
        val: cfg.parse_or("val_ratio", d.val)?,
        test: cfg.parse_or("test_ratio", d.test)?,
    };
    let split = chronological_split(&labels, ratios)?;
    Ok(Dataset {
        stream,
        labels,
        split,
        period,
    })
}
