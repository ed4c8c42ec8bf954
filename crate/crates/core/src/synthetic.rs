//! Seeded synthetic interaction streams with controllable per-pair value
//! processes.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::events::{compute_affinity_labels, AffinityLabel, Event, EventStream, NodeRegistry};

/// How message values evolve for each (source, destination) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueProcess {
    /// Every message carries `value`.
    Constant { value: f64 },
    /// A fixed mean per pair drawn from `[low, high)`, plus Gaussian noise;
    /// values are clipped at zero.
    PairMeans { low: f64, high: f64, noise: f64 },
    /// Like `PairMeans`, but each pair's mean takes a Gaussian random-walk
    /// step of size `step` per message.
    DriftingMean {
        low: f64,
        high: f64,
        step: f64,
        noise: f64,
    },
    /// `x_t = mean + d_t` with `d_t = sum_i weights[i] * d_{t-1-i} + noise * eps`.
    Autoregressive {
        weights: Vec<f64>,
        noise: f64,
        mean: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_events: usize,
    pub process: ValueProcess,
    pub seed: u64,
    /// Distinct destinations each source talks to.
    pub fanout: usize,
    /// Time between consecutive events.
    pub time_step: f64,
    /// Label window length.
    pub label_period: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 16,
            num_events: 2000,
            process: ValueProcess::PairMeans {
                low: 1.0,
                high: 10.0,
                noise: 0.5,
            },
            seed: 0,
            fanout: 4,
            time_step: 1.0,
            label_period: 50.0,
        }
    }
}

impl SyntheticSpec {
    pub const KEYS: [&'static str; 14] = [
        "num_nodes",
        "num_events",
        "seed",
        "fanout",
        "time_step",
        "label_period",
        "process",
        "value",
        "low",
        "high",
        "noise",
        "step",
        "weights",
        "mean",
    ];

    /// `process` is one of `constant`, `pair-means`, `drifting-mean`, `ar`.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let process = match cfg.get("process").unwrap_or("pair-means") {
            "constant" => ValueProcess::Constant {
                value: cfg.parse_or("value", 1.0)?,
            },
            "pair-means" => ValueProcess::PairMeans {
                low: cfg.parse_or("low", 1.0)?,
                high: cfg.parse_or("high", 10.0)?,
                noise: cfg.parse_or("noise", 0.5)?,
            },
            "drifting-mean" => ValueProcess::DriftingMean {
                low: cfg.parse_or("low", 1.0)?,
                high: cfg.parse_or("high", 10.0)?,
                step: cfg.parse_or("step", 0.1)?,
                noise: cfg.parse_or("noise", 0.5)?,
            },
            "ar" => ValueProcess::Autoregressive {
                weights: cfg
                    .parse_list("weights")?
                    .ok_or_else(|| Error::InvalidArgument("`ar` needs `weights`".into()))?,
                noise: cfg.parse_or("noise", 1.0)?,
                mean: cfg.parse_or("mean", 0.0)?,
            },
            other => {
                return Err(Error::InvalidArgument(format!("unknown process `{other}`")));
            }
        };
        let spec = Self {
            num_nodes: cfg.parse_or("num_nodes", d.num_nodes)?,
            num_events: cfg.parse_or("num_events", d.num_events)?,
            process,
            seed: cfg.parse_or("seed", d.seed)?,
            fanout: cfg.parse_or("fanout", d.fanout)?,
            time_step: cfg.parse_or("time_step", d.time_step)?,
            label_period: cfg.parse_or("label_period", d.label_period)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(Error::InvalidArgument("need at least two nodes".into()));
        }
        if self.fanout == 0 || self.fanout >= self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "fanout must be in 1..{}, got {}",
                self.num_nodes, self.fanout
            )));
        }
        if !(self.time_step > 0.0) || !(self.label_period > 0.0) {
            return Err(Error::InvalidArgument(
                "time_step and label_period must be positive".into(),
            ));
        }
        match &self.process {
            ValueProcess::PairMeans { low, high, .. } | ValueProcess::DriftingMean { low, high, .. }
                if !(low < high) =>
            {
                Err(Error::InvalidArgument("need low < high".into()))
            }
            ValueProcess::Autoregressive { weights, .. } if weights.is_empty() => {
                Err(Error::InvalidArgument("AR process needs weights".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub stream: EventStream,
    /// Unnormalized labels over `label_period` windows.
    pub labels: Vec<AffinityLabel>,
}

#[derive(Debug, Clone)]
struct PairState {
    mean: f64,
    /// AR deviations, newest first.
    history: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl ValueProcess {
    fn init(&self, rng: &mut ChaCha8Rng) -> PairState {
        let mean = match self {
            ValueProcess::Constant { value } => *value,
            ValueProcess::PairMeans { low, high, .. } | ValueProcess::DriftingMean { low, high, .. } => {
                rng.random_range(*low..*high)
            }
            ValueProcess::Autoregressive { mean, .. } => *mean,
        };
        PairState {
            mean,
            history: Vec::new(),
        }
    }

    fn next(&self, state: &mut PairState, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ValueProcess::Constant { value } => *value,
            ValueProcess::PairMeans { noise, .. } => (state.mean + noise * normal(rng)).max(0.0),
            ValueProcess::DriftingMean { step, noise, .. } => {
                state.mean += step * normal(rng);
                (state.mean + noise * normal(rng)).max(0.0)
            }
            ValueProcess::Autoregressive { weights, noise, .. } => {
                let pred: f64 = weights
                    .iter()
                    .zip(&state.history)
                    .map(|(w, d)| w * d)
                    .sum();
                let d = pred + noise * normal(rng);
                state.history.insert(0, d);
                state.history.truncate(weights.len());
                state.mean + d
            }
        }
    }
}

/// Builds the stream and its unnormalized labels. Sources are drawn
/// uniformly; each source sends to one of its `fanout` destinations chosen
/// uniformly. Node indices follow first appearance, so the stream survives a
/// CSV round trip unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes;
    let targets: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            let mut others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
            others.shuffle(&mut rng);
            others.truncate(spec.fanout);
            others
        })
        .collect();

    let mut pairs: HashMap<(usize, usize), PairState> = HashMap::new();
    let mut registry = NodeRegistry::new();
    let mut events = Vec::with_capacity(spec.num_events);
    for i in 0..spec.num_events {
        let u = rng.random_range(0..n);
        let v = targets[u][rng.random_range(0..spec.fanout)];
        let state = pairs
            .entry((u, v))
            .or_insert_with(|| spec.process.init(&mut rng));
        let value = spec.process.next(state, &mut rng);
        let src = registry.register(&format!("n{u}"));
        let dst = registry.register(&format!("n{v}"));
        events.push(Event {
            src,
            dst,
            time: i as f64 * spec.time_step,
            feature: vec![value],
        });
    }
    let stream = EventStream::new(events, registry, vec!["weight".into()])?;
    let labels = compute_affinity_labels(&stream, spec.label_period, false)?;
    Ok(SyntheticData { stream, labels })
}
