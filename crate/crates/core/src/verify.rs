//! Brute-force checks of the exact machines against per-pair statistics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, NodeIndex};
use crate::exact::{ExactMachine, ExactMachineConfig};
use crate::pipeline::{embed_node, observe_batch, Stages, TemporalState};

pub const ORACLE_TOL: f64 = 1e-9;

/// Which statistic a verification trial targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    MovingAverage,
    Persistent,
    Autoregressive,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [
        Statistic::MovingAverage,
        Statistic::Persistent,
        Statistic::Autoregressive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::MovingAverage => "ma",
            Statistic::Persistent => "persistent",
            Statistic::Autoregressive => "ar",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<Statistic>> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            "ma" => Ok(vec![Statistic::MovingAverage]),
            "persistent" => Ok(vec![Statistic::Persistent]),
            "ar" => Ok(vec![Statistic::Autoregressive]),
            other => Err(Error::InvalidArgument(format!("unknown statistic `{other}`"))),
        }
    }

    /// Machine config for this statistic; AR weights are drawn from `rng`.
    pub fn machine_config(self, n: usize, k: usize, rng: &mut impl Rng) -> ExactMachineConfig {
        match self {
            Statistic::MovingAverage => ExactMachineConfig::moving_average(n, k),
            Statistic::Persistent => ExactMachineConfig::persistent(n),
            Statistic::Autoregressive => {
                ExactMachineConfig::autoregressive(n, (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
            }
        }
    }
}

/// `count` scalar events between distinct nodes at times `1, 2, ..`, values
/// uniform in `[-5, 5)`.
pub fn random_scalar_stream(seed: u64, num_nodes: usize, count: usize) -> Result<EventStream> {
    if num_nodes < 2 {
        return Err(Error::InvalidArgument("need at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..count)
        .map(|i| {
            let src = rng.random_range(0..num_nodes);
            let mut dst = rng.random_range(0..num_nodes - 1);
            if dst >= src {
                dst += 1;
            }
            Event::scalar(src, dst, (i + 1) as f64, rng.random_range(-5.0..5.0))
        })
        .collect();
    EventStream::from_indexed(events, num_nodes)
}

/// `sum_c weights[c] * history[len - 1 - c]`, missing values counting as zero.
pub fn brute_force_statistic(history: &[f64], weights: &[f64]) -> f64 {
    weights
        .iter()
        .zip(history.iter().rev())
        .map(|(w, v)| w * v)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub max_error: f64,
    pub comparisons: usize,
}

/// Feeds `stream` one event at a time and, after each event, compares every
/// node's readout with the brute-force statistic of its outgoing pairs.
pub fn check_against_oracle(machine: &ExactMachine, stream: &EventStream) -> Result<OracleReport> {
    let n = machine.n();
    if stream.num_nodes() > n {
        return Err(Error::NodeOutOfRange {
            index: stream.num_nodes() - 1,
            limit: n,
        });
    }
    let weights = &machine.config().weights;
    let mut state = TemporalState::new(n, machine.memory_dim());
    let mut history: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut report = OracleReport {
        max_error: 0.0,
        comparisons: 0,
    };
    for ev in stream.events() {
        observe_batch(machine, &mut state, std::slice::from_ref(ev))?;
        history
            .entry((ev.src.index(), ev.dst.index()))
            .or_default()
            .push(ev.amount());
        for u in 0..n {
            let readout = embed_node(machine, &state, NodeIndex::new(u), ev.time)?;
            for (j, got) in readout.iter().enumerate() {
                let want = history
                    .get(&(u, j))
                    .map_or(0.0, |h| brute_force_statistic(h, weights));
                report.max_error = report.max_error.max((got - want).abs());
                report.comparisons += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub statistic: Statistic,
    pub n: usize,
    pub k: usize,
    pub events: usize,
    pub max_error: f64,
}

impl TrialResult {
    pub fn pass(&self) -> bool {
        self.max_error <= ORACLE_TOL
    }
}

/// One oracle trial: stream and AR weights both derive from `seed`.
pub fn run_trial(
    trial: usize,
    seed: u64,
    statistic: Statistic,
    n: usize,
    k: usize,
    events: usize,
) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = statistic.machine_config(n, k, &mut rng);
    let k = config.k;
    let machine = ExactMachine::new(config)?;
    let stream = random_scalar_stream(rng.random(), n, events)?;
    let report = check_against_oracle(&machine, &stream)?;
    Ok(TrialResult {
        trial,
        statistic,
        n,
        k,
        events,
        max_error: report.max_error,
    })
}
