//! Flipped-graph counterexamples: anonymous-message formulations cannot tell
//! the two graphs apart, identity-aware exact machines can.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, NodeIndex};
use crate::exact::ExactMachine;
use crate::pipeline::{embed_node, observe_batch, MessageKind, Stages, TemporalState};

/// Node 0 sends `alphas` to node 1 and then `betas` to node 2 in `g`; in
/// `g_flipped` the two recipients trade places. Timestamps run `1..=n+m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexamplePair {
    pub g: EventStream,
    pub g_flipped: EventStream,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub k: usize,
}

impl CounterexamplePair {
    /// The first time after every event.
    pub fn query_time(&self) -> f64 {
        (self.alphas.len() + self.betas.len() + 1) as f64
    }
}

pub fn build_counterexample(alphas: &[f64], betas: &[f64], k: usize) -> Result<CounterexamplePair> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if alphas.len() < k || betas.len() < k {
        return Err(Error::InvalidArgument(format!(
            "sequences need at least k = {k} values, got {} and {}",
            alphas.len(),
            betas.len()
        )));
    }
    let build = |first: usize, second: usize| {
        let events: Vec<Event> = alphas
            .iter()
            .map(|&a| (first, a))
            .chain(betas.iter().map(|&b| (second, b)))
            .enumerate()
            .map(|(i, (dst, v))| Event::scalar(0, dst, (i + 1) as f64, v))
            .collect();
        EventStream::from_indexed(events, 3)
    };
    Ok(CounterexamplePair {
        g: build(1, 2)?,
        g_flipped: build(2, 1)?,
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        k,
    })
}

/// Weighted sum of the last `k` values, `weights[0]` on the newest. `None`
/// means the plain mean.
pub fn tail_statistic(seq: &[f64], k: usize, weights: Option<&[f64]>) -> Result<f64> {
    if k == 0 || seq.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= {}, got k = {k}",
            seq.len()
        )));
    }
    let tail = seq[seq.len() - k..].iter().rev();
    match weights {
        None => Ok(tail.sum::<f64>() / k as f64),
        Some(w) if w.len() == k => Ok(tail.zip(w).map(|(x, w)| x * w).sum()),
        Some(w) => Err(Error::DimensionMismatch {
            expected: k,
            actual: w.len(),
            context: "tail statistic weights",
        }),
    }
}

/// Draws a pair with lengths in `k..=max_len` and values in `[-5, 5)`
/// whose mean tails differ.
pub fn sample_counterexample(seed: u64, k: usize, max_len: usize) -> Result<CounterexamplePair> {
    let max_len = max_len.max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let len = rng.random_range(k..=max_len);
            (0..len).map(|_| rng.random_range(-5.0..5.0)).collect()
        };
        let alphas = draw(&mut rng);
        let betas = draw(&mut rng);
        if (tail_statistic(&alphas, k, None)? - tail_statistic(&betas, k, None)?).abs() > 1e-6 {
            return build_counterexample(&alphas, &betas, k);
        }
    }
}

/// Feeds `stream` one event per batch.
pub fn run_stream<S: Stages + ?Sized>(
    stages: &S,
    stream: &EventStream,
    num_nodes: usize,
) -> Result<TemporalState> {
    let mut state = TemporalState::new(num_nodes, stages.memory_dim());
    for ev in stream.events() {
        observe_batch(stages, &mut state, std::slice::from_ref(ev))?;
    }
    Ok(state)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseVerdict {
    pub embedding_gap: f64,
    pub output_gap: f64,
    /// Largest gap over `s1(G) - s2(G')` and `s2(G) - s1(G')`, plus the
    /// source's own state.
    pub memory_gap: f64,
    pub pass: bool,
}

pub const COLLAPSE_TOL: f64 = 1e-12;
pub const SEPARATION_TOL: f64 = 1e-9;

/// Runs an anonymous-message formulation on both graphs and checks that the
/// source's embedding and output, and the swapped recipients' memories,
/// coincide.
pub fn assert_tgn_collapse<S: Stages + ?Sized>(
    stages: &S,
    pair: &CounterexamplePair,
) -> Result<CollapseVerdict> {
    let f = stages.formulation();
    if f.message_fn != MessageKind::Tgn {
        return Err(Error::NotTgnShaped(format!(
            "message function is `{}`",
            f.message_fn
        )));
    }
    let a = run_stream(stages, &pair.g, 3)?;
    let b = run_stream(stages, &pair.g_flipped, 3)?;
    let t = pair.query_time();
    let src = NodeIndex::new(0);
    let za = embed_node(stages, &a, src, t)?;
    let zb = embed_node(stages, &b, src, t)?;
    let oa = stages.decode(&za, 3)?;
    let ob = stages.decode(&zb, 3)?;
    let n = |i| NodeIndex::new(i);
    let memory_gap = [
        max_gap(a.bank.state(n(0))?, b.bank.state(n(0))?),
        max_gap(a.bank.state(n(1))?, b.bank.state(n(2))?),
        max_gap(a.bank.state(n(2))?, b.bank.state(n(1))?),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let embedding_gap = max_gap(&za, &zb);
    let output_gap = max_gap(&oa, &ob);
    Ok(CollapseVerdict {
        embedding_gap,
        output_gap,
        memory_gap,
        pass: embedding_gap <= COLLAPSE_TOL && output_gap <= COLLAPSE_TOL && memory_gap <= COLLAPSE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationVerdict {
    pub readout_g: Vec<f64>,
    pub readout_flipped: Vec<f64>,
    /// Largest deviation from `[0, a, b, 0..]` and `[0, b, a, 0..]`.
    pub oracle_error: f64,
    /// Whether the two readouts differ at all.
    pub separated: bool,
    pub pass: bool,
}

/// Reads out the source of each graph through `machine` and compares with
/// the machine's own statistic of each tail.
pub fn assert_tgnv2_separates(machine: &ExactMachine, pair: &CounterexamplePair) -> Result<SeparationVerdict> {
    let n = machine.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("machine needs n >= 3, got {n}")));
    }
    let k = machine.k();
    let weights = machine.config().weights.as_slice();
    let a_bar = tail_statistic(&pair.alphas, k, Some(weights))?;
    let b_bar = tail_statistic(&pair.betas, k, Some(weights))?;
    let t = pair.query_time();
    let readout = |stream: &EventStream| -> Result<Vec<f64>> {
        let state = run_stream(machine, stream, n)?;
        embed_node(machine, &state, NodeIndex::new(0), t)
    };
    let readout_g = readout(&pair.g)?;
    let readout_flipped = readout(&pair.g_flipped)?;
    let mut want_g = vec![0.0; n];
    want_g[1] = a_bar;
    want_g[2] = b_bar;
    let mut want_flipped = want_g.clone();
    want_flipped.swap(1, 2);
    let oracle_error = max_gap(&readout_g, &want_g).max(max_gap(&readout_flipped, &want_flipped));
    let separated = max_gap(&readout_g, &readout_flipped) > SEPARATION_TOL;
    Ok(SeparationVerdict {
        readout_g,
        readout_flipped,
        oracle_error,
        separated,
        pass: oracle_error <= SEPARATION_TOL,
    })
}

/// One row of the verdict table; `None` means the check was not run.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub formulation: String,
    pub pair: usize,
    pub collapse: Option<bool>,
    pub separation: Option<bool>,
}

fn verdict_cell(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "-",
    }
}

pub fn write_verdicts_csv<W: Write>(rows: &[VerdictRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["formulation", "pair", "collapse", "separation"])?;
    for r in rows {
        w.write_record([
            r.formulation.as_str(),
            &r.pair.to_string(),
            verdict_cell(r.collapse),
            verdict_cell(r.separation),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<verdicts>", e))?;
    Ok(())
}
