//! NDCG@k and causal window-by-window evaluation of affinity predictors.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{AffinityLabel, Event, EventStream, NodeIndex};
use crate::exact::ExactMachine;
use crate::heuristics::{
    moving_average_labels, moving_average_messages, persistent_forecast_labels, LabelHistory,
    MessageHistory,
};
use crate::pipeline::{observe_batch, predict, Stages, TemporalState};

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(pos, rel)| rel / ((pos + 2) as f64).log2())
        .sum()
}

/// Graded NDCG truncated at `k`. Zero when every relevance is zero.
pub fn ndcg_at_k(scores: &[f64], relevance: &[f64], k: usize) -> Result<f64> {
    if scores.len() != relevance.len() {
        return Err(Error::DimensionMismatch {
            expected: relevance.len(),
            actual: scores.len(),
            context: "ndcg scores vs relevance",
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("ndcg needs at least one candidate".into()));
    }
    let k = k.min(scores.len());
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return Ok(0.0);
    }
    let got = dcg(rank_by_score(scores).into_iter().take(k).map(|i| relevance[i]));
    Ok(got / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub source: NodeIndex,
    pub window_index: usize,
    pub scores: Vec<f64>,
    pub relevance: Vec<f64>,
    pub ndcg_at_10: f64,
}

/// Something that scores destinations for a source at a time, given only
/// the events and labels that [`evaluate`] has fed it so far.
pub trait Predictor {
    fn name(&self) -> String;

    fn observe_events(&mut self, _events: &[Event]) -> Result<()> {
        Ok(())
    }

    fn observe_label(&mut self, _label: &AffinityLabel) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, source: NodeIndex, at: f64, num_nodes: usize) -> Result<Vec<f64>>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn observe_events(&mut self, events: &[Event]) -> Result<()> {
        (**self).observe_events(events)
    }

    fn observe_label(&mut self, label: &AffinityLabel) -> Result<()> {
        (**self).observe_label(label)
    }

    fn predict(&mut self, source: NodeIndex, at: f64, num_nodes: usize) -> Result<Vec<f64>> {
        (**self).predict(source, at, num_nodes)
    }
}

#[derive(Debug, Clone)]
pub struct PersistentLabels {
    history: LabelHistory,
}

impl PersistentLabels {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            history: LabelHistory::new(num_nodes),
        }
    }
}

impl Predictor for PersistentLabels {
    fn name(&self) -> String {
        "persistent-labels".into()
    }

    fn observe_label(&mut self, label: &AffinityLabel) -> Result<()> {
        self.history.push(label.clone());
        Ok(())
    }

    fn predict(&mut self, source: NodeIndex, at: f64, _num_nodes: usize) -> Result<Vec<f64>> {
        Ok(persistent_forecast_labels(&self.history, source, at))
    }
}

#[derive(Debug, Clone)]
pub struct MovingAverageLabels {
    history: LabelHistory,
    k: usize,
}

impl MovingAverageLabels {
    pub fn new(num_nodes: usize, k: usize) -> Self {
        Self {
            history: LabelHistory::new(num_nodes),
            k,
        }
    }
}

impl Predictor for MovingAverageLabels {
    fn name(&self) -> String {
        format!("moving-avg-labels(k={})", self.k)
    }

    fn observe_label(&mut self, label: &AffinityLabel) -> Result<()> {
        self.history.push(label.clone());
        Ok(())
    }

    fn predict(&mut self, source: NodeIndex, at: f64, _num_nodes: usize) -> Result<Vec<f64>> {
        Ok(moving_average_labels(&self.history, source, at, self.k))
    }
}

#[derive(Debug, Clone)]
pub struct MovingAverageMessages {
    history: MessageHistory,
    k: usize,
}

impl MovingAverageMessages {
    /// Each pair keeps only its newest `k` values.
    pub fn new(num_nodes: usize, k: usize) -> Self {
        Self {
            history: MessageHistory::bounded(num_nodes, k),
            k,
        }
    }
}

impl Predictor for MovingAverageMessages {
    fn name(&self) -> String {
        format!("moving-avg-messages(k={})", self.k)
    }

    fn observe_events(&mut self, events: &[Event]) -> Result<()> {
        self.history.extend(events);
        Ok(())
    }

    fn predict(&mut self, source: NodeIndex, at: f64, _num_nodes: usize) -> Result<Vec<f64>> {
        Ok(moving_average_messages(&self.history, source, at, self.k))
    }
}

/// Independent uniform scores.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Predictor for UniformRandom {
    fn name(&self) -> String {
        "random".into()
    }

    fn predict(&mut self, _source: NodeIndex, _at: f64, num_nodes: usize) -> Result<Vec<f64>> {
        Ok((0..num_nodes).map(|_| self.rng.random::<f64>()).collect())
    }
}

/// Runs any [`Stages`] implementation as a predictor, feeding events in
/// batches of at most `batch_size`.
#[derive(Debug, Clone)]
pub struct PipelinePredictor<S> {
    stages: S,
    state: TemporalState,
    batch_size: usize,
    label: String,
}

impl<S: Stages> PipelinePredictor<S> {
    pub fn new(stages: S, num_nodes: usize, batch_size: usize, label: impl Into<String>) -> Self {
        let state = TemporalState::new(num_nodes, stages.memory_dim());
        Self {
            stages,
            state,
            batch_size: batch_size.max(1),
            label: label.into(),
        }
    }

    pub fn state(&self) -> &TemporalState {
        &self.state
    }

    pub fn stages(&self) -> &S {
        &self.stages
    }
}

impl<S: Stages> Predictor for PipelinePredictor<S> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn observe_events(&mut self, events: &[Event]) -> Result<()> {
        for chunk in events.chunks(self.batch_size) {
            observe_batch(&self.stages, &mut self.state, chunk)?;
        }
        Ok(())
    }

    fn predict(&mut self, source: NodeIndex, at: f64, _num_nodes: usize) -> Result<Vec<f64>> {
        let mut out = predict(&self.stages, &self.state, &[source], at)?;
        Ok(out.pop().expect("one query"))
    }
}

pub fn machine_predictor(machine: ExactMachine, num_nodes: usize) -> PipelinePredictor<ExactMachine> {
    let label = format!("exact(k={})", machine.k());
    PipelinePredictor::new(machine, num_nodes, 200, label)
}

/// Wraps a predictor and rejects any prediction at a time that does not lie
/// strictly after every event and at or after every label window it was fed.
#[derive(Debug, Clone)]
pub struct CausalityGuard<P> {
    inner: P,
    latest_event: f64,
    latest_label_end: f64,
}

impl<P: Predictor> CausalityGuard<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            latest_event: f64::NEG_INFINITY,
            latest_label_end: f64::NEG_INFINITY,
        }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: Predictor> Predictor for CausalityGuard<P> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn observe_events(&mut self, events: &[Event]) -> Result<()> {
        for e in events {
            self.latest_event = self.latest_event.max(e.time);
        }
        self.inner.observe_events(events)
    }

    fn observe_label(&mut self, label: &AffinityLabel) -> Result<()> {
        self.latest_label_end = self.latest_label_end.max(label.window_end);
        self.inner.observe_label(label)
    }

    fn predict(&mut self, source: NodeIndex, at: f64, num_nodes: usize) -> Result<Vec<f64>> {
        if self.latest_event >= at || self.latest_label_end > at {
            return Err(Error::InvalidArgument(format!(
                "causality violation: predicting at t={at} after seeing event t={} / label end t={}",
                self.latest_event, self.latest_label_end
            )));
        }
        self.inner.predict(source, at, num_nodes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub window_index: usize,
    pub window_start: f64,
    pub queries: usize,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictor: String,
    pub results: Vec<RankingResult>,
    pub windows: Vec<WindowScore>,
    /// Mean of the per-window NDCG values.
    pub mean: f64,
    /// Population standard deviation of the per-window NDCG values.
    pub std: f64,
}

impl EvalReport {
    pub fn write_windows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["window_index", "window_start", "queries", "ndcg@10"])?;
        for s in &self.windows {
            w.write_record([
                s.window_index.to_string(),
                s.window_start.to_string(),
                s.queries.to_string(),
                s.ndcg.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores `targets` window by window. Before each window the predictor sees
/// the events with `time < window_start` and every label in `all_labels`
/// whose window has ended by `window_start`; nothing later.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &mut P,
    stream: &EventStream,
    all_labels: &[AffinityLabel],
    targets: &[AffinityLabel],
) -> Result<EvalReport> {
    let num_nodes = stream.num_nodes();
    let mut fed_labels: Vec<&AffinityLabel> = all_labels.iter().collect();
    fed_labels.sort_by(|a, b| a.window_end.total_cmp(&b.window_end));
    let mut targets: Vec<&AffinityLabel> = targets.iter().collect();
    targets.sort_by(|a, b| a.window_index.cmp(&b.window_index).then(a.source.cmp(&b.source)));

    let mut event_cursor = 0;
    let mut label_cursor = 0;
    let mut results = Vec::with_capacity(targets.len());
    let mut windows: Vec<WindowScore> = Vec::new();
    for label in targets {
        let at = label.window_start;
        let end = stream.prefix_before(at).len();
        if end > event_cursor {
            predictor.observe_events(&stream.events()[event_cursor..end])?;
            event_cursor = end;
        }
        while label_cursor < fed_labels.len() && fed_labels[label_cursor].window_end <= at {
            predictor.observe_label(fed_labels[label_cursor])?;
            label_cursor += 1;
        }
        let scores = predictor.predict(label.source, at, num_nodes)?;
        let ndcg = ndcg_at_k(&scores, &label.affinity, 10)?;
        match windows.last_mut() {
            Some(w) if w.window_index == label.window_index => {
                w.ndcg += ndcg;
                w.queries += 1;
            }
            _ => windows.push(WindowScore {
                window_index: label.window_index,
                window_start: at,
                queries: 1,
                ndcg,
            }),
        }
        results.push(RankingResult {
            source: label.source,
            window_index: label.window_index,
            scores,
            relevance: label.affinity.clone(),
            ndcg_at_10: ndcg,
        });
    }
    for w in &mut windows {
        w.ndcg /= w.queries as f64;
    }
    let per_window: Vec<f64> = windows.iter().map(|w| w.ndcg).collect();
    let (mean, std) = mean_std(&per_window);
    Ok(EvalReport {
        predictor: predictor.name(),
        results,
        windows,
        mean,
        std,
    })
}
