//! Epoch loop with best-validation selection and a per-split metric trace.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::eval::{mean_std, ndcg_at_k};
use crate::events::{AffinityLabel, EventStream, LabelSplit, Split};
use crate::pipeline::{observe_batch, MessageKind, Stages, TemporalState};

use super::layers::Dropout;
use super::model::{LearnableModel, ModelConfig, NodeEncoderMode};
use super::params::Adam;
use super::tape::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub heads: usize,
    pub neighbor_cap: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Multiply the learning rate by `lr_decay` after every this many
    /// epochs; 0 disables decay.
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub node_encoder: NodeEncoderMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 200,
            epochs: 50,
            hidden: 32,
            heads: 2,
            neighbor_cap: 10,
            dropout: 0.1,
            seed: 0,
            lr_decay_every: 0,
            lr_decay: 0.5,
            node_encoder: NodeEncoderMode::Cosine,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "learning_rate",
        "batch_size",
        "epochs",
        "hidden",
        "heads",
        "x",
        "dropout",
        "seed",
        "lr_decay_every",
        "lr_decay",
        "node_encoder",
    ];

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            learning_rate: cfg.parse_or("learning_rate", d.learning_rate)?,
            batch_size: cfg.parse_or("batch_size", d.batch_size)?,
            epochs: cfg.parse_or("epochs", d.epochs)?,
            hidden: cfg.parse_or("hidden", d.hidden)?,
            heads: cfg.parse_or("heads", d.heads)?,
            neighbor_cap: cfg.parse_or("x", d.neighbor_cap)?,
            dropout: cfg.parse_or("dropout", d.dropout)?,
            seed: cfg.parse_or("seed", d.seed)?,
            lr_decay_every: cfg.parse_or("lr_decay_every", d.lr_decay_every)?,
            lr_decay: cfg.parse_or("lr_decay", d.lr_decay)?,
            node_encoder: cfg.parse_or("node_encoder", d.node_encoder)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("lr_decay must be positive".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            dropout: self.dropout,
            neighbor_cap: self.neighbor_cap,
            node_encoder: self.node_encoder,
            seed: self.seed,
        }
    }
}

/// One line of the metric trace. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: Split,
    pub ndcg: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation NDCG@10.
    pub model: LearnableModel,
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_at_best: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "split", "ndcg@10", "loss"])?;
    for r in trace {
        w.write_record([
            r.epoch.to_string(),
            r.split.as_str().to_string(),
            r.ndcg.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

struct Window<'a> {
    start: f64,
    split: Split,
    labels: Vec<&'a AffinityLabel>,
}

fn windows(labels: &LabelSplit) -> Vec<Window<'_>> {
    let mut by_index: BTreeMap<usize, Window<'_>> = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for l in labels.get(split) {
            by_index
                .entry(l.window_index)
                .or_insert_with(|| Window {
                    start: l.window_start,
                    split,
                    labels: Vec::new(),
                })
                .labels
                .push(l);
        }
    }
    let mut out: Vec<Window<'_>> = by_index.into_values().collect();
    for w in &mut out {
        w.labels.sort_by_key(|l| l.source);
    }
    out
}

#[derive(Default)]
struct SplitTally {
    window_ndcg: Vec<f64>,
    loss_sum: f64,
    queries: usize,
}

struct EpochResult {
    tallies: HashMap<Split, SplitTally>,
}

impl EpochResult {
    fn row(&self, epoch: usize, split: Split) -> Option<TraceRow> {
        let t = self.tallies.get(&split)?;
        Some(TraceRow {
            epoch,
            split,
            ndcg: mean_std(&t.window_ndcg).0,
            loss: t.loss_sum / t.queries.max(1) as f64,
        })
    }
}

/// Runs every window in order from fresh memory. Training windows take one
/// optimizer step each when `optimizer` is given.
fn run_epoch(
    model: &mut LearnableModel,
    stream: &EventStream,
    windows: &[Window<'_>],
    batch_size: usize,
    epoch: usize,
    mut optimizer: Option<(&mut Adam, &mut ChaCha8Rng)>,
) -> Result<EpochResult> {
    let mut state = TemporalState::new(model.num_nodes(), model.hidden());
    let events = stream.events();
    let mut cursor = 0;
    let mut tallies: HashMap<Split, SplitTally> = HashMap::new();
    for w in windows {
        let end = stream.prefix_before(w.start).len();
        for chunk in events[cursor..end.max(cursor)].chunks(batch_size) {
            observe_batch(&*model, &mut state, chunk)?;
        }
        cursor = cursor.max(end);

        let training = w.split == Split::Train && optimizer.is_some();
        let mut tape = Tape::new();
        let mut cache = HashMap::new();
        let mut losses = Vec::with_capacity(w.labels.len());
        let mut ndcg_sum = 0.0;
        for label in &w.labels {
            let neighbors = state.graph.neighborhood(
                label.source,
                w.start,
                model.formulation().num_layers,
                model.formulation().neighbor_cap,
            );
            let z = match (&mut optimizer, training) {
                (Some((_, rng)), true) => {
                    let mut drop = Dropout {
                        rate: model.config().dropout,
                        rng,
                    };
                    model.embed_on_tape(&mut tape, &state.bank, label.source, w.start, &neighbors, &mut cache, Some(&mut drop))?
                }
                _ => model.embed_on_tape(&mut tape, &state.bank, label.source, w.start, &neighbors, &mut cache, None)?,
            };
            let logits = model.decode_on_tape(&mut tape, z)?;
            ndcg_sum += ndcg_at_k(tape.value(logits), &label.affinity, 10)?;
            let loss = tape.softmax_cross_entropy(logits, label.normalized_affinity())?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    window_start: w.start,
                });
            }
            losses.push(loss);
        }
        if losses.is_empty() {
            continue;
        }
        let mean = tape.mean(&losses)?;
        let tally = tallies.entry(w.split).or_default();
        tally.window_ndcg.push(ndcg_sum / losses.len() as f64);
        tally.loss_sum += tape.scalar(mean) * losses.len() as f64;
        tally.queries += losses.len();
        if training {
            if let Some((adam, _)) = &mut optimizer {
                model.params.zero_grad();
                tape.backward(mean, &mut model.params)?;
                adam.step(&mut model.params);
            }
        }
    }
    Ok(EpochResult { tallies })
}

/// Trains a TGN or TGNv2 model on the training windows of `labels`. Epoch 0
/// only evaluates the initialization; each later epoch resets memory, takes
/// one step per training window and then scores validation and test.
pub fn train(
    stream: &EventStream,
    labels: &LabelSplit,
    kind: MessageKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let feature_dim = stream.feature_dim();
    let mut model = LearnableModel::new(kind, stream.num_nodes(), feature_dim, config.model_config())?;
    let windows = windows(labels);
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f);
    let select_on = if labels.val.is_empty() {
        Split::Train
    } else {
        Split::Val
    };

    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, f64, LearnableModel)> = None;
    for epoch in 0..=config.epochs {
        let result = if epoch == 0 {
            run_epoch(&mut model, stream, &windows, config.batch_size, epoch, None)?
        } else {
            let r = run_epoch(
                &mut model,
                stream,
                &windows,
                config.batch_size,
                epoch,
                Some((&mut adam, &mut rng)),
            )?;
            if config.lr_decay_every > 0 && epoch % config.lr_decay_every == 0 {
                adam.lr *= config.lr_decay;
            }
            r
        };
        for split in [Split::Train, Split::Val, Split::Test] {
            if let Some(row) = result.row(epoch, split) {
                trace.push(row);
            }
        }
        // validation and test windows follow every training window, so they
        // were scored with the parameters being snapshotted here
        let score = result.row(epoch, select_on).map_or(0.0, |r| r.ndcg);
        let test = result.row(epoch, Split::Test).map_or(0.0, |r| r.ndcg);
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((epoch, score, test, model.clone()));
        }
    }
    let (best_epoch, best_val, test_at_best, model) = best.expect("epoch 0 always runs");
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        best_val,
        test_at_best,
    })
}

/// Loss on the first training window over `steps` consecutive optimizer
/// steps on that window alone; entry `i` is the loss before step `i`.
pub fn first_window_losses(
    stream: &EventStream,
    labels: &LabelSplit,
    kind: MessageKind,
    config: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut model = LearnableModel::new(kind, stream.num_nodes(), stream.feature_dim(), config.model_config())?;
    let windows = windows(labels);
    let Some(w) = windows.iter().find(|w| w.split == Split::Train) else {
        return Err(Error::InvalidArgument("no training windows".into()));
    };
    let mut state = TemporalState::new(model.num_nodes(), model.hidden());
    for chunk in stream.prefix_before(w.start).chunks(config.batch_size) {
        observe_batch(&model, &mut state, chunk)?;
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let mut cache = HashMap::new();
        let mut losses = Vec::with_capacity(w.labels.len());
        for label in &w.labels {
            let f = model.formulation();
            let neighbors = state.graph.neighborhood(label.source, w.start, f.num_layers, f.neighbor_cap);
            let z = model.embed_on_tape(&mut tape, &state.bank, label.source, w.start, &neighbors, &mut cache, None)?;
            let logits = model.decode_on_tape(&mut tape, z)?;
            losses.push(tape.softmax_cross_entropy(logits, label.normalized_affinity())?);
        }
        let mean = tape.mean(&losses)?;
        out.push(tape.scalar(mean));
        model.params.zero_grad();
        tape.backward(mean, &mut model.params)?;
        adam.step(&mut model.params);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{chronological_split, SplitRatios};
    use crate::synthetic::{generate_synthetic, SyntheticSpec};

    fn tiny_data() -> (EventStream, LabelSplit) {
        let data = generate_synthetic(&SyntheticSpec {
            num_nodes: 6,
            num_events: 200,
            fanout: 2,
            label_period: 20.0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = chronological_split(&data.labels, SplitRatios::default()).unwrap();
        (data.stream, split)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            epochs: 2,
            batch_size: 20,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (stream, split) = tiny_data();
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let out = train(&stream, &split, MessageKind::Tgnv2, &cfg).unwrap();
        let init = LearnableModel::new(MessageKind::Tgnv2, 6, 1, cfg.model_config()).unwrap();
        assert_eq!(out.model.params, init.params);
        assert_eq!(out.best_epoch, 0);
        assert!(out.trace.iter().all(|r| r.epoch == 0));
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn training_is_reproducible() {
        let (stream, split) = tiny_data();
        let a = train(&stream, &split, MessageKind::Tgn, &tiny_config()).unwrap();
        let b = train(&stream, &split, MessageKind::Tgn, &tiny_config()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.trace.len(), 9);
    }

    #[test]
    fn trace_csv_layout() {
        let rows = [TraceRow {
            epoch: 1,
            split: Split::Val,
            ndcg: 0.5,
            loss: 1.25,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,split,ndcg@10,loss\n1,val,0.5,1.25\n");
    }

    #[test]
    fn config_keys() {
        let cfg = KvConfig::parse("epochs = 3\nnode_encoder = zero\nx = 4").unwrap();
        cfg.ensure_known(&TrainConfig::KEYS).unwrap();
        let t = TrainConfig::from_config(&cfg).unwrap();
        assert_eq!((t.epochs, t.neighbor_cap, t.node_encoder), (3, 4, NodeEncoderMode::Zero));
        let bad = KvConfig::parse("dropout = 1.5").unwrap();
        assert!(TrainConfig::from_config(&bad).is_err());
    }
}
