use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::events::{Event, NodeIndex, StaticNodeFeatures};

use super::encode::Encoders;
use super::memory::{MemoryBank, MemoryRecord};
use super::message::{aggregate, build_messages, Aggregated, RawMessage};
use super::neighborhood::{Neighbor, TemporalAdjacency};
use super::Formulation;

/// Inputs available to the embedding stage for one query node.
#[derive(Debug, Clone, Copy)]
pub struct EmbedContext<'a> {
    pub center: NodeIndex,
    pub time: f64,
    pub bank: &'a MemoryBank,
    pub neighbors: &'a [Neighbor],
    pub node_features: &'a StaticNodeFeatures,
}

/// Numerics behind each stage of a [`Formulation`].
pub trait Stages {
    fn formulation(&self) -> &Formulation;

    fn encoders(&self) -> Encoders;

    fn memory_dim(&self) -> usize;

    /// Runs before aggregation; the default keeps every message.
    fn filter_messages(&self, messages: Vec<RawMessage>) -> Vec<RawMessage> {
        messages
    }

    fn update_memory(&self, aggregated: &Aggregated, prev: &[f64]) -> Result<Vec<f64>>;

    fn embed(&self, ctx: &EmbedContext<'_>) -> Result<Vec<f64>>;

    fn decode(&self, embedding: &[f64], num_nodes: usize) -> Result<Vec<f64>>;
}

/// Mutable state carried across batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalState {
    pub bank: MemoryBank,
    pub graph: TemporalAdjacency,
    pub node_features: StaticNodeFeatures,
    pub now: f64,
}

impl TemporalState {
    pub fn new(num_nodes: usize, memory_dim: usize) -> Self {
        Self {
            bank: MemoryBank::new(num_nodes, memory_dim),
            graph: TemporalAdjacency::new(num_nodes),
            node_features: StaticNodeFeatures::zeros(num_nodes, 0),
            now: 0.0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.bank.num_nodes()
    }

    pub fn reset(&mut self) {
        self.bank.reset();
        self.graph.clear();
        self.now = 0.0;
    }
}

/// Messages, aggregation and memory update for one batch. Nothing is
/// mutated unless the whole batch is valid.
pub fn observe_batch<S: Stages + ?Sized>(
    stages: &S,
    state: &mut TemporalState,
    batch: &[Event],
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    let formulation = stages.formulation();
    let encoders = stages.encoders();
    let limit = state.num_nodes();
    let mut prev_time = f64::NEG_INFINITY;
    let mut messages = Vec::with_capacity(batch.len() * 2);
    for ev in batch {
        for node in [ev.src, ev.dst] {
            if node.index() >= limit {
                return Err(Error::NodeOutOfRange {
                    index: node.index(),
                    limit,
                });
            }
        }
        if ev.time < prev_time {
            return Err(Error::OutOfOrder {
                node: ev.src.index(),
                event_time: ev.time,
                last_update: prev_time,
            });
        }
        prev_time = ev.time;
        let (s, d) = build_messages(formulation.message_fn, ev, &state.bank, &encoders)?;
        messages.push(s);
        messages.push(d);
    }

    let mut per_recipient: BTreeMap<NodeIndex, Vec<RawMessage>> = BTreeMap::new();
    for m in stages.filter_messages(messages) {
        per_recipient.entry(m.recipient).or_default().push(m);
    }
    let mut updates = Vec::with_capacity(per_recipient.len());
    for (node, msgs) in &per_recipient {
        let agg = aggregate(msgs, formulation.aggregator)?;
        let prev = state.bank.state(*node)?;
        let next = stages.update_memory(&agg, prev)?;
        let record = MemoryRecord {
            prev_state: prev.to_vec(),
            message: agg.messages.last().cloned().expect("aggregate is non-empty"),
        };
        updates.push((*node, next, record));
    }
    for (node, next, record) in updates {
        state.bank.set_state(node, next)?;
        state.bank.set_record(node, record)?;
    }
    for ev in batch {
        state.bank.touch(ev.src, ev.time)?;
        state.bank.touch(ev.dst, ev.time)?;
        state.graph.insert(ev);
    }
    state.now = state.now.max(prev_time);
    Ok(())
}

pub fn embed_node<S: Stages + ?Sized>(
    stages: &S,
    state: &TemporalState,
    node: NodeIndex,
    at: f64,
) -> Result<Vec<f64>> {
    if node.index() >= state.num_nodes() {
        return Err(Error::NodeOutOfRange {
            index: node.index(),
            limit: state.num_nodes(),
        });
    }
    let f = stages.formulation();
    let neighbors = state
        .graph
        .neighborhood(node, at, f.num_layers, f.neighbor_cap);
    stages.embed(&EmbedContext {
        center: node,
        time: at,
        bank: &state.bank,
        neighbors: &neighbors,
        node_features: &state.node_features,
    })
}

/// Embeds and decodes each query node at time `at`.
pub fn predict<S: Stages + ?Sized>(
    stages: &S,
    state: &TemporalState,
    queries: &[NodeIndex],
    at: f64,
) -> Result<Vec<Vec<f64>>> {
    queries
        .iter()
        .map(|&q| {
            let z = embed_node(stages, state, q, at)?;
            stages.decode(&z, state.num_nodes())
        })
        .collect()
}

/// Processes one batch, then predicts for `queries` at the latest observed time.
pub fn forward_step<S: Stages + ?Sized>(
    stages: &S,
    state: &mut TemporalState,
    batch: &[Event],
    queries: &[NodeIndex],
) -> Result<Vec<Vec<f64>>> {
    observe_batch(stages, state, batch)?;
    predict(stages, state, queries, state.now)
}
