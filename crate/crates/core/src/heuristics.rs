//! Baseline forecasters: persistent forecast and moving average over labels,
//! moving average over messages.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::events::{AffinityLabel, Event, NodeIndex};

/// Labels with `window_end <= t` are visible at query time `t`.
#[derive(Debug, Clone, Default)]
pub struct LabelHistory {
    num_nodes: usize,
    per_source: HashMap<NodeIndex, Vec<AffinityLabel>>,
}

impl LabelHistory {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            per_source: HashMap::new(),
        }
    }

    pub fn from_labels(num_nodes: usize, labels: &[AffinityLabel]) -> Self {
        let mut h = Self::new(num_nodes);
        for l in labels {
            h.push(l.clone());
        }
        h
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn push(&mut self, label: AffinityLabel) {
        let list = self.per_source.entry(label.source).or_default();
        let pos = list.partition_point(|l| l.window_end <= label.window_end);
        list.insert(pos, label);
    }

    /// Up to `k` most recent labels of `source` visible at `t`, newest last.
    fn visible(&self, source: NodeIndex, t: f64, k: usize) -> &[AffinityLabel] {
        let Some(list) = self.per_source.get(&source) else {
            return &[];
        };
        let end = list.partition_point(|l| l.window_end <= t);
        &list[end.saturating_sub(k)..end]
    }
}

pub fn persistent_forecast_labels(history: &LabelHistory, source: NodeIndex, t: f64) -> Vec<f64> {
    history
        .visible(source, t, 1)
        .last()
        .map_or_else(|| vec![0.0; history.num_nodes], |l| l.affinity.clone())
}

/// Mean of the available (at most `k`) most recent label vectors.
pub fn moving_average_labels(history: &LabelHistory, source: NodeIndex, t: f64, k: usize) -> Vec<f64> {
    let recent = history.visible(source, t, k.max(1));
    let mut out = vec![0.0; history.num_nodes];
    if recent.is_empty() {
        return out;
    }
    for l in recent {
        for (o, v) in out.iter_mut().zip(&l.affinity) {
            *o += v;
        }
    }
    let count = recent.len() as f64;
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// Per-pair message values in time order. With a capacity, each pair keeps
/// only its newest `capacity` values.
#[derive(Debug, Clone, Default)]
pub struct MessageHistory {
    num_nodes: usize,
    capacity: Option<usize>,
    pairs: BTreeMap<NodeIndex, BTreeMap<NodeIndex, VecDeque<(f64, f64)>>>,
}

impl MessageHistory {
    pub fn unbounded(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            capacity: None,
            pairs: BTreeMap::new(),
        }
    }

    pub fn bounded(num_nodes: usize, capacity: usize) -> Self {
        Self {
            capacity: Some(capacity.max(1)),
            ..Self::unbounded(num_nodes)
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn push(&mut self, event: &Event) {
        self.num_nodes = self.num_nodes.max(event.src.index().max(event.dst.index()) + 1);
        let q = self
            .pairs
            .entry(event.src)
            .or_default()
            .entry(event.dst)
            .or_default();
        let pos = q.partition_point(|&(t, _)| t <= event.time);
        q.insert(pos, (event.time, event.amount()));
        if let Some(cap) = self.capacity {
            while q.len() > cap {
                q.pop_front();
            }
        }
    }

    pub fn extend<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) {
        for e in events {
            self.push(e);
        }
    }
}

/// Entry `v` is `(1/k) * sum` of the `k` most recent `u -> v` values strictly
/// before `t`, with missing history counted as zero.
pub fn moving_average_messages(history: &MessageHistory, source: NodeIndex, t: f64, k: usize) -> Vec<f64> {
    let k = k.max(1);
    let mut out = vec![0.0; history.num_nodes];
    let Some(dsts) = history.pairs.get(&source) else {
        return out;
    };
    for (dst, q) in dsts {
        let end = q.partition_point(|&(time, _)| time < t);
        let sum: f64 = q.range(end.saturating_sub(k)..end).map(|&(_, v)| v).sum();
        out[dst.index()] = sum / k as f64;
    }
    out
}
