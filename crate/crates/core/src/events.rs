//! Event streams, node registration, affinity labels and chronological splits.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Dense internal node identifier, assigned in order of first appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIndex(usize);

impl NodeIndex {
    pub const fn new(index: usize) -> Self {
        Self(index)
    }

    pub const fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for NodeIndex {
    fn from(value: usize) -> Self {
        Self(value)
    }
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maps raw external identifiers to contiguous [`NodeIndex`] values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeRegistry {
    names: Vec<String>,
    lookup: HashMap<String, NodeIndex>,
}

impl NodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry whose names are the decimal indices `0..n`.
    pub fn with_numeric_names(n: usize) -> Self {
        let mut reg = Self::new();
        for i in 0..n {
            reg.register(&i.to_string());
        }
        reg
    }

    pub fn register(&mut self, raw_id: &str) -> NodeIndex {
        if let Some(&idx) = self.lookup.get(raw_id) {
            return idx;
        }
        let idx = NodeIndex(self.names.len());
        self.names.push(raw_id.to_string());
        self.lookup.insert(raw_id.to_string(), idx);
        idx
    }

    pub fn get(&self, raw_id: &str) -> Option<NodeIndex> {
        self.lookup.get(raw_id).copied()
    }

    pub fn name(&self, idx: NodeIndex) -> Option<&str> {
        self.names.get(idx.0).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Free function form of [`NodeRegistry::register`].
pub fn register_node(raw_id: &str, registry: &mut NodeRegistry) -> NodeIndex {
    registry.register(raw_id)
}

/// One timestamped directed interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub src: NodeIndex,
    pub dst: NodeIndex,
    pub time: f64,
    pub feature: Vec<f64>,
}

impl Event {
    pub fn new(src: usize, dst: usize, time: f64, feature: Vec<f64>) -> Self {
        Self {
            src: NodeIndex(src),
            dst: NodeIndex(dst),
            time,
            feature,
        }
    }

    pub fn scalar(src: usize, dst: usize, time: f64, value: f64) -> Self {
        Self::new(src, dst, time, vec![value])
    }

    /// The interaction amount: the first feature component.
    pub fn amount(&self) -> f64 {
        self.feature[0]
    }
}

/// Time-sorted events over a registered node set.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    registry: NodeRegistry,
    feature_names: Vec<String>,
}

impl EventStream {
    /// Validates and stably sorts `events` by time.
    pub fn new(
        mut events: Vec<Event>,
        registry: NodeRegistry,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if feature_names.is_empty() {
            return Err(Error::InvalidArgument(
                "a stream needs at least one feature column".into(),
            ));
        }
        let dim = feature_names.len();
        let limit = registry.len();
        for ev in &events {
            if ev.feature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: ev.feature.len(),
                    context: "event feature",
                });
            }
            for node in [ev.src, ev.dst] {
                if node.0 >= limit {
                    return Err(Error::NodeOutOfRange {
                        index: node.0,
                        limit,
                    });
                }
            }
            if !ev.time.is_finite() || ev.time < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "event time must be finite and non-negative, got {}",
                    ev.time
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            events,
            registry,
            feature_names,
        })
    }

    /// Stream over nodes named `0..num_nodes` with a single `weight` feature
    /// column (or `weight, f1, ..` for wider features).
    pub fn from_indexed(events: Vec<Event>, num_nodes: usize) -> Result<Self> {
        let dim = events.first().map_or(1, |e| e.feature.len());
        Self::new(
            events,
            NodeRegistry::with_numeric_names(num_nodes),
            default_feature_names(dim),
        )
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.registry.len()
    }

    pub fn registry(&self) -> &NodeRegistry {
        &self.registry
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Events with `time < t`.
    pub fn prefix_before(&self, t: f64) -> &[Event] {
        let end = self.events.partition_point(|e| e.time < t);
        &self.events[..end]
    }

    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.events.first()?.time, self.events.last()?.time))
    }

    /// Serializes in the same CSV layout that [`ingest_csv`] reads with the
    /// default schema.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["src".to_string(), "dst".to_string(), "time".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for ev in &self.events {
            let mut row = vec![
                self.node_name(ev.src),
                self.node_name(ev.dst),
                ev.time.to_string(),
            ];
            row.extend(ev.feature.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    fn node_name(&self, idx: NodeIndex) -> String {
        self.registry
            .name(idx)
            .map_or_else(|| idx.to_string(), str::to_string)
    }
}

fn default_feature_names(dim: usize) -> Vec<String> {
    std::iter::once("weight".to_string())
        .chain((1..dim).map(|i| format!("f{i}")))
        .collect()
}

/// Which CSV columns hold the source, destination, time and features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub src: String,
    pub dst: String,
    pub time: String,
    pub features: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            src: "src".into(),
            dst: "dst".into(),
            time: "time".into(),
            features: vec!["weight".into()],
        }
    }
}

impl CsvSchema {
    pub const KEYS: [&'static str; 4] = ["src", "dst", "time", "features"];

    /// Reads `src`, `dst`, `time` and `features` (comma-separated) keys;
    /// absent keys keep their defaults. Other keys are left for the caller.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut schema = Self::default();
        if let Some(v) = cfg.get("src") {
            schema.src = v.to_string();
        }
        if let Some(v) = cfg.get("dst") {
            schema.dst = v.to_string();
        }
        if let Some(v) = cfg.get("time") {
            schema.time = v.to_string();
        }
        if let Some(list) = cfg.parse_list::<String>("features")? {
            if list.is_empty() {
                return Err(Error::InvalidArgument("`features` must list a column".into()));
            }
            schema.features = list;
        }
        Ok(schema)
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<EventStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses events from any reader; see [`ingest_csv`].
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let src_col = column(&schema.src)?;
    let dst_col = column(&schema.dst)?;
    let time_col = column(&schema.time)?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>>>()?;

    let mut registry = NodeRegistry::new();
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, what: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::MalformedRow {
                line,
                message: format!("missing {what} field"),
            })
        };
        let number = |col: usize, what: &str| -> Result<f64> {
            let raw = field(col, what)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedRow {
                    line,
                    message: format!("{what} `{raw}` is not a finite number"),
                })
        };
        let src = field(src_col, "src")?;
        let dst = field(dst_col, "dst")?;
        let time = number(time_col, "time")?;
        if time < 0.0 {
            return Err(Error::MalformedRow {
                line,
                message: format!("negative time {time}"),
            });
        }
        let feature = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| number(c, name))
            .collect::<Result<Vec<_>>>()?;
        let src = registry.register(src);
        let dst = registry.register(dst);
        events.push(Event {
            src,
            dst,
            time,
            feature,
        });
    }
    EventStream::new(events, registry, schema.features.clone())
}

/// Per-node static feature vectors `v_i`; zero unless set.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticNodeFeatures {
    dim: usize,
    values: Vec<f64>,
}

impl StaticNodeFeatures {
    pub fn zeros(num_nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; num_nodes * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn set(&mut self, node: NodeIndex, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: value.len(),
                context: "static node feature",
            });
        }
        let start = node.0 * self.dim;
        let limit = self.num_nodes();
        let slot = self
            .values
            .get_mut(start..start + self.dim)
            .ok_or(Error::NodeOutOfRange {
                index: node.0,
                limit,
            })?;
        slot.copy_from_slice(value);
        Ok(())
    }

    /// Feature of `node`; nodes beyond the table read as zero.
    pub fn get(&self, node: NodeIndex) -> Vec<f64> {
        let start = node.0 * self.dim;
        self.values
            .get(start..start + self.dim)
            .map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }
}

/// Ground-truth affinity of one source over all destinations in one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityLabel {
    pub source: NodeIndex,
    pub window_index: usize,
    pub window_start: f64,
    pub window_end: f64,
    pub affinity: Vec<f64>,
    pub normalized: bool,
}

impl AffinityLabel {
    /// L1-normalized copy; an all-zero row stays all-zero.
    pub fn normalized_affinity(&self) -> Vec<f64> {
        l1_normalize(&self.affinity)
    }
}

pub fn l1_normalize(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        values.to_vec()
    } else {
        values.iter().map(|v| v / total).collect()
    }
}

/// Splits the stream's span into half-open windows `[t0 + wδ, t0 + (w+1)δ)`
/// and sums first-feature amounts per (source, destination). A label is
/// emitted for every source with at least one outgoing event in a window.
pub fn compute_affinity_labels(
    stream: &EventStream,
    period: f64,
    normalize: bool,
) -> Result<Vec<AffinityLabel>> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "label period must be positive, got {period}"
        )));
    }
    let Some((t0, _)) = stream.time_span() else {
        return Ok(Vec::new());
    };
    let n = stream.num_nodes();
    let mut labels: Vec<AffinityLabel> = Vec::new();
    // (window, source) -> position in `labels`, for the current window only.
    let mut current_window = usize::MAX;
    let mut open: HashMap<NodeIndex, usize> = HashMap::new();
    for ev in stream.events() {
        let window = ((ev.time - t0) / period).floor() as usize;
        if window != current_window {
            current_window = window;
            open.clear();
        }
        let slot = *open.entry(ev.src).or_insert_with(|| {
            let start = t0 + window as f64 * period;
            labels.push(AffinityLabel {
                source: ev.src,
                window_index: window,
                window_start: start,
                window_end: start + period,
                affinity: vec![0.0; n],
                normalized: false,
            });
            labels.len() - 1
        });
        labels[slot].affinity[ev.dst.0] += ev.amount();
    }
    labels.sort_by(|a, b| {
        a.window_index
            .cmp(&b.window_index)
            .then(a.source.cmp(&b.source))
    });
    if normalize {
        for label in &mut labels {
            label.affinity = l1_normalize(&label.affinity);
            label.normalized = true;
        }
    }
    Ok(labels)
}

/// Writes non-zero label entries as `source,window_start,dst,value`.
pub fn write_labels_csv<W: Write>(
    labels: &[AffinityLabel],
    registry: &NodeRegistry,
    writer: W,
) -> Result<()> {
    let name = |idx: NodeIndex| {
        registry
            .name(idx)
            .map_or_else(|| idx.to_string(), str::to_string)
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "window_start", "dst", "value"])?;
    for label in labels {
        for (dst, &value) in label.affinity.iter().enumerate() {
            if value != 0.0 {
                w.write_record([
                    name(label.source),
                    label.window_start.to_string(),
                    name(NodeIndex(dst)),
                    value.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSplit {
    pub train: Vec<AffinityLabel>,
    pub val: Vec<AffinityLabel>,
    pub test: Vec<AffinityLabel>,
}

impl LabelSplit {
    pub fn get(&self, split: Split) -> &[AffinityLabel] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Split of a window index, if the window is labelled at all.
    pub fn split_of_window(&self, window_index: usize) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.get(s).iter().any(|l| l.window_index == window_index))
    }
}

/// Window counts for `num_windows` windows: each split gets
/// `floor(n * ratio)`; leftovers go to test, except that train always
/// receives the first leftover when its floor is zero.
fn split_counts(num_windows: usize, ratios: SplitRatios) -> [usize; 3] {
    const SLACK: f64 = 1e-9;
    let n = num_windows as f64;
    let mut counts = [ratios.train, ratios.val, ratios.test].map(|r| (n * r + SLACK).floor() as usize);
    let mut leftover = num_windows - counts.iter().sum::<usize>().min(num_windows);
    if leftover > 0 && counts[0] == 0 {
        counts[0] = 1;
        leftover -= 1;
    }
    counts[2] += leftover;
    counts
}

/// Partitions labels by window order; never shuffles.
pub fn chronological_split(labels: &[AffinityLabel], ratios: SplitRatios) -> Result<LabelSplit> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !(*r > 0.0)) || ((parts.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got {parts:?}"
        )));
    }
    let mut windows: Vec<usize> = labels.iter().map(|l| l.window_index).collect();
    windows.sort_unstable();
    windows.dedup();
    let [n_train, n_val, _] = split_counts(windows.len(), ratios);
    let mut out = LabelSplit::default();
    for label in labels {
        let rank = windows.binary_search(&label.window_index).unwrap_or(0);
        let target = if rank < n_train {
            &mut out.train
        } else if rank < n_train + n_val {
            &mut out.val
        } else {
            &mut out.test
        };
        target.push(label.clone());
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by(|a, b| {
            a.window_index
                .cmp(&b.window_index)
                .then(a.source.cmp(&b.source))
        });
    }
    Ok(out)
}
