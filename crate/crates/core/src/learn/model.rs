//! Trainable TGN / TGNv2 with GRU memory, attention embedding and MLP
//! decoder.

use std::collections::HashMap;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::events::NodeIndex;
use crate::pipeline::{
    Aggregated, EmbedContext, Encoders, Formulation, MemoryBank, MessageInputs, MessageKind, Neighbor,
    NodeEncoding, Stages,
};

use super::layers::{attention_embed, gru_update, mlp_decode, AttentionParams, Dropout, GruParams, MlpParams};
use super::params::{ParamId, ParamStore, Tensor};
use super::tape::{Tape, Var};

/// How node indices enter TGNv2 messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeEncoderMode {
    /// Trainable `cos(w_n * i)`.
    Cosine,
    /// All-zero slots of the same width.
    Zero,
}

impl NodeEncoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeEncoderMode::Cosine => "cosine",
            NodeEncoderMode::Zero => "zero",
        }
    }
}

impl std::str::FromStr for NodeEncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(NodeEncoderMode::Cosine),
            "zero" => Ok(NodeEncoderMode::Zero),
            other => Err(Error::InvalidArgument(format!("unknown node encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub neighbor_cap: usize,
    pub node_encoder: NodeEncoderMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            heads: 2,
            dropout: 0.1,
            neighbor_cap: 10,
            node_encoder: NodeEncoderMode::Cosine,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden size {} must be a positive multiple of {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.neighbor_cap == 0 {
            return Err(Error::InvalidArgument("neighbor cap must be positive".into()));
        }
        Ok(())
    }
}

/// `w[i] = 10^(-span * i / (d - 1))`.
fn geometric_frequencies(d: usize, span: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d)
        .map(|i| 10f64.powf(-span * i as f64 / (d - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnableModel {
    formulation: Formulation,
    config: ModelConfig,
    num_nodes: usize,
    feature_dim: usize,
    pub params: ParamStore,
    w_t: ParamId,
    w_n: Option<ParamId>,
    gru: GruParams,
    attention: AttentionParams,
    decoder: MlpParams,
}

impl LearnableModel {
    /// `kind` is `Tgn` or `Tgnv2`. Every tensor is drawn from its own
    /// seeded stream, so the two kinds share all common initial values.
    pub fn new(kind: MessageKind, num_nodes: usize, feature_dim: usize, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut formulation = match kind {
            MessageKind::Tgn => Formulation::tgn(),
            MessageKind::Tgnv2 => Formulation::tgnv2(),
            MessageKind::Exact => {
                return Err(Error::Formulation(
                    "the exact message function has no trainable counterpart".into(),
                ))
            }
        };
        formulation.neighbor_cap = config.neighbor_cap;
        formulation.validate()?;
        let d = config.hidden;
        let seed = config.seed;
        let mut params = ParamStore::new();
        let w_t = params.insert("time.w", Tensor::vector(geometric_frequencies(d, 9.0)))?;
        let node_slots = if kind == MessageKind::Tgnv2 { 2 * d } else { 0 };
        let w_n = if kind == MessageKind::Tgnv2 && config.node_encoder == NodeEncoderMode::Cosine {
            Some(params.insert("node.w", Tensor::vector(geometric_frequencies(d, 3.0)))?)
        } else {
            None
        };
        let message_dim = 2 * d + d + feature_dim + node_slots;
        let gru = GruParams::init(&mut params, "memory", message_dim, d, seed)?;
        let neighbor_dim = d + d + feature_dim;
        let attention = AttentionParams::init(&mut params, "embed", d, neighbor_dim, d, config.heads, seed)?;
        let decoder = MlpParams::init(&mut params, "decode", d, d, num_nodes, seed)?;
        Ok(Self {
            formulation,
            config,
            num_nodes,
            feature_dim,
            params,
            w_t,
            w_n,
            gru,
            attention,
            decoder,
        })
    }

    pub fn kind(&self) -> MessageKind {
        self.formulation.message_fn
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::default();
        c.set("message_fn", self.kind().as_str());
        c.set("num_nodes", self.num_nodes.to_string());
        c.set("feature_dim", self.feature_dim.to_string());
        c.set("hidden", self.config.hidden.to_string());
        c.set("heads", self.config.heads.to_string());
        c.set("dropout", self.config.dropout.to_string());
        c.set("x", self.config.neighbor_cap.to_string());
        c.set("node_encoder", self.config.node_encoder.as_str());
        c.set("seed", self.config.seed.to_string());
        c
    }

    fn payload_on_tape(&self, tape: &mut Tape, inputs: &MessageInputs) -> Var {
        let own = tape.constant(inputs.own_state.clone());
        let other = tape.constant(inputs.other_state.clone());
        let w_t = tape.param(&self.params, self.w_t);
        let time = tape.cos(w_t, inputs.delta_t);
        let feature = tape.constant(inputs.feature.clone());
        let mut parts = vec![own, other, time, feature];
        if self.kind() == MessageKind::Tgnv2 {
            match self.w_n {
                Some(w_n) => {
                    let w = tape.param(&self.params, w_n);
                    parts.push(tape.cos(w, inputs.own.index() as f64));
                    parts.push(tape.cos(w, inputs.other.index() as f64));
                }
                None => {
                    parts.push(tape.constant(vec![0.0; self.config.hidden]));
                    parts.push(tape.constant(vec![0.0; self.config.hidden]));
                }
            }
        }
        tape.concat(&parts)
    }

    /// Memory of `node`, with its latest update replayed on the tape from the
    /// stored message so gradients reach the memory and encoder weights.
    pub fn memory_on_tape(
        &self,
        tape: &mut Tape,
        bank: &MemoryBank,
        node: NodeIndex,
        cache: &mut HashMap<NodeIndex, Var>,
    ) -> Result<Var> {
        if let Some(&v) = cache.get(&node) {
            return Ok(v);
        }
        let v = match bank.record(node) {
            None => tape.constant(bank.state(node)?.to_vec()),
            Some(rec) => {
                let x = self.payload_on_tape(tape, &rec.message.inputs);
                let h = tape.constant(rec.prev_state.clone());
                gru_update(tape, &self.params, &self.gru, x, h)?
            }
        };
        cache.insert(node, v);
        Ok(v)
    }

    pub fn embed_on_tape(
        &self,
        tape: &mut Tape,
        bank: &MemoryBank,
        center: NodeIndex,
        time: f64,
        neighbors: &[Neighbor],
        cache: &mut HashMap<NodeIndex, Var>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let c = self.memory_on_tape(tape, bank, center, cache)?;
        let mut inputs = Vec::with_capacity(neighbors.len());
        for nb in neighbors.iter().filter(|nb| nb.depth == 1) {
            let s = self.memory_on_tape(tape, bank, nb.node, cache)?;
            let w_t = tape.param(&self.params, self.w_t);
            let te = tape.cos(w_t, time - nb.time);
            let f = tape.constant(nb.feature.clone());
            inputs.push(tape.concat(&[s, te, f]));
        }
        attention_embed(tape, &self.params, &self.attention, c, &inputs, dropout)
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        mlp_decode(tape, &self.params, &self.decoder, z)
    }
}

impl Stages for LearnableModel {
    fn formulation(&self) -> &Formulation {
        &self.formulation
    }

    fn encoders(&self) -> Encoders {
        let node = match (self.kind(), self.w_n) {
            (MessageKind::Tgnv2, Some(w_n)) => NodeEncoding::Cosine(self.params.values(w_n).to_vec()),
            (MessageKind::Tgnv2, None) => NodeEncoding::Zero(self.config.hidden),
            _ => NodeEncoding::Zero(0),
        };
        Encoders::new(self.params.values(self.w_t).to_vec(), node)
    }

    fn memory_dim(&self) -> usize {
        self.config.hidden
    }

    fn update_memory(&self, aggregated: &Aggregated, prev: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(aggregated.payload.clone());
        let h = tape.constant(prev.to_vec());
        let out = gru_update(&mut tape, &self.params, &self.gru, x, h)?;
        Ok(tape.value(out).to_vec())
    }

    fn embed(&self, ctx: &EmbedContext<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut cache = HashMap::new();
        let z = self.embed_on_tape(&mut tape, ctx.bank, ctx.center, ctx.time, ctx.neighbors, &mut cache, None)?;
        Ok(tape.value(z).to_vec())
    }

    fn decode(&self, embedding: &[f64], num_nodes: usize) -> Result<Vec<f64>> {
        if num_nodes != self.num_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes,
                actual: num_nodes,
                context: "decoder output width",
            });
        }
        let mut tape = Tape::new();
        let z = tape.constant(embedding.to_vec());
        let out = self.decode_on_tape(&mut tape, z)?;
        Ok(tape.value(out).to_vec())
    }
}
