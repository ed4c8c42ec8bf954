//! The five-stage TGN engine: message, aggregate, memory update, embed, decode.
//!
//! A [`Formulation`] names the choice made at each stage; a [`Stages`]
//! implementation supplies the numerics. The learnable TGN/TGNv2 models and
//! the exact moving-average machines both run through [`forward_step`].

mod encode;
mod engine;
mod memory;
mod message;
mod neighborhood;

use std::fmt;
use std::str::FromStr;

pub use encode::{node_encode, node_encode_cosine, time_encode, Encoders, NodeEncoding};
pub use engine::{embed_node, forward_step, observe_batch, predict, EmbedContext, Stages, TemporalState};
pub use memory::{MemoryBank, MemoryRecord};
pub use message::{
    aggregate, assemble_payload, build_messages, build_messages_tgn, build_messages_tgnv2,
    Aggregated, MessageInputs, OriginTag, RawMessage,
};
pub use neighborhood::{temporal_neighborhood, Neighbor, TemporalAdjacency};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::events::NodeIndex;

macro_rules! kind_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

kind_enum!(
    /// Message construction.
    MessageKind { Tgn => "tgn", Tgnv2 => "tgnv2", Exact => "exact" }
);
kind_enum!(AggregatorKind { Last => "last", Concat => "concat", Identity => "identity" });
kind_enum!(MemoryKind { Gru => "gru", ExactLinear => "exact-linear" });
kind_enum!(EmbeddingKind { IdentityReadout => "identity-readout", Attention => "attention" });
kind_enum!(DecoderKind { Mlp => "mlp", ExactReadout => "exact-readout" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formulation {
    pub message_fn: MessageKind,
    pub aggregator: AggregatorKind,
    pub memory: MemoryKind,
    pub embedding: EmbeddingKind,
    pub decoder: DecoderKind,
    pub num_layers: usize,
    pub neighbor_cap: usize,
}

impl Formulation {
    pub const KEYS: [&'static str; 7] = [
        "message_fn",
        "aggregator",
        "memory",
        "embedding",
        "decoder",
        "L",
        "x",
    ];

    fn learnable(message_fn: MessageKind) -> Self {
        Self {
            message_fn,
            aggregator: AggregatorKind::Last,
            memory: MemoryKind::Gru,
            embedding: EmbeddingKind::Attention,
            decoder: DecoderKind::Mlp,
            num_layers: 1,
            neighbor_cap: 10,
        }
    }

    pub fn tgn() -> Self {
        Self::learnable(MessageKind::Tgn)
    }

    pub fn tgnv2() -> Self {
        Self::learnable(MessageKind::Tgnv2)
    }

    pub fn exact() -> Self {
        Self {
            message_fn: MessageKind::Exact,
            aggregator: AggregatorKind::Concat,
            memory: MemoryKind::ExactLinear,
            embedding: EmbeddingKind::IdentityReadout,
            decoder: DecoderKind::ExactReadout,
            num_layers: 1,
            neighbor_cap: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Formulation(msg.to_string()));
        if self.num_layers == 0 {
            return bad("L must be at least 1");
        }
        if self.neighbor_cap == 0 {
            return bad("neighbor cap x must be at least 1");
        }
        let exact = [
            self.message_fn == MessageKind::Exact,
            self.memory == MemoryKind::ExactLinear,
            self.embedding == EmbeddingKind::IdentityReadout,
            self.decoder == DecoderKind::ExactReadout,
        ];
        if exact.iter().any(|&e| e) && !exact.iter().all(|&e| e) {
            return bad("exact message, exact-linear memory, identity-readout embedding and exact-readout decoder go together");
        }
        if self.memory == MemoryKind::Gru && self.aggregator == AggregatorKind::Concat {
            return bad("a GRU memory takes a single fixed-width message; use `last` or `identity`");
        }
        Ok(())
    }

    /// Reads the formulation keys from `cfg`, starting from `base`.
    pub fn from_config(cfg: &KvConfig, base: Formulation) -> Result<Self> {
        let mut f = base;
        if let Some(v) = cfg.get("message_fn") {
            f.message_fn = v.parse()?;
        }
        if let Some(v) = cfg.get("aggregator") {
            f.aggregator = v.parse()?;
        }
        if let Some(v) = cfg.get("memory") {
            f.memory = v.parse()?;
        }
        if let Some(v) = cfg.get("embedding") {
            f.embedding = v.parse()?;
        }
        if let Some(v) = cfg.get("decoder") {
            f.decoder = v.parse()?;
        }
        f.num_layers = cfg.parse_or("L", f.num_layers)?;
        f.neighbor_cap = cfg.parse_or("x", f.neighbor_cap)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("message_fn", self.message_fn);
        cfg.set("aggregator", self.aggregator);
        cfg.set("memory", self.memory);
        cfg.set("embedding", self.embedding);
        cfg.set("decoder", self.decoder);
        cfg.set("L", self.num_layers);
        cfg.set("x", self.neighbor_cap);
        cfg
    }
}

/// Node-event messages (`msg_n`) are not part of this engine.
pub fn build_node_message(_node: NodeIndex, _time: f64, _features: &[f64]) -> Result<RawMessage> {
    Err(Error::NodeEventsUnsupported)
}
