//! Message construction and per-recipient aggregation.

use crate::error::{Error, Result};
use crate::events::{Event, NodeIndex};

use super::encode::Encoders;
use super::memory::MemoryBank;
use super::{AggregatorKind, MessageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OriginTag {
    /// Built by `msg_s` for the event's source.
    Source,
    /// Built by `msg_d` for the event's destination.
    Destination,
}

/// Everything a message function sees, before encoders are applied. Kept
/// on each message so trainable encoders can rebuild the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageInputs {
    pub own: NodeIndex,
    pub other: NodeIndex,
    pub own_state: Vec<f64>,
    pub other_state: Vec<f64>,
    pub delta_t: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawMessage {
    pub recipient: NodeIndex,
    pub time: f64,
    pub payload: Vec<f64>,
    pub origin: OriginTag,
    pub inputs: MessageInputs,
}

/// Payload of one message under the given construction.
///
/// * `Tgn`: `s_own ++ s_other ++ phi_t(dt) ++ e`
/// * `Tgnv2`: the TGN payload followed by `phi_n(own) ++ phi_n(other)`
/// * `Exact`: `[e_0, other, tag]` with `tag = 1` for destination-side messages
pub fn assemble_payload(
    kind: MessageKind,
    inputs: &MessageInputs,
    origin: OriginTag,
    encoders: &Encoders,
) -> Vec<f64> {
    match kind {
        MessageKind::Exact => vec![
            inputs.feature[0],
            inputs.other.index() as f64,
            match origin {
                OriginTag::Source => 0.0,
                OriginTag::Destination => 1.0,
            },
        ],
        MessageKind::Tgn | MessageKind::Tgnv2 => {
            let mut p = Vec::with_capacity(
                inputs.own_state.len() * 2 + encoders.time_dim() + inputs.feature.len(),
            );
            p.extend_from_slice(&inputs.own_state);
            p.extend_from_slice(&inputs.other_state);
            p.extend(encoders.time(inputs.delta_t));
            p.extend_from_slice(&inputs.feature);
            if kind == MessageKind::Tgnv2 {
                p.extend(encoders.node(inputs.own.index()));
                p.extend(encoders.node(inputs.other.index()));
            }
            p
        }
    }
}

fn side_inputs(event: &Event, bank: &MemoryBank, own: NodeIndex, other: NodeIndex) -> Result<MessageInputs> {
    let last = bank.last_update(own)?;
    if event.time < last {
        return Err(Error::OutOfOrder {
            node: own.index(),
            event_time: event.time,
            last_update: last,
        });
    }
    Ok(MessageInputs {
        own,
        other,
        own_state: bank.state(own)?.to_vec(),
        other_state: bank.state(other)?.to_vec(),
        delta_t: event.time - last,
        feature: event.feature.clone(),
    })
}

/// Source- and destination-side messages for one event.
pub fn build_messages(
    kind: MessageKind,
    event: &Event,
    bank: &MemoryBank,
    encoders: &Encoders,
) -> Result<(RawMessage, RawMessage)> {
    let src_in = side_inputs(event, bank, event.src, event.dst)?;
    let dst_in = side_inputs(event, bank, event.dst, event.src)?;
    let make = |inputs: MessageInputs, origin| RawMessage {
        recipient: inputs.own,
        time: event.time,
        payload: assemble_payload(kind, &inputs, origin, encoders),
        origin,
        inputs,
    };
    Ok((make(src_in, OriginTag::Source), make(dst_in, OriginTag::Destination)))
}

/// Anonymous TGN messages.
pub fn build_messages_tgn(
    event: &Event,
    bank: &MemoryBank,
    encoders: &Encoders,
) -> Result<(RawMessage, RawMessage)> {
    build_messages(MessageKind::Tgn, event, bank, encoders)
}

/// TGN messages extended with encoded recipient and counterparty indices.
pub fn build_messages_tgnv2(
    event: &Event,
    bank: &MemoryBank,
    encoders: &Encoders,
) -> Result<(RawMessage, RawMessage)> {
    build_messages(MessageKind::Tgnv2, event, bank, encoders)
}

/// The result of aggregating one recipient's messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub recipient: NodeIndex,
    /// Messages that contributed, in time order.
    pub messages: Vec<RawMessage>,
    pub payload: Vec<f64>,
    /// Start offset of each message's payload inside `payload`.
    pub offsets: Vec<usize>,
}

impl Aggregated {
    /// Interior boundaries between concatenated payloads.
    pub fn boundaries(&self) -> &[usize] {
        &self.offsets[1..]
    }

    /// Splits a concatenated payload back into per-message payloads.
    pub fn unpack(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let ends = self.offsets[1..]
            .iter()
            .copied()
            .chain(std::iter::once(self.payload.len()));
        self.offsets
            .iter()
            .zip(ends)
            .map(move |(&s, e)| &self.payload[s..e])
    }

    pub fn latest_time(&self) -> f64 {
        self.messages.iter().map(|m| m.time).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Aggregates messages addressed to a single recipient.
pub fn aggregate(messages: &[RawMessage], mode: AggregatorKind) -> Result<Aggregated> {
    let Some(first) = messages.first() else {
        return Err(Error::InvalidArgument("cannot aggregate zero messages".into()));
    };
    let recipient = first.recipient;
    if messages.iter().any(|m| m.recipient != recipient) {
        return Err(Error::InvalidArgument(
            "aggregate expects messages for one recipient".into(),
        ));
    }
    match mode {
        AggregatorKind::Last => {
            // latest time wins; among equal times the later position wins
            let last = messages
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.time.total_cmp(&b.time).then(ia.cmp(ib)))
                .map(|(_, m)| m)
                .unwrap_or(first);
            Ok(Aggregated {
                recipient,
                messages: vec![last.clone()],
                payload: last.payload.clone(),
                offsets: vec![0],
            })
        }
        AggregatorKind::Concat => {
            let mut ordered: Vec<&RawMessage> = messages.iter().collect();
            ordered.sort_by(|a, b| a.time.total_cmp(&b.time));
            let mut payload = Vec::new();
            let mut offsets = Vec::with_capacity(ordered.len());
            for m in &ordered {
                offsets.push(payload.len());
                payload.extend_from_slice(&m.payload);
            }
            Ok(Aggregated {
                recipient,
                messages: ordered.into_iter().cloned().collect(),
                payload,
                offsets,
            })
        }
        AggregatorKind::Identity => {
            if messages.len() != 1 {
                return Err(Error::IdentityAggregator(messages.len()));
            }
            Ok(Aggregated {
                recipient,
                messages: vec![first.clone()],
                payload: first.payload.clone(),
                offsets: vec![0],
            })
        }
    }
}
