use crate::error::{Error, Result};
use crate::events::NodeIndex;

use super::message::RawMessage;

/// What produced a node's current state: the state before the update and
/// the last message applied.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub prev_state: Vec<f64>,
    pub message: RawMessage,
}

/// Per-node memory vectors `s_i` and their last-update times.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    states: Vec<Vec<f64>>,
    last_update: Vec<f64>,
    records: Vec<Option<MemoryRecord>>,
}

impl MemoryBank {
    /// All-zero memory at time 0.
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            states: vec![vec![0.0; dim]; num_nodes],
            last_update: vec![0.0; num_nodes],
            records: vec![None; num_nodes],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn reset(&mut self) {
        let n = self.num_nodes();
        *self = Self::new(n, self.dim);
    }

    fn check(&self, node: NodeIndex) -> Result<usize> {
        let i = node.index();
        if i < self.states.len() {
            Ok(i)
        } else {
            Err(Error::NodeOutOfRange {
                index: i,
                limit: self.states.len(),
            })
        }
    }

    pub fn state(&self, node: NodeIndex) -> Result<&[f64]> {
        Ok(&self.states[self.check(node)?])
    }

    pub fn last_update(&self, node: NodeIndex) -> Result<f64> {
        Ok(self.last_update[self.check(node)?])
    }

    pub fn record(&self, node: NodeIndex) -> Option<&MemoryRecord> {
        self.records.get(node.index()).and_then(Option::as_ref)
    }

    pub fn set_state(&mut self, node: NodeIndex, state: Vec<f64>) -> Result<()> {
        let i = self.check(node)?;
        if state.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: state.len(),
                context: "memory state",
            });
        }
        self.states[i] = state;
        Ok(())
    }

    pub fn set_record(&mut self, node: NodeIndex, record: MemoryRecord) -> Result<()> {
        let i = self.check(node)?;
        self.records[i] = Some(record);
        Ok(())
    }

    pub fn touch(&mut self, node: NodeIndex, time: f64) -> Result<()> {
        let i = self.check(node)?;
        self.last_update[i] = self.last_update[i].max(time);
        Ok(())
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
}
