//! Exact TGNv2 machines for persistent forecasts, moving averages and
//! autoregressive models over messages.
//!
//! Each node's memory has `n * k` slots: block `j` (slots `jk .. jk+k-1`)
//! holds the `k` most recent message values the node sent to `j`, newest
//! first. An incoming value for `j` shifts block `j` down one slot with the
//! conjugated generator `f(j) = P^j X (P^T)^j` and writes the value at slot
//! `jk` through `p(j)`. The readout `A s` applies the configured weights to
//! each block.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::pipeline::{
    AggregatorKind, Aggregated, EmbedContext, Encoders, Formulation, NodeEncoding, OriginTag,
    RawMessage, Stages,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMachineConfig {
    /// Maximum number of nodes.
    pub n: usize,
    /// Order.
    pub k: usize,
    /// `weights[c]` multiplies the `c`-th most recent value (0 = newest).
    pub weights: Vec<f64>,
}

impl ExactMachineConfig {
    pub const KEYS: [&'static str; 4] = ["n", "k", "kind", "weights"];

    pub fn moving_average(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            weights: vec![1.0 / k.max(1) as f64; k],
        }
    }

    pub fn persistent(n: usize) -> Self {
        Self {
            n,
            k: 1,
            weights: vec![1.0],
        }
    }

    pub fn autoregressive(n: usize, weights: Vec<f64>) -> Self {
        Self {
            n,
            k: weights.len(),
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::InvalidArgument(format!(
                "exact machine needs n >= 1 and k >= 1, got n={} k={}",
                self.n, self.k
            )));
        }
        if self.weights.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: self.weights.len(),
                context: "exact machine weights",
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(())
    }

    /// `kind` is one of `ma`, `persistent`, `ar` (the last needs `weights`).
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let n: usize = cfg
            .parse_value("n")?
            .ok_or_else(|| Error::InvalidArgument("missing `n`".into()))?;
        let kind = cfg.get("kind").unwrap_or("ma");
        let out = match kind {
            "ma" => Self::moving_average(n, cfg.parse_or("k", 1)?),
            "persistent" => Self::persistent(n),
            "ar" => {
                let w = cfg
                    .parse_list::<f64>("weights")?
                    .ok_or_else(|| Error::InvalidArgument("`ar` needs `weights`".into()))?;
                if let Some(k) = cfg.parse_value::<usize>("k")? {
                    if k != w.len() {
                        return Err(Error::DimensionMismatch {
                            expected: k,
                            actual: w.len(),
                            context: "exact machine weights",
                        });
                    }
                }
                Self::autoregressive(n, w)
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown machine kind `{other}`"
                )))
            }
        };
        out.validate()?;
        Ok(out)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("n", self.n);
        cfg.set("k", self.k);
        cfg.set("kind", "ar");
        let w: Vec<String> = self.weights.iter().map(f64::to_string).collect();
        cfg.set("weights", w.join(", "));
        cfg
    }
}

/// `k x k` down-shift: `S v = [0, v_0, .., v_{k-2}]`.
pub fn shift_matrix(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |r, c| if r >= 1 && c == r - 1 { 1.0 } else { 0.0 })
}

/// Block permutation whose conjugation `P B P^T` moves diagonal block `b`
/// to position `b + 1 (mod n)`.
pub fn block_permutation(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n * k, n * k, |r, c| {
        let (rb, ri) = (r / k, r % k);
        let (cb, ci) = (c / k, c % k);
        if ri == ci && rb == (cb + 1) % n {
            1.0
        } else {
            0.0
        }
    })
}

/// `diag(S, I, .., I)`.
pub fn generator_matrix(n: usize, k: usize) -> DMatrix<f64> {
    let mut x = DMatrix::identity(n * k, n * k);
    x.view_mut((0, 0), (k, k)).copy_from(&shift_matrix(k));
    x
}

/// `A[m, c] = weights[c - mk]` inside block `m`, zero elsewhere.
pub fn aggregator_matrix(n: usize, k: usize, weights: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n * k, |m, c| {
        if c >= m * k && c < m * k + k {
            weights[c - m * k]
        } else {
            0.0
        }
    })
}

/// Which arithmetic [`ExactMachine::update`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateForm {
    /// `f(j) s + p(j) e` with dense matrices.
    Matrix,
    /// In-place shift of block `j`.
    Fast,
}

#[derive(Debug, Clone)]
pub struct ExactMachine {
    config: ExactMachineConfig,
    formulation: Formulation,
    form: UpdateForm,
    shift: DMatrix<f64>,
    permutation: DMatrix<f64>,
    generator: DMatrix<f64>,
    readout: DMatrix<f64>,
    f_blocks: Vec<DMatrix<f64>>,
    p_vectors: Vec<DVector<f64>>,
}

pub fn build_machine(config: ExactMachineConfig) -> Result<ExactMachine> {
    ExactMachine::new(config)
}

impl ExactMachine {
    pub fn new(config: ExactMachineConfig) -> Result<Self> {
        config.validate()?;
        let (n, k) = (config.n, config.k);
        let shift = shift_matrix(k);
        let permutation = block_permutation(n, k);
        let generator = generator_matrix(n, k);
        let readout = aggregator_matrix(n, k, &config.weights);

        let mut f_blocks = Vec::with_capacity(n);
        let mut p_vectors = Vec::with_capacity(n);
        let mut p_pow = DMatrix::identity(n * k, n * k);
        let mut y = DVector::zeros(n * k);
        y[0] = 1.0;
        for _ in 0..n {
            f_blocks.push(&p_pow * &generator * p_pow.transpose());
            p_vectors.push(&p_pow * &y);
            p_pow = &permutation * p_pow;
        }
        Ok(Self {
            config,
            formulation: Formulation::exact(),
            form: UpdateForm::Fast,
            shift,
            permutation,
            generator,
            readout,
            f_blocks,
            p_vectors,
        })
    }

    pub fn with_form(mut self, form: UpdateForm) -> Self {
        self.form = form;
        self
    }

    /// `concat` (any batch size) or `identity` (batch size 1).
    pub fn with_aggregator(mut self, aggregator: AggregatorKind) -> Result<Self> {
        if aggregator == AggregatorKind::Last {
            return Err(Error::Formulation(
                "exact machines need every message; use `concat` or `identity`".into(),
            ));
        }
        self.formulation.aggregator = aggregator;
        Ok(self)
    }

    pub fn config(&self) -> &ExactMachineConfig {
        &self.config
    }

    pub fn form(&self) -> UpdateForm {
        self.form
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn memory_len(&self) -> usize {
        self.config.n * self.config.k
    }

    pub fn shift(&self) -> &DMatrix<f64> {
        &self.shift
    }

    pub fn permutation(&self) -> &DMatrix<f64> {
        &self.permutation
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn readout_matrix(&self) -> &DMatrix<f64> {
        &self.readout
    }

    fn check_node(&self, j: usize) -> Result<()> {
        if j < self.config.n {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                index: j,
                limit: self.config.n,
            })
        }
    }

    fn check_memory(&self, s: &[f64]) -> Result<()> {
        if s.len() == self.memory_len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.memory_len(),
                actual: s.len(),
                context: "exact machine memory",
            })
        }
    }

    pub fn update(&self, s: &[f64], e: f64, j: usize) -> Result<Vec<f64>> {
        match self.form {
            UpdateForm::Matrix => exact_memory_update(s, e, j, self),
            UpdateForm::Fast => fast_memory_update(s, e, j, self),
        }
    }

    pub fn zero_memory(&self) -> Vec<f64> {
        vec![0.0; self.memory_len()]
    }
}

/// `P^j X (P^T)^j`: block-diagonal with `S` at block `j` and `I` elsewhere.
pub fn f_of_j(machine: &ExactMachine, j: usize) -> Result<&DMatrix<f64>> {
    machine.check_node(j)?;
    Ok(&machine.f_blocks[j])
}

/// `P^j y` with `y = e_0`: the basis vector for slot `jk`.
pub fn p_of_j(machine: &ExactMachine, j: usize) -> Result<&DVector<f64>> {
    machine.check_node(j)?;
    Ok(&machine.p_vectors[j])
}

/// `f(j) s + p(j) e`.
pub fn exact_memory_update(s: &[f64], e: f64, j: usize, machine: &ExactMachine) -> Result<Vec<f64>> {
    machine.check_memory(s)?;
    let f = f_of_j(machine, j)?;
    let p = p_of_j(machine, j)?;
    let next = f * DVector::from_column_slice(s) + p * e;
    Ok(next.as_slice().to_vec())
}

/// Same result as [`exact_memory_update`] in `O(k)`.
pub fn fast_memory_update(s: &[f64], e: f64, j: usize, machine: &ExactMachine) -> Result<Vec<f64>> {
    machine.check_memory(s)?;
    machine.check_node(j)?;
    let k = machine.k();
    let mut next = s.to_vec();
    let block = &mut next[j * k..j * k + k];
    block.copy_within(0..k - 1, 1);
    block[0] = e;
    Ok(next)
}

/// `A s`: entry `j` is the weighted sum of block `j`.
pub fn exact_readout(s: &[f64], machine: &ExactMachine) -> Result<Vec<f64>> {
    machine.check_memory(s)?;
    let z = &machine.readout * DVector::from_column_slice(s);
    Ok(z.as_slice().to_vec())
}

/// Removes messages built by `msg_d`, keeping the rest in order.
pub fn drop_destination_side(messages: Vec<RawMessage>) -> Vec<RawMessage> {
    messages
        .into_iter()
        .filter(|m| m.origin == OriginTag::Source)
        .collect()
}

pub fn write_matrix_csv<W: Write>(matrix: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in 0..matrix.nrows() {
        w.write_record(matrix.row(r).iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

impl Stages for ExactMachine {
    fn formulation(&self) -> &Formulation {
        &self.formulation
    }

    fn encoders(&self) -> Encoders {
        Encoders::new(Vec::new(), NodeEncoding::Identity)
    }

    fn memory_dim(&self) -> usize {
        self.memory_len()
    }

    fn filter_messages(&self, messages: Vec<RawMessage>) -> Vec<RawMessage> {
        drop_destination_side(messages)
    }

    fn update_memory(&self, aggregated: &Aggregated, prev: &[f64]) -> Result<Vec<f64>> {
        let mut s = prev.to_vec();
        for payload in aggregated.unpack() {
            let &[e, j, tag] = payload else {
                return Err(Error::DimensionMismatch {
                    expected: 3,
                    actual: payload.len(),
                    context: "exact message payload",
                });
            };
            if tag != 0.0 {
                return Err(Error::Formulation(
                    "destination-side message reached the exact memory".into(),
                ));
            }
            s = self.update(&s, e, j as usize)?;
        }
        Ok(s)
    }

    fn embed(&self, ctx: &EmbedContext<'_>) -> Result<Vec<f64>> {
        exact_readout(ctx.bank.state(ctx.center)?, self)
    }

    fn decode(&self, embedding: &[f64], num_nodes: usize) -> Result<Vec<f64>> {
        let mut out = embedding.to_vec();
        out.resize(num_nodes, 0.0);
        Ok(out)
    }
}
