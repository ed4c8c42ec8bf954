//! Reverse-mode automatic differentiation over dense `f64` vectors.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// `cos(w_i * x)` for a constant `x`.
    Cos { w: Var, x: f64 },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Dot(Var, Var),
    Softmax(Var),
    /// `sum_i weights[i] * items[i]`.
    WeightedSum { weights: Var, items: Vec<Var> },
    /// Element-wise product with a constant mask.
    Mask { x: Var, mask: Vec<f64> },
    /// Cross-entropy of `softmax(logits)` against a constant target.
    SoftmaxCrossEntropy { logits: Var, target: Vec<f64> },
    Sum(Var),
    Mean(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    op: Op,
}

/// Records operations in evaluation order so gradients can be pulled back
/// with [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn mismatch(expected: usize, actual: usize, context: &'static str) -> Error {
    Error::DimensionMismatch {
        expected,
        actual,
        context,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let rows = value.len();
        self.nodes.push(Node { value, rows, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// The single entry of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.tensor(id);
        self.nodes.push(Node {
            value: t.data.clone(),
            rows: t.rows,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn same_len(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(mismatch(la, lb, context));
        }
        Ok(())
    }

    /// `W x` for a row-major parameter matrix `W`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let rows = self.nodes[w.0].rows;
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let cols = if rows == 0 { 0 } else { wv.len() / rows };
        if cols != xv.len() {
            return Err(mismatch(cols, xv.len(), "matrix-vector product"));
        }
        let out: Vec<f64> = wv
            .chunks_exact(cols.max(1))
            .take(rows)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let out = if cols == 0 { vec![0.0; rows] } else { out };
        Ok(self.push(out, Op::MatVec { w, x }))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(out, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(out, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push(out, Op::Relu(a))
    }

    pub fn cos(&mut self, w: Var, x: f64) -> Var {
        let out = self.value(w).iter().map(|wi| (wi * x).cos()).collect();
        self.push(out, Op::Cos { w, x })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.len() {
            return Err(mismatch(start + len, v.len(), "slice"));
        }
        let out = v[start..start + len].to_vec();
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let d = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![d], Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.len() != items.len() {
            return Err(mismatch(items.len(), w.len(), "weighted sum"));
        }
        let Some(first) = items.first() else {
            return Err(Error::InvalidArgument("weighted sum of nothing".into()));
        };
        let dim = self.value(*first).len();
        let mut out = vec![0.0; dim];
        for (wi, item) in w.iter().zip(items) {
            let v = self.value(*item);
            if v.len() != dim {
                return Err(mismatch(dim, v.len(), "weighted sum"));
            }
            for (o, x) in out.iter_mut().zip(v) {
                *o += wi * x;
            }
        }
        Ok(self.push(out, Op::WeightedSum {
            weights,
            items: items.to_vec(),
        }))
    }

    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        if v.len() != mask.len() {
            return Err(mismatch(v.len(), mask.len(), "mask"));
        }
        let out = v.iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.push(out, Op::Mask { x, mask }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, target: Vec<f64>) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != target.len() {
            return Err(mismatch(z.len(), target.len(), "cross-entropy target"));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = target
            .iter()
            .zip(z)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, v)| -t * (v - lse))
            .sum();
        Ok(self.push(vec![loss], Op::SoftmaxCrossEntropy { logits, target }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("mean of nothing".into()));
        }
        let total: f64 = items.iter().map(|v| self.scalar(*v)).sum();
        Ok(self.push(vec![total / items.len() as f64], Op::Mean(items.to_vec())))
    }

    /// Back-propagates from the scalar `output` and adds every parameter's
    /// gradient into `store`.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(mismatch(1, self.value(output).len(), "backward output"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => store.accumulate(*id, &g)?,
                Op::MatVec { w, x } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.len();
                    acc(*w, &mut |gw| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                for (c, xc) in xv.iter().enumerate() {
                                    gw[r * cols + c] += gr * xc;
                                }
                            }
                        }
                    });
                    acc(*x, &mut |gx| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                for (c, gc) in gx.iter_mut().enumerate() {
                                    *gc += gr * wv[r * cols + c];
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d));
                    acc(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(s, d)| *s += d));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d));
                    acc(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(s, d)| *s -= d));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for ((s, d), y) in ga.iter_mut().zip(&g).zip(bv) {
                            *s += d * y;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for ((s, d), x) in gb.iter_mut().zip(&g).zip(av) {
                            *s += d * x;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d * c));
                }
                Op::OneMinus(a) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(s, d)| *s -= d));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for ((s, d), y) in ga.iter_mut().zip(&g).zip(y) {
                            *s += d * y * (1.0 - y);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for ((s, d), y) in ga.iter_mut().zip(&g).zip(y) {
                            *s += d * (1.0 - y * y);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for ((s, d), x) in ga.iter_mut().zip(&g).zip(x) {
                            if *x > 0.0 {
                                *s += d;
                            }
                        }
                    });
                }
                Op::Cos { w, x } => {
                    let wv = &self.nodes[w.0].value;
                    acc(*w, &mut |gw| {
                        for ((s, d), wi) in gw.iter_mut().zip(&g).zip(wv) {
                            *s -= d * (wi * x).sin() * x;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let piece = &g[offset..offset + len];
                        acc(*p, &mut |gp| gp.iter_mut().zip(piece).for_each(|(s, d)| *s += d));
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    acc(*x, &mut |gx| {
                        gx[start..start + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(s, d)| *s += d)
                    });
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let d = g[0];
                    acc(*a, &mut |ga| ga.iter_mut().zip(bv).for_each(|(s, y)| *s += d * y));
                    acc(*b, &mut |gb| gb.iter_mut().zip(av).for_each(|(s, x)| *s += d * x));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(d, y)| d * y).sum();
                    acc(*a, &mut |ga| {
                        for ((s, d), y) in ga.iter_mut().zip(&g).zip(y) {
                            *s += y * (d - inner);
                        }
                    });
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let dots: Vec<f64> = items
                        .iter()
                        .map(|it| self.nodes[it.0].value.iter().zip(&g).map(|(x, d)| x * d).sum())
                        .collect();
                    acc(*weights, &mut |gw| gw.iter_mut().zip(&dots).for_each(|(s, d)| *s += d));
                    for (it, wi) in items.iter().zip(wv) {
                        acc(*it, &mut |gi| gi.iter_mut().zip(&g).for_each(|(s, d)| *s += wi * d));
                    }
                }
                Op::Mask { x, mask } => {
                    acc(*x, &mut |gx| {
                        for ((s, d), m) in gx.iter_mut().zip(&g).zip(mask) {
                            *s += d * m;
                        }
                    });
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let p = softmax(&self.nodes[logits.0].value);
                    let mass: f64 = target.iter().sum();
                    let d = g[0];
                    acc(*logits, &mut |gl| {
                        for ((s, p), t) in gl.iter_mut().zip(&p).zip(target) {
                            *s += d * (p * mass - t);
                        }
                    });
                }
                Op::Sum(a) => {
                    let d = g[0];
                    acc(*a, &mut |ga| ga.iter_mut().for_each(|s| *s += d));
                }
                Op::Mean(items) => {
                    let d = g[0] / items.len() as f64;
                    for it in items {
                        acc(*it, &mut |gi| gi[0] += d);
                    }
                }
            }
        }
        Ok(())
    }
}
