//! GRU memory cell, multi-head neighbor attention and the MLP decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore, Tensor};
use super::tape::{Tape, Var};

fn check_len(tape: &Tape, v: Var, expected: usize, context: &'static str) -> Result<()> {
    let actual = tape.value(v).len();
    if actual != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        });
    }
    Ok(())
}

/// Input-side and hidden-side weights for the reset, update and candidate
/// gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_ir: ParamId,
    pub b_iz: ParamId,
    pub b_in: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
}

impl GruParams {
    /// Every tensor is uniform in `+-1/sqrt(hidden)`.
    pub fn init(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut add = |name: &str, rows: usize, cols: usize| {
            let full = format!("{prefix}.{name}");
            store.insert(&full, Tensor::uniform(rows, cols, bound, seed, &full))
        };
        Ok(Self {
            input_dim,
            hidden,
            w_ir: add("w_ir", hidden, input_dim)?,
            w_iz: add("w_iz", hidden, input_dim)?,
            w_in: add("w_in", hidden, input_dim)?,
            w_hr: add("w_hr", hidden, hidden)?,
            w_hz: add("w_hz", hidden, hidden)?,
            w_hn: add("w_hn", hidden, hidden)?,
            b_ir: add("b_ir", hidden, 1)?,
            b_iz: add("b_iz", hidden, 1)?,
            b_in: add("b_in", hidden, 1)?,
            b_hr: add("b_hr", hidden, 1)?,
            b_hz: add("b_hz", hidden, 1)?,
            b_hn: add("b_hn", hidden, 1)?,
        })
    }
}

/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
pub fn gru_update(tape: &mut Tape, store: &ParamStore, p: &GruParams, x: Var, h: Var) -> Result<Var> {
    check_len(tape, x, p.input_dim, "GRU input")?;
    check_len(tape, h, p.hidden, "GRU state")?;
    let gate = |tape: &mut Tape, wi: ParamId, bi: ParamId, wh: ParamId, bh: ParamId| -> Result<(Var, Var)> {
        let (wi, bi, wh, bh) = (
            tape.param(store, wi),
            tape.param(store, bi),
            tape.param(store, wh),
            tape.param(store, bh),
        );
        let xi = tape.affine(wi, x, bi)?;
        let hh = tape.affine(wh, h, bh)?;
        Ok((xi, hh))
    };
    let (xr, hr) = gate(tape, p.w_ir, p.b_ir, p.w_hr, p.b_hr)?;
    let (xz, hz) = gate(tape, p.w_iz, p.b_iz, p.w_hz, p.b_hz)?;
    let (xn, hn) = gate(tape, p.w_in, p.b_in, p.w_hn, p.b_hn)?;
    let r_pre = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(xz, hz)?;
    let z = tape.sigmoid(z_pre);
    let rh = tape.mul(r, hn)?;
    let n_pre = tape.add(xn, rh)?;
    let n = tape.tanh(n_pre);
    let keep = tape.one_minus(z);
    let a = tape.mul(keep, n)?;
    let b = tape.mul(z, h)?;
    tape.add(a, b)
}

/// Plain-vector GRU step.
pub fn gru_cell(store: &ParamStore, p: &GruParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.to_vec());
    let hv = tape.constant(h.to_vec());
    let out = gru_update(&mut tape, store, p, xv, hv)?;
    Ok(tape.value(out).to_vec())
}

/// Query from the center state; keys and values from each neighbor's
/// `[state ++ time encoding ++ edge feature]`; a skip projection of the
/// center is added to the concatenated heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub state_dim: usize,
    pub neighbor_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_skip: ParamId,
    pub b_skip: ParamId,
}

impl AttentionParams {
    /// Weights uniform in `+-1/sqrt(fan_in)`; `out_dim` must split evenly
    /// across heads.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        state_dim: usize,
        neighbor_dim: usize,
        out_dim: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 || out_dim % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "{out_dim} output units do not split across {heads} heads"
            )));
        }
        let mut add = |name: &str, rows: usize, cols: usize, fan_in: usize| {
            let full = format!("{prefix}.{name}");
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            store.insert(&full, Tensor::uniform(rows, cols, bound, seed, &full))
        };
        Ok(Self {
            state_dim,
            neighbor_dim,
            out_dim,
            heads,
            w_q: add("w_q", out_dim, state_dim, state_dim)?,
            b_q: add("b_q", out_dim, 1, state_dim)?,
            w_k: add("w_k", out_dim, neighbor_dim, neighbor_dim)?,
            b_k: add("b_k", out_dim, 1, neighbor_dim)?,
            w_v: add("w_v", out_dim, neighbor_dim, neighbor_dim)?,
            b_v: add("b_v", out_dim, 1, neighbor_dim)?,
            w_skip: add("w_skip", out_dim, state_dim, state_dim)?,
            b_skip: add("b_skip", out_dim, 1, state_dim)?,
        })
    }
}

/// Dropout on attention weights; `None` at evaluation time.
#[derive(Debug)]
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect()
    }
}

pub fn attention_embed(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AttentionParams,
    center: Var,
    neighbors: &[Var],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    check_len(tape, center, p.state_dim, "attention center")?;
    let w_skip = tape.param(store, p.w_skip);
    let b_skip = tape.param(store, p.b_skip);
    let skip = tape.affine(w_skip, center, b_skip)?;
    if neighbors.is_empty() {
        return Ok(skip);
    }
    for &nb in neighbors {
        check_len(tape, nb, p.neighbor_dim, "attention neighbor")?;
    }
    let (w_q, b_q) = (tape.param(store, p.w_q), tape.param(store, p.b_q));
    let (w_k, b_k) = (tape.param(store, p.w_k), tape.param(store, p.b_k));
    let (w_v, b_v) = (tape.param(store, p.w_v), tape.param(store, p.b_v));
    let q = tape.affine(w_q, center, b_q)?;
    let mut keys = Vec::with_capacity(neighbors.len());
    let mut values = Vec::with_capacity(neighbors.len());
    for &nb in neighbors {
        keys.push(tape.affine(w_k, nb, b_k)?);
        values.push(tape.affine(w_v, nb, b_v)?);
    }
    let dh = p.out_dim / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = tape.slice(q, h * dh, dh)?;
        let mut scores = Vec::with_capacity(neighbors.len());
        let mut vh = Vec::with_capacity(neighbors.len());
        for (k, v) in keys.iter().zip(&values) {
            let kh = tape.slice(*k, h * dh, dh)?;
            scores.push(tape.dot(qh, kh)?);
            vh.push(tape.slice(*v, h * dh, dh)?);
        }
        let scores = tape.concat(&scores);
        let scores = tape.scale(scores, scale);
        let mut alpha = tape.softmax(scores);
        if let Some(d) = dropout.as_deref_mut() {
            if d.rate > 0.0 {
                let m = d.mask(neighbors.len());
                alpha = tape.mask(alpha, m)?;
            }
        }
        head_outputs.push(tape.weighted_sum(alpha, &vh)?);
    }
    let heads = tape.concat(&head_outputs);
    tape.add(heads, skip)
}

/// `linear -> ReLU -> linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut add = |name: &str, rows: usize, cols: usize, fan_in: usize| {
            let full = format!("{prefix}.{name}");
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            store.insert(&full, Tensor::uniform(rows, cols, bound, seed, &full))
        };
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            w1: add("w1", hidden, input_dim, input_dim)?,
            b1: add("b1", hidden, 1, input_dim)?,
            w2: add("w2", output_dim, hidden, hidden)?,
            b2: add("b2", output_dim, 1, hidden)?,
        })
    }
}

/// Returns the logits and the hidden pre-activation.
pub fn mlp_forward(tape: &mut Tape, store: &ParamStore, p: &MlpParams, z: Var) -> Result<(Var, Var)> {
    check_len(tape, z, p.input_dim, "decoder input")?;
    let (w1, b1) = (tape.param(store, p.w1), tape.param(store, p.b1));
    let (w2, b2) = (tape.param(store, p.w2), tape.param(store, p.b2));
    let pre = tape.affine(w1, z, b1)?;
    let h = tape.relu(pre);
    Ok((tape.affine(w2, h, b2)?, pre))
}

pub fn mlp_decode(tape: &mut Tape, store: &ParamStore, p: &MlpParams, z: Var) -> Result<Var> {
    Ok(mlp_forward(tape, store, p, z)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.tensor_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn gru_zero_fixed_point() {
        let mut store = ParamStore::new();
        let p = GruParams::init(&mut store, "gru", 5, 3, 1).unwrap();
        zero_all(&mut store);
        assert_eq!(gru_cell(&store, &p, &[0.0; 5], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        // zero params: r = z = 1/2, n = 0, so h' = h / 2
        assert_eq!(gru_cell(&store, &p, &[1.0; 5], &[2.0, -4.0, 1.0]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn gru_matches_direct_equations() {
        let mut store = ParamStore::new();
        let p = GruParams::init(&mut store, "gru", 2, 2, 3).unwrap();
        let x = [0.3, -1.2];
        let h = [0.5, 0.1];
        let mv = |id: ParamId, v: &[f64]| -> Vec<f64> {
            let t = store.tensor(id);
            (0..t.rows)
                .map(|r| (0..t.cols).map(|c| t.data[r * t.cols + c] * v[c]).sum())
                .collect()
        };
        let b = |id: ParamId| store.values(id).to_vec();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (xr, hr, xz, hz, xn, hn) = (mv(p.w_ir, &x), mv(p.w_hr, &h), mv(p.w_iz, &x), mv(p.w_hz, &h), mv(p.w_in, &x), mv(p.w_hn, &h));
        let (bir, bhr, biz, bhz, bin, bhn) = (b(p.b_ir), b(p.b_hr), b(p.b_iz), b(p.b_hz), b(p.b_in), b(p.b_hn));
        let want: Vec<f64> = (0..2)
            .map(|i| {
                let r = sig(xr[i] + bir[i] + hr[i] + bhr[i]);
                let z = sig(xz[i] + biz[i] + hz[i] + bhz[i]);
                let n = (xn[i] + bin[i] + r * (hn[i] + bhn[i])).tanh();
                (1.0 - z) * n + z * h[i]
            })
            .collect();
        let got = gru_cell(&store, &p, &x, &h).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
        assert!(gru_cell(&store, &p, &[1.0], &h).is_err());
    }

    fn attention_fixture() -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let p = AttentionParams::init(&mut store, "att", 4, 6, 4, 2, 9).unwrap();
        (store, p)
    }

    #[test]
    fn attention_without_neighbors_is_skip_projection() {
        let (store, p) = attention_fixture();
        let mut tape = Tape::new();
        let c = tape.constant(vec![1.0, 0.0, -1.0, 2.0]);
        let z = attention_embed(&mut tape, &store, &p, c, &[], None).unwrap();
        let w = store.tensor(p.w_skip);
        let b = store.values(p.b_skip);
        for r in 0..4 {
            let want: f64 = (0..4).map(|k| w.data[r * 4 + k] * [1.0, 0.0, -1.0, 2.0][k]).sum::<f64>() + b[r];
            assert!((tape.value(z)[r] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_single_neighbor_gets_full_weight() {
        let (store, p) = attention_fixture();
        let mut tape = Tape::new();
        let c = tape.constant(vec![0.2, 0.1, -0.3, 0.4]);
        let nb_vals = vec![1.0, -1.0, 0.5, 0.0, 2.0, 0.3];
        let nb = tape.constant(nb_vals.clone());
        let z = attention_embed(&mut tape, &store, &p, c, &[nb], None).unwrap();
        let w_s = store.tensor(p.w_skip);
        let w_v = store.tensor(p.w_v);
        let c_vals = [0.2, 0.1, -0.3, 0.4];
        for r in 0..4 {
            let skip: f64 = (0..4).map(|k| w_s.data[r * 4 + k] * c_vals[k]).sum::<f64>() + store.values(p.b_skip)[r];
            let v: f64 = (0..6).map(|k| w_v.data[r * 6 + k] * nb_vals[k]).sum::<f64>() + store.values(p.b_v)[r];
            assert!((tape.value(z)[r] - (skip + v)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_invariant() {
        let (store, p) = attention_fixture();
        let nbs = [
            vec![1.0, -1.0, 0.5, 0.0, 2.0, 0.3],
            vec![0.0, 0.4, -0.5, 1.0, 0.2, 0.1],
            vec![-2.0, 0.1, 0.0, 0.3, 0.0, -0.7],
        ];
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let c = tape.constant(vec![0.2, 0.1, -0.3, 0.4]);
            let vars: Vec<Var> = order.iter().map(|&i| tape.constant(nbs[i].clone())).collect();
            let z = attention_embed(&mut tape, &store, &p, c, &vars, None).unwrap();
            tape.value(z).to_vec()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn dropout_only_when_requested() {
        let (store, p) = attention_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = |drop: Option<&mut Dropout<'_>>| {
            let mut tape = Tape::new();
            let c = tape.constant(vec![0.2, 0.1, -0.3, 0.4]);
            let nbs: Vec<Var> = (0..8).map(|i| tape.constant(vec![i as f64 * 0.1; 6])).collect();
            let z = attention_embed(&mut tape, &store, &p, c, &nbs, drop).unwrap();
            tape.value(z).to_vec()
        };
        let clean = run(None);
        assert_eq!(clean, run(None));
        let mut d = Dropout { rate: 0.5, rng: &mut rng };
        assert_ne!(clean, run(Some(&mut d)));
        assert!(AttentionParams::init(&mut ParamStore::new(), "x", 4, 4, 5, 2, 0).is_err());
    }

    #[test]
    fn mlp_zero_weights_and_dead_relu() {
        let mut store = ParamStore::new();
        let p = MlpParams::init(&mut store, "dec", 3, 4, 5, 2).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let z = tape.constant(vec![1.0, 2.0, 3.0]);
        let out = mlp_decode(&mut tape, &store, &p, z).unwrap();
        assert_eq!(tape.value(out), &[0.0; 5]);

        let mut store = ParamStore::new();
        let p = MlpParams::init(&mut store, "dec", 1, 1, 1, 2).unwrap();
        store.tensor_mut(p.w1).data[0] = 1.0;
        store.tensor_mut(p.b1).data[0] = -5.0;
        let mut tape = Tape::new();
        let z = tape.constant(vec![1.0]);
        let out = mlp_decode(&mut tape, &store, &p, z).unwrap();
        tape.backward(out, &mut store).unwrap();
        assert_eq!(store.grad(p.w1), &[0.0]);
        assert_eq!(store.grad(p.w2), &[0.0]);
        assert_eq!(store.grad(p.b2), &[1.0]);
    }
}
