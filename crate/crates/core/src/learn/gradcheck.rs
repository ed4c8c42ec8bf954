//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::layers::{attention_embed, gru_update, mlp_forward, AttentionParams, GruParams, MlpParams};
use super::params::{ParamStore, Tensor};
use super::tape::{Tape, Var};

/// Below this magnitude, gradient differences are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub coordinates: usize,
}

/// Compares the tape gradient of the scalar built by `f` with central
/// differences over every parameter coordinate in `store`.
pub fn finite_difference_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();
    store.zero_grad();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        Ok(tape.scalar(out))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.tensor(id).len() {
            let orig = store.tensor(id).data[i];
            let (hi, lo) = (orig + eps, orig - eps);
            store.tensor_mut(id).data[i] = hi;
            let up = eval(store)?;
            store.tensor_mut(id).data[i] = lo;
            let down = eval(store)?;
            store.tensor_mut(id).data[i] = orig;
            let numeric = (up - down) / (hi - lo);
            let a = analytic[id.index()][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{i}]", store.name(id));
            }
        }
    }
    Ok(report)
}

pub const FD_EPS: f64 = 1e-5;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Scalar probe: a fixed random projection of `v`.
fn project(tape: &mut Tape, v: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let r = random_vec(rng, tape.value(v).len(), 1.0);
    let r = tape.constant(r);
    tape.dot(v, r)
}

/// A single matrix-vector product. Central differences are exact for
/// linear maps, so a wide step is used to keep rounding out of the result.
pub fn check_linear(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::uniform(3, 4, 1.0, seed, "w"))?;
    let x = store.insert("x", Tensor::vector(random_vec(&mut rng, 4, 1.0)))?;
    let r = random_vec(&mut rng, 3, 1.0);
    finite_difference_check(&mut store, 0.5, |tape, s| {
        let (wv, xv) = (tape.param(s, w), tape.param(s, x));
        let y = tape.matvec(wv, xv)?;
        let rv = tape.constant(r.clone());
        tape.dot(y, rv)
    })
}

pub fn check_gru(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = GruParams::init(&mut store, "gru", 6, 4, seed)?;
    let x = store.insert("x", Tensor::vector(random_vec(&mut rng, 6, 1.0)))?;
    let h = store.insert("h", Tensor::vector(random_vec(&mut rng, 4, 1.0)))?;
    let proj_seed = rng.random();
    finite_difference_check(&mut store, FD_EPS, |tape, s| {
        let (xv, hv) = (tape.param(s, x), tape.param(s, h));
        let out = gru_update(tape, s, &p, xv, hv)?;
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    })
}

pub fn check_attention(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = AttentionParams::init(&mut store, "att", 4, 5, 4, 2, seed)?;
    let center = store.insert("center", Tensor::vector(random_vec(&mut rng, 4, 1.0)))?;
    let count = rng.random_range(1..=4);
    let neighbors: Vec<_> = (0..count)
        .map(|i| store.insert(&format!("nb{i}"), Tensor::vector(random_vec(&mut rng, 5, 1.0))))
        .collect::<Result<_>>()?;
    let proj_seed = rng.random();
    finite_difference_check(&mut store, FD_EPS, |tape, s| {
        let c = tape.param(s, center);
        let nbs: Vec<Var> = neighbors.iter().map(|&id| tape.param(s, id)).collect();
        let out = attention_embed(tape, s, &p, c, &nbs, None)?;
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    })
}

/// Hidden pre-activations closer than `1e-3` to the ReLU kink are pushed
/// out to `+-1e-3` through the bias before checking.
pub fn check_mlp(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = MlpParams::init(&mut store, "mlp", 4, 6, 5, seed)?;
    let z = store.insert("z", Tensor::vector(random_vec(&mut rng, 4, 1.0)))?;
    {
        let mut tape = Tape::new();
        let zv = tape.param(&store, z);
        let (_, pre) = mlp_forward(&mut tape, &store, &p, zv)?;
        let pre = tape.value(pre).to_vec();
        let b1 = &mut store.tensor_mut(p.b1).data;
        for (b, v) in b1.iter_mut().zip(pre) {
            if v.abs() < 1e-3 {
                *b += if v >= 0.0 { 1e-3 } else { -1e-3 } - v;
            }
        }
    }
    let proj_seed = rng.random();
    finite_difference_check(&mut store, FD_EPS, |tape, s| {
        let zv = tape.param(s, z);
        let (out, _) = mlp_forward(tape, s, &p, zv)?;
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    })
}

/// `cos(w_t * dt)` with respect to `w_t`.
pub fn check_time_encoder(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.insert("w_t", Tensor::vector(random_vec(&mut rng, 8, 1.0)))?;
    let dt = rng.random_range(0.0..10.0);
    let proj_seed = rng.random();
    finite_difference_check(&mut store, FD_EPS, |tape, s| {
        let wv = tape.param(s, w);
        let out = tape.cos(wv, dt);
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    })
}

/// `cos(w_n * i)` with respect to `w_n`.
pub fn check_node_encoder(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.insert("w_n", Tensor::vector(random_vec(&mut rng, 8, 1.0)))?;
    let node = rng.random_range(0..50usize) as f64;
    let proj_seed = rng.random();
    finite_difference_check(&mut store, FD_EPS, |tape, s| {
        let wv = tape.param(s, w);
        let out = tape.cos(wv, node);
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    })
}
