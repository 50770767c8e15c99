//! Shared building blocks: parameter initialisation, linear layers and
//! multi-head scaled dot-product attention on a [`Graph`].

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Graph, Params, Var};

/// Glorot-uniform initialised `rows × cols` matrix.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// `x · W + b` with `W` at `{prefix}.w` and `b` at `{prefix}.b`.
pub fn linear(g: &mut Graph, params: &Params, prefix: &str, x: Var) -> Var {
    let w = g.param(params, &format!("{prefix}.w"));
    let b = g.param(params, &format!("{prefix}.b"));
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

pub fn init_linear<R: Rng>(rng: &mut R, params: &mut Params, prefix: &str, fan_in: usize, fan_out: usize) {
    params.insert(format!("{prefix}.w"), glorot(rng, fan_in, fan_out));
    params.insert(format!("{prefix}.b"), Array2::zeros((1, fan_out)));
}

/// Projection matrices of one attention block, each `d × d` and split
/// column-wise into `heads` slices of width `d / heads`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

impl AttentionWeights {
    pub fn bind(g: &mut Graph, params: &Params, prefix: &str) -> Self {
        Self {
            wq: g.param(params, &format!("{prefix}.wq")),
            wk: g.param(params, &format!("{prefix}.wk")),
            wv: g.param(params, &format!("{prefix}.wv")),
        }
    }
}

pub fn init_attention<R: Rng>(rng: &mut R, params: &mut Params, prefix: &str, d: usize) {
    for name in ["wq", "wk", "wv"] {
        params.insert(format!("{prefix}.{name}"), glorot(rng, d, d));
    }
}

/// Output of [`multi_head_attention`]: the concatenated head outputs and the
/// per-head attention probability matrices (queries × keys).
pub struct Attended {
    pub output: Var,
    pub probs: Vec<Var>,
}

/// `concat_h softmax((X_q W^Q_h)(X_kv W^K_h)ᵀ / sqrt(d/heads)) (X_kv W^V_h)`.
pub fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    w: AttentionWeights,
    heads: usize,
) -> Attended {
    let d = g.value(w.wq).ncols();
    assert!(heads > 0 && d.is_multiple_of(heads), "hidden size {d} not divisible by {heads} heads");
    let head_dim = d / heads;
    let q = g.matmul(queries, w.wq);
    let k = g.matmul(keys_values, w.wk);
    let v = g.matmul(keys_values, w.wv);
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(q, lo, hi);
        let kh = g.slice_cols(k, lo, hi);
        let vh = g.slice_cols(v, lo, hi);
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores);
        outs.push(g.matmul(p, vh));
        probs.push(p);
    }
    let output = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    Attended { output, probs }
}
