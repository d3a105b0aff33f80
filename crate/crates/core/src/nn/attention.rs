//! Multi-head scaled dot-product self-attention.

use rand::Rng;

use super::layers::Linear;
use super::{matmul, matmul_nt, matmul_tn, ParamId, ParamSet, Tensor2};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Query/key/value projections (no bias) split into `n_heads` column blocks,
/// followed by an output projection with bias.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub d_model: usize,
    pub n_heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
}

pub struct AttentionCache {
    x: Tensor2,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    weights: Vec<Tensor2>,
    concat: Tensor2,
}

impl AttentionCache {
    /// Attention weights of head `h` (`T×T`).
    pub fn weights(&self, h: usize) -> &Tensor2 {
        &self.weights[h]
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        d_model: usize,
        n_heads: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Shape(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        Ok(Self {
            d_model,
            n_heads,
            wq: ps.add_xavier(format!("{name}.wq"), d_model, d_model, gain, rng),
            wk: ps.add_xavier(format!("{name}.wk"), d_model, d_model, gain, rng),
            wv: ps.add_xavier(format!("{name}.wv"), d_model, d_model, gain, rng),
            out: Linear::new(ps, &format!("{name}.wo"), d_model, d_model, true, gain, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor2, causal: bool) -> Result<(Tensor2, AttentionCache)> {
        if x.cols() != self.d_model {
            return Err(Error::Shape(format!(
                "attention input has {} columns, d_model is {}",
                x.cols(),
                self.d_model
            )));
        }
        let t = x.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = matmul(x, ps.get(self.wq));
        let k = matmul(x, ps.get(self.wk));
        let v = matmul(x, ps.get(self.wv));
        let mut concat = Tensor2::zeros(t, self.d_model);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.columns(h * dh, dh);
            let kh = k.columns(h * dh, dh);
            let vh = v.columns(h * dh, dh);
            let mut scores = matmul_nt(&qh, &kh);
            scores.scale(scale);
            if causal {
                for i in 0..t {
                    for j in i + 1..t {
                        scores.set(i, j, f64::NEG_INFINITY);
                    }
                }
            }
            let a = softmax_rows(&scores);
            concat.add_columns(h * dh, &matmul(&a, &vh));
            weights.push(a);
        }
        let y = self.out.forward(ps, &concat);
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        ))
    }

    pub fn backward(&self, ps: &ParamSet, cache: &AttentionCache, dy: &Tensor2, grads: &mut ParamSet) -> Tensor2 {
        let t = dy.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = self.out.backward(ps, &cache.concat, dy, grads);
        let mut dq = Tensor2::zeros(t, self.d_model);
        let mut dk = Tensor2::zeros(t, self.d_model);
        let mut dv = Tensor2::zeros(t, self.d_model);
        for h in 0..self.n_heads {
            let a = &cache.weights[h];
            let qh = cache.q.columns(h * dh, dh);
            let kh = cache.k.columns(h * dh, dh);
            let vh = cache.v.columns(h * dh, dh);
            let doh = dconcat.columns(h * dh, dh);
            let da = matmul_nt(&doh, &vh);
            dv.add_columns(h * dh, &matmul_tn(a, &doh));
            // softmax backward, row by row
            let mut ds = Tensor2::zeros(t, t);
            for i in 0..t {
                let arow = a.row(i);
                let darow = da.row(i);
                let dot: f64 = arow.iter().zip(darow).map(|(p, g)| p * g).sum();
                for j in 0..t {
                    ds.set(i, j, arow[j] * (darow[j] - dot) * scale);
                }
            }
            dq.add_columns(h * dh, &matmul(&ds, &kh));
            dk.add_columns(h * dh, &matmul_tn(&ds, &qh));
        }
        grads.get_mut(self.wq).add_assign(&matmul_tn(&cache.x, &dq));
        grads.get_mut(self.wk).add_assign(&matmul_tn(&cache.x, &dk));
        grads.get_mut(self.wv).add_assign(&matmul_tn(&cache.x, &dv));
        let mut dx = matmul_nt(&dq, ps.get(self.wq));
        dx.add_assign(&matmul_nt(&dk, ps.get(self.wk)));
        dx.add_assign(&matmul_nt(&dv, ps.get(self.wv)));
        dx
    }
}

/// Forward pass only.
pub fn self_attention(seq: &Tensor2, attn: &MultiHeadAttention, ps: &ParamSet, causal: bool) -> Result<Tensor2> {
    attn.forward(ps, seq, causal).map(|(y, _)| y)
}
