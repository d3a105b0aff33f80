//! Dense building blocks with hand-written backward passes.
//!
//! Every `backward` accumulates parameter gradients into `grads` (a
//! [`ParamSet`] laid out like the parameters) and returns the gradient with
//! respect to the layer input.

use rand::Rng;

use super::{matmul, matmul_nt, matmul_tn, ParamId, ParamSet, Tensor2};

/// `y = x·W + b`, with `W` stored `in×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = ps.add_xavier(format!("{name}.weight"), input, output, gain, rng);
        let b = bias.then(|| ps.add(format!("{name}.bias"), Tensor2::zeros(1, output)));
        Self { w, b }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor2) -> Tensor2 {
        let mut y = matmul(x, ps.get(self.w));
        if let Some(b) = self.b {
            let bias = ps.get(b).row(0);
            for r in 0..y.rows() {
                for (v, bv) in y.row_mut(r).iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        y
    }

    pub fn backward(&self, ps: &ParamSet, x: &Tensor2, dy: &Tensor2, grads: &mut ParamSet) -> Tensor2 {
        grads.get_mut(self.w).add_assign(&matmul_tn(x, dy));
        if let Some(b) = self.b {
            let gb = grads.get_mut(b);
            for r in 0..dy.rows() {
                for (g, d) in gb.row_mut(0).iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        matmul_nt(dy, ps.get(self.w))
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = ps.add(
            format!("{name}.gamma"),
            Tensor2::from_vec(1, dim, vec![1.0; dim]).expect("ones"),
        );
        let beta = ps.add(format!("{name}.beta"), Tensor2::zeros(1, dim));
        Self { gamma, beta }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor2) -> (Tensor2, LayerNormCache) {
        let (rows, cols) = x.shape();
        let gamma = ps.get(self.gamma).row(0);
        let beta = ps.get(self.beta).row(0);
        let mut xhat = Tensor2::zeros(rows, cols);
        let mut y = Tensor2::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                y.set(r, c, gamma[c] * h + beta[c]);
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, ps: &ParamSet, cache: &LayerNormCache, dy: &Tensor2, grads: &mut ParamSet) -> Tensor2 {
        let (rows, cols) = dy.shape();
        let gamma = ps.get(self.gamma).row(0).to_vec();
        {
            let gg = grads.get_mut(self.gamma);
            for r in 0..rows {
                for c in 0..cols {
                    let v = gg.get(0, c) + dy.get(r, c) * cache.xhat.get(r, c);
                    gg.set(0, c, v);
                }
            }
        }
        {
            let gb = grads.get_mut(self.beta);
            for r in 0..rows {
                for (g, d) in gb.row_mut(0).iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        let n = cols as f64;
        let mut dx = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let dxhat: Vec<f64> = (0..cols).map(|c| dy.get(r, c) * gamma[c]).collect();
            let xh = cache.xhat.row(r);
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            for c in 0..cols {
                dx.set(r, c, cache.inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx));
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FeedForwardCache {
    x: Tensor2,
    pre: Tensor2,
    act: Tensor2,
}

impl FeedForward {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, dim: usize, hidden: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), dim, hidden, true, gain, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, dim, true, gain, rng),
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor2) -> (Tensor2, FeedForwardCache) {
        let pre = self.up.forward(ps, x);
        let act = pre.map(gelu);
        let y = self.down.forward(ps, &act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, ps: &ParamSet, cache: &FeedForwardCache, dy: &Tensor2, grads: &mut ParamSet) -> Tensor2 {
        let dact = self.down.backward(ps, &cache.act, dy, grads);
        let mut dpre = dact;
        for (d, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            *d *= gelu_grad(p);
        }
        self.up.backward(ps, &cache.x, &dpre, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut ps = ParamSet::new();
        let ln = LayerNorm::new(&mut ps, "ln", 4);
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-2.0, 0.0, 0.0, 6.0]]).unwrap();
        let (y, _) = ln.forward(&ps, &x);
        for r in 0..2 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 4.0;
            let var: f64 = y.row(r).iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let l = Linear::new(&mut ps, "l", 3, 5, true, 1.0, &mut rng);
        let x = Tensor2::zeros(2, 3);
        assert_eq!(l.forward(&ps, &x).shape(), (2, 5));
        let mut g = ps.zeros_like();
        let dx = l.backward(&ps, &x, &Tensor2::zeros(2, 5), &mut g);
        assert_eq!(dx.shape(), (2, 3));
    }
}
