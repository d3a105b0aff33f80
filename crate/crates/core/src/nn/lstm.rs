//! Single LSTM cell with gates packed as `[i | f | o | g]`.

use rand::Rng;

use super::layers::sigmoid;
use super::{matmul, matmul_nt, matmul_tn, ParamId, ParamSet, Tensor2};
use crate::error::{Error, Result};

/// Parameters of one LSTM cell. `wx` is `input×4H`, `wh` is `H×4H`, `b` is `1×4H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

/// Values saved by [`LstmCell::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Tensor2,
    h: Tensor2,
    c: Tensor2,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = ps.add_xavier(format!("{name}.wx"), input, 4 * hidden, 1.0, rng);
        let wh = ps.add_xavier(format!("{name}.wh"), hidden, 4 * hidden, 1.0, rng);
        // forget gate starts open
        let mut bias = Tensor2::zeros(1, 4 * hidden);
        for k in hidden..2 * hidden {
            bias.set(0, k, 1.0);
        }
        let b = ps.add(format!("{name}.b"), bias);
        Self {
            input,
            hidden,
            wx,
            wh,
            b,
        }
    }

    fn check(&self, ps: &ParamSet, x: &Tensor2, h: &Tensor2, c: &Tensor2) -> Result<()> {
        let hh = self.hidden;
        let shapes = [
            ("wx", ps.get(self.wx).shape(), (self.input, 4 * hh)),
            ("wh", ps.get(self.wh).shape(), (hh, 4 * hh)),
            ("b", ps.get(self.b).shape(), (1, 4 * hh)),
            ("x", x.shape(), (1, self.input)),
            ("h", h.shape(), (1, hh)),
            ("c", c.shape(), (1, hh)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Shape(format!(
                    "lstm {name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }

    /// One step on row vectors `x (1×input)`, `h`, `c (1×H)`.
    pub fn forward(
        &self,
        ps: &ParamSet,
        x: &Tensor2,
        h: &Tensor2,
        c: &Tensor2,
    ) -> Result<(Tensor2, Tensor2, LstmStepCache)> {
        self.check(ps, x, h, c)?;
        let hh = self.hidden;
        let mut z = matmul(x, ps.get(self.wx));
        z.add_assign(&matmul(h, ps.get(self.wh)));
        z.add_assign(ps.get(self.b));
        let z = z.row(0);
        let i: Vec<f64> = z[..hh].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hh..2 * hh].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = z[2 * hh..3 * hh].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[3 * hh..].iter().map(|v| v.tanh()).collect();
        let c_new: Vec<f64> = (0..hh).map(|k| f[k] * c.get(0, k) + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..hh).map(|k| o[k] * tanh_c[k]).collect();
        Ok((
            Tensor2::row_vector(&h_new),
            Tensor2::row_vector(&c_new),
            LstmStepCache {
                x: x.clone(),
                h: h.clone(),
                c: c.clone(),
                i,
                f,
                o,
                g,
                tanh_c,
            },
        ))
    }

    /// Given gradients on `h'` and `c'`, accumulates parameter gradients and
    /// returns `(dx, dh, dc)`.
    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &LstmStepCache,
        dh_new: &Tensor2,
        dc_new: &Tensor2,
        grads: &mut ParamSet,
    ) -> (Tensor2, Tensor2, Tensor2) {
        let hh = self.hidden;
        let mut dz = vec![0.0; 4 * hh];
        let mut dc_prev = vec![0.0; hh];
        for k in 0..hh {
            let dh = dh_new.get(0, k);
            let t = cache.tanh_c[k];
            let dc = dc_new.get(0, k) + dh * cache.o[k] * (1.0 - t * t);
            let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
            dz[k] = dc * g * i * (1.0 - i);
            dz[hh + k] = dc * cache.c.get(0, k) * f * (1.0 - f);
            dz[2 * hh + k] = dh * t * o * (1.0 - o);
            dz[3 * hh + k] = dc * i * (1.0 - g * g);
            dc_prev[k] = dc * f;
        }
        let dz = Tensor2::row_vector(&dz);
        grads.get_mut(self.wx).add_assign(&matmul_tn(&cache.x, &dz));
        grads.get_mut(self.wh).add_assign(&matmul_tn(&cache.h, &dz));
        grads.get_mut(self.b).add_assign(&dz);
        (
            matmul_nt(&dz, ps.get(self.wx)),
            matmul_nt(&dz, ps.get(self.wh)),
            Tensor2::row_vector(&dc_prev),
        )
    }
}

/// `(h', c')` for one step.
pub fn lstm_cell(x: &Tensor2, h: &Tensor2, c: &Tensor2, cell: &LstmCell, ps: &ParamSet) -> Result<(Tensor2, Tensor2)> {
    cell.forward(ps, x, h, c).map(|(h, c, _)| (h, c))
}
