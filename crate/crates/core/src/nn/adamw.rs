use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad AdamW hyperparameters {self:?}")))
        }
    }
}

/// Moments shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        })
    }
}

/// Decoupled weight decay followed by a bias-corrected Adam update.
/// Nothing is modified when the gradient contains a non-finite value.
pub fn adamw_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamWState) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape("gradient layout does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
    }
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let tensors = params.tensors_mut().iter_mut();
    let moments = state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut().iter_mut());
    for ((p, g), (m, v)) in tensors.zip(grads.tensors()).zip(moments) {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *pv -= lr * weight_decay * *pv;
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2;

    fn scalar(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor2::row_vector(&[v]));
        ps
    }

    fn cfg(lr: f64, weight_decay: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = scalar(1.5);
        let mut st = AdamWState::new(&p, cfg(0.01, 0.0)).unwrap();
        adamw_step(&mut p, &scalar(0.0), &mut st).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut st = AdamWState::new(&p, cfg(0.01, 0.0)).unwrap();
        adamw_step(&mut p, &scalar(0.5), &mut st).unwrap();
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p.tensors()[0].get(0, 0) - expected).abs() < 1e-15);
        assert!((p.tensors()[0].get(0, 0) - 0.99).abs() < 1e-9);
    }

    #[test]
    fn decay_only_step() {
        let mut p = scalar(1.0);
        let mut st = AdamWState::new(&p, cfg(0.01, 0.1)).unwrap();
        adamw_step(&mut p, &scalar(0.0), &mut st).unwrap();
        assert!((p.tensors()[0].get(0, 0) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = scalar(-3.25);
        let mut st = AdamWState::new(&p, cfg(0.0, 0.01)).unwrap();
        for g in [1.0, -7.0, 0.3] {
            adamw_step(&mut p, &scalar(g), &mut st).unwrap();
        }
        assert_eq!(p.tensors()[0].data(), &[-3.25]);
        assert!(st.v.tensors()[0].get(0, 0) >= 0.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(1.0);
        let mut st = AdamWState::new(&p, cfg(0.01, 0.0)).unwrap();
        let mut g = scalar(0.0);
        g.tensors_mut()[0].data_mut()[0] = f64::NAN;
        assert!(matches!(adamw_step(&mut p, &g, &mut st), Err(Error::NonFinite(_))));
        assert_eq!(st.t, 0);
        assert_eq!(p.tensors()[0].data(), &[1.0]);
    }
}
