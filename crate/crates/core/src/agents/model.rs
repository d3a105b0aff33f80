use serde::{Deserialize, Serialize};

use super::{AgentOutput, AgentState, LstmNet, TransformerNet};
use crate::dataset::AttentionMask;
use crate::error::{Error, Result};
use crate::geometry::ViewArea;
use crate::nn::layers::{sigmoid, softplus};
use crate::nn::{AgentKind, ParamSet};

pub use super::transformer::embed_inputs;

/// Network sizes. Stored as JSON in every checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_hidden: usize,
    pub lstm_hidden: usize,
    pub patch_grid: usize,
    pub resolution: usize,
    /// Largest waypoint move in meters; bounds the waypoint head.
    pub step_max: f64,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ff_hidden: 64,
            lstm_hidden: 32,
            patch_grid: 4,
            resolution: 16,
            step_max: 50.0,
            vocab_size: super::Vocabulary::default().len(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("model config: {m}")));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.ff_hidden == 0 || self.lstm_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if self.patch_grid == 0 || self.resolution == 0 || !self.resolution.is_multiple_of(self.patch_grid) {
            return bad("resolution must be a positive multiple of patch_grid");
        }
        if !(self.step_max > 0.0 && self.step_max.is_finite()) {
            return bad("step_max must be positive");
        }
        if self.vocab_size < 3 {
            return bad("vocab_size must cover the reserved tokens");
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.patch_grid * self.patch_grid
    }

    /// Pixels per patch.
    pub fn patch_pixels(&self) -> usize {
        let c = self.resolution / self.patch_grid;
        c * c
    }
}

/// Numeric inputs of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFeatures {
    pub direction: (f64, f64),
    /// Row-major over the patch grid; each entry holds that patch's pixels.
    pub patches: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

/// An [`AgentState`] reduced to what the networks consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub tokens: Vec<usize>,
    pub steps: Vec<StepFeatures>,
}

impl Features {
    pub fn from_state(state: &AgentState, cfg: &ModelConfig) -> Result<Self> {
        let p = cfg.patch_grid;
        let mut steps = Vec::with_capacity(state.history.len());
        for (i, obs) in state.history.iter().enumerate() {
            if obs.size != cfg.resolution {
                return Err(Error::Shape(format!(
                    "observation {i} is {0}x{0}, model expects {1}x{1}",
                    obs.size, cfg.resolution
                )));
            }
            let patches = (0..p * p).map(|k| obs.patch(p, k / p, k % p)).collect();
            steps.push(StepFeatures {
                direction: obs.direction,
                patches,
                pooled: obs.pooled(p),
            });
        }
        if steps.is_empty() {
            return Err(Error::Invalid("state has no observations".into()));
        }
        if let Some(&t) = state.tokens.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {t} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        Ok(Self {
            tokens: state.tokens.tokens.clone(),
            steps,
        })
    }
}

/// Raw head values before the output nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// Pre-tanh waypoint `(right, forward)`.
    pub waypoint: [f64; 2],
    pub stop_logit: f64,
    pub attention_logits: Vec<f64>,
}

impl HeadOutputs {
    /// View-frame move in meters.
    pub fn delta(&self, step_max: f64) -> (f64, f64) {
        (step_max * self.waypoint[0].tanh(), step_max * self.waypoint[1].tanh())
    }

    pub fn to_output(&self, view: &ViewArea, cfg: &ModelConfig) -> AgentOutput {
        let grid = self.attention_logits.iter().map(|&z| sigmoid(z)).collect();
        let attention = AttentionMask::new(cfg.patch_grid, grid).expect("sigmoid mask");
        AgentOutput::from_view_delta(view, self.delta(cfg.step_max), sigmoid(self.stop_logit), attention)
    }
}

/// Gradient of the loss with respect to [`HeadOutputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub waypoint: [f64; 2],
    pub stop_logit: f64,
    pub attention_logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub waypoint: f64,
    pub stop: f64,
    pub attention: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            waypoint: 1.0,
            stop: 0.5,
            attention: 0.5,
        }
    }
}

/// Supervision for one prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTarget {
    /// View-frame move in meters.
    pub delta: (f64, f64),
    pub stop: f64,
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadLoss {
    pub total: f64,
    pub waypoint: f64,
    pub stop: f64,
    pub attention: f64,
}

/// `w₁·MSE(Δ/W) + w₂·BCE(stop) + w₃·mean BCE(attention)` and its gradient.
pub fn head_loss(
    out: &HeadOutputs,
    target: &HeadTarget,
    weights: &LossWeights,
    world_side: f64,
    step_max: f64,
) -> (HeadLoss, HeadGrads) {
    let goal = [target.delta.0, target.delta.1];
    let mut wp_loss = 0.0;
    let mut d_wp = [0.0; 2];
    for k in 0..2 {
        let t = out.waypoint[k].tanh();
        let err = (step_max * t - goal[k]) / world_side;
        wp_loss += 0.5 * err * err;
        d_wp[k] = weights.waypoint * err / world_side * step_max * (1.0 - t * t);
    }
    let z = out.stop_logit;
    let stop_loss = softplus(z) - target.stop * z;
    let d_stop = weights.stop * (sigmoid(z) - target.stop);
    let n = out.attention_logits.len() as f64;
    let mut att_loss = 0.0;
    let mut d_att = Vec::with_capacity(out.attention_logits.len());
    for (&z, &y) in out.attention_logits.iter().zip(&target.attention) {
        att_loss += (softplus(z) - y * z) / n;
        d_att.push(weights.attention * (sigmoid(z) - y) / n);
    }
    let total = weights.waypoint * wp_loss + weights.stop * stop_loss + weights.attention * att_loss;
    (
        HeadLoss {
            total,
            waypoint: wp_loss,
            stop: stop_loss,
            attention: att_loss,
        },
        HeadGrads {
            waypoint: d_wp,
            stop_logit: d_stop,
            attention_logits: d_att,
        },
    )
}

#[derive(Debug, Clone)]
pub enum Network {
    Transformer(TransformerNet),
    Lstm(LstmNet),
}

pub enum NetworkCache {
    Transformer(super::transformer::TransformerCache),
    Lstm(super::lstm_net::LstmCache),
}

impl Network {
    pub fn kind(&self) -> AgentKind {
        match self {
            Network::Transformer(_) => AgentKind::Transformer,
            Network::Lstm(_) => AgentKind::Lstm,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Network::Transformer(n) => &n.cfg,
            Network::Lstm(n) => &n.cfg,
        }
    }

    pub fn forward(&self, ps: &ParamSet, f: &Features) -> Result<(HeadOutputs, NetworkCache)> {
        match self {
            Network::Transformer(n) => n.forward(ps, f).map(|(o, c)| (o, NetworkCache::Transformer(c))),
            Network::Lstm(n) => n.forward(ps, f).map(|(o, c)| (o, NetworkCache::Lstm(c))),
        }
    }

    pub fn backward(&self, ps: &ParamSet, cache: &NetworkCache, g: &HeadGrads, grads: &mut ParamSet) {
        match (self, cache) {
            (Network::Transformer(n), NetworkCache::Transformer(c)) => n.backward(ps, c, g, grads),
            (Network::Lstm(n), NetworkCache::Lstm(c)) => n.backward(ps, c, g, grads),
            _ => panic!("cache does not belong to this network"),
        }
    }
}

/// Fresh network and its seeded initial parameters.
pub fn build_network(kind: AgentKind, cfg: &ModelConfig, seed: u64) -> Result<(Network, ParamSet)> {
    cfg.validate()?;
    Ok(match kind {
        AgentKind::Transformer => {
            let (n, ps) = TransformerNet::new(cfg.clone(), seed)?;
            (Network::Transformer(n), ps)
        }
        AgentKind::Lstm => {
            let (n, ps) = LstmNet::new(cfg.clone(), seed);
            (Network::Lstm(n), ps)
        }
    })
}

/// Network whose layout matches `params`.
pub(crate) fn network_for(kind: AgentKind, cfg: &ModelConfig, params: &ParamSet) -> Result<Network> {
    let (net, layout) = build_network(kind, cfg, 0)?;
    if !layout.same_layout(params) {
        return Err(Error::Checkpoint(format!(
            "parameters do not match the {kind} layout for the stored config"
        )));
    }
    Ok(net)
}

/// Sets every output-head parameter to zero.
pub fn zero_heads(ps: &mut ParamSet) {
    let ids: Vec<_> = ps
        .iter()
        .filter(|(name, _)| name.starts_with("head."))
        .map(|(name, _)| ps.id_of(name).expect("listed name"))
        .collect();
    for id in ids {
        ps.get_mut(id).scale(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_loss_gradient_matches_difference() {
        let out = HeadOutputs {
            waypoint: [0.3, -1.1],
            stop_logit: 0.7,
            attention_logits: vec![-2.0, 0.0, 1.5, 0.2],
        };
        let target = HeadTarget {
            delta: (10.0, -30.0),
            stop: 1.0,
            attention: vec![0.0, 1.0, 1.0, 0.0],
        };
        let w = LossWeights::default();
        let (_, g) = head_loss(&out, &target, &w, 300.0, 50.0);
        let f = |o: &HeadOutputs| head_loss(o, &target, &w, 300.0, 50.0).0.total;
        let h = 1e-6;
        for k in 0..2 {
            let mut a = out.clone();
            let mut b = out.clone();
            a.waypoint[k] += h;
            b.waypoint[k] -= h;
            assert!(((f(&a) - f(&b)) / (2.0 * h) - g.waypoint[k]).abs() < 1e-9);
        }
        let mut a = out.clone();
        let mut b = out.clone();
        a.stop_logit += h;
        b.stop_logit -= h;
        assert!(((f(&a) - f(&b)) / (2.0 * h) - g.stop_logit).abs() < 1e-9);
        for k in 0..4 {
            let mut a = out.clone();
            let mut b = out.clone();
            a.attention_logits[k] += h;
            b.attention_logits[k] -= h;
            assert!(((f(&a) - f(&b)) / (2.0 * h) - g.attention_logits[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_logits_loss() {
        let out = HeadOutputs {
            waypoint: [0.0, 0.0],
            stop_logit: 0.0,
            attention_logits: vec![0.0; 4],
        };
        let target = HeadTarget {
            delta: (0.0, 30.0),
            stop: 0.0,
            attention: vec![1.0, 0.0, 1.0, 0.0],
        };
        let (l, _) = head_loss(&out, &target, &LossWeights::default(), 300.0, 50.0);
        let ln2 = 2f64.ln();
        assert!((l.waypoint - 0.5 * 0.01).abs() < 1e-15);
        assert!((l.stop - ln2).abs() < 1e-15);
        assert!((l.attention - ln2).abs() < 1e-15);
        assert!((l.total - (0.005 + 0.5 * ln2 + 0.5 * ln2)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            resolution: 15,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
