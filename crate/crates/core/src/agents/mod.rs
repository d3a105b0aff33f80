//! Dialog-conditioned waypoint policies: tokenization, the multimodal
//! transformer and LSTM networks, a scripted oracle and the training loop.

mod lstm_net;
mod model;
mod oracle;
mod train;
mod transformer;
mod vocab;

pub use lstm_net::LstmNet;
pub use model::{
    build_network, embed_inputs, head_loss, zero_heads, Features, HeadGrads, HeadLoss, HeadOutputs, HeadTarget,
    LossWeights,
    ModelConfig, Network, NetworkCache, StepFeatures,
};
pub use oracle::{oracle_output, OraclePolicy};
pub use train::{
    batch_loss, dataset_loss, initial_checkpoint, train, train_with_progress, training_samples, LossRecord, Sample,
    TrainConfig, TrainOutcome,
};
pub use transformer::{positional_encoding, TransformerNet};
pub use vocab::{tokenize_dialog, TokenSequence, Vocabulary, INS, OOV, QUE};

use serde::{Deserialize, Serialize};

use crate::dataset::{rasterize_observation, AttentionMask, DialogRound, Episode, Observation};
use crate::error::{Error, Result};
use crate::geometry::{view_to_world_delta, ViewArea};
use crate::nn::{AgentKind, Checkpoint};

/// Everything a policy sees at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub tokens: TokenSequence,
    /// One observation per step so far; each carries the heading it was taken at.
    pub history: Vec<Observation>,
    pub step_index: usize,
    pub current_view: ViewArea,
}

impl AgentState {
    pub fn new(tokens: TokenSequence, history: Vec<Observation>, current_view: ViewArea) -> Result<Self> {
        let Some(first) = history.first() else {
            return Err(Error::Invalid("agent history must hold at least one observation".into()));
        };
        if history.iter().any(|o| o.size != first.size) {
            return Err(Error::Shape("observations in one history must share a size".into()));
        }
        Ok(Self {
            tokens,
            step_index: history.len() - 1,
            history,
            current_view,
        })
    }

    /// State after flying `views` (start first) with the first
    /// `min(step + 1, rounds)` dialog rounds revealed.
    pub fn from_views(
        episode: &Episode,
        dialog: &[DialogRound],
        views: &[ViewArea],
        vocab: &Vocabulary,
        resolution: usize,
    ) -> Result<Self> {
        let map = episode.map();
        let history = views
            .iter()
            .map(|v| rasterize_observation(&map, v, resolution))
            .collect::<Result<Vec<_>>>()?;
        let step = views.len().saturating_sub(1);
        let visible = (step + 1).min(dialog.len());
        let tokens = vocab.tokenize_dialog(&dialog[..visible]);
        let current = *views
            .last()
            .ok_or_else(|| Error::Invalid("no views to build a state from".into()))?;
        Self::new(tokens, history, current)
    }
}

/// One step's decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub next_center: (f64, f64),
    pub next_rotation: f64,
    pub stop_prob: f64,
    pub attention: AttentionMask,
}

impl AgentOutput {
    pub fn validate(&self) -> Result<()> {
        if !(self.next_center.0.is_finite() && self.next_center.1.is_finite() && self.next_rotation.is_finite()) {
            return Err(Error::NonFinite("agent output position".into()));
        }
        if !(0.0..=1.0).contains(&self.stop_prob) {
            return Err(Error::Invalid(format!("stop_prob {} outside [0, 1]", self.stop_prob)));
        }
        Ok(())
    }

    /// Output for a view-frame waypoint delta `(right, forward)`. The new yaw
    /// faces the movement; a zero move keeps the current yaw.
    pub fn from_view_delta(view: &ViewArea, delta: (f64, f64), stop_prob: f64, attention: AttentionMask) -> Self {
        let (dx, dy) = view_to_world_delta(view.rotation, delta.0, delta.1);
        Self::from_world_delta(view, (dx, dy), stop_prob, attention)
    }

    pub fn from_world_delta(view: &ViewArea, delta: (f64, f64), stop_prob: f64, attention: AttentionMask) -> Self {
        let (dx, dy) = delta;
        let next_rotation = if dx.hypot(dy) > 1e-9 {
            crate::geometry::normalize_angle(dy.atan2(dx))
        } else {
            view.rotation
        };
        Self {
            next_center: (view.center_x + dx, view.center_y + dy),
            next_rotation,
            stop_prob,
            attention,
        }
    }
}

pub trait Policy: Send + Sync {
    fn act(&self, state: &AgentState) -> Result<AgentOutput>;

    /// Observation raster resolution the policy expects.
    fn resolution(&self) -> usize;

    fn patch_grid(&self) -> usize;
}

/// A trained network bound to its parameters.
#[derive(Debug, Clone)]
pub struct NetworkPolicy {
    kind: AgentKind,
    net: Network,
    checkpoint: Checkpoint,
}

impl NetworkPolicy {
    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(&checkpoint.config)
            .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        let net = model::network_for(checkpoint.kind, &cfg, checkpoint.params())?;
        Ok(Self {
            kind: checkpoint.kind,
            net,
            checkpoint,
        })
    }

    /// Like [`NetworkPolicy::from_checkpoint`] but rejects other kinds.
    pub fn expecting(kind: AgentKind, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, got {}",
                checkpoint.kind
            )));
        }
        Self::from_checkpoint(checkpoint)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }
}

impl Policy for NetworkPolicy {
    fn act(&self, state: &AgentState) -> Result<AgentOutput> {
        let features = Features::from_state(state, self.net.config())?;
        let (out, _) = self.net.forward(self.checkpoint.params(), &features)?;
        Ok(out.to_output(&state.current_view, self.net.config()))
    }

    fn resolution(&self) -> usize {
        self.net.config().resolution
    }

    fn patch_grid(&self) -> usize {
        self.net.config().patch_grid
    }
}

pub fn transformer_policy(state: &AgentState, checkpoint: &Checkpoint) -> Result<AgentOutput> {
    NetworkPolicy::expecting(AgentKind::Transformer, checkpoint.clone())?.act(state)
}

pub fn lstm_policy(state: &AgentState, checkpoint: &Checkpoint) -> Result<AgentOutput> {
    NetworkPolicy::expecting(AgentKind::Lstm, checkpoint.clone())?.act(state)
}
