//! Teacher-forced supervised training over ground-truth prefixes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{build_network, head_loss, Features, HeadLoss, HeadTarget, LossWeights, ModelConfig, Network};
use super::{AgentState, Vocabulary};
use crate::dataset::{augment, AugmentConfig, Episode};
use crate::error::{Error, Result};
use crate::geometry::world_to_view_delta;
use crate::nn::{adamw_step, AdamWConfig, AdamWState, AgentKind, Checkpoint, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub total_iterations: u64,
    /// Iterations at which a checkpoint is emitted; empty means only the last.
    pub checkpoint_iterations: Vec<u64>,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr: 1e-5,
            weight_decay: 0.01,
            total_iterations: 0,
            checkpoint_iterations: Vec::new(),
            loss_weights: LossWeights::default(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if self.checkpoint_iterations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("checkpoint iterations must be strictly ascending".into()));
        }
        if let Some(&last) = self.checkpoint_iterations.last() {
            if last > self.total_iterations {
                return Err(Error::Invalid(format!(
                    "checkpoint iteration {last} exceeds total iterations {}",
                    self.total_iterations
                )));
            }
        }
        self.adamw().validate()
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    fn marks(&self) -> Vec<u64> {
        if self.checkpoint_iterations.is_empty() {
            vec![self.total_iterations]
        } else {
            self.checkpoint_iterations.clone()
        }
    }
}

/// One ground-truth prefix and what the policy should do next.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub episode_id: String,
    pub state: AgentState,
    pub target: HeadTarget,
    pub world_side: f64,
}

/// Every prefix of every demonstration. The last view of a demonstration is
/// labeled stop with a zero move.
pub fn training_samples(episodes: &[Episode], cfg: &ModelConfig, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for ep in episodes {
        let views = ep.gt_trajectory.views();
        for s in 0..views.len() {
            let state = AgentState::from_views(ep, &ep.dialog, &views[..=s], vocab, cfg.resolution)?;
            let (delta, stop) = match views.get(s + 1) {
                Some(next) => (
                    world_to_view_delta(
                        views[s].rotation,
                        next.center_x - views[s].center_x,
                        next.center_y - views[s].center_y,
                    ),
                    0.0,
                ),
                None => ((0.0, 0.0), 1.0),
            };
            let mask = &ep.gt_attention[s];
            if mask.size() != cfg.patch_grid {
                return Err(Error::Shape(format!(
                    "episode {} has {}x{} attention masks, model expects {}",
                    ep.id,
                    mask.size(),
                    mask.size(),
                    cfg.patch_grid
                )));
            }
            out.push(Sample {
                episode_id: ep.id.clone(),
                state,
                target: HeadTarget {
                    delta,
                    stop,
                    attention: mask.values().to_vec(),
                },
                world_side: ep.world_side,
            });
        }
    }
    Ok(out)
}

/// Mean loss over `batch` and its gradient.
pub fn batch_loss(
    net: &Network,
    ps: &ParamSet,
    batch: &[(Features, HeadTarget, f64)],
    weights: &LossWeights,
) -> Result<(HeadLoss, ParamSet)> {
    let mut grads = ps.zeros_like();
    let mut total = HeadLoss::default();
    let n = batch.len() as f64;
    for (features, target, world_side) in batch {
        let (out, cache) = net.forward(ps, features)?;
        let (loss, mut g) = head_loss(&out, target, weights, *world_side, net.config().step_max);
        g.waypoint.iter_mut().for_each(|v| *v /= n);
        g.stop_logit /= n;
        g.attention_logits.iter_mut().for_each(|v| *v /= n);
        net.backward(ps, &cache, &g, &mut grads);
        total.total += loss.total / n;
        total.waypoint += loss.waypoint / n;
        total.stop += loss.stop / n;
        total.attention += loss.attention / n;
    }
    Ok((total, grads))
}

fn unaugmented(samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<(Features, HeadTarget, f64)>> {
    samples
        .iter()
        .map(|s| Ok((Features::from_state(&s.state, cfg)?, s.target.clone(), s.world_side)))
        .collect()
}

/// Mean loss over all samples without augmentation.
pub fn dataset_loss(net: &Network, ps: &ParamSet, samples: &[Sample], weights: &LossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let mut sum = 0.0;
    for (features, target, world_side) in unaugmented(samples, net.config())? {
        let (out, _) = net.forward(ps, &features)?;
        sum += head_loss(&out, &target, weights, world_side, net.config().step_max).0.total;
    }
    Ok(sum / samples.len() as f64)
}

/// Augments the newest observation along with its targets.
fn augmented(sample: &Sample, aug: &AugmentConfig, cfg: &ModelConfig, seed: u64) -> Result<(Features, HeadTarget, f64)> {
    let mut state = sample.state.clone();
    let mask = crate::dataset::AttentionMask::new(cfg.patch_grid, sample.target.attention.clone())?;
    let last = state.history.last().expect("non-empty history").clone();
    let (obs, mask, delta) = augment(&last, &mask, sample.target.delta, aug, seed);
    *state.history.last_mut().expect("non-empty history") = obs;
    let target = HeadTarget {
        delta,
        stop: sample.target.stop,
        attention: mask.values().to_vec(),
    };
    Ok((Features::from_state(&state, cfg)?, target, sample.world_side))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    /// Full-split losses at iteration 0 and at every checkpoint.
    pub log: Vec<LossRecord>,
}

pub fn initial_checkpoint(kind: AgentKind, model: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    let (_, ps) = build_network(kind, model, seed)?;
    Checkpoint::new(kind, 0, seed, serde_json::to_string(model)?, ps)
}

/// Trains a fresh network seeded by `cfg.seed`. Minibatches are drawn with
/// replacement from all ground-truth prefixes of `train_split`.
pub fn train(
    kind: AgentKind,
    train_split: &[Episode],
    val_split: &[Episode],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(kind, train_split, val_split, model, cfg, &mut |_| {})
}

/// [`train`] with a callback receiving each loss record as it is computed.
pub fn train_with_progress(
    kind: AgentKind,
    train_split: &[Episode],
    val_split: &[Episode],
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let vocab = Vocabulary::default();
    let train_samples = training_samples(train_split, model, &vocab)?;
    let val_samples = training_samples(val_split, model, &vocab)?;
    let (net, mut ps) = build_network(kind, model, cfg.seed)?;
    let mut opt = AdamWState::new(&ps, cfg.adamw())?;
    let config_json = serde_json::to_string(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let marks = cfg.marks();
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut log = Vec::new();
    let mut record = |it: u64, ps: &ParamSet, log: &mut Vec<LossRecord>| -> Result<()> {
        let rec = LossRecord {
            iteration: it,
            train_loss: dataset_loss(&net, ps, &train_samples, &cfg.loss_weights)?,
            val_loss: if val_samples.is_empty() {
                None
            } else {
                Some(dataset_loss(&net, ps, &val_samples, &cfg.loss_weights)?)
            },
        };
        progress(&rec);
        log.push(rec);
        Ok(())
    };

    for it in 0..=cfg.total_iterations {
        let is_mark = marks.contains(&it);
        if it == 0 || is_mark {
            record(it, &ps, &mut log)?;
        }
        if is_mark {
            checkpoints.push(Checkpoint::new(kind, it, cfg.seed, config_json.clone(), ps.clone())?);
        }
        if it == cfg.total_iterations {
            break;
        }
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.gen_range(0..train_samples.len());
                let seed: u64 = rng.gen();
                augmented(&train_samples[idx], &cfg.augment, model, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_loss(&net, &ps, &batch, &cfg.loss_weights)?;
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {}", it + 1)));
        }
        adamw_step(&mut ps, &grads, &mut opt)?;
    }
    Ok(TrainOutcome { checkpoints, log })
}
