//! Recurrent policy: language tokens first, then one `(direction, pooled
//! patches)` input per step, through a single LSTM cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Features, HeadGrads, HeadOutputs, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::{LstmCell, LstmStepCache, ParamId, ParamSet, Tensor2};

const HEAD_GAIN: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct LstmNet {
    pub cfg: ModelConfig,
    tok_embed: ParamId,
    step_proj: Linear,
    cell: LstmCell,
    head_waypoint: Linear,
    head_stop: Linear,
    head_attention: Linear,
}

enum Input {
    Token(usize),
    Step(Tensor2),
}

pub struct LstmCache {
    inputs: Vec<Input>,
    steps: Vec<LstmStepCache>,
    h: Tensor2,
}

impl LstmNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> (Self, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let e = cfg.lstm_hidden;
        let tok_embed = ps.add_xavier("tok_embed", cfg.vocab_size, e, 1.0, &mut rng);
        let step_proj = Linear::new(&mut ps, "step_proj", 2 + cfg.patches(), e, true, 1.0, &mut rng);
        let cell = LstmCell::new(&mut ps, "lstm", e, cfg.lstm_hidden, &mut rng);
        let head_waypoint = Linear::new(&mut ps, "head.waypoint", cfg.lstm_hidden, 2, true, HEAD_GAIN, &mut rng);
        let head_stop = Linear::new(&mut ps, "head.stop", cfg.lstm_hidden, 1, true, HEAD_GAIN, &mut rng);
        let head_attention = Linear::new(
            &mut ps,
            "head.attention",
            cfg.lstm_hidden,
            cfg.patches(),
            true,
            HEAD_GAIN,
            &mut rng,
        );
        (
            Self {
                cfg,
                tok_embed,
                step_proj,
                cell,
                head_waypoint,
                head_stop,
                head_attention,
            },
            ps,
        )
    }

    pub fn forward(&self, ps: &ParamSet, f: &Features) -> Result<(HeadOutputs, LstmCache)> {
        if f.steps.is_empty() {
            return Err(Error::Invalid("no steps to encode".into()));
        }
        let hid = self.cfg.lstm_hidden;
        let mut inputs = Vec::with_capacity(f.tokens.len() + f.steps.len());
        for &t in &f.tokens {
            if t >= self.cfg.vocab_size {
                return Err(Error::Shape(format!("token id {t} outside vocabulary of {}", self.cfg.vocab_size)));
            }
            inputs.push(Input::Token(t));
        }
        for s in &f.steps {
            if s.pooled.len() != self.cfg.patches() {
                return Err(Error::Shape(format!(
                    "pooled observation has {} cells, expected {}",
                    s.pooled.len(),
                    self.cfg.patches()
                )));
            }
            let mut v = vec![s.direction.0, s.direction.1];
            v.extend_from_slice(&s.pooled);
            inputs.push(Input::Step(Tensor2::row_vector(&v)));
        }
        let mut h = Tensor2::zeros(1, hid);
        let mut c = Tensor2::zeros(1, hid);
        let mut steps = Vec::with_capacity(inputs.len());
        for input in &inputs {
            let x = match input {
                Input::Token(t) => Tensor2::row_vector(ps.get(self.tok_embed).row(*t)),
                Input::Step(raw) => self.step_proj.forward(ps, raw),
            };
            let (h1, c1, cache) = self.cell.forward(ps, &x, &h, &c)?;
            h = h1;
            c = c1;
            steps.push(cache);
        }
        let wp = self.head_waypoint.forward(ps, &h);
        let stop = self.head_stop.forward(ps, &h);
        let att = self.head_attention.forward(ps, &h);
        Ok((
            HeadOutputs {
                waypoint: [wp.get(0, 0), wp.get(0, 1)],
                stop_logit: stop.get(0, 0),
                attention_logits: att.data().to_vec(),
            },
            LstmCache { inputs, steps, h },
        ))
    }

    pub fn backward(&self, ps: &ParamSet, cache: &LstmCache, g: &HeadGrads, grads: &mut ParamSet) {
        let hid = self.cfg.lstm_hidden;
        let mut dh = self
            .head_waypoint
            .backward(ps, &cache.h, &Tensor2::row_vector(&g.waypoint), grads);
        dh.add_assign(&self.head_stop.backward(ps, &cache.h, &Tensor2::row_vector(&[g.stop_logit]), grads));
        dh.add_assign(&self.head_attention.backward(ps, &cache.h, &Tensor2::row_vector(&g.attention_logits), grads));
        let mut dc = Tensor2::zeros(1, hid);
        for (input, step) in cache.inputs.iter().zip(&cache.steps).rev() {
            let (dx, dh_prev, dc_prev) = self.cell.backward(ps, step, &dh, &dc, grads);
            match input {
                Input::Token(t) => {
                    let gt = grads.get_mut(self.tok_embed);
                    for (v, d) in gt.row_mut(*t).iter_mut().zip(dx.row(0)) {
                        *v += d;
                    }
                }
                Input::Step(raw) => {
                    self.step_proj.backward(ps, raw, &dx, grads);
                }
            }
            dh = dh_prev;
            dc = dc_prev;
        }
    }
}
