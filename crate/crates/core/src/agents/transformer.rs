//! Multimodal transformer: language tokens, then per step one direction token
//! and `P²` patch tokens, through post-norm encoder blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Features, HeadGrads, HeadOutputs, ModelConfig};
use super::AgentState;
use crate::error::{Error, Result};
use crate::nn::layers::{FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Linear};
use crate::nn::{AttentionCache, MultiHeadAttention, ParamId, ParamSet, Tensor2};

pub const TYPE_LANGUAGE: usize = 0;
pub const TYPE_DIRECTION: usize = 1;
pub const TYPE_PATCH: usize = 2;

const HEAD_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct Block {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

struct BlockCache {
    attn: AttentionCache,
    ln1: LayerNormCache,
    ff: FeedForwardCache,
    ln2: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct TransformerNet {
    pub cfg: ModelConfig,
    tok_embed: ParamId,
    type_embed: ParamId,
    dir_proj: Linear,
    patch_proj: Linear,
    blocks: Vec<Block>,
    head_waypoint: Linear,
    head_stop: Linear,
    head_attention: Linear,
}

pub struct TransformerCache {
    layout: Layout,
    tokens: Vec<usize>,
    dir_in: Tensor2,
    patch_in: Tensor2,
    blocks: Vec<BlockCache>,
    out: Tensor2,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    tokens: usize,
    steps: usize,
    patches: usize,
}

impl Layout {
    fn rows(&self) -> usize {
        self.tokens + self.steps * (1 + self.patches)
    }

    fn dir_row(&self, step: usize) -> usize {
        self.tokens + step * (1 + self.patches)
    }
}

/// Fixed sinusoidal position code.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            if j % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

impl TransformerNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamSet)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = cfg.d_model;
        let tok_embed = ps.add_xavier("tok_embed", cfg.vocab_size, d, 1.0, &mut rng);
        let type_embed = ps.add_xavier("type_embed", 3, d, 1.0, &mut rng);
        let dir_proj = Linear::new(&mut ps, "dir_proj", 2, d, true, 1.0, &mut rng);
        let patch_proj = Linear::new(&mut ps, "patch_proj", cfg.patch_pixels(), d, true, 1.0, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            blocks.push(Block {
                attn: MultiHeadAttention::new(&mut ps, &format!("layer{l}.attn"), d, cfg.n_heads, 1.0, &mut rng)?,
                ln1: LayerNorm::new(&mut ps, &format!("layer{l}.ln1"), d),
                ff: FeedForward::new(&mut ps, &format!("layer{l}.ff"), d, cfg.ff_hidden, 1.0, &mut rng),
                ln2: LayerNorm::new(&mut ps, &format!("layer{l}.ln2"), d),
            });
        }
        let head_waypoint = Linear::new(&mut ps, "head.waypoint", d, 2, true, HEAD_GAIN, &mut rng);
        let head_stop = Linear::new(&mut ps, "head.stop", d, 1, true, HEAD_GAIN, &mut rng);
        let head_attention = Linear::new(&mut ps, "head.attention", d, 1, true, HEAD_GAIN, &mut rng);
        Ok((
            Self {
                cfg,
                tok_embed,
                type_embed,
                dir_proj,
                patch_proj,
                blocks,
                head_waypoint,
                head_stop,
                head_attention,
            },
            ps,
        ))
    }

    fn layout(&self, f: &Features) -> Layout {
        Layout {
            tokens: f.tokens.len(),
            steps: f.steps.len(),
            patches: self.cfg.patches(),
        }
    }

    fn check(&self, f: &Features) -> Result<()> {
        if f.steps.is_empty() {
            return Err(Error::Invalid("no steps to embed".into()));
        }
        for s in &f.steps {
            if s.patches.len() != self.cfg.patches() || s.patches.iter().any(|p| p.len() != self.cfg.patch_pixels()) {
                return Err(Error::Shape(format!(
                    "expected {} patches of {} pixels",
                    self.cfg.patches(),
                    self.cfg.patch_pixels()
                )));
            }
        }
        if let Some(&t) = f.tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Shape(format!("token id {t} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    /// Input sequence plus the raw direction and patch matrices.
    fn embed(&self, ps: &ParamSet, f: &Features) -> Result<(Tensor2, Tensor2, Tensor2)> {
        self.check(f)?;
        let lay = self.layout(f);
        let d = self.cfg.d_model;
        let dirs: Vec<f64> = f.steps.iter().flat_map(|s| [s.direction.0, s.direction.1]).collect();
        let dir_in = Tensor2::from_vec(lay.steps, 2, dirs)?;
        let pix: Vec<f64> = f.steps.iter().flat_map(|s| s.patches.iter().flatten().copied()).collect();
        let patch_in = Tensor2::from_vec(lay.steps * lay.patches, self.cfg.patch_pixels(), pix)?;
        let dir_emb = self.dir_proj.forward(ps, &dir_in);
        let patch_emb = self.patch_proj.forward(ps, &patch_in);
        let tok = ps.get(self.tok_embed);
        let types = ps.get(self.type_embed);

        let mut x = Tensor2::zeros(lay.rows(), d);
        let mut fill = |row: usize, src: &[f64], kind: usize| {
            let pe = positional_encoding(row, d);
            for (j, v) in x.row_mut(row).iter_mut().enumerate() {
                *v = src[j] + types.get(kind, j) + pe[j];
            }
        };
        for (i, &t) in f.tokens.iter().enumerate() {
            fill(i, tok.row(t), TYPE_LANGUAGE);
        }
        for s in 0..lay.steps {
            let r = lay.dir_row(s);
            fill(r, dir_emb.row(s), TYPE_DIRECTION);
            for k in 0..lay.patches {
                fill(r + 1 + k, patch_emb.row(s * lay.patches + k), TYPE_PATCH);
            }
        }
        Ok((x, dir_in, patch_in))
    }

    pub fn forward(&self, ps: &ParamSet, f: &Features) -> Result<(HeadOutputs, TransformerCache)> {
        let (mut x, dir_in, patch_in) = self.embed(ps, f)?;
        let lay = self.layout(f);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (a, attn) = b.attn.forward(ps, &x, false)?;
            let (h, ln1) = b.ln1.forward(ps, &x.add(&a));
            let (m, ff) = b.ff.forward(ps, &h);
            let (y, ln2) = b.ln2.forward(ps, &h.add(&m));
            caches.push(BlockCache { attn, ln1, ff, ln2 });
            x = y;
        }
        let r = lay.dir_row(lay.steps - 1);
        let dir_tok = Tensor2::row_vector(x.row(r));
        let wp = self.head_waypoint.forward(ps, &dir_tok);
        let stop = self.head_stop.forward(ps, &dir_tok);
        let patch_rows = x.rows_range(r + 1, lay.patches);
        let att = self.head_attention.forward(ps, &patch_rows);
        let out = HeadOutputs {
            waypoint: [wp.get(0, 0), wp.get(0, 1)],
            stop_logit: stop.get(0, 0),
            attention_logits: att.data().to_vec(),
        };
        Ok((
            out,
            TransformerCache {
                layout: lay,
                tokens: f.tokens.clone(),
                dir_in,
                patch_in,
                blocks: caches,
                out: x,
            },
        ))
    }

    pub fn backward(&self, ps: &ParamSet, cache: &TransformerCache, g: &HeadGrads, grads: &mut ParamSet) {
        let lay = cache.layout;
        let d = self.cfg.d_model;
        let r = lay.dir_row(lay.steps - 1);
        let dir_tok = Tensor2::row_vector(cache.out.row(r));
        let mut dx = Tensor2::zeros(lay.rows(), d);
        let dwp = Tensor2::row_vector(&g.waypoint);
        let mut ddir = self.head_waypoint.backward(ps, &dir_tok, &dwp, grads);
        ddir.add_assign(&self.head_stop.backward(ps, &dir_tok, &Tensor2::row_vector(&[g.stop_logit]), grads));
        for (v, dv) in dx.row_mut(r).iter_mut().zip(ddir.row(0)) {
            *v += dv;
        }
        let patch_rows = cache.out.rows_range(r + 1, lay.patches);
        let datt = Tensor2::from_vec(lay.patches, 1, g.attention_logits.clone()).expect("attention grads");
        let dpatch = self.head_attention.backward(ps, &patch_rows, &datt, grads);
        for k in 0..lay.patches {
            for (v, dv) in dx.row_mut(r + 1 + k).iter_mut().zip(dpatch.row(k)) {
                *v += dv;
            }
        }

        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let dr2 = b.ln2.backward(ps, &c.ln2, &dx, grads);
            let mut dh = b.ff.backward(ps, &c.ff, &dr2, grads);
            dh.add_assign(&dr2);
            let dr1 = b.ln1.backward(ps, &c.ln1, &dh, grads);
            let mut dxi = b.attn.backward(ps, &c.attn, &dr1, grads);
            dxi.add_assign(&dr1);
            dx = dxi;
        }

        // embeddings
        let mut ddir_emb = Tensor2::zeros(lay.steps, d);
        let mut dpatch_emb = Tensor2::zeros(lay.steps * lay.patches, d);
        {
            let gt = grads.get_mut(self.type_embed);
            for row in 0..lay.rows() {
                let kind = if row < lay.tokens {
                    TYPE_LANGUAGE
                } else if (row - lay.tokens).is_multiple_of(1 + lay.patches) {
                    TYPE_DIRECTION
                } else {
                    TYPE_PATCH
                };
                for (v, dv) in gt.row_mut(kind).iter_mut().zip(dx.row(row)) {
                    *v += dv;
                }
            }
        }
        for s in 0..lay.steps {
            let rr = lay.dir_row(s);
            ddir_emb.row_mut(s).copy_from_slice(dx.row(rr));
            for k in 0..lay.patches {
                dpatch_emb.row_mut(s * lay.patches + k).copy_from_slice(dx.row(rr + 1 + k));
            }
        }
        self.dir_proj.backward(ps, &cache.dir_in, &ddir_emb, grads);
        self.patch_proj.backward(ps, &cache.patch_in, &dpatch_emb, grads);
        let gtok = grads.get_mut(self.tok_embed);
        for row in 0..lay.tokens {
            let t = cache.tokens[row];
            for (v, dv) in gtok.row_mut(t).iter_mut().zip(dx.row(row)) {
                *v += dv;
            }
        }
    }
}

/// Input sequence (`T × d_model`) for a state, `T = tokens + steps·(1 + P²)`.
pub fn embed_inputs(state: &AgentState, net: &TransformerNet, ps: &ParamSet) -> Result<Tensor2> {
    let f = Features::from_state(state, &net.cfg)?;
    net.embed(ps, &f).map(|(x, _, _)| x)
}
