//! Post-layer-norm transformer encoder.
//!
//! Input embedding is the sum of token, segment (always segment id 0) and
//! position tables. Each layer is multi-head self-attention with `[PAD]` keys
//! masked out, then add & norm, then a ReLU feed-forward block, then add & norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::{DropoutRng, Real, Tape, Tensor, Var};
use crate::tokenizer::TokenSequence;

const LN_EPS: f32 = 1e-5;
const SEGMENT_TYPES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub ff_multiplier: usize,
    pub dropout: f32,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 4096,
            hidden: 64,
            layers: 2,
            heads: 4,
            max_positions: 512,
            ff_multiplier: 4,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    /// The 12-layer, 768-wide geometry of the base-size pretrained encoder.
    pub fn base_preset(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 768,
            layers: 12,
            heads: 12,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.layers == 0 || self.vocab_size == 0 || self.ff_multiplier == 0 {
            return bad("layers, vocab_size and ff_multiplier must be positive".into());
        }
        if self.max_positions < 512 {
            return bad(format!("max_positions {} < 512", self.max_positions));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Which encoder parameters receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Embeddings and layers `1..n−1` frozen; the last layer trains.
    #[default]
    AllButLast,
    /// Everything trains.
    None,
}

#[derive(Debug, Clone)]
struct LayerParams {
    q_w: ParamId,
    q_b: ParamId,
    k_w: ParamId,
    k_b: ParamId,
    v_w: ParamId,
    v_b: ParamId,
    o_w: ParamId,
    o_b: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

impl LayerParams {
    fn ids(&self) -> [ParamId; 16] {
        [
            self.q_w, self.q_b, self.k_w, self.k_b, self.v_w, self.v_b, self.o_w, self.o_b,
            self.ln1_g, self.ln1_b, self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b, self.ln2_g,
            self.ln2_b,
        ]
    }
}

/// Per-position outputs `h_1..h_n` and the `[CLS]` row.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub cls: Var,
    pub seq: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    tok_emb: ParamId,
    seg_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerParams>,
}

impl Encoder {
    /// Registers a freshly initialized encoder under `prefix` in `store`.
    pub fn new<R: Rng>(cfg: &EncoderConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden;
        let ff = d * cfg.ff_multiplier;
        let std = cfg.init_std;
        let mut normal = |store: &mut ParamStore, name: String, shape: Vec<usize>| {
            store.add(name, Tensor::randn(shape, std, rng))
        };
        let tok_emb = normal(store, format!("{prefix}.emb.token"), vec![cfg.vocab_size, d]);
        let seg_emb = normal(store, format!("{prefix}.emb.segment"), vec![SEGMENT_TYPES, d]);
        let pos_emb = normal(store, format!("{prefix}.emb.position"), vec![cfg.max_positions, d]);
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut layer_normals = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            layer_normals.push([
                normal(store, format!("{p}.attn.q.w"), vec![d, d]),
                normal(store, format!("{p}.attn.k.w"), vec![d, d]),
                normal(store, format!("{p}.attn.v.w"), vec![d, d]),
                normal(store, format!("{p}.attn.o.w"), vec![d, d]),
                normal(store, format!("{p}.ff1.w"), vec![d, ff]),
                normal(store, format!("{p}.ff2.w"), vec![ff, d]),
            ]);
        }
        let zeros = |store: &mut ParamStore, name: String, n: usize| store.add(name, Tensor::zeros(vec![n]));
        let ones = |store: &mut ParamStore, name: String, n: usize| {
            store.add(name, Tensor::from_vec(vec![1.0; n]))
        };
        let emb_ln_g = ones(store, format!("{prefix}.emb.ln.g"), d);
        let emb_ln_b = zeros(store, format!("{prefix}.emb.ln.b"), d);
        for (l, [q_w, k_w, v_w, o_w, ff1_w, ff2_w]) in layer_normals.into_iter().enumerate() {
            let p = format!("{prefix}.layer{l}");
            layers.push(LayerParams {
                q_w,
                q_b: zeros(store, format!("{p}.attn.q.b"), d),
                k_w,
                k_b: zeros(store, format!("{p}.attn.k.b"), d),
                v_w,
                v_b: zeros(store, format!("{p}.attn.v.b"), d),
                o_w,
                o_b: zeros(store, format!("{p}.attn.o.b"), d),
                ln1_g: ones(store, format!("{p}.ln1.g"), d),
                ln1_b: zeros(store, format!("{p}.ln1.b"), d),
                ff1_w,
                ff1_b: zeros(store, format!("{p}.ff1.b"), ff),
                ff2_w,
                ff2_b: zeros(store, format!("{p}.ff2.b"), d),
                ln2_g: ones(store, format!("{p}.ln2.g"), d),
                ln2_b: zeros(store, format!("{p}.ln2.b"), d),
            });
        }
        Ok(Encoder {
            cfg: cfg.clone(),
            tok_emb,
            seg_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Every parameter id owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok_emb, self.seg_emb, self.pos_emb, self.emb_ln_g, self.emb_ln_b];
        for l in &self.layers {
            ids.extend(l.ids());
        }
        ids
    }

    pub fn last_layer_ids(&self) -> Vec<ParamId> {
        self.layers.last().map(|l| l.ids().to_vec()).unwrap_or_default()
    }

    pub fn first_layer_ids(&self) -> Vec<ParamId> {
        self.layers.first().map(|l| l.ids().to_vec()).unwrap_or_default()
    }

    pub fn set_trainable<T: Real>(&self, store: &mut ParamStore<T>, policy: FreezePolicy) {
        let trainable_all = policy == FreezePolicy::None;
        for id in self.param_ids() {
            store.set_trainable(id, trainable_all);
        }
        for id in self.last_layer_ids() {
            store.set_trainable(id, true);
        }
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::shape("embed", "empty token sequence"));
        }
        if tokens.len() > self.cfg.max_positions {
            return Err(Error::shape(
                "embed",
                format!("{} positions exceed max_positions {}", tokens.len(), self.cfg.max_positions),
            ));
        }
        if let Some(&bad) = tokens.ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::shape("embed", format!("token id {bad} >= vocab size {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    /// Sum of token, segment-0 and position embeddings, `[len × d]`.
    pub fn embed<'a, T: Real>(&self, tape: &mut Tape<'a, T>, binder: &mut Binder<'a, T>, tokens: &TokenSequence) -> Result<Var> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let ids: Vec<usize> = tokens.ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let tok_table = binder.var(tape, self.tok_emb);
        let seg_table = binder.var(tape, self.seg_emb);
        let pos_table = binder.var(tape, self.pos_emb);
        let tok = tape.gather_rows(tok_table, &ids)?;
        let pos = tape.gather_rows(pos_table, &positions)?;
        let seg0 = tape.row(seg_table, 0)?;
        let x = tape.add(tok, pos)?;
        tape.add_bias(x, seg0)
    }

    pub fn encode<'a, T: Real>(
        &self,
        tape: &mut Tape<'a, T>,
        binder: &mut Binder<'a, T>,
        tokens: &TokenSequence,
        training: bool,
        rng: &mut DropoutRng,
    ) -> Result<EncoderOutput> {
        let rate = self.cfg.dropout;
        let key_mask = tokens.mask_bools();
        let x = self.embed(tape, binder, tokens)?;
        let (g, b) = (binder.var(tape, self.emb_ln_g), binder.var(tape, self.emb_ln_b));
        let x = tape.layer_norm(x, g, b, LN_EPS)?;
        let mut x = tape.dropout(x, rate, training, rng)?;
        for layer in &self.layers {
            x = self.layer_forward(tape, binder, layer, x, &key_mask, training, rng)?;
        }
        let cls = tape.row(x, 0)?;
        Ok(EncoderOutput { cls, seq: x })
    }

    fn linear<'a, T: Real>(tape: &mut Tape<'a, T>, binder: &mut Binder<'a, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (binder.var(tape, w), binder.var(tape, b));
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward<'a, T: Real>(
        &self,
        tape: &mut Tape<'a, T>,
        binder: &mut Binder<'a, T>,
        p: &LayerParams,
        x: Var,
        key_mask: &[bool],
        training: bool,
        rng: &mut DropoutRng,
    ) -> Result<Var> {
        let d = self.cfg.hidden;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let rate = self.cfg.dropout;

        let q = Self::linear(tape, binder, x, p.q_w, p.q_b)?;
        let k = Self::linear(tape, binder, x, p.k_w, p.k_b)?;
        let v = Self::linear(tape, binder, x, p.v_w, p.v_b)?;
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt());
            let probs = tape.masked_softmax(scores, Some(key_mask))?;
            contexts.push(tape.matmul(probs, vh)?);
        }
        let ctx = if heads == 1 { contexts[0] } else { tape.concat_cols(&contexts)? };
        let attn = Self::linear(tape, binder, ctx, p.o_w, p.o_b)?;
        let attn = tape.dropout(attn, rate, training, rng)?;
        let x = tape.add(x, attn)?;
        let (g1, b1) = (binder.var(tape, p.ln1_g), binder.var(tape, p.ln1_b));
        let x = tape.layer_norm(x, g1, b1, LN_EPS)?;

        let hidden = Self::linear(tape, binder, x, p.ff1_w, p.ff1_b)?;
        let hidden = tape.relu(hidden);
        let ff = Self::linear(tape, binder, hidden, p.ff2_w, p.ff2_b)?;
        let ff = tape.dropout(ff, rate, training, rng)?;
        let x = tape.add(x, ff)?;
        let (g2, b2) = (binder.var(tape, p.ln2_g), binder.var(tape, p.ln2_b));
        tape.layer_norm(x, g2, b2, LN_EPS)
    }
}
