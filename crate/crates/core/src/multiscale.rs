//! Multi-scale scoring model.
//!
//! One encoder reads the document-scale input and yields the document
//! representation (its `[CLS]` row) and the token representation (column-wise
//! max over unmasked rows). A second encoder, shared by every segment scale,
//! reads each segment; the segment `[CLS]` vectors run through an LSTM and
//! attention pooling. Each branch has a scalar regression head and the final
//! score is `y_doc_tok + Σ_k y_k`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, EncoderOutput, FreezePolicy};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId, ParamStore};
use crate::tensor::{to_f64, DropoutRng, Real, Tape, Tensor, Var};
use crate::tokenizer::{self, SegmentBatch, TokenSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiScaleConfig {
    /// Segment scales `K`, in evaluation and summation order.
    pub scales: Vec<usize>,
    pub use_doc: bool,
    pub use_tok: bool,
    /// Document-scale content budget `L`.
    pub doc_len: usize,
}

impl Default for MultiScaleConfig {
    fn default() -> Self {
        MultiScaleConfig {
            scales: vec![90, 30, 130, 10],
            use_doc: true,
            use_tok: true,
            doc_len: tokenizer::DOC_LEN,
        }
    }
}

impl MultiScaleConfig {
    /// Checks the scales against a prompt budget `n_p`.
    pub fn validate(&self, n_p: usize) -> Result<()> {
        if !self.use_doc && !self.use_tok && self.scales.is_empty() {
            return Err(Error::InvalidArgument("model has no representation scale".into()));
        }
        if self.doc_len == 0 {
            return Err(Error::InvalidArgument("doc_len must be positive".into()));
        }
        let mut seen = self.scales.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.scales.len() {
            return Err(Error::InvalidArgument(format!("duplicate segment scales in {:?}", self.scales)));
        }
        if let Some(&k) = self.scales.iter().find(|&&k| k == 0 || k > n_p) {
            return Err(Error::InvalidArgument(format!("segment scale {k} outside [1, {n_p}]")));
        }
        Ok(())
    }

    fn doc_tok_width(&self, d: usize) -> usize {
        d * (usize::from(self.use_doc) + usize::from(self.use_tok))
    }
}

/// Per-essay scores in normalized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub y_doc_tok: f64,
    pub per_scale: BTreeMap<usize, f64>,
    pub y_total: f64,
}

impl ScoreBreakdown {
    /// Sums `y_doc_tok` and then each `y_k` in ascending `k`, so the total is
    /// reproducible from the stored parts.
    pub fn from_parts(y_doc_tok: f64, per_scale: BTreeMap<usize, f64>) -> Self {
        let y_total = per_scale.values().fold(y_doc_tok, |acc, y| acc + y);
        ScoreBreakdown {
            y_doc_tok,
            per_scale,
            y_total,
        }
    }
}

/// Tokenized encoder inputs for one essay.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEssay {
    pub doc: TokenSequence,
    pub segments: Vec<SegmentBatch>,
}

#[derive(Debug, Clone)]
struct LstmParams {
    q: [ParamId; 4],
    u: [ParamId; 4],
    b: [ParamId; 4],
}

/// LSTM, attention pooling and regression parameters.
#[derive(Debug, Clone)]
pub struct HeadParams {
    lstm: LstmParams,
    attn_w: ParamId,
    attn_b: ParamId,
    attn_q: ParamId,
    seg_w: ParamId,
    seg_b: ParamId,
    doc_tok: Option<(ParamId, ParamId)>,
}

impl HeadParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.lstm.q.iter().chain(&self.lstm.u).chain(&self.lstm.b).copied().collect();
        ids.extend([self.attn_w, self.attn_b, self.attn_q, self.seg_w, self.seg_b]);
        if let Some((w, b)) = self.doc_tok {
            ids.extend([w, b]);
        }
        ids
    }
}

/// Recorded outputs of one forward pass.
pub struct Forward {
    pub total: Var,
    pub doc_tok: Option<Var>,
    pub per_scale: Vec<(usize, Var)>,
    pub bindings: Vec<Option<Var>>,
}

/// The scoring model. Trained in `f32`; [`MultiScaleModel::cast`] gives an
/// `f64` copy for gradient checking.
#[derive(Debug, Clone)]
pub struct MultiScaleModel<T: Real = f32> {
    enc_cfg: EncoderConfig,
    ms_cfg: MultiScaleConfig,
    freeze: FreezePolicy,
    params: ParamStore<T>,
    doc_encoder: Option<Encoder>,
    seg_encoder: Option<Encoder>,
    head: HeadParams,
}

const GATES: [&str; 4] = ["i", "f", "c", "o"];

impl MultiScaleModel<f32> {
    pub fn new(enc_cfg: EncoderConfig, ms_cfg: MultiScaleConfig, freeze: FreezePolicy, seed: u64) -> Result<Self> {
        enc_cfg.validate()?;
        if ms_cfg.doc_len + 2 > enc_cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "doc_len {} does not fit max_positions {}",
                ms_cfg.doc_len, enc_cfg.max_positions
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let doc_encoder = if ms_cfg.use_doc || ms_cfg.use_tok {
            Some(Encoder::new(&enc_cfg, "doc", &mut params, &mut rng)?)
        } else {
            None
        };
        let seg_encoder = if ms_cfg.scales.is_empty() {
            None
        } else {
            Some(Encoder::new(&enc_cfg, "seg", &mut params, &mut rng)?)
        };

        let d = enc_cfg.hidden;
        let glorot = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f32).sqrt();
        let mut mat = |params: &mut ParamStore, name: String, rows: usize, cols: usize| {
            params.add(name, Tensor::randn(vec![rows, cols], glorot(rows, cols), &mut rng))
        };
        let q = GATES.map(|g| mat(&mut params, format!("head.lstm.q_{g}"), d, d));
        let u = GATES.map(|g| mat(&mut params, format!("head.lstm.u_{g}"), d, d));
        let attn_w = mat(&mut params, "head.attn.w".into(), d, d);
        let attn_q = mat(&mut params, "head.attn.q".into(), d, 1);
        let seg_w = mat(&mut params, "head.seg.w".into(), d, 1);
        let width = ms_cfg.doc_tok_width(d);
        let doc_tok_w = (width > 0).then(|| mat(&mut params, "head.doc_tok.w".into(), width, 1));
        let b = GATES.map(|g| params.add(format!("head.lstm.b_{g}"), Tensor::zeros(vec![d])));
        let attn_b = params.add("head.attn.b", Tensor::zeros(vec![d]));
        let seg_b = params.add("head.seg.b", Tensor::zeros(vec![1]));
        let doc_tok = doc_tok_w.map(|w| (w, params.add("head.doc_tok.b", Tensor::zeros(vec![1]))));

        let mut model = MultiScaleModel {
            enc_cfg,
            ms_cfg,
            freeze,
            params,
            doc_encoder,
            seg_encoder,
            head: HeadParams {
                lstm: LstmParams { q, u, b },
                attn_w,
                attn_b,
                attn_q,
                seg_w,
                seg_b,
                doc_tok,
            },
        };
        model.set_trainable(freeze);
        Ok(model)
    }

    /// Adds Gaussian noise to every head parameter.
    pub fn perturb_head<R: Rng>(&mut self, rng: &mut R, std: f32) {
        for id in self.head.ids() {
            let t = self.params.get_mut(id);
            let noise = Tensor::randn(t.shape().to_vec(), std, rng);
            t.data_mut().iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
        }
    }
}

impl<T: Real> MultiScaleModel<T> {
    /// Same model with parameters converted to another float type.
    pub fn cast<U: Real>(&self) -> MultiScaleModel<U> {
        MultiScaleModel {
            enc_cfg: self.enc_cfg.clone(),
            ms_cfg: self.ms_cfg.clone(),
            freeze: self.freeze,
            params: self.params.cast(),
            doc_encoder: self.doc_encoder.clone(),
            seg_encoder: self.seg_encoder.clone(),
            head: self.head.clone(),
        }
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc_cfg
    }

    pub fn config(&self) -> &MultiScaleConfig {
        &self.ms_cfg
    }

    pub fn freeze_policy(&self) -> FreezePolicy {
        self.freeze
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn doc_encoder(&self) -> Option<&Encoder> {
        self.doc_encoder.as_ref()
    }

    pub fn seg_encoder(&self) -> Option<&Encoder> {
        self.seg_encoder.as_ref()
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    /// Applies a freeze policy to both encoders; head parameters always train.
    pub fn set_trainable(&mut self, policy: FreezePolicy) {
        self.freeze = policy;
        for enc in [&self.doc_encoder, &self.seg_encoder].into_iter().flatten() {
            enc.set_trainable(&mut self.params, policy);
        }
        for id in self.head.ids() {
            self.params.set_trainable(id, true);
        }
    }

    /// Builds the document sequence and one segment batch per scale.
    pub fn prepare(&self, t1: &[u32], n_p: usize, vocab: &Vocabulary) -> Result<PreparedEssay> {
        self.ms_cfg.validate(n_p)?;
        let doc = tokenizer::build_doc_sequence(t1, self.ms_cfg.doc_len, vocab)?;
        let segments = self
            .ms_cfg
            .scales
            .iter()
            .map(|&k| tokenizer::build_segments(t1, n_p, k, vocab))
            .collect::<Result<_>>()?;
        Ok(PreparedEssay { doc, segments })
    }

    /// Document representation: the `[CLS]` output.
    pub fn doc_repr(out: &EncoderOutput) -> Var {
        out.cls
    }

    /// Token representation: column-wise max over unmasked positions.
    pub fn token_repr(tape: &mut Tape<'_, T>, out: &EncoderOutput, mask: &[bool]) -> Result<Var> {
        tape.max_over_rows(out.seq, Some(mask))
    }

    /// Runs the LSTM over `inputs` (each `[1 × d]` or `[d]`) from zero state
    /// and returns every hidden state as a `[1 × d]` row.
    pub fn lstm_over_segments<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        binder: &mut Binder<'a, T>,
        inputs: &[Var],
    ) -> Result<Vec<Var>> {
        let d = self.enc_cfg.hidden;
        let lstm = &self.head.lstm;
        let q = lstm.q.map(|id| binder.var(tape, id));
        let u = lstm.u.map(|id| binder.var(tape, id));
        let b = lstm.b.map(|id| binder.var(tape, id));
        let mut hidden = Vec::with_capacity(inputs.len());
        let mut state: Option<(Var, Var)> = None;
        for &s in inputs {
            if tape.value(s).len() != d {
                return Err(Error::shape("lstm", format!("input width {} vs {d}", tape.value(s).len())));
            }
            let s = tape.reshape(s, vec![1, d])?;
            let mut pre = [s; 4];
            for g in 0..4 {
                let x = tape.matmul(s, q[g])?;
                let x = match state {
                    // h_0 = 0 contributes nothing to the first step
                    Some((h, _)) => {
                        let r = tape.matmul(h, u[g])?;
                        tape.add(x, r)?
                    }
                    None => x,
                };
                pre[g] = tape.add_bias(x, b[g])?;
            }
            let i = tape.sigmoid(pre[0]);
            let f = tape.sigmoid(pre[1]);
            let c_hat = tape.tanh(pre[2]);
            let o = tape.sigmoid(pre[3]);
            let ic = tape.mul(i, c_hat)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let fc = tape.mul(f, c_prev)?;
                    tape.add(ic, fc)?
                }
                None => ic,
            };
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc)?;
            hidden.push(h);
            state = Some((h, c));
        }
        Ok(hidden)
    }

    /// Attention pooling over hidden states; returns `(o [1 × d], α [m])`.
    pub fn attention_pool<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        binder: &mut Binder<'a, T>,
        hidden: &[Var],
    ) -> Result<(Var, Var)> {
        let m = hidden.len();
        let h = tape.stack_rows(hidden)?;
        let (w, b, q) = (
            binder.var(tape, self.head.attn_w),
            binder.var(tape, self.head.attn_b),
            binder.var(tape, self.head.attn_q),
        );
        let a = tape.matmul(h, w)?;
        let a = tape.add_bias(a, b)?;
        let a = tape.tanh(a);
        let scores = tape.matmul(a, q)?;
        let scores = tape.reshape(scores, vec![m])?;
        let alpha = tape.softmax(scores)?;
        let alpha_row = tape.reshape(alpha, vec![1, m])?;
        let o = tape.matmul(alpha_row, h)?;
        Ok((o, alpha))
    }

    /// `y_k = Ŵ_seg · o_k + b_seg` for one segment batch.
    pub fn segment_score<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        binder: &mut Binder<'a, T>,
        batch: &SegmentBatch,
        training: bool,
        rng: &mut DropoutRng,
    ) -> Result<(Var, Var)> {
        let enc = self
            .seg_encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no segment encoder".into()))?;
        let mut cls = Vec::with_capacity(batch.segments.len());
        for seg in &batch.segments {
            cls.push(enc.encode(tape, binder, seg, training, rng)?.cls);
        }
        let hidden = self.lstm_over_segments(tape, binder, &cls)?;
        let (o, _) = self.attention_pool(tape, binder, &hidden)?;
        let (w, b) = (binder.var(tape, self.head.seg_w), binder.var(tape, self.head.seg_b));
        let y = tape.matmul(o, w)?;
        let y = tape.reshape(y, vec![1])?;
        Ok((o, tape.add(y, b)?))
    }

    /// Records a full forward pass.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        essay: &PreparedEssay,
        training: bool,
        rng: &mut DropoutRng,
    ) -> Result<Forward> {
        if essay.segments.len() != self.ms_cfg.scales.len()
            || essay.segments.iter().zip(&self.ms_cfg.scales).any(|(s, &k)| s.scale != k)
        {
            return Err(Error::InvalidArgument("prepared essay does not match model scales".into()));
        }
        let mut binder = Binder::new(&self.params);
        let mut doc_tok = None;
        if let (Some(enc), Some((w, b))) = (&self.doc_encoder, self.head.doc_tok) {
            let out = enc.encode(tape, &mut binder, &essay.doc, training, rng)?;
            let mut parts = Vec::with_capacity(2);
            if self.ms_cfg.use_doc {
                parts.push(Self::doc_repr(&out));
            }
            if self.ms_cfg.use_tok {
                parts.push(Self::token_repr(tape, &out, &essay.doc.mask_bools())?);
            }
            let h = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
            let width = tape.value(h).len();
            let h = tape.reshape(h, vec![1, width])?;
            let (w, b) = (binder.var(tape, w), binder.var(tape, b));
            let y = tape.matmul(h, w)?;
            let y = tape.reshape(y, vec![1])?;
            doc_tok = Some(tape.add(y, b)?);
        }
        let mut per_scale = Vec::with_capacity(essay.segments.len());
        for batch in &essay.segments {
            let (_, y) = self.segment_score(tape, &mut binder, batch, training, rng)?;
            per_scale.push((batch.scale, y));
        }
        let mut total = doc_tok;
        for &(_, y) in &per_scale {
            total = Some(match total {
                Some(t) => tape.add(t, y)?,
                None => y,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("model has no representation scale".into()))?;
        Ok(Forward {
            total,
            doc_tok,
            per_scale,
            bindings: binder.into_bindings(),
        })
    }

    /// Eval-mode prediction with the per-scale breakdown.
    pub fn predict(&self, essay: &PreparedEssay) -> Result<ScoreBreakdown> {
        let mut tape = Tape::new();
        let mut rng = DropoutRng::new(0, 0);
        let fwd = self.forward(&mut tape, essay, false, &mut rng)?;
        Ok(Self::breakdown(&tape, &fwd))
    }

    pub fn breakdown(tape: &Tape<'_, T>, fwd: &Forward) -> ScoreBreakdown {
        ScoreBreakdown::from_parts(
            fwd.doc_tok.map_or(0.0, |v| to_f64(tape.value(v)[0])),
            fwd.per_scale
                .iter()
                .map(|&(k, v)| (k, to_f64(tape.value(v)[0])))
                .collect(),
        )
    }

    /// Zeroed gradient buffers, one per parameter.
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|(_, _, t)| if t.requires_grad { vec![T::zero(); t.numel()] } else { Vec::new() })
            .collect()
    }

    /// Adds the tape's leaf gradients for every trainable parameter into `grads`.
    pub fn collect_grads(&self, tape: &Tape<'_, T>, bindings: &[Option<Var>], grads: &mut [Vec<T>]) -> Result<()> {
        for (id, binding) in bindings.iter().enumerate() {
            let Some(v) = binding else { continue };
            if !self.params.get(id).requires_grad {
                continue;
            }
            if let Some(g) = tape.grad(*v) {
                if grads[id].len() != g.len() {
                    return Err(Error::shape("collect_grads", format!("parameter {}", self.params.name(id))));
                }
                grads[id].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(())
    }
}
