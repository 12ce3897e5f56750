//! Optimization: Adam updates, R-Drop double-pass epochs, dev-selected
//! fitting over folds, out-of-domain pretraining, the loss-weight grid and the
//! greedy segment-scale search.

mod adam;
mod checkpoint;
mod search;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{config_hash, Checkpoint, TensorEntry, CHECKPOINT_VERSION, MAGIC};
pub use search::{
    greedy_scale_search, parse_scale_range, CachedEvaluator, ScaleEvaluator, ScaleSearchState, TraceRow, TraceStage,
};

use crate::corpus::{denormalize_score, normalize_score, Essay, FoldSplit, LabeledEssay, PromptSpec, Rounding};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::metrics::{evaluate_prompt, PromptMetrics};
use crate::multiscale::{MultiScaleModel, PreparedEssay, ScoreBreakdown};
use crate::params::ParamStore;
use crate::tensor::{DropoutRng, Tape};
use crate::tokenizer::{wordpiece_tokenize, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f32,
    pub loss: LossWeights,
    pub seed: u64,
    /// Out-of-domain pretraining epochs in the transfer pipeline.
    pub pretrain_epochs: usize,
    /// Whether pretraining also uses the R-Drop double pass.
    pub rdrop_in_pretrain: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 6e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.005,
            batch_size: 32,
            epochs: 80,
            dropout: 0.1,
            loss: LossWeights::default(),
            seed: 42,
            pretrain_epochs: 20,
            rdrop_in_pretrain: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} not in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.loss.needs_pairs() && self.batch_size < 2 {
            return bad("pairwise and cosine losses need batch_size ≥ 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// A tokenized essay with its normalized label.
#[derive(Debug, Clone)]
pub struct Example {
    pub essay_id: String,
    pub prompt_id: i64,
    pub input: PreparedEssay,
    /// Label scaled into `[0, 1]` with the essay's own prompt range.
    pub label: f64,
    pub raw_score: f64,
}

fn prepare_one(
    model: &MultiScaleModel,
    essay: &Essay,
    label: f64,
    n_p: usize,
    vocab: &Vocabulary,
) -> Result<Example> {
    let t1 = wordpiece_tokenize(&essay.text, vocab);
    Ok(Example {
        essay_id: essay.essay_id.clone(),
        prompt_id: essay.prompt_id,
        input: model.prepare(&t1, n_p, vocab)?,
        label,
        raw_score: essay.raw_score,
    })
}

/// Tokenizes in-domain essays with the prompt's budget and range.
pub fn prepare_examples(
    model: &MultiScaleModel,
    essays: &[Essay],
    spec: &PromptSpec,
    vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    let n_p = spec.budget()?;
    essays
        .par_iter()
        .map(|e| {
            if e.prompt_id != spec.prompt_id {
                return Err(Error::InvalidArgument(format!(
                    "essay {} belongs to prompt {}, not {}",
                    e.essay_id, e.prompt_id, spec.prompt_id
                )));
            }
            prepare_one(model, e, normalize_score(e.raw_score, spec)?, n_p, vocab)
        })
        .collect()
}

/// Tokenizes an out-of-domain pool with the target prompt's budget `n_p`, so
/// the segment layout matches the model that will be fine-tuned.
pub fn prepare_pool(
    model: &MultiScaleModel,
    pool: &[LabeledEssay],
    n_p: usize,
    vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    pool.par_iter()
        .map(|l| prepare_one(model, &l.essay, l.label, n_p, vocab))
        .collect()
}

/// Train, dev and test examples of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold_index: usize,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl FoldData {
    pub fn from_split(examples: &[Example], split: &FoldSplit) -> Result<Self> {
        let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.essay_id.as_str(), e)).collect();
        let pick = |ids: &[String]| -> Result<Vec<Example>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|e| (*e).clone())
                        .ok_or_else(|| Error::InvalidArgument(format!("fold references unknown essay {id}")))
                })
                .collect()
        };
        Ok(FoldData {
            fold_index: split.fold_index,
            train: pick(&split.train_ids)?,
            dev: pick(&split.dev_ids)?,
            test: pick(&split.test_ids)?,
        })
    }
}

/// Training stage, used to keep dropout and shuffling streams apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain = 1,
    Finetune = 2,
}

/// Where an epoch sits in a run; every random stream is keyed by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochCoords {
    pub phase: Phase,
    pub fold: usize,
    pub epoch: usize,
}

impl EpochCoords {
    fn stream(&self, rest: &[u64]) -> u64 {
        let mut coords = vec![self.phase as u64, self.fold as u64, self.epoch as u64];
        coords.extend_from_slice(rest);
        DropoutRng::stream_of(&coords)
    }
}

/// Shuffled mini-batches of example indices. A trailing batch of one essay is
/// merged into the previous batch so every batch supports pairwise losses.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, at: EpochCoords) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if n == 0 {
        return Err(Error::DegenerateBatch("no training examples".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(at.stream(&[u64::MAX]));
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    Ok(batches)
}

/// Loss, summed parameter gradients and per-pass predictions of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: Vec<Vec<f32>>,
    /// Predictions of each forward pass, in batch order.
    pub passes: Vec<Vec<f64>>,
}

/// Numeric failures during training abort the run with its coordinates.
fn abort(e: Error, at: EpochCoords, batch_index: usize, essay_id: &str) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::TrainingAborted(format!(
            "non-finite values in {op} ({detail}) at phase {:?}, fold {}, epoch {}, batch {batch_index}, essay {essay_id}",
            at.phase, at.fold, at.epoch
        )),
        other => other,
    }
}

/// Forward and backward passes for one batch without updating the model.
///
/// With `passes == 2` the loss is the R-Drop total over two independently
/// masked passes; with `passes == 1` it is the plain combined loss. Per-essay
/// work runs in parallel and gradients are summed in batch order.
pub fn batch_step(
    model: &MultiScaleModel,
    data: &[Example],
    batch: &[usize],
    weights: &LossWeights,
    passes: usize,
    seed: u64,
    at: EpochCoords,
    batch_index: usize,
) -> Result<BatchResult> {
    if !(1..=2).contains(&passes) {
        return Err(Error::InvalidArgument(format!("{passes} forward passes; expected 1 or 2")));
    }
    let jobs: Vec<(usize, usize)> = (0..passes).flat_map(|p| batch.iter().map(move |&i| (i, p))).collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(i, p)| {
            let mut tape = Tape::new();
            let mut rng = DropoutRng::new(seed, at.stream(&[batch_index as u64, i as u64, p as u64]));
            let fwd = model.forward(&mut tape, &data[i].input, true, &mut rng).map_err(|e| abort(e, at, batch_index, &data[i].essay_id))?;
            let y = tape.value(fwd.total)[0] as f64;
            Ok((tape, fwd, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = batch.iter().map(|&i| data[i].label).collect();
    let ys: Vec<Vec<f64>> = runs.chunks(batch.len()).map(|c| c.iter().map(|r| r.2).collect()).collect();
    let (loss, dys) = if passes == 2 {
        let (l, d1, d2) = losses::rdrop_total_with_grad(&ys[0], &ys[1], &labels, weights)?;
        (l, [d1, d2].concat())
    } else {
        losses::combined_with_grad(&ys[0], &labels, weights)?
    };
    if !loss.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|&i| data[i].essay_id.as_str()).collect();
        return Err(Error::TrainingAborted(format!(
            "non-finite loss {loss} at phase {:?}, fold {}, epoch {}, batch {batch_index}; predictions {:?}; essays {:?}",
            at.phase, at.fold, at.epoch, ys, ids
        )));
    }
    let per_essay = runs
        .par_iter_mut()
        .zip(dys.par_iter())
        .map(|((tape, fwd, _), &dy)| {
            tape.backward_with(fwd.total, &[dy as f32])?;
            let mut g = model.zero_grads();
            model.collect_grads(tape, &fwd.bindings, &mut g)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(runs);
    let mut grads = model.zero_grads();
    for g in per_essay {
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
        }
    }
    if let Some((id, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::TrainingAborted(format!(
            "non-finite gradient for {} at epoch {}, batch {batch_index}",
            model.params().name(id),
            at.epoch
        )));
    }
    Ok(BatchResult {
        loss,
        grads,
        passes: ys,
    })
}

/// One pass over `data`; returns the batch-size-weighted mean loss.
///
/// With `rdrop` set each batch takes two dropout passes. When the model's
/// dropout rate is zero both passes are identical, so one pass is computed and
/// reused; the consistency term is then exactly zero.
pub fn train_epoch(
    model: &mut MultiScaleModel,
    opt: &mut AdamState,
    data: &[Example],
    cfg: &TrainingConfig,
    weights: &LossWeights,
    rdrop: bool,
    at: EpochCoords,
) -> Result<f64> {
    let passes = if rdrop && model.encoder_config().dropout > 0.0 { 2 } else { 1 };
    let adam = cfg.adam();
    let batches = make_batches(data.len(), cfg.batch_size, cfg.seed, at)?;
    let mut total = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let r = batch_step(model, data, batch, weights, passes, cfg.seed, at, b)?;
        opt.step(model.params_mut(), &r.grads, &adam)?;
        total += r.loss * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Eval-mode predictions, in input order.
pub fn predict_all(model: &MultiScaleModel, data: &[Example]) -> Result<Vec<ScoreBreakdown>> {
    data.par_iter().map(|e| model.predict(&e.input)).collect()
}

/// Metrics of a set of examples on the prompt scale, plus normalized MSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub qwk: Option<f64>,
    pub rmse: f64,
    /// Mean squared error in normalized space.
    pub mse: f64,
}

impl SplitMetrics {
    pub fn selection_score(&self) -> f64 {
        PromptMetrics {
            qwk: self.qwk,
            rmse: self.rmse,
        }
        .selection_score()
    }
}

pub fn evaluate_split(model: &MultiScaleModel, data: &[Example], spec: &PromptSpec) -> Result<SplitMetrics> {
    let preds: Vec<f64> = predict_all(model, data)?.iter().map(|b| b.y_total).collect();
    metrics_of(&preds, data, spec)
}

fn metrics_of(preds: &[f64], data: &[Example], spec: &PromptSpec) -> Result<SplitMetrics> {
    let raw: Vec<f64> = data.iter().map(|e| e.raw_score).collect();
    let labels: Vec<f64> = data.iter().map(|e| e.label).collect();
    let m = evaluate_prompt(preds, &raw, spec)?;
    Ok(SplitMetrics {
        qwk: m.qwk,
        rmse: m.rmse,
        mse: losses::mse(preds, &labels)?,
    })
}

/// Whether `score` replaces the current best. Strictly greater wins, so ties
/// keep the earliest epoch; NaN never wins.
fn improves(best: Option<f64>, score: f64) -> bool {
    !score.is_nan() && best.is_none_or(|b| score > b)
}

/// 1-based epoch with the best dev score under the same rule `fit_fold` uses.
pub fn select_best_epoch(dev_scores: &[f64]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &s) in dev_scores.iter().enumerate() {
        if improves(best.map(|b| b.0), s) {
            best = Some((s, i + 1));
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: SplitMetrics,
}

/// Scores of one essay, normalized and on the prompt scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEssay {
    pub essay_id: String,
    pub scores: ScoreBreakdown,
    pub denormalized: f64,
}

/// Result of training one fold; `model` holds the dev-selected weights.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub dev: SplitMetrics,
    pub test: SplitMetrics,
    pub test_scores: Vec<ScoredEssay>,
    pub model: MultiScaleModel,
}

/// Number of test essays whose per-scale scores go into a report.
pub const REPORT_SAMPLE: usize = 5;

/// Per-fold metrics report; carries no timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub prompt: i64,
    pub fold: usize,
    pub epoch_best: usize,
    pub dev_qwk: Option<f64>,
    pub dev_rmse: f64,
    pub test_qwk: Option<f64>,
    pub test_rmse: f64,
    pub history: Vec<EpochRecord>,
    pub per_scale_scores_sample: Vec<ScoredEssay>,
    pub config_hash: String,
}

impl FoldOutcome {
    pub fn report(&self, prompt: i64, config_hash: &str) -> MetricsReport {
        MetricsReport {
            prompt,
            fold: self.fold_index,
            epoch_best: self.best_epoch,
            dev_qwk: self.dev.qwk,
            dev_rmse: self.dev.rmse,
            test_qwk: self.test.qwk,
            test_rmse: self.test.rmse,
            history: self.history.clone(),
            per_scale_scores_sample: self.test_scores.iter().take(REPORT_SAMPLE).cloned().collect(),
            config_hash: config_hash.to_string(),
        }
    }
}

/// Fine-tunes `model` on one fold, evaluating dev after every epoch and
/// keeping the best epoch's weights. Test is scored once, on those weights.
pub fn fit_fold(
    mut model: MultiScaleModel,
    data: &FoldData,
    spec: &PromptSpec,
    cfg: &TrainingConfig,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if data.dev.is_empty() || data.test.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {} has an empty dev or test split", data.fold_index)));
    }
    let mut opt = AdamState::new(model.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        let at = EpochCoords {
            phase: Phase::Finetune,
            fold: data.fold_index,
            epoch,
        };
        let train_loss = train_epoch(&mut model, &mut opt, &data.train, cfg, &cfg.loss, true, at)?;
        let dev = evaluate_split(&model, &data.dev, spec)?;
        log::debug!("fold {} epoch {epoch}: loss {train_loss:.6}, dev {dev:?}", data.fold_index);
        if improves(best.as_ref().map(|b| b.0), dev.selection_score()) {
            best = Some((dev.selection_score(), epoch, model.params().clone()));
        }
        history.push(EpochRecord { epoch, train_loss, dev });
    }
    let (_, best_epoch, params) = best.ok_or_else(|| {
        Error::TrainingAborted(format!("fold {}: no epoch produced a finite dev score", data.fold_index))
    })?;
    model.params_mut().load_values(&params)?;
    let dev = history[best_epoch - 1].dev;
    let scores = predict_all(&model, &data.test)?;
    let preds: Vec<f64> = scores.iter().map(|b| b.y_total).collect();
    let test = metrics_of(&preds, &data.test, spec)?;
    let rounding = Rounding::for_spec(spec);
    let test_scores = data
        .test
        .iter()
        .zip(scores)
        .map(|(e, s)| ScoredEssay {
            essay_id: e.essay_id.clone(),
            denormalized: denormalize_score(s.y_total, spec, rounding),
            scores: s,
        })
        .collect();
    Ok(FoldOutcome {
        fold_index: data.fold_index,
        best_epoch,
        history,
        dev,
        test,
        test_scores,
        model,
    })
}

/// Per-fold outcomes and their test means.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub folds: Vec<FoldOutcome>,
    pub mean_test_qwk: Option<f64>,
    pub mean_test_rmse: f64,
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when `jobs == 0`.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Fits every fold from a fresh `init()` model. Folds run in parallel; each
/// fold's result does not depend on scheduling.
pub fn fit<F>(init: F, folds: &[FoldData], spec: &PromptSpec, cfg: &TrainingConfig) -> Result<FitSummary>
where
    F: Fn() -> Result<MultiScaleModel> + Sync,
{
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds to fit".into()));
    }
    let outcomes = folds
        .par_iter()
        .map(|f| fit_fold(init()?, f, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let mean_test_qwk = outcomes
        .iter()
        .map(|o| o.test.qwk)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    let mean_test_rmse = outcomes.iter().map(|o| o.test.rmse).sum::<f64>() / n;
    Ok(FitSummary {
        folds: outcomes,
        mean_test_qwk,
        mean_test_rmse,
    })
}

/// Loss weights used while pretraining on the out-of-domain pool: MSE only,
/// with the R-Drop coefficient kept only when `rdrop_in_pretrain` is set.
pub fn pretrain_weights(cfg: &TrainingConfig) -> LossWeights {
    LossWeights {
        rdrop_coeff: if cfg.rdrop_in_pretrain { cfg.loss.rdrop_coeff } else { 0.0 },
        ..LossWeights::mse_only()
    }
}

/// Trains on the out-of-domain pool for `cfg.pretrain_epochs`; returns the
/// per-epoch losses.
pub fn pretrain(model: &mut MultiScaleModel, pool: &[Example], cfg: &TrainingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let weights = pretrain_weights(cfg);
    let mut opt = AdamState::new(model.params());
    (1..=cfg.pretrain_epochs)
        .map(|epoch| {
            let at = EpochCoords {
                phase: Phase::Pretrain,
                fold: 0,
                epoch,
            };
            train_epoch(model, &mut opt, pool, cfg, &weights, cfg.rdrop_in_pretrain, at)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub pretrain_losses: Vec<f64>,
    pub pretrained: MultiScaleModel,
    pub summary: FitSummary,
}

/// Pretrains one model on the out-of-domain pool, then fine-tunes a copy of it
/// on every in-domain fold with the full loss. With `pretrain_epochs == 0`
/// this is exactly [`fit`] from `init()`.
pub fn transfer_pipeline<F>(
    init: F,
    pool: &[Example],
    folds: &[FoldData],
    spec: &PromptSpec,
    cfg: &TrainingConfig,
) -> Result<TransferOutcome>
where
    F: FnOnce() -> Result<MultiScaleModel>,
{
    if pool.is_empty() {
        return Err(Error::EmptyPool(spec.prompt_id));
    }
    if let Some(e) = pool.iter().find(|e| e.prompt_id == spec.prompt_id) {
        return Err(Error::InvalidArgument(format!(
            "pool essay {} belongs to the target prompt {}",
            e.essay_id, spec.prompt_id
        )));
    }
    let mut pretrained = init()?;
    let pretrain_losses = pretrain(&mut pretrained, pool, cfg)?;
    let summary = fit(|| Ok(pretrained.clone()), folds, spec, cfg)?;
    Ok(TransferOutcome {
        pretrain_losses,
        pretrained,
        summary,
    })
}

/// Candidate loss weights: α = 1 and β, γ ∈ {0, 0.1, 0.5, 1}; margin and
/// R-Drop coefficient come from `base`.
pub fn loss_weight_grid(base: &LossWeights) -> Vec<LossWeights> {
    const STEPS: [f64; 4] = [0.0, 0.1, 0.5, 1.0];
    STEPS
        .iter()
        .flat_map(|&beta| {
            STEPS.iter().map(move |&gamma| LossWeights {
                alpha: 1.0,
                beta,
                gamma,
                ..*base
            })
        })
        .collect()
}

/// Scores every candidate and keeps the first one with the highest score.
pub fn select_loss_weights(
    grid: &[LossWeights],
    mut score: impl FnMut(&LossWeights) -> Result<f64>,
) -> Result<(LossWeights, Vec<(LossWeights, f64)>)> {
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, LossWeights)> = None;
    for w in grid {
        let s = score(w)?;
        if improves(best.map(|b| b.0), s) {
            best = Some((s, *w));
        }
        trace.push((*w, s));
    }
    let (_, w) = best.ok_or_else(|| Error::InvalidArgument("empty or all-NaN loss-weight grid".into()))?;
    Ok((w, trace))
}

#[cfg(test)]
mod tests;
