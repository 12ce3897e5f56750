use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dev QWK of a model trained with the document and token scales plus the
/// given segment scales.
pub trait ScaleEvaluator {
    fn evaluate(&mut self, scales: &[usize]) -> Result<f64>;

    /// Evaluates independent combinations; results are in input order.
    fn evaluate_many(&mut self, combos: &[Vec<usize>]) -> Result<Vec<f64>> {
        combos.iter().map(|c| self.evaluate(c)).collect()
    }
}

impl<F: FnMut(&[usize]) -> Result<f64>> ScaleEvaluator for F {
    fn evaluate(&mut self, scales: &[usize]) -> Result<f64> {
        self(scales)
    }
}

/// Replays recorded results, e.g. from a previous trace.
#[derive(Debug, Clone, Default)]
pub struct CachedEvaluator(pub BTreeMap<Vec<usize>, f64>);

impl CachedEvaluator {
    pub fn from_trace(trace: &[TraceRow]) -> Self {
        CachedEvaluator(trace.iter().map(|r| (r.scales.clone(), r.qwk)).collect())
    }
}

impl ScaleEvaluator for CachedEvaluator {
    fn evaluate(&mut self, scales: &[usize]) -> Result<f64> {
        self.0
            .get(scales)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no cached result for scales {scales:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStage {
    Baseline,
    Single,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: TraceStage,
    pub scales: Vec<usize>,
    pub qwk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSearchState {
    /// Dev QWK of the document and token scales alone.
    pub baseline_qwk: f64,
    /// Each single scale with its dev QWK, in input order.
    pub explored: Vec<(usize, f64)>,
    pub qwk_ave: f64,
    /// Scales scoring strictly above `qwk_ave`, best first.
    pub candidates: Vec<usize>,
    /// Segment scales added to the document and token scales.
    pub selected: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

/// Parses `A:B:STEP` into `A, A+STEP, …` up to and including `B`.
pub fn parse_scale_range(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("scale range {spec:?} is not A:B:STEP with 1 ≤ A ≤ B, STEP ≥ 1"));
    let parts: Vec<usize> = spec
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if start == 0 || step == 0 || start > end {
        return Err(bad());
    }
    Ok((start..=end).step_by(step).collect())
}

/// Greedy scale selection.
///
/// The baseline (document and token only) is scored first. Every single scale
/// is then scored with the baseline; scales strictly above the mean of those
/// scores form `L`, best first with ties to the smaller scale. Each prefix of
/// `L` is scored and the best prefix (ties to the shorter) is selected.
pub fn greedy_scale_search<E: ScaleEvaluator + ?Sized>(scales: &[usize], eval: &mut E) -> Result<ScaleSearchState> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("greedy scale search needs at least one scale".into()));
    }
    let mut distinct = scales.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != scales.len() {
        return Err(Error::InvalidArgument(format!("duplicate scales in {scales:?}")));
    }
    let check = |q: f64, what: &[usize]| {
        if q.is_finite() {
            Ok(q)
        } else {
            Err(Error::InvalidArgument(format!("evaluator returned {q} for scales {what:?}")))
        }
    };
    let mut trace = Vec::with_capacity(2 * scales.len() + 1);
    let baseline_qwk = check(eval.evaluate(&[])?, &[])?;
    trace.push(TraceRow {
        stage: TraceStage::Baseline,
        scales: Vec::new(),
        qwk: baseline_qwk,
    });

    let singles: Vec<Vec<usize>> = scales.iter().map(|&k| vec![k]).collect();
    let single_qwk = eval.evaluate_many(&singles)?;
    let mut explored = Vec::with_capacity(scales.len());
    for (combo, q) in singles.into_iter().zip(single_qwk) {
        let q = check(q, &combo)?;
        explored.push((combo[0], q));
        trace.push(TraceRow {
            stage: TraceStage::Single,
            scales: combo,
            qwk: q,
        });
    }
    let qwk_ave = explored.iter().map(|e| e.1).sum::<f64>() / explored.len() as f64;
    let mut above: Vec<(usize, f64)> = explored.iter().copied().filter(|e| e.1 > qwk_ave).collect();
    above.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let candidates: Vec<usize> = above.iter().map(|e| e.0).collect();

    let prefixes: Vec<Vec<usize>> = (1..=candidates.len()).map(|i| candidates[..i].to_vec()).collect();
    let prefix_qwk = eval.evaluate_many(&prefixes)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, (combo, q)) in prefixes.iter().zip(prefix_qwk).enumerate() {
        let q = check(q, combo)?;
        if best.is_none_or(|b| q > b.0) {
            best = Some((q, i + 1));
        }
        trace.push(TraceRow {
            stage: TraceStage::Prefix,
            scales: combo.clone(),
            qwk: q,
        });
    }
    let selected = best.map_or_else(Vec::new, |(_, len)| candidates[..len].to_vec());
    Ok(ScaleSearchState {
        baseline_qwk,
        explored,
        qwk_ave,
        candidates,
        selected,
        trace,
    })
}
