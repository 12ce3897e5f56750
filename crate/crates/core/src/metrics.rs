//! Quadratic weighted kappa and RMSE.

use serde::{Deserialize, Serialize};

use crate::corpus::{denormalize_score, PromptSpec, Rounding};
use crate::error::{Error, Result};

/// Quadratic weighted kappa between two integer ratings on `[s_min, s_max]`.
///
/// With quadratic weights the observed term reduces to `Σₙ (aₙ − bₙ)²` and the
/// expected term to `Σᵢⱼ (i − j)² hᵃᵢ hᵇⱼ / N` over the two rating histograms;
/// the common factor `1/(R − 1)²` cancels. When both raters give one and the
/// same rating throughout, the denominator is zero and κ is defined as 1.
pub fn qwk(a: &[i64], b: &[i64], s_min: i64, s_max: i64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("qwk: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("qwk: no ratings".into()));
    }
    if s_min >= s_max {
        return Err(Error::InvalidArgument(format!("qwk: empty rating range [{s_min}, {s_max}]")));
    }
    let r = (s_max - s_min + 1) as usize;
    let mut hist_a = vec![0u64; r];
    let mut hist_b = vec![0u64; r];
    let mut observed = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        for v in [x, y] {
            if v < s_min || v > s_max {
                return Err(Error::InvalidArgument(format!("qwk: rating {v} outside [{s_min}, {s_max}]")));
            }
        }
        hist_a[(x - s_min) as usize] += 1;
        hist_b[(y - s_min) as usize] += 1;
        observed += ((x - y) as f64).powi(2);
    }
    let n = a.len() as f64;
    let mut expected = 0.0f64;
    for (i, &ha) in hist_a.iter().enumerate().filter(|(_, &h)| h > 0) {
        for (j, &hb) in hist_b.iter().enumerate().filter(|(_, &h)| h > 0) {
            expected += (i as f64 - j as f64).powi(2) * ha as f64 * hb as f64;
        }
    }
    expected /= n;
    if expected == 0.0 {
        log::info!("qwk: both raters constant and equal; defining kappa = 1");
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("rmse: lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("rmse: no values".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Scores on the prompt's own scale. `qwk` is absent for continuous prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptMetrics {
    pub qwk: Option<f64>,
    pub rmse: f64,
}

impl PromptMetrics {
    /// Larger is better: QWK when available, otherwise negated RMSE.
    pub fn selection_score(&self) -> f64 {
        self.qwk.unwrap_or(-self.rmse)
    }
}

/// Clips normalized predictions, maps them onto the prompt range (rounding
/// for discrete prompts) and scores them against raw labels.
pub fn evaluate_prompt(preds_norm: &[f64], labels_raw: &[f64], spec: &PromptSpec) -> Result<PromptMetrics> {
    spec.validate()?;
    let rounding = Rounding::for_spec(spec);
    let preds: Vec<f64> = preds_norm.iter().map(|&y| denormalize_score(y, spec, rounding)).collect();
    let rmse = rmse(&preds, labels_raw)?;
    let qwk = if spec.discrete {
        let to_int = |v: &[f64]| -> Result<Vec<i64>> {
            v.iter()
                .map(|&x| {
                    if x.fract() == 0.0 {
                        Ok(x as i64)
                    } else {
                        Err(Error::InvalidArgument(format!("label {x} is not an integer rating")))
                    }
                })
                .collect()
        };
        Some(qwk(
            &to_int(&preds)?,
            &to_int(labels_raw)?,
            spec.score_min as i64,
            spec.score_max as i64,
        )?)
    } else {
        None
    };
    Ok(PromptMetrics { qwk, rmse })
}
