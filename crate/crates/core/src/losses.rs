//! Batch losses over predicted scores `y` and labels `ŷ` (normalized space).
//!
//! Every loss has a plain form and a `_with_grad` form returning
//! `d loss / d y`. Computation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss weights and the R-Drop coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Margin `b` of the ranking hinge.
    pub margin: f64,
    pub rdrop_coeff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            margin: 0.0,
            rdrop_coeff: 9.0,
        }
    }
}

impl LossWeights {
    /// Plain MSE with no R-Drop term.
    pub fn mse_only() -> Self {
        LossWeights {
            rdrop_coeff: 0.0,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.rdrop_coeff];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!("loss weights must be non-negative: {self:?}")));
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::InvalidArgument("one of alpha/beta/gamma must be positive".into()));
        }
        if !self.margin.is_finite() {
            return Err(Error::InvalidArgument("margin must be finite".into()));
        }
        Ok(())
    }

    /// Whether a batch needs at least two essays (pairwise or cosine terms).
    pub fn needs_pairs(&self) -> bool {
        self.beta > 0.0 || self.gamma > 0.0
    }
}

fn check_lengths(y: &[f64], labels: &[f64], min: usize) -> Result<()> {
    if y.len() != labels.len() {
        return Err(Error::shape(
            "loss",
            format!("{} predictions vs {} labels", y.len(), labels.len()),
        ));
    }
    if y.len() < min {
        return Err(Error::DegenerateBatch(format!(
            "batch of {} essays, need at least {min}",
            y.len()
        )));
    }
    Ok(())
}

pub fn mse(y: &[f64], labels: &[f64]) -> Result<f64> {
    mse_with_grad(y, labels).map(|(l, _)| l)
}

/// `(1/N) Σ (yᵢ − ŷᵢ)²`
pub fn mse_with_grad(y: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(y, labels, 1)?;
    let n = y.len() as f64;
    let loss = y.iter().zip(labels).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let grad = y.iter().zip(labels).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((loss, grad))
}

pub fn sim(y: &[f64], labels: &[f64]) -> Result<f64> {
    sim_with_grad(y, labels).map(|(l, _)| l)
}

/// `1 − cos(y, ŷ)`. A zero-norm vector has no direction: the loss is 1 with a
/// zero gradient.
pub fn sim_with_grad(y: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(y, labels, 2)?;
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nl = labels.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny == 0.0 || nl == 0.0 {
        log::warn!("similarity loss on a zero-norm vector; using loss 1 with zero gradient");
        return Ok((1.0, vec![0.0; y.len()]));
    }
    let dot: f64 = y.iter().zip(labels).map(|(a, b)| a * b).sum();
    let cos = dot / (ny * nl);
    let grad = y
        .iter()
        .zip(labels)
        .map(|(yi, li)| -(li / (ny * nl) - cos * yi / (ny * ny)))
        .collect();
    Ok((1.0 - cos, grad))
}

pub fn mr(y: &[f64], labels: &[f64], margin: f64) -> Result<f64> {
    mr_with_grad(y, labels, margin).map(|(l, _)| l)
}

/// Margin ranking over all unordered pairs `i < j`:
/// `max(0, −r·(yᵢ − yⱼ) + b)` averaged over the `N(N−1)/2` pairs, with
/// `r = 1` when `ŷᵢ > ŷⱼ`, `−1` when `ŷᵢ < ŷⱼ`, and `−sgn(yᵢ − yⱼ)` on label
/// ties (so a tie costs `|yᵢ − yⱼ|` at `b = 0`).
pub fn mr_with_grad(y: &[f64], labels: &[f64], margin: f64) -> Result<(f64, Vec<f64>)> {
    check_lengths(y, labels, 2)?;
    let n = y.len();
    let pairs = (n * (n - 1) / 2) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let diff = y[i] - y[j];
            let r = if labels[i] > labels[j] {
                1.0
            } else if labels[i] < labels[j] {
                -1.0
            } else {
                -sgn(diff)
            };
            let term = -r * diff + margin;
            if term > 0.0 {
                loss += term;
                grad[i] -= r;
                grad[j] += r;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= pairs);
    Ok((loss / pairs, grad))
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn combined(y: &[f64], labels: &[f64], w: &LossWeights) -> Result<f64> {
    combined_with_grad(y, labels, w).map(|(l, _)| l)
}

/// `α·MSE + β·MR + γ·SIM`; terms with zero weight are skipped entirely.
pub fn combined_with_grad(y: &[f64], labels: &[f64], w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    w.validate()?;
    check_lengths(y, labels, 1)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; y.len()];
    let mut add = |weight: f64, (l, g): (f64, Vec<f64>)| {
        loss += weight * l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += weight * b);
    };
    if w.alpha > 0.0 {
        add(w.alpha, mse_with_grad(y, labels)?);
    }
    if w.beta > 0.0 {
        add(w.beta, mr_with_grad(y, labels, w.margin)?);
    }
    if w.gamma > 0.0 {
        add(w.gamma, sim_with_grad(y, labels)?);
    }
    Ok((loss, grad))
}

/// Squared disagreement between two dropout passes, `(1/N) Σ (y1ᵢ − y2ᵢ)²`.
pub fn rdrop_consistency(y1: &[f64], y2: &[f64]) -> Result<f64> {
    mse(y1, y2)
}

pub fn rdrop_total(y1: &[f64], y2: &[f64], labels: &[f64], w: &LossWeights) -> Result<f64> {
    rdrop_total_with_grad(y1, y2, labels, w).map(|(l, _, _)| l)
}

/// `combined(y1)/2 + combined(y2)/2 + c·consistency(y1, y2)`, with gradients
/// for both passes.
pub fn rdrop_total_with_grad(
    y1: &[f64],
    y2: &[f64],
    labels: &[f64],
    w: &LossWeights,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (l1, g1) = combined_with_grad(y1, labels, w)?;
    let (l2, g2) = combined_with_grad(y2, labels, w)?;
    let (c, gc) = mse_with_grad(y1, y2)?;
    let loss = 0.5 * l1 + 0.5 * l2 + w.rdrop_coeff * c;
    let d1 = g1
        .iter()
        .zip(&gc)
        .map(|(a, b)| 0.5 * a + w.rdrop_coeff * b)
        .collect();
    let d2 = g2
        .iter()
        .zip(&gc)
        .map(|(a, b)| 0.5 * a - w.rdrop_coeff * b)
        .collect();
    Ok((loss, d1, d2))
}
