//! Central finite-difference verification of analytic gradients.
//!
//! Three suites: every differentiable tape op, the training losses, and the
//! full multi-scale head on a toy model. Each reports the worst relative error
//! it saw, measured per tensor as `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
//!
//! Graphs are evaluated in `f64`: with `f32` forward values the rounding noise
//! in a central difference at ε = 1e-3 is of the same order as the tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{self, LossWeights};
use crate::multiscale::{MultiScaleConfig, MultiScaleModel};
use crate::encoder::{EncoderConfig, FreezePolicy};
use crate::tensor::{DropoutRng, OpKind, Tape, Tensor, Var};
use crate::tokenizer::{self, Vocabulary};

pub const EPSILON: f64 = 1e-3;

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.rel_error.is_finite() && c.rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases
            .iter()
            .filter(|c| !(c.rel_error.is_finite() && c.rel_error < self.tolerance))
    }
}

/// Gradients with norm below this are compared in absolute terms. Exactly-zero
/// gradients (a key bias under softmax shift invariance) otherwise turn
/// round-off noise into a relative error of 1.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

/// Norm-relative distance between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(GRAD_NORM_FLOOR)
}

/// Compares tape gradients of `Σ cᵢ·outᵢ` (random fixed `c`) against central
/// differences for every element of every input.
pub fn check_op<F>(inputs: &[Tensor], corrupt: Option<OpKind>, seed: u64, build: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let new_tape = || match corrupt {
        Some(k) => Tape::with_corrupted_backward(k),
        None => Tape::new(),
    };
    let inputs: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f64>().with_grad(true)).collect();

    let (coeffs, analytic) = {
        let mut tape = new_tape();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        tape.backward_with(out, &coeffs)?;
        let grads: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| tape.grad(v).expect("leaf grad").to_vec())
            .collect();
        (coeffs, grads)
    };

    let objective = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape
            .value(out)
            .iter()
            .zip(&coeffs)
            .map(|(&o, &c)| o * c)
            .sum())
    };

    let mut worst = 0.0f64;
    let mut work = inputs.clone();
    for (ti, analytic_t) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0f64; analytic_t.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let x0 = inputs[ti].data()[j];
            let (xp, xm) = (x0 + EPSILON, x0 - EPSILON);
            work[ti].data_mut()[j] = xp;
            let lp = objective(&work)?;
            work[ti].data_mut()[j] = xm;
            let lm = objective(&work)?;
            work[ti].data_mut()[j] = x0;
            *num = (lp - lm) / (xp - xm);
        }
        worst = worst.max(relative_error(analytic_t, &numeric));
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Values bounded away from zero so ReLU is differentiable at every point.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Every differentiable tape operation.
pub fn tensor_suite(seed: u64, corrupt: Option<OpKind>, tolerance: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, build: &dyn for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>| -> Result<()> {
        let rel_error = check_op(&inputs, corrupt, seed ^ 0x5eed, |t, v| build(t, v))?;
        cases.push(CaseResult {
            name: name.to_string(),
            rel_error,
        });
        Ok(())
    };

    let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
    run("matmul", vec![a.clone(), b], &|t, v| t.matmul(v[0], v[1]))?;
    let bt = rand_tensor(&mut rng, vec![5, 4], -1.0, 1.0);
    run("matmul_nt", vec![a.clone(), bt], &|t, v| t.matmul_nt(v[0], v[1]))?;
    let a2 = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    run("add", vec![a.clone(), a2.clone()], &|t, v| t.add(v[0], v[1]))?;
    run("mul", vec![a.clone(), a2.clone()], &|t, v| t.mul(v[0], v[1]))?;
    let s = rand_tensor(&mut rng, vec![1], 0.5, 1.5);
    run("mul_scalar_broadcast", vec![a.clone(), s], &|t, v| t.mul(v[0], v[1]))?;
    run("scale", vec![a.clone()], &|t, v| Ok(t.scale(v[0], -1.7)))?;
    let bias = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
    run("add_bias", vec![a.clone(), bias], &|t, v| t.add_bias(v[0], v[1]))?;
    let x = rand_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    run("tanh", vec![x.clone()], &|t, v| Ok(t.tanh(v[0])))?;
    run("sigmoid", vec![x.clone()], &|t, v| Ok(t.sigmoid(v[0])))?;
    run("relu", vec![rand_away_from_zero(&mut rng, vec![3, 4])], &|t, v| Ok(t.relu(v[0])))?;
    run("softmax", vec![x.clone()], &|t, v| t.softmax(v[0]))?;
    run("masked_softmax", vec![x.clone()], &|t, v| {
        t.masked_softmax(v[0], Some(&[true, false, true, true]))
    })?;
    // Distinct column maxima keep the max differentiable.
    let mut h = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
    for (j, row) in [2usize, 0, 3].iter().enumerate() {
        h.data_mut()[row * 3 + j] = 2.0 + j as f32;
    }
    run("max_over_rows", vec![h], &|t, v| t.max_over_rows(v[0], None))?;
    run("dropout", vec![x.clone()], &|t, v| {
        let mut rng = DropoutRng::new(11, 0);
        t.dropout(v[0], 0.3, true, &mut rng)
    })?;
    let table = rand_tensor(&mut rng, vec![6, 3], -1.0, 1.0);
    run("gather_rows", vec![table], &|t, v| t.gather_rows(v[0], &[4, 1, 4, 0]))?;
    let gamma = rand_tensor(&mut rng, vec![4], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, vec![4], -0.5, 0.5);
    run("layer_norm", vec![x.clone(), gamma, beta], &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))?;
    run("slice_cols", vec![x.clone()], &|t, v| t.slice_cols(v[0], 1, 2))?;
    run("concat_cols", vec![a.clone(), x.clone()], &|t, v| t.concat_cols(&[v[0], v[1]]))?;
    run("row", vec![x.clone()], &|t, v| t.row(v[0], 1))?;
    let r1 = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
    let r2 = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
    run("stack_rows", vec![r1, r2], &|t, v| t.stack_rows(&[v[0], v[1]]))?;
    run("sum", vec![x.clone()], &|t, v| Ok(t.sum(v[0])))?;
    run("reshape", vec![x], &|t, v| t.reshape(v[0], vec![2, 6]))?;

    Ok(SuiteReport {
        suite: "tensor_ops".into(),
        tolerance,
        cases,
    })
}

/// Compares an analytic gradient of a scalar `f64` function against central
/// differences with step [`EPSILON`].
fn check_scalar_fn(
    y: &[f64],
    analytic: &[f64],
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let eps = EPSILON;
    let mut numeric = vec![0.0; y.len()];
    let mut work = y.to_vec();
    for i in 0..y.len() {
        work[i] = y[i] + eps;
        let lp = f(&work)?;
        work[i] = y[i] - eps;
        let lm = f(&work)?;
        work[i] = y[i];
        numeric[i] = (lp - lm) / (2.0 * eps);
    }
    Ok(relative_error(analytic, &numeric))
}

/// A batch with distinct predictions, pairwise gaps well above the step, and
/// hinge arguments away from zero (no kinks within ±ε).
fn kink_free_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let t: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
        let gaps_ok = (0..n).all(|i| (i + 1..n).all(|j| (y[i] - y[j]).abs() > 0.02));
        if gaps_ok && t.iter().any(|&v| v != 0.0) {
            return (y, t);
        }
    }
}

/// MSE, SIM, MR, combined loss and the R-Drop objective.
pub fn loss_suite(seed: u64, tolerance: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let weights = LossWeights {
        alpha: 1.0,
        beta: 0.7,
        gamma: 0.4,
        margin: 0.0,
        rdrop_coeff: 9.0,
    };
    for trial in 0..4 {
        let (y, t) = kink_free_batch(&mut rng, 6);
        let mut push = |name: &str, err: f64| {
            cases.push(CaseResult {
                name: format!("{name}#{trial}"),
                rel_error: err,
            })
        };
        let (_, g) = losses::mse_with_grad(&y, &t)?;
        push("mse", check_scalar_fn(&y, &g, |v| losses::mse(v, &t))?);
        let (_, g) = losses::sim_with_grad(&y, &t)?;
        push("sim", check_scalar_fn(&y, &g, |v| losses::sim(v, &t))?);
        let (_, g) = losses::mr_with_grad(&y, &t, 0.0)?;
        push("mr", check_scalar_fn(&y, &g, |v| losses::mr(v, &t, 0.0))?);
        let (_, g) = losses::combined_with_grad(&y, &t, &weights)?;
        push("combined", check_scalar_fn(&y, &g, |v| losses::combined(v, &t, &weights))?);

        let (y2, _) = kink_free_batch(&mut rng, 6);
        let both: Vec<f64> = y.iter().chain(&y2).copied().collect();
        let (_, g1, g2) = losses::rdrop_total_with_grad(&y, &y2, &t, &weights)?;
        let g: Vec<f64> = g1.into_iter().chain(g2).collect();
        let n = y.len();
        push(
            "rdrop_total",
            check_scalar_fn(&both, &g, |v| losses::rdrop_total(&v[..n], &v[n..], &t, &weights))?,
        );
    }
    Ok(SuiteReport {
        suite: "losses".into(),
        tolerance,
        cases,
    })
}

/// Toy-model settings for the end-to-end head check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub doc_len: usize,
    pub n_p: usize,
    pub scales: Vec<usize>,
    pub essays: usize,
    /// Test fixture: name of a tape op whose backward rule is corrupted.
    pub corrupt_backward: Option<String>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 1234,
            hidden: 16,
            layers: 2,
            heads: 2,
            doc_len: 14,
            n_p: 12,
            scales: vec![4, 6],
            essays: 3,
            corrupt_backward: None,
        }
    }
}

/// d(MSE)/d(every trainable parameter) of the full doc+token+segment model
/// with the last encoder layers and the head trainable.
pub fn head_suite(cfg: &ToyConfig, corrupt: Option<OpKind>, tolerance: f64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build(words.iter().map(String::as_str), 64)?;
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: cfg.hidden,
        layers: cfg.layers,
        heads: cfg.heads,
        max_positions: 512,
        ff_multiplier: 4,
        dropout: 0.0,
        init_std: 0.3,
    };
    let ms = MultiScaleConfig {
        scales: cfg.scales.clone(),
        use_doc: true,
        use_tok: true,
        doc_len: cfg.doc_len,
    };
    let mut model = MultiScaleModel::new(enc, ms, FreezePolicy::AllButLast, cfg.seed)?;
    // Non-trivial head weights so every path carries signal.
    model.perturb_head(&mut rng, 0.5);
    let mut model = model.cast::<f64>();

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for e in 0..cfg.essays {
        let len = rng.gen_range(cfg.n_p / 2..cfg.n_p + 4);
        let text: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
        let t1 = tokenizer::wordpiece_tokenize(&text.join(" "), &vocab);
        inputs.push(model.prepare(&t1, cfg.n_p, &vocab)?);
        targets.push(0.2 + 0.3 * e as f64);
    }

    // Loss plus the combined kink signature of all essays.
    let objective = |m: &MultiScaleModel<f64>| -> Result<(f64, u64)> {
        let mut preds = Vec::new();
        let mut sig = 0u64;
        for inp in &inputs {
            let mut tape = Tape::new();
            let mut drng = DropoutRng::new(0, 0);
            let fwd = m.forward(&mut tape, inp, false, &mut drng)?;
            preds.push(tape.value(fwd.total)[0]);
            sig = sig.rotate_left(7) ^ tape.kink_signature();
        }
        Ok((losses::mse(&preds, &targets)?, sig))
    };
    let (_, base_sig) = objective(&model)?;

    // Analytic gradients, one tape per essay seeded with dMSE/dy.
    let mut preds = Vec::new();
    for inp in &inputs {
        let mut tape = Tape::new();
        let mut drng = DropoutRng::new(0, 0);
        let fwd = model.forward(&mut tape, inp, false, &mut drng)?;
        preds.push(tape.value(fwd.total)[0]);
    }
    let (_, dy) = losses::mse_with_grad(&preds, &targets)?;
    let mut grads = model.zero_grads();
    for (inp, &g) in inputs.iter().zip(&dy) {
        let mut tape = match corrupt {
            Some(k) => Tape::with_corrupted_backward(k),
            None => Tape::new(),
        };
        let mut drng = DropoutRng::new(0, 0);
        let fwd = model.forward(&mut tape, inp, false, &mut drng)?;
        tape.backward_with(fwd.total, &[g])?;
        model.collect_grads(&tape, &fwd.bindings, &mut grads)?;
    }

    let mut cases = Vec::new();
    let trainable: Vec<usize> = model.params().trainable_ids().collect();
    for id in trainable {
        let name = model.params().name(id).to_string();
        let n = model.params().get(id).numel();
        let mut analytic = Vec::with_capacity(n);
        let mut numeric = Vec::with_capacity(n);
        let mut skipped = 0;
        for j in 0..n {
            let x0 = model.params().get(id).data()[j];
            let (xp, xm) = (x0 + EPSILON, x0 - EPSILON);
            model.params_mut().get_mut(id).data_mut()[j] = xp;
            let (lp, sp) = objective(&model)?;
            model.params_mut().get_mut(id).data_mut()[j] = xm;
            let (lm, sm) = objective(&model)?;
            model.params_mut().get_mut(id).data_mut()[j] = x0;
            // A ReLU or max winner flipping inside ±ε makes the difference
            // quotient meaningless for this coordinate.
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            analytic.push(grads[id][j]);
            numeric.push((lp - lm) / (xp - xm));
        }
        if skipped > 0 {
            log::debug!("{name}: {skipped} of {n} coordinates straddle a kink");
        }
        cases.push(CaseResult {
            name,
            rel_error: relative_error(&analytic, &numeric),
        });
    }
    Ok(SuiteReport {
        suite: "multiscale_head".into(),
        tolerance,
        cases,
    })
}

/// Runs all suites with the acceptance tolerances.
pub fn run_all(cfg: &ToyConfig) -> Result<Vec<SuiteReport>> {
    let corrupt = cfg.corrupt_backward.as_deref().and_then(OpKind::from_name);
    if let (Some(name), None) = (&cfg.corrupt_backward, corrupt) {
        return Err(crate::Error::InvalidArgument(format!("unknown op {name:?}")));
    }
    Ok(vec![
        tensor_suite(cfg.seed, corrupt, 1e-3)?,
        loss_suite(cfg.seed, 1e-4)?,
        head_suite(cfg, corrupt, 1e-3)?,
    ])
}
