//! End-to-end gradient verification: composite loss through encoder, graph
//! construction and the propagation solve, against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{gradient_check, Matrix, Tape, Var};
use crate::encoder::{Architecture, ClassifierHead, EncoderParams};
use crate::error::Result;
use crate::graph::{build_graph, column_stochastic};
use crate::losses::{composite, cross_entropy, g_loss};
use crate::lpa::{gamma_split, normalize_soft_labels, one_hot, propagate_closed_form, LabelSplit};

/// One random problem: raw features, labels, a split, and parameters.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: LabelSplit,
    pub sigma: f64,
    pub lambda: f64,
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCaseResult {
    pub batch: usize,
    pub d_in: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub mlp: bool,
    pub sigma: f64,
    pub lambda: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub instances: usize,
    pub tol: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
    pub cases: Vec<GradCaseResult>,
}

/// Batch ≤ `max_batch` (≥ 4), features ≤ `max_dim`, classes ≤ `max_classes`.
pub fn random_case(rng: &mut ChaCha8Rng, max_batch: usize, max_dim: usize, max_classes: usize) -> Result<GradCase> {
    let b = rng.gen_range(4..=max_batch.max(4));
    let d_in = rng.gen_range(2..=max_dim.max(2));
    let embed = rng.gen_range(2..=max_dim.max(2));
    let c = rng.gen_range(2..=max_classes.max(2).min(b));
    let mut labels: Vec<usize> = (0..b).map(|i| i % c).collect();
    for i in (1..b).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    let x = Matrix::from_fn(b, d_in, |_, _| StandardNormal.sample(&mut *rng));
    let arch = if rng.gen_bool(0.5) {
        Architecture::Mlp2 {
            hidden: rng.gen_range(2..=6),
        }
    } else {
        Architecture::Linear
    };
    let mut encoder = EncoderParams::init(arch, d_in, embed, true, rng.gen())?;
    // nonzero biases so the check covers them away from the symmetric start
    for t in encoder.tensors.iter_mut().filter(|t| t.nrows() == 1) {
        for v in t.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let mut head = ClassifierHead::init(embed, c, rng.gen());
    for v in head.bias.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let gamma = rng.gen_range(0.3..0.7);
    let split = gamma_split(&labels, gamma, rng.gen(), true)?;
    Ok(GradCase {
        x,
        labels,
        num_classes: c,
        split,
        sigma: rng.gen_range(0.4..1.5),
        lambda: rng.gen_range(0.2..0.9),
        encoder,
        head,
    })
}

/// `λ·L_G + (1-λ)·L_CE` with the encoder tensors first in `vars`, then
/// head weight and bias.
pub fn composite_objective(case: &GradCase, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let n_enc = case.encoder.tensors.len();
    let x = tape.constant(case.x.clone());
    let z = case.encoder.encode(tape, &vars[..n_enc], x)?;
    let g = build_graph(tape, z, case.sigma)?;
    let tm = column_stochastic(tape, g.a_norm, &case.split)?;
    let lab: Vec<usize> = case.split.labeled_idx.iter().map(|&i| case.labels[i]).collect();
    let masked: Vec<usize> = case.split.masked_idx.iter().map(|&i| case.labels[i]).collect();
    let y_l = tape.constant(one_hot(&lab, case.num_classes));
    let raw = propagate_closed_form(tape, &tm, y_l)?;
    let y_hat = normalize_soft_labels(tape, raw)?;
    let lg = g_loss(tape, y_hat, &one_hot(&masked, case.num_classes))?;
    let head_vars = [vars[n_enc], vars[n_enc + 1]];
    let logits = case.head.classify(tape, &head_vars, z)?;
    let lce = cross_entropy(tape, logits, &case.labels)?;
    Ok(composite(tape, lg, lce, case.lambda)?.total)
}

pub fn gradcheck_end_to_end(instances: usize, seed: u64, eps: f64, tol: f64) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(instances);
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let case = random_case(&mut rng, 12, 8, 4)?;
        let mut inputs = case.encoder.tensors.clone();
        inputs.push(case.head.weight.clone());
        inputs.push(case.head.bias.clone());
        let r = gradient_check(|t, v| composite_objective(&case, t, v), &inputs, eps, tol)?;
        max_rel = max_rel.max(r.max_rel_err);
        max_abs = max_abs.max(r.max_abs_err);
        cases.push(GradCaseResult {
            batch: case.x.nrows(),
            d_in: case.x.ncols(),
            embed_dim: case.encoder.d_out,
            num_classes: case.num_classes,
            mlp: matches!(case.encoder.arch, Architecture::Mlp2 { .. }),
            sigma: case.sigma,
            lambda: case.lambda,
            max_rel_err: r.max_rel_err,
            max_abs_err: r.max_abs_err,
            checked: r.checked,
        });
    }
    Ok(GradCheckSummary {
        instances,
        tol,
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        pass: max_rel < tol,
        cases,
    })
}
