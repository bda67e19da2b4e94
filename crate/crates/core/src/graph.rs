//! Per-minibatch similarity graph.
//!
//! Pipeline: squared distances → Gaussian kernel with zero diagonal →
//! `D^{-1/2} W D^{-1/2}` → column-stochastic transition matrix. Every stage is
//! recorded on a [`Tape`] so the loss can be differentiated back to the
//! embeddings. The bandwidth is always treated as a constant.

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::lpa::LabelSplit;

/// Plain-value view of one minibatch graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub w: Matrix,
    pub degree: Vec<f64>,
    pub a_norm: Matrix,
    pub sigma: f64,
}

/// Tape handles for the graph stages.
#[derive(Debug, Clone, Copy)]
pub struct GraphNodes {
    pub sq_dist: Var,
    pub w: Var,
    pub a_norm: Var,
}

/// Column-stochastic `T` with its masked/labeled blocks.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub t: Var,
    /// masked rows × masked columns
    pub t_uu: Var,
    /// masked rows × labeled columns
    pub t_ul: Var,
    pub labeled_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
}

pub fn pairwise_sq_distances(tape: &mut Tape, x: Var) -> Result<Var> {
    let v = tape.value(x);
    if v.nrows() < 2 {
        return Err(Error::invalid(format!("need at least 2 rows, got {}", v.nrows())));
    }
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("pairwise_sq_distances input".into()));
    }
    Ok(tape.pairwise_sqdist(x))
}

/// `W_ij = exp(-D2_ij / (2 sigma^2))` with the diagonal forced to zero.
pub fn gaussian_kernel(tape: &mut Tape, d2: Var, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    let n = tape.shape(d2).0;
    let scaled = tape.scale(d2, -1.0 / (2.0 * sigma * sigma));
    let k = tape.exp(scaled);
    let off_diag = tape.constant(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    tape.mul(k, off_diag)
}

/// `D^{-1/2} W D^{-1/2}`; fails on a zero-degree node.
pub fn symmetric_normalize(tape: &mut Tape, w: Var) -> Result<Var> {
    tape.sym_normalize(w)
}

pub fn column_stochastic(tape: &mut Tape, a_norm: Var, split: &LabelSplit) -> Result<TransitionMatrix> {
    let n = tape.shape(a_norm).0;
    if split.len() != n {
        return Err(Error::shape(
            "column_stochastic",
            format!("split over {} nodes for a {n}-node graph", split.len()),
        ));
    }
    let t = tape.column_normalize(a_norm)?;
    let t_uu = tape.select(t, &split.masked_idx, &split.masked_idx)?;
    let t_ul = tape.select(t, &split.masked_idx, &split.labeled_idx)?;
    Ok(TransitionMatrix {
        t,
        t_uu,
        t_ul,
        labeled_idx: split.labeled_idx.clone(),
        masked_idx: split.masked_idx.clone(),
    })
}

/// Distances, kernel and normalized adjacency for embeddings `x`.
pub fn build_graph(tape: &mut Tape, x: Var, sigma: f64) -> Result<GraphNodes> {
    let sq_dist = pairwise_sq_distances(tape, x)?;
    let w = gaussian_kernel(tape, sq_dist, sigma)?;
    let a_norm = symmetric_normalize(tape, w)?;
    Ok(GraphNodes { sq_dist, w, a_norm })
}

impl SimilarityGraph {
    pub fn from_embeddings(x: &Matrix, sigma: f64) -> Result<Self> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let g = build_graph(&mut tape, xv, sigma)?;
        let w = tape.value(g.w).clone();
        let degree = w.row_iter().map(|r| r.sum()).collect();
        Ok(Self {
            w,
            degree,
            a_norm: tape.value(g.a_norm).clone(),
            sigma,
        })
    }
}

/// Lower-middle element of the sorted values.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Bandwidth at the kernel's inflection point for the median pair:
/// `sqrt(median squared distance / 3)`.
pub fn sigma_sqrt(x: &Matrix) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("sigma_sqrt needs at least 2 rows, got {n}")));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                let diff = x[(i, k)] - x[(j, k)];
                s += diff * diff;
            }
            d2.push(s);
        }
    }
    let med = lower_median(&mut d2).unwrap();
    if !(med > 0.0) {
        return Err(Error::invalid(
            "median pairwise squared distance is 0 (points coincide); set sigma explicitly",
        ));
    }
    Ok((med / 3.0).sqrt())
}

/// Kernel as a function of bandwidth for a fixed squared distance `d`.
pub fn kernel_value(d: f64, sigma: f64) -> f64 {
    (-d / (2.0 * sigma * sigma)).exp()
}

/// `dk/dsigma = (d / sigma^3) exp(-d / (2 sigma^2))`.
pub fn kernel_dsigma(d: f64, sigma: f64) -> f64 {
    d / sigma.powi(3) * kernel_value(d, sigma)
}

/// `d^2k/dsigma^2 = d (d - 3 sigma^2) / sigma^6 · exp(-d / (2 sigma^2))`.
pub fn kernel_d2sigma(d: f64, sigma: f64) -> f64 {
    d * (d - 3.0 * sigma * sigma) / sigma.powi(6) * kernel_value(d, sigma)
}
