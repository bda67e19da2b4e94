//! Independent routes to the propagated labels, used by `lpa-verify` and the
//! test suites.
//!
//! Two Monte-Carlo estimators are provided:
//!
//! * [`walk_blocks`] treats the rows of `[T_uu | T_ul]` as step distributions
//!   from each masked node (any missing mass kills the walk). Its expectation
//!   is exactly `(I - T_uu)^{-1} T_ul Y_l` for row-substochastic blocks.
//! * [`walk_graph`] works on a full column-stochastic `T = Ã S^{-1}` built from
//!   a symmetric `Ã`. From node `i` the walk moves to `j` with probability
//!   `T_ji` (column `i`), stopping on the first labeled node `l`, and tallies
//!   the weight `s_u / s_l` where `s` are the column sums of `Ã`. Since
//!   `(I - T_uu)^{-1} T_ul = S_u (I - P_uu)^{-1} P_ul S_l^{-1}` with `P = T^T`,
//!   the weighted absorption tally has the closed form as its expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{closed_form_values, gamma_split, one_hot, propagate_neumann, spectral_radius, LabelSplit};
use crate::autodiff::{Matrix, Tape};
use crate::error::Result;
use crate::graph::{build_graph, column_stochastic};

/// Walk cap; a walk still alive after this many steps is dropped.
const MAX_STEPS: usize = 100_000;

/// Estimate of `(I - T_uu)^{-1} T_ul Y_l` from `walks` absorbing walks per
/// masked node, using the rows of the blocks as transition probabilities.
pub fn walk_blocks(
    t_uu: &Matrix,
    t_ul: &Matrix,
    labeled_classes: &[usize],
    num_classes: usize,
    walks: usize,
    seed: u64,
) -> Matrix {
    let n_u = t_uu.nrows();
    let n_l = t_ul.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(n_u, num_classes);
    for start in 0..n_u {
        for _ in 0..walks {
            let mut cur = start;
            'walk: for _ in 0..MAX_STEPS {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                for j in 0..n_u {
                    acc += t_uu[(cur, j)];
                    if r < acc {
                        cur = j;
                        continue 'walk;
                    }
                }
                for l in 0..n_l {
                    acc += t_ul[(cur, l)];
                    if r < acc {
                        out[(start, labeled_classes[l])] += 1.0;
                        break 'walk;
                    }
                }
                // leftover mass: the walk dies
                break;
            }
        }
    }
    out / walks as f64
}

/// Estimate of the closed-form soft labels for a graph batch, from `walks`
/// degree-weighted absorbing walks per masked node (see module docs).
pub fn walk_graph(
    t: &Matrix,
    col_sums: &[f64],
    split: &LabelSplit,
    labels: &[usize],
    num_classes: usize,
    walks: usize,
    seed: u64,
) -> Matrix {
    let b = t.nrows();
    let mut is_labeled = vec![false; b];
    for &l in &split.labeled_idx {
        is_labeled[l] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(split.masked_idx.len(), num_classes);
    for (row, &start) in split.masked_idx.iter().enumerate() {
        for _ in 0..walks {
            let mut cur = start;
            for _ in 0..MAX_STEPS {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                let mut next = b - 1;
                for j in 0..b {
                    acc += t[(j, cur)];
                    if r < acc {
                        next = j;
                        break;
                    }
                }
                cur = next;
                if is_labeled[cur] {
                    out[(row, labels[cur])] += col_sums[start] / col_sums[cur];
                    break;
                }
            }
        }
    }
    out / walks as f64
}

/// A random graph batch with its transition blocks as plain matrices.
#[derive(Debug, Clone)]
pub struct BatchInstance {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub sigma: f64,
    pub split: LabelSplit,
    pub t: Matrix,
    pub a_col_sums: Vec<f64>,
    pub t_uu: Matrix,
    pub t_ul: Matrix,
    pub y_labeled: Matrix,
}

/// Unit-norm Gaussian embeddings, random labels, random σ and γ.
pub fn random_batch(rng: &mut ChaCha8Rng, batch: usize, dim: usize, num_classes: usize) -> Result<BatchInstance> {
    let mut x = Matrix::from_fn(batch, dim, |_, _| StandardNormal.sample(&mut *rng));
    for mut row in x.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..num_classes)).collect();
    let sigma = rng.gen_range(0.3..2.0);
    let gamma = rng.gen_range(0.3..0.7);
    let split = gamma_split(&labels, gamma, rng.gen(), true)?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = build_graph(&mut tape, xv, sigma)?;
    let tm = column_stochastic(&mut tape, g.a_norm, &split)?;
    let a = tape.value(g.a_norm);
    let a_col_sums = a.column_iter().map(|c| c.sum()).collect();
    let y_lab: Vec<usize> = split.labeled_idx.iter().map(|&i| labels[i]).collect();
    Ok(BatchInstance {
        embeddings: x,
        t: tape.value(tm.t).clone(),
        t_uu: tape.value(tm.t_uu).clone(),
        t_ul: tape.value(tm.t_ul).clone(),
        y_labeled: one_hot(&y_lab, num_classes),
        labels,
        num_classes,
        sigma,
        split,
        a_col_sums,
    })
}

/// Random blocks whose rows of `[T_uu | T_ul]` sum to at most 1.
pub fn random_substochastic_blocks(rng: &mut ChaCha8Rng, n_u: usize, n_l: usize) -> (Matrix, Matrix) {
    let mut t_uu = Matrix::zeros(n_u, n_u);
    let mut t_ul = Matrix::zeros(n_u, n_l);
    for i in 0..n_u {
        let raw: Vec<f64> = (0..n_u + n_l).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let keep = rng.gen_range(0.7..1.0);
        for (j, v) in raw.iter().enumerate() {
            let p = keep * v / total;
            if j < n_u {
                t_uu[(i, j)] = p;
            } else {
                t_ul[(i, j - n_u)] = p;
            }
        }
    }
    (t_uu, t_ul)
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleReport {
    pub neumann_instances: usize,
    pub max_closed_vs_neumann: f64,
    pub walk_instances: usize,
    pub max_closed_vs_walk: f64,
    pub max_rho: f64,
    pub max_row_mass: f64,
}

/// Closed form against Neumann (`neumann_instances` batches, B ≤
/// `max_batch`) and against the graph walk (`walk_instances` batches, B ≤ 8).
pub fn verify_triangle(
    neumann_instances: usize,
    max_batch: usize,
    walk_instances: usize,
    walks: usize,
    seed: u64,
) -> Result<TriangleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TriangleReport {
        neumann_instances,
        max_closed_vs_neumann: 0.0,
        walk_instances,
        max_closed_vs_walk: 0.0,
        max_rho: 0.0,
        max_row_mass: 0.0,
    };
    for _ in 0..neumann_instances {
        let b = rng.gen_range(4..=max_batch.max(4));
        let inst = random_batch(&mut rng, b, 4, 3)?;
        let cf = closed_form_values(&inst.t_uu, &inst.t_ul, &inst.y_labeled)?;
        let (nm, _) = propagate_neumann(&inst.t_uu, &inst.t_ul, &inst.y_labeled, 1e-10, 1_000_000)?;
        report.max_closed_vs_neumann = report.max_closed_vs_neumann.max((&cf - nm).amax());
        report.max_rho = report.max_rho.max(spectral_radius(&inst.t_uu, 500, 1)?);
        report.max_row_mass = report.max_row_mass.max(super::max_row_mass(&cf));
    }
    for k in 0..walk_instances {
        let b = rng.gen_range(4..=8);
        let inst = random_batch(&mut rng, b, 4, 3)?;
        let cf = closed_form_values(&inst.t_uu, &inst.t_ul, &inst.y_labeled)?;
        let mc = walk_graph(
            &inst.t,
            &inst.a_col_sums,
            &inst.split,
            &inst.labels,
            inst.num_classes,
            walks,
            seed ^ (k as u64 + 1),
        );
        report.max_closed_vs_walk = report.max_closed_vs_walk.max((&cf - mc).amax());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_walk_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let (t_uu, t_ul) = random_substochastic_blocks(&mut rng, 4, 3);
            let classes = [0, 1, 1];
            let y = one_hot(&classes, 2);
            let cf = closed_form_values(&t_uu, &t_ul, &y).unwrap();
            let mc = walk_blocks(&t_uu, &t_ul, &classes, 2, 100_000, 9);
            assert!((&cf - &mc).amax() < 2e-2, "{cf} vs {mc}");
        }
    }

    #[test]
    fn graph_walk_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inst = random_batch(&mut rng, 6, 4, 3).unwrap();
        let cf = closed_form_values(&inst.t_uu, &inst.t_ul, &inst.y_labeled).unwrap();
        let mc = walk_graph(&inst.t, &inst.a_col_sums, &inst.split, &inst.labels, 3, 100_000, 3);
        assert!((&cf - &mc).amax() < 2e-2, "{cf} vs {mc}");
    }
}
