//! Label propagation over the minibatch graph.
//!
//! A batch is split into a labeled set and a masked set; the masked labels are
//! inferred in closed form as `(I - T_uu)^{-1} T_ul Y_l`. The Neumann series of
//! the same inverse and a Monte-Carlo absorbing walk ([`oracle`]) are kept as
//! independent routes for verification.

pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{lu_solve, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::TransitionMatrix;

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// γ band outside of which a split is accepted with a warning.
pub const GAMMA_WARN_RANGE: (f64, f64) = (0.1, 0.9);

/// Partition of batch positions into labeled and masked nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSplit {
    pub labeled_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    pub gamma: f64,
}

impl LabelSplit {
    pub fn from_parts(mut labeled_idx: Vec<usize>, mut masked_idx: Vec<usize>, gamma: f64) -> Result<Self> {
        if labeled_idx.is_empty() || masked_idx.is_empty() {
            return Err(Error::invalid(format!(
                "split needs at least one labeled and one masked node, got {} / {}",
                labeled_idx.len(),
                masked_idx.len()
            )));
        }
        labeled_idx.sort_unstable();
        masked_idx.sort_unstable();
        let n = labeled_idx.len() + masked_idx.len();
        let mut seen = vec![false; n];
        for &i in labeled_idx.iter().chain(&masked_idx) {
            if i >= n || seen[i] {
                return Err(Error::invalid("split indices must partition 0..B"));
            }
            seen[i] = true;
        }
        Ok(Self {
            labeled_idx,
            masked_idx,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.labeled_idx.len() + self.masked_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn gamma_warning(gamma: f64) -> Option<String> {
    let (lo, hi) = GAMMA_WARN_RANGE;
    (gamma < lo || gamma > hi)
        .then(|| format!("gamma {gamma} outside the usual range [{lo}, {hi}]"))
}

/// Seeded γ-split of a batch with labels `y`.
///
/// `round(gamma * B)` nodes are labeled. With `stratify`, every class present
/// in the batch gets one labeled anchor first, provided there are enough
/// labeled slots for all of them.
pub fn gamma_split(y: &[usize], gamma: f64, seed: u64, stratify: bool) -> Result<LabelSplit> {
    let b = y.len();
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must be in (0, 1), got {gamma}")));
    }
    if b < 4 {
        return Err(Error::invalid(format!("gamma split needs a batch of at least 4, got {b}")));
    }
    let n_labeled = (gamma * b as f64).round() as usize;
    if n_labeled == 0 || n_labeled >= b {
        return Err(Error::invalid(format!(
            "gamma {gamma} on a batch of {b} gives {n_labeled} labeled nodes"
        )));
    }
    if let Some(w) = gamma_warning(gamma) {
        log::warn!("{w}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(n_labeled);
    let mut pool: Vec<usize> = (0..b).collect();

    if stratify {
        let mut classes: Vec<usize> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() <= n_labeled {
            for &c in &classes {
                let members: Vec<usize> = (0..b).filter(|&i| y[i] == c).collect();
                labeled.push(members[rng.gen_range(0..members.len())]);
            }
            pool.retain(|i| !labeled.contains(i));
        }
    }
    pool.shuffle(&mut rng);
    let extra = n_labeled - labeled.len();
    labeled.extend_from_slice(&pool[..extra]);
    let masked = pool[extra..].to_vec();
    LabelSplit::from_parts(labeled, masked, gamma)
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), num_classes, |i, c| if labels[i] == c { 1.0 } else { 0.0 })
}

/// `||M||_1 ||M^{-1}||_1`, infinite when `M` is not invertible.
pub fn condition_estimate(m: &Matrix) -> f64 {
    let norm1 = |a: &Matrix| {
        a.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match m.clone().try_inverse() {
        Some(inv) => norm1(m) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// Closed-form propagation on the tape. Returns the raw (unnormalized)
/// soft labels for the masked nodes, with negative noise clamped to zero.
pub fn propagate_closed_form(tape: &mut Tape, tm: &TransitionMatrix, y_labeled: Var) -> Result<Var> {
    let n = tm.masked_idx.len();
    if tape.shape(y_labeled).0 != tm.labeled_idx.len() {
        return Err(Error::shape(
            "propagate_closed_form",
            format!(
                "{} labeled rows for {} labeled nodes",
                tape.shape(y_labeled).0,
                tm.labeled_idx.len()
            ),
        ));
    }
    let eye = tape.constant(Matrix::identity(n, n));
    let system = tape.sub(eye, tm.t_uu)?;
    let condition = condition_estimate(tape.value(system));
    if !(condition <= MAX_CONDITION) {
        let rho = spectral_radius(tape.value(tm.t_uu), 200, 0).unwrap_or(f64::NAN);
        return Err(Error::Singular { condition, rho });
    }
    let rhs = tape.matmul(tm.t_ul, y_labeled)?;
    let solved = tape.linear_solve(system, rhs).map_err(|_| Error::Singular {
        condition,
        rho: spectral_radius(tape.value(tm.t_uu), 200, 0).unwrap_or(f64::NAN),
    })?;
    Ok(tape.relu(solved))
}

/// Row-normalize soft labels so each masked node carries a distribution.
pub fn normalize_soft_labels(tape: &mut Tape, y_hat: Var) -> Result<Var> {
    tape.row_normalize(y_hat)
}

/// Closed form on plain matrices.
pub fn closed_form_values(t_uu: &Matrix, t_ul: &Matrix, y_labeled: &Matrix) -> Result<Matrix> {
    let n = t_uu.nrows();
    let system = Matrix::identity(n, n) - t_uu;
    let condition = condition_estimate(&system);
    let singular = || Error::Singular {
        condition,
        rho: spectral_radius(t_uu, 200, 0).unwrap_or(f64::NAN),
    };
    if !(condition <= MAX_CONDITION) {
        return Err(singular());
    }
    let rhs = t_ul * y_labeled;
    let out = lu_solve(&system, &rhs).ok_or_else(singular)?;
    Ok(out.map(|v| v.max(0.0)))
}

/// Partial sums of `(I + T_uu + T_uu^2 + ...) T_ul Y_l` until the added term
/// falls below `tol` in max-norm. Returns the limit and the number of terms
/// added after the first.
pub fn propagate_neumann(
    t_uu: &Matrix,
    t_ul: &Matrix,
    y_labeled: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<(Matrix, usize)> {
    if !t_uu.is_square() || t_uu.nrows() != t_ul.nrows() || t_ul.ncols() != y_labeled.nrows() {
        return Err(Error::shape(
            "propagate_neumann",
            format!(
                "T_uu {:?}, T_ul {:?}, Y_l {:?}",
                t_uu.shape(),
                t_ul.shape(),
                y_labeled.shape()
            ),
        ));
    }
    let mut term = t_ul * y_labeled;
    let mut sum = term.clone();
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        term = t_uu * &term;
        sum += &term;
        change = term.amax();
        if !change.is_finite() {
            break;
        }
        if change < tol {
            return Ok((sum, it));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: change,
    })
}

/// Power-iteration estimate of the spectral radius.
///
/// The returned value is the geometric mean of the per-step growth factors
/// over the second half of the iterations, which also settles for periodic
/// (e.g. bipartite) nonnegative matrices.
pub fn spectral_radius(m: &Matrix, iters: usize, seed: u64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::shape("spectral_radius", format!("{:?}", m.shape())));
    }
    if iters < 10 {
        return Err(Error::invalid(format!("spectral_radius needs iters >= 10, got {iters}")));
    }
    let n = m.nrows();
    if n == 0 || m.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    v /= v.norm();
    let burn = iters / 2;
    let mut log_sum = 0.0;
    let mut counted = 0usize;
    for it in 0..iters {
        let next = m * &v;
        let growth = next.norm();
        if growth == 0.0 {
            return Ok(0.0);
        }
        if it >= burn {
            log_sum += growth.ln();
            counted += 1;
        }
        v = next / growth;
    }
    Ok((log_sum / counted as f64).exp())
}

/// Largest row sum of raw soft labels; absorbed mass above 1 is worth flagging.
pub fn max_row_mass(y_hat: &Matrix) -> f64 {
    y_hat.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, column_stochastic};

    #[test]
    fn split_counts() {
        let y = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let s = gamma_split(&y, 0.6, 3, true).unwrap();
        assert_eq!((s.labeled_idx.len(), s.masked_idx.len()), (6, 4));
        assert_eq!(s, gamma_split(&y, 0.6, 3, true).unwrap());
        let mut all: Vec<usize> = s.labeled_idx.iter().chain(&s.masked_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_degenerate_gamma() {
        let y = [0, 1, 0, 1];
        assert!(gamma_split(&y, 0.1, 0, true).is_err());
        assert!(gamma_split(&y, 0.95, 0, true).is_err());
        assert!(gamma_split(&y, 0.0, 0, true).is_err());
        assert!(gamma_split(&[0, 1, 0], 0.5, 0, true).is_err());
    }

    #[test]
    fn gamma_warning_band() {
        for g in [0.5, 0.6, 0.7, 0.1, 0.9] {
            assert!(gamma_warning(g).is_none(), "{g}");
        }
        assert!(gamma_warning(0.05).is_some());
        assert!(gamma_warning(0.95).is_some());
    }

    #[test]
    fn stratified_anchor_per_class() {
        let y = [0, 0, 0, 0, 0, 0, 0, 1, 2, 2, 2, 2];
        for seed in 0..50 {
            let s = gamma_split(&y, 0.3, seed, true).unwrap();
            for c in 0..3 {
                assert!(s.labeled_idx.iter().any(|&i| y[i] == c), "seed {seed} class {c}");
            }
        }
    }

    #[test]
    fn zero_t_uu_is_direct_product() {
        let t_uu = Matrix::zeros(2, 2);
        let t_ul = Matrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let y = one_hot(&[1, 0], 2);
        let cf = closed_form_values(&t_uu, &t_ul, &y).unwrap();
        assert_eq!(cf, &t_ul * &y);
        let (nm, it) = propagate_neumann(&t_uu, &t_ul, &y, 1e-12, 10).unwrap();
        assert_eq!(it, 1);
        assert_eq!(nm, &t_ul * &y);
    }

    #[test]
    fn scalar_geometric_series() {
        let t_uu = Matrix::from_element(1, 1, 0.5);
        let t_ul = Matrix::from_element(1, 1, 0.3);
        let y = Matrix::from_element(1, 1, 1.0);
        let tol = 1e-10;
        let (nm, it) = propagate_neumann(&t_uu, &t_ul, &y, tol, 1000).unwrap();
        assert!((nm[(0, 0)] - 0.6).abs() < 1e-9);
        // 0.3 * 0.5^k < tol
        let expected = ((tol / 0.3).ln() / 0.5f64.ln()).floor() as usize + 1;
        assert_eq!(it, expected);
        assert!(matches!(
            propagate_neumann(&t_uu, &t_ul, &y, tol, 5),
            Err(Error::NonConvergence { iterations: 5, .. })
        ));
    }

    #[test]
    fn path_graph_hand_solve() {
        // a(labeled, 0) - b(masked) - c(labeled, 1), unit weights
        let mut tape = Tape::new();
        let w = tape.constant(Matrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        ));
        let a = tape.sym_normalize(w).unwrap();
        let split = LabelSplit::from_parts(vec![0, 2], vec![1], 0.6).unwrap();
        let tm = column_stochastic(&mut tape, a, &split).unwrap();
        let yl = tape.constant(one_hot(&[0, 1], 2));
        let y_hat = propagate_closed_form(&mut tape, &tm, yl).unwrap();
        // degrees (1, 2, 1): A_ab = A_bc = 1/sqrt 2, column sums of A are
        // (1/sqrt2, sqrt2, 1/sqrt2), so T_ba = T_bc = 1 and T_bb = 0.
        let got = tape.value(y_hat);
        assert!((got[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((got[(0, 1)] - 1.0).abs() < 1e-12);
        let norm = normalize_soft_labels(&mut tape, y_hat).unwrap();
        assert!((tape.value(norm)[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_neumann_on_graph() {
        let x = Matrix::from_fn(10, 3, |i, j| ((i * 5 + j * 7) % 11) as f64 / 11.0);
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = build_graph(&mut tape, xv, 0.5).unwrap();
        let split = gamma_split(&y, 0.5, 1, true).unwrap();
        let tm = column_stochastic(&mut tape, g.a_norm, &split).unwrap();
        let yl = one_hot(&split.labeled_idx.iter().map(|&i| y[i]).collect::<Vec<_>>(), 3);
        let ylv = tape.constant(yl.clone());
        let cf = propagate_closed_form(&mut tape, &tm, ylv).unwrap();
        let (nm, _) =
            propagate_neumann(tape.value(tm.t_uu), tape.value(tm.t_ul), &yl, 1e-12, 100_000).unwrap();
        assert!((tape.value(cf) - nm).amax() < 1e-9);
    }

    #[test]
    fn singular_system_reported() {
        let t_uu = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let t_ul = Matrix::zeros(2, 1);
        let y = Matrix::from_element(1, 1, 1.0);
        match closed_form_values(&t_uu, &t_ul, &y) {
            Err(Error::Singular { rho, .. }) => assert!((rho - 1.0).abs() < 1e-9),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn spectral_radius_cases() {
        let eye = Matrix::identity(3, 3);
        assert!((spectral_radius(&eye, 50, 0).unwrap() - 1.0).abs() < 1e-9);
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 0.7]));
        assert!((spectral_radius(&d, 100, 0).unwrap() - 0.7).abs() < 1e-6);
        assert_eq!(spectral_radius(&Matrix::zeros(3, 3), 20, 0).unwrap(), 0.0);
        assert!(spectral_radius(&eye, 5, 0).is_err());
        // bipartite 2-cycle: eigenvalues ±sqrt(ab)
        let m = Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.8, 0.0]);
        assert!((spectral_radius(&m, 100, 0).unwrap() - 0.4f64.sqrt()).abs() < 1e-9);
    }
}
