//! Training objectives as tape programs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::lpa::one_hot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Graph loss with a fixed (tuned) bandwidth.
    GlossO,
    /// Graph loss with the bandwidth taken from each batch's median distance.
    GlossSqrt,
    Ce,
    Scl,
    Triplet,
    Cosine,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::GlossO,
        LossKind::GlossSqrt,
        LossKind::Ce,
        LossKind::Scl,
        LossKind::Triplet,
        LossKind::Cosine,
    ];

    pub fn is_graph(self) -> bool {
        matches!(self, LossKind::GlossO | LossKind::GlossSqrt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::GlossO => "gloss_o",
            LossKind::GlossSqrt => "gloss_sqrt",
            LossKind::Ce => "ce",
            LossKind::Scl => "scl",
            LossKind::Triplet => "triplet",
            LossKind::Cosine => "cosine",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss `{s}`")))
    }
}

/// Scalar objective and its parts for one step.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: Var,
    pub lg: Option<f64>,
    pub lce: Option<f64>,
    pub lambda: f64,
    pub components: BTreeMap<String, f64>,
}

/// Mean cross-entropy of row-normalized soft labels against one-hot truth,
/// `-(1/B_e) sum_j sum_c y_jc log(y_hat_jc)`.
pub fn g_loss(tape: &mut Tape, y_hat: Var, y_true: &Matrix) -> Result<Var> {
    if tape.shape(y_hat) != y_true.shape() {
        return Err(Error::shape(
            "g_loss",
            format!("predictions {:?} vs truth {:?}", tape.shape(y_hat), y_true.shape()),
        ));
    }
    let n = y_true.nrows();
    if n == 0 {
        return Err(Error::invalid("g_loss needs at least one evaluation node"));
    }
    let logp = tape.log_clamped(y_hat);
    let truth = tape.constant(y_true.clone());
    let picked = tape.mul(logp, truth)?;
    let s = tape.reduce_sum(picked);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// Softmax cross-entropy averaged over the batch.
pub fn cross_entropy(tape: &mut Tape, logits: Var, y: &[usize]) -> Result<Var> {
    let (b, c) = tape.shape(logits);
    if y.len() != b {
        return Err(Error::shape("cross_entropy", format!("{b} rows, {} labels", y.len())));
    }
    if y.iter().any(|&l| l >= c) {
        return Err(Error::shape("cross_entropy", format!("label outside 0..{c}")));
    }
    let logp = tape.log_softmax_rows(logits, None)?;
    let truth = tape.constant(one_hot(y, c));
    let picked = tape.mul(logp, truth)?;
    let s = tape.reduce_sum(picked);
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// `lambda * lg + (1 - lambda) * lce`. At the endpoints the matching term is
/// returned as-is.
pub fn composite(tape: &mut Tape, lg: Var, lce: Var, lambda: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let total = if lambda == 0.0 {
        lce
    } else if lambda == 1.0 {
        lg
    } else {
        let a = tape.scale(lg, lambda);
        let b = tape.scale(lce, 1.0 - lambda);
        tape.add(a, b)?
    };
    let (vg, vce) = (tape.scalar(lg), tape.scalar(lce));
    if !vg.is_finite() || !vce.is_finite() {
        return Err(Error::NonFinite(format!("loss components lg={vg} lce={vce}")));
    }
    Ok(LossValue {
        total,
        lg: Some(vg),
        lce: Some(vce),
        lambda,
        components: BTreeMap::new(),
    })
}

/// Supervised contrastive loss over all anchors that have at least one
/// positive; anchors without positives are left out of the mean.
pub fn scl(tape: &mut Tape, z: Var, y: &[usize], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let b = tape.shape(z).0;
    if y.len() != b {
        return Err(Error::shape("scl", format!("{b} rows, {} labels", y.len())));
    }
    let pos_counts: Vec<usize> = (0..b)
        .map(|i| (0..b).filter(|&p| p != i && y[p] == y[i]).count())
        .collect();
    let anchors = pos_counts.iter().filter(|&&c| c > 0).count();
    if anchors == 0 {
        return Err(Error::invalid("scl: no anchor has a positive in this batch"));
    }
    let zt = tape.transpose(z);
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let others = Matrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { 1.0 });
    let logp = tape.log_softmax_rows(sim, Some(others))?;
    let weights = Matrix::from_fn(b, b, |i, p| {
        if p != i && y[p] == y[i] {
            1.0 / (pos_counts[i] as f64 * anchors as f64)
        } else {
            0.0
        }
    });
    let wv = tape.constant(weights);
    let picked = tape.mul(logp, wv)?;
    let s = tape.reduce_sum(picked);
    Ok(tape.neg(s))
}

/// Every in-batch (anchor, positive, negative) triple.
pub fn all_triplets(y: &[usize]) -> Vec<(usize, usize, usize)> {
    let b = y.len();
    let mut out = Vec::new();
    for a in 0..b {
        for p in 0..b {
            if p == a || y[p] != y[a] {
                continue;
            }
            for n in 0..b {
                if y[n] != y[a] {
                    out.push((a, p, n));
                }
            }
        }
    }
    out
}

/// Batch-all triplet hinge `max(0, d(a,p) - d(a,n) + alpha)` on squared distances.
pub fn triplet(tape: &mut Tape, z: Var, y: &[usize], alpha: f64) -> Result<Var> {
    let b = tape.shape(z).0;
    if y.len() != b {
        return Err(Error::shape("triplet", format!("{b} rows, {} labels", y.len())));
    }
    let triples = all_triplets(y);
    if triples.is_empty() {
        return Err(Error::invalid("triplet: no valid (anchor, positive, negative) in batch"));
    }
    let d2 = tape.pairwise_sqdist(z);
    let ap: Vec<(usize, usize)> = triples.iter().map(|&(a, p, _)| (a, p)).collect();
    let an: Vec<(usize, usize)> = triples.iter().map(|&(a, _, n)| (a, n)).collect();
    let dp = tape.gather(d2, &ap)?;
    let dn = tape.gather(d2, &an)?;
    let diff = tape.sub(dp, dn)?;
    let shifted = tape.add_scalar(diff, alpha);
    let hinge = tape.relu(shifted);
    tape.reduce_mean(hinge)
}

/// Mean of `(cos(z_i, z_j) - [y_i == y_j])^2` over all unordered pairs.
pub fn cosine_pair(tape: &mut Tape, z: Var, y: &[usize]) -> Result<Var> {
    let b = tape.shape(z).0;
    if y.len() != b {
        return Err(Error::shape("cosine_pair", format!("{b} rows, {} labels", y.len())));
    }
    if b < 2 {
        return Err(Error::invalid("cosine_pair needs at least 2 rows"));
    }
    let zn = tape.l2_row_normalize(z)?;
    let znt = tape.transpose(zn);
    let cos = tape.matmul(zn, znt)?;
    let pairs: Vec<(usize, usize)> = (0..b)
        .flat_map(|i| ((i + 1)..b).map(move |j| (i, j)))
        .collect();
    let target = Matrix::from_iterator(
        pairs.len(),
        1,
        pairs.iter().map(|&(i, j)| if y[i] == y[j] { 1.0 } else { 0.0 }),
    );
    let picked = tape.gather(cos, &pairs)?;
    let t = tape.constant(target);
    let err = tape.sub(picked, t)?;
    let sq = tape.mul(err, err)?;
    tape.reduce_mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::EPS_LOG;

    #[test]
    fn g_loss_perfect_and_uniform() {
        let mut t = Tape::new();
        let truth = one_hot(&[0, 2, 1], 3);
        let yh = t.param(truth.clone());
        let l = g_loss(&mut t, yh, &truth).unwrap();
        let expected = -(1.0 - 2.0 * EPS_LOG).ln();
        assert!((t.scalar(l) - expected).abs() < 1e-10);

        let uni = t.param(Matrix::from_element(3, 3, 1.0 / 3.0));
        let l = g_loss(&mut t, uni, &truth).unwrap();
        assert!((t.scalar(l) - 3f64.ln()).abs() < 1e-12);

        let bad = t.param(Matrix::zeros(2, 3));
        assert!(g_loss(&mut t, bad, &truth).is_err());
    }

    #[test]
    fn ce_equal_logits_and_saturation() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_element(4, 5, 0.3));
        let l = cross_entropy(&mut t, z, &[0, 1, 2, 3]).unwrap();
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-12);

        let mut logits = Matrix::zeros(2, 3);
        logits[(0, 1)] = 1000.0;
        logits[(1, 0)] = 1000.0;
        let z = t.param(logits);
        let l = cross_entropy(&mut t, z, &[1, 0]).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);
    }

    #[test]
    fn composite_endpoints() {
        let mut t = Tape::new();
        let lg = t.param(Matrix::from_element(1, 1, 2.0));
        let lce = t.param(Matrix::from_element(1, 1, 1.0));
        let v0 = composite(&mut t, lg, lce, 0.0).unwrap();
        assert_eq!(v0.total, lce);
        let v1 = composite(&mut t, lg, lce, 1.0).unwrap();
        assert_eq!(v1.total, lg);
        let v = composite(&mut t, lg, lce, 0.8).unwrap();
        assert!((t.scalar(v.total) - 1.8).abs() < 1e-12);
        assert!(composite(&mut t, lg, lce, 1.2).is_err());
        assert!(composite(&mut t, lg, lce, -0.1).is_err());
    }

    #[test]
    fn scl_two_same_class_is_zero() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]));
        let l = scl(&mut t, z, &[1, 1], 0.1).unwrap();
        assert!(t.scalar(l).abs() < 1e-15);
        assert!(scl(&mut t, z, &[0, 1], 0.1).is_err());
        assert!(scl(&mut t, z, &[1, 1], 0.0).is_err());
    }

    #[test]
    fn scl_large_tau_limit() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_fn(6, 3, |i, j| ((i + 2 * j) as f64).cos()));
        let l = scl(&mut t, z, &[0, 0, 1, 1, 2, 2], 1e9).unwrap();
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn triplet_margins() {
        let mut t = Tape::new();
        // anchor 0, positive 1 at distance 0, negative 2 at squared distance 4
        let z = t.param(Matrix::from_row_slice(3, 1, &[0.0, 0.0, 2.0]));
        let l = triplet(&mut t, z, &[0, 0, 1], 0.5).unwrap();
        // triples (0,1,2) and (1,0,2): both inactive
        assert_eq!(t.scalar(l), 0.0);

        // positive coincides with negative
        let z = t.param(Matrix::from_row_slice(3, 1, &[0.0, 1.0, 1.0]));
        let l = triplet(&mut t, z, &[0, 0, 1], 0.5).unwrap();
        // (0,1,2): 1 - 1 + 0.5 ; (1,0,2): 1 - 0 + 0.5
        assert!((t.scalar(l) - (0.5 + 1.5) / 2.0).abs() < 1e-15);
        assert!(triplet(&mut t, z, &[0, 1, 2], 0.5).is_err());
    }

    #[test]
    fn cosine_simple_cases() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]));
        let l = cosine_pair(&mut t, z, &[0, 0]).unwrap();
        assert!(t.scalar(l).abs() < 1e-15);
        let z = t.param(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]));
        let l = cosine_pair(&mut t, z, &[0, 1]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let z = t.param(Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 3.0]));
        assert!(cosine_pair(&mut t, z, &[0, 1]).is_err());
    }

    #[test]
    fn loss_kind_names() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("bce".parse::<LossKind>().is_err());
    }
}
