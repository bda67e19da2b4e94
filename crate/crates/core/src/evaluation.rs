//! Classification and representation-quality metrics, and the paired t-test
//! used to compare losses across runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_silhouette: f64,
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1 over all `num_classes` classes. A class
/// that never occurs in either vector scores 0 and still counts.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(pred, truth)?;
    if num_classes == 0 {
        return Err(Error::invalid("macro_f1 needs at least one class"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(format!("label outside 0..{num_classes}")));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

fn euclidean(z: &Matrix, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..z.ncols() {
        let d = z[(i, k)] - z[(j, k)];
        s += d * d;
    }
    s.sqrt()
}

/// Class-balanced silhouette: per-point `(b - a) / max(a, b)`, averaged
/// within each present class, then across classes. Points in singleton
/// classes score 0.
pub fn macro_silhouette(z: &Matrix, y: &[usize]) -> Result<f64> {
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::invalid(format!("{n} embeddings for {} labels", y.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("silhouette embeddings".into()));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two classes present"));
    }
    let k = classes.len();
    let slot = |label: usize| classes.binary_search(&label).unwrap();
    let members: Vec<usize> = {
        let mut m = vec![0usize; k];
        for &l in y {
            m[slot(l)] += 1;
        }
        m
    };

    let mut class_sum = vec![0.0; k];
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[slot(y[j])] += euclidean(z, i, j);
            }
        }
        let own = slot(y[i]);
        let s = if members[own] == 1 {
            0.0
        } else {
            let a = sums[own] / (members[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / members[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        };
        class_sum[own] += s;
    }
    let total: f64 = (0..k).map(|c| class_sum[c] / members[c] as f64).sum();
    Ok(total / k as f64)
}

/// Silhouette value used for monitoring; falls back to 0 when fewer than two
/// classes are present in the evaluated slice.
pub fn macro_silhouette_or_zero(z: &Matrix, y: &[usize]) -> f64 {
    macro_silhouette(z, y).unwrap_or(0.0)
}

pub fn evaluate(pred: &[usize], truth: &[usize], z: &Matrix, num_classes: usize) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(pred, truth)?,
        macro_f1: macro_f1(pred, truth, num_classes)?,
        macro_silhouette: macro_silhouette_or_zero(z, truth),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub mean_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    let se = (var / n as f64).sqrt();
    let (t_stat, p_value) = if se == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        mean_diff: mean,
        t_stat,
        p_value,
        dof,
    })
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "****"
    } else if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
