use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Values to try per axis; an empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub gamma: Vec<f64>,
    pub sigma_multiplier: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty() && self.sigma_multiplier.is_empty() && self.lambda.is_empty()
    }

    /// Cartesian product as `(gamma, sigma_multiplier, lambda)`.
    pub fn points(&self, base: &TrainConfig) -> Vec<(f64, f64, f64)> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let gammas = or(&self.gamma, base.gamma);
        let sigmas = or(&self.sigma_multiplier, base.sigma_scale);
        let lambdas = or(&self.lambda, base.lambda);
        let mut out = Vec::new();
        for &g in &gammas {
            for &s in &sigmas {
                for &l in &lambdas {
                    out.push((g, s, l));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub sigma_multiplier: f64,
    pub lambda: f64,
    pub runs: usize,
    pub failures: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub silhouette_mean: f64,
    /// Best macro-F1 mean over the grid minus this row's.
    pub deviation_from_best: f64,
    pub per_seed_accuracy: Vec<f64>,
    pub error: Option<String>,
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// One full run per grid point and seed, in parallel. A failing run is
/// recorded on its row and the sweep carries on.
pub fn sweep(
    base: &TrainConfig,
    grid: &SweepGrid,
    seeds: &[u64],
    train_ds: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    let points = grid.points(base);
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<(usize, Result<(f64, f64, f64)>)> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let (gamma, sigma_multiplier, lambda) = points[p];
            let mut cfg = base.clone();
            cfg.gamma = gamma;
            cfg.sigma_scale = sigma_multiplier;
            cfg.lambda = lambda;
            cfg.seed = seed;
            let r = train(&cfg, train_ds, val, test)
                .map(|r| (r.test.accuracy, r.test.macro_f1, r.test.macro_silhouette));
            (p, r)
        })
        .collect();

    let mut rows: Vec<SweepRow> = points
        .iter()
        .enumerate()
        .map(|(p, &(gamma, sigma_multiplier, lambda))| {
            let mut acc = Vec::new();
            let mut f1 = Vec::new();
            let mut sil = Vec::new();
            let mut error = None;
            let mut failures = 0;
            for (_, r) in results.iter().filter(|(q, _)| *q == p) {
                match r {
                    Ok((a, f, s)) => {
                        acc.push(*a);
                        f1.push(*f);
                        sil.push(*s);
                    }
                    Err(e) => {
                        failures += 1;
                        error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
            SweepRow {
                gamma,
                sigma_multiplier,
                lambda,
                runs: acc.len(),
                failures,
                accuracy_mean,
                accuracy_std,
                macro_f1_mean,
                macro_f1_std,
                silhouette_mean: mean_std(&sil).0,
                deviation_from_best: 0.0,
                per_seed_accuracy: acc,
                error,
            }
        })
        .collect();
    let best = rows
        .iter()
        .map(|r| r.macro_f1_mean)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    for r in &mut rows {
        r.deviation_from_best = best - r.macro_f1_mean;
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "gamma,sigma_multiplier,lambda,runs,failures,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,silhouette_mean,deviation_from_best,error"
    )?;
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.sigma_multiplier,
            r.lambda,
            r.runs,
            r.failures,
            r.accuracy_mean,
            r.accuracy_std,
            r.macro_f1_mean,
            r.macro_f1_std,
            r.silhouette_mean,
            r.deviation_from_best,
            err
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let base = TrainConfig::default();
        let g = SweepGrid {
            sigma_multiplier: vec![0.5, 1.0, 1.5, 2.0],
            ..Default::default()
        };
        let p = g.points(&base);
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|&(gm, _, l)| gm == base.gamma && l == base.lambda));
        let g = SweepGrid {
            gamma: vec![0.1, 0.5],
            lambda: vec![0.2, 0.4, 0.6],
            ..Default::default()
        };
        assert_eq!(g.points(&base).len(), 6);
        assert!(SweepGrid::default().is_empty());
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
