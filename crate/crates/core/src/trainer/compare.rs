use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::Serialize;

use super::sweep::mean_std;
use super::{train, Mode, TrainConfig, TrainReport};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{paired_t_test, significance_stars};
use crate::losses::LossKind;

/// One loss across seeds: test accuracy, macro-F1 and silhouette, total and
/// per-epoch training time, and the epoch training stopped at.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub loss: LossKind,
    pub mode: Mode,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub silhouette_mean: f64,
    pub silhouette_std: f64,
    pub total_time_mean: f64,
    pub epoch_time_mean: f64,
    pub early_stop_epoch_mean: f64,
    pub per_seed_accuracy: Vec<f64>,
    pub per_seed_val_silhouette: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceRow {
    pub reference: LossKind,
    pub other: LossKind,
    pub reference_mean: f64,
    pub other_mean: f64,
    pub mean_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutput {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    /// First loss against every other, paired by seed on test accuracy.
    pub significance: Vec<SignificanceRow>,
    #[serde(skip)]
    pub reports: Vec<Vec<TrainReport>>,
}

/// Mode a loss runs in: plain cross-entropy is always integrated.
pub fn mode_for(base: &TrainConfig, loss: LossKind) -> Mode {
    if loss == LossKind::Ce {
        Mode::Integrated
    } else {
        base.mode
    }
}

/// Each loss under identical data, seeds and settings. Runs are sequential
/// so the timing columns are not distorted by contention.
pub fn compare(
    base: &TrainConfig,
    losses: &[LossKind],
    seeds: &[u64],
    train_ds: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<CompareOutput> {
    if losses.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("compare needs at least one loss and one seed"));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &loss in losses {
        let mut cfg = base.clone();
        cfg.loss = loss;
        cfg.mode = mode_for(base, loss);
        let mut runs = Vec::new();
        for &seed in seeds {
            cfg.seed = seed;
            runs.push(train(&cfg, train_ds, val, test)?);
        }
        let pick = |f: &dyn Fn(&TrainReport) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        let acc = pick(&|r| r.test.accuracy);
        let f1 = pick(&|r| r.test.macro_f1);
        let sil = pick(&|r| r.test.macro_silhouette);
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
        let (silhouette_mean, silhouette_std) = mean_std(&sil);
        rows.push(CompareRow {
            loss,
            mode: cfg.mode,
            runs: runs.len(),
            accuracy_mean,
            accuracy_std,
            macro_f1_mean,
            macro_f1_std,
            silhouette_mean,
            silhouette_std,
            total_time_mean: mean_std(&pick(&|r| r.total_time)).0,
            epoch_time_mean: mean_std(&pick(&|r| r.mean_epoch_time())).0,
            early_stop_epoch_mean: mean_std(&pick(&|r| r.early_stop_epoch as f64)).0,
            per_seed_accuracy: acc,
            per_seed_val_silhouette: pick(&|r| r.epochs[r.best_epoch.max(1) - 1].val_macro_silhouette),
        });
        reports.push(runs);
    }

    let mut significance = Vec::new();
    if seeds.len() < 2 {
        warn!("paired t-tests need at least two seeds; significance table left empty");
    } else {
        let reference = &rows[0];
        for other in &rows[1..] {
            let t = paired_t_test(&reference.per_seed_accuracy, &other.per_seed_accuracy)?;
            significance.push(SignificanceRow {
                reference: reference.loss,
                other: other.loss,
                reference_mean: reference.accuracy_mean,
                other_mean: other.accuracy_mean,
                mean_diff: t.mean_diff,
                t_stat: t.t_stat,
                p_value: t.p_value,
                stars: significance_stars(t.p_value).to_string(),
            });
        }
    }
    Ok(CompareOutput {
        seeds: seeds.to_vec(),
        rows,
        significance,
        reports,
    })
}

/// `compare.csv`, `significance.csv` and `compare.json` in `dir`.
pub fn write_compare(out: &CompareOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("compare.csv"))?;
    writeln!(
        f,
        "loss,mode,runs,test_accuracy_mean,test_accuracy_std,test_macro_f1_mean,test_macro_f1_std,test_macro_silhouette_mean,total_train_time_s,epoch_time_s,early_stop_epoch"
    )?;
    for r in &out.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.loss,
            serde_json::to_value(r.mode)?.as_str().unwrap_or(""),
            r.runs,
            r.accuracy_mean,
            r.accuracy_std,
            r.macro_f1_mean,
            r.macro_f1_std,
            r.silhouette_mean,
            r.total_time_mean,
            r.epoch_time_mean,
            r.early_stop_epoch_mean
        )?;
    }
    let mut f = fs::File::create(dir.join("significance.csv"))?;
    writeln!(f, "reference,other,reference_mean,other_mean,mean_diff,t_stat,p_value,stars")?;
    for s in &out.significance {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            s.reference, s.other, s.reference_mean, s.other_mean, s.mean_diff, s.t_stat, s.p_value, s.stars
        )?;
    }
    fs::write(dir.join("compare.json"), serde_json::to_string_pretty(out)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_always_integrated() {
        let mut base = TrainConfig::default();
        base.mode = Mode::Standalone;
        assert_eq!(mode_for(&base, LossKind::Ce), Mode::Integrated);
        assert_eq!(mode_for(&base, LossKind::Scl), Mode::Standalone);
    }
}
