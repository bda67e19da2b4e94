use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::step::{GraphCapture, PhaseTimings};
use crate::encoder::{ClassifierHead, EncoderParams};
use crate::error::Result;
use crate::evaluation::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl RhoStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over processed batches.
    pub train_loss: f64,
    pub train_components: BTreeMap<String, f64>,
    pub batches: usize,
    pub skipped: usize,
    pub fallbacks: usize,
    /// Absent in standalone mode, where no head exists during training.
    pub val_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub val_macro_silhouette: f64,
    pub timings: PhaseTimings,
    pub epoch_time: f64,
    pub rho: Option<RhoStats>,
    pub batch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch at which training ended.
    pub early_stop_epoch: usize,
    pub stopped_early: bool,
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub total_time: f64,
    pub test: Metrics,
    pub test_accesses: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub encoder: Option<EncoderParams>,
    #[serde(skip)]
    pub head: Option<ClassifierHead>,
    #[serde(skip)]
    pub captures: Vec<GraphCapture>,
}

impl TrainReport {
    pub fn mean_epoch_time(&self) -> f64 {
        if self.epochs.is_empty() {
            0.0
        } else {
            self.epochs.iter().map(|e| e.epoch_time).sum::<f64>() / self.epochs.len() as f64
        }
    }

    /// Every batch loss in order across epochs.
    pub fn loss_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().flat_map(|e| e.batch_losses.iter().copied()).collect()
    }

    pub fn total_timings(&self) -> PhaseTimings {
        let mut t = PhaseTimings::default();
        for e in &self.epochs {
            t.accumulate(&e.timings);
        }
        t
    }

    pub fn summary_json(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("epochs");
            obj.insert("epochs_run".into(), self.epochs.len().into());
            obj.insert("mean_epoch_time".into(), self.mean_epoch_time().into());
            obj.insert("timings".into(), serde_json::to_value(self.total_timings())?);
        }
        Ok(v)
    }

    /// `report.jsonl` (one record per epoch) and `summary.json` in `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("report.jsonl"))?;
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary_json()?)?)?;
        Ok(())
    }
}
