//! Epoch loops for integrated and standalone training, early stopping,
//! sweeps and loss comparisons.

mod compare;
mod config;
mod head;
mod report;
mod step;
mod sweep;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};

pub use compare::{compare, write_compare, CompareOutput, CompareRow, SignificanceRow};
pub use config::{EncoderKind, Mode, SigmaMode, TrainConfig, CONFIG_KEYS};
pub use head::fit_linear_head;
pub use report::{EpochRecord, RhoStats, TrainReport};
pub use step::{
    derive_seed, train_step, GraphCapture, PhaseTimings, StepContext, StepDiagnostics, StepOutcome, StepResult,
};
pub use sweep::{sweep, write_sweep_csv, SweepGrid, SweepRow};

use crate::dataset::{minibatches, Dataset};
use crate::encoder::{ClassifierHead, EncoderParams, OptimizerState};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, evaluate, macro_f1, macro_silhouette_or_zero, Metrics};

const HEAD_SEED_SALT: u64 = 0x48_45_41_44;

/// Patience-window early stopping on a maximized monitor.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self::with_min_delta(patience, 0.0)
    }

    /// A value must beat the best so far by more than `min_delta` to count.
    pub fn with_min_delta(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record the monitor for `epoch`. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value > self.best + self.min_delta {
            self.best = value;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

/// Counts reads of the held-out split so a run can prove it looked once.
pub struct GuardedSplit<'a> {
    data: &'a Dataset,
    accesses: Cell<usize>,
}

impl<'a> GuardedSplit<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self {
            data,
            accesses: Cell::new(0),
        }
    }

    pub fn open(&self) -> &'a Dataset {
        self.accesses.set(self.accesses.get() + 1);
        self.data
    }

    pub fn accesses(&self) -> usize {
        self.accesses.get()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep embeddings and kernel matrices for the first this-many graph steps.
    pub capture_steps: usize,
}

pub fn train(config: &TrainConfig, train: &Dataset, val: &Dataset, test: &Dataset) -> Result<TrainReport> {
    train_with(config, train, val, test, &RunOptions::default())
}

pub fn train_with(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
) -> Result<TrainReport> {
    match config.mode {
        Mode::Integrated => train_integrated(config, train, val, test, opts),
        Mode::Standalone => train_standalone(config, train, val, test, opts),
    }
}

fn check_splits(train: &Dataset, val: &Dataset, test: &Dataset) -> Result<usize> {
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::invalid("train, val and test splits must all be non-empty"));
    }
    if val.dim() != train.dim() || test.dim() != train.dim() {
        return Err(Error::invalid("splits differ in feature dimension"));
    }
    Ok(train.num_classes().max(val.num_classes()).max(test.num_classes()))
}

struct Loop<'a> {
    config: &'a TrainConfig,
    num_classes: usize,
    encoder: EncoderParams,
    head: ClassifierHead,
    opt: OptimizerState,
    captures: Vec<GraphCapture>,
    capture_left: usize,
}

impl Loop<'_> {
    fn run_epoch(&mut self, train: &Dataset, epoch: usize) -> Result<EpochRecord> {
        let integrated = self.config.mode == Mode::Integrated;
        let batches = minibatches(
            train,
            self.config.batch_size,
            derive_seed(self.config.seed, &[epoch as u64]),
            true,
        )?;
        let mut timings = PhaseTimings::default();
        let mut losses = Vec::with_capacity(batches.len());
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut rhos = Vec::new();
        let (mut skipped, mut fallbacks) = (0, 0);
        let mut reasons = Vec::new();
        for (bi, batch) in batches.iter().enumerate() {
            let ctx = StepContext {
                epoch,
                batch_index: bi,
                capture: self.capture_left > 0,
            };
            let head = integrated.then_some(&self.head);
            let res = match train_step(batch, &self.encoder, head, self.num_classes, self.config, ctx)? {
                StepOutcome::Done(r) => r,
                StepOutcome::Skipped(why) => {
                    skipped += 1;
                    reasons.push(why);
                    continue;
                }
            };
            timings.accumulate(&res.diagnostics.timings);
            if let Some(c) = res.diagnostics.capture {
                self.captures.push(c);
                self.capture_left -= 1;
            }
            rhos.extend(res.diagnostics.rho);
            fallbacks += usize::from(res.diagnostics.fallback);
            for (k, v) in &res.components {
                *sums.entry(k.clone()).or_default() += v;
            }
            losses.push(res.total);

            let t = Instant::now();
            let mut params: Vec<_> = self.encoder.tensors.iter_mut().collect();
            if integrated {
                params.push(&mut self.head.weight);
                params.push(&mut self.head.bias);
            }
            self.opt.step(&mut params, &res.gradients)?;
            timings.optimizer += t.elapsed().as_secs_f64();
        }
        if losses.is_empty() {
            return Err(Error::Validation(format!(
                "all {} batches skipped in epoch {epoch}: {}",
                batches.len(),
                reasons.first().map(String::as_str).unwrap_or("no batches")
            )));
        }
        let n = losses.len() as f64;
        Ok(EpochRecord {
            epoch,
            train_loss: losses.iter().sum::<f64>() / n,
            train_components: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
            batches: losses.len(),
            skipped,
            fallbacks,
            val_accuracy: None,
            val_macro_f1: None,
            val_macro_silhouette: 0.0,
            timings,
            epoch_time: 0.0,
            rho: RhoStats::from_values(&rhos),
            batch_losses: losses,
        })
    }
}

fn run(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
) -> Result<TrainReport> {
    let start = Instant::now();
    let warnings = config.validate()?;
    for w in &warnings {
        warn!("{w}");
    }
    let num_classes = check_splits(train, val, test)?;
    let test_guard = GuardedSplit::new(test);
    let integrated = config.mode == Mode::Integrated;

    let encoder = EncoderParams::init(
        config.architecture(),
        train.dim(),
        config.embed_dim,
        config.normalize_embeddings,
        config.seed,
    )?;
    let head = ClassifierHead::init(config.embed_dim, num_classes, config.seed ^ HEAD_SEED_SALT);
    let mut lp = Loop {
        config,
        num_classes,
        encoder,
        head,
        opt: OptimizerState::new(config.optimizer, config.eta),
        captures: Vec::new(),
        capture_left: opts.capture_steps,
    };
    let mut stopper = EarlyStopping::with_min_delta(config.patience.max(1), config.min_delta);
    let mut best = (lp.encoder.clone(), lp.head.clone());
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let t_epoch = Instant::now();
        let mut rec = lp.run_epoch(train, epoch)?;

        let z_val = lp.encoder.embed(val.features())?;
        rec.val_macro_silhouette = macro_silhouette_or_zero(&z_val, val.labels());
        let monitor = if integrated {
            let pred = lp.head.predict(&z_val)?;
            rec.val_accuracy = Some(accuracy(&pred, val.labels())?);
            let f1 = macro_f1(&pred, val.labels(), num_classes)?;
            rec.val_macro_f1 = Some(f1);
            f1
        } else {
            rec.val_macro_silhouette
        };
        let (improved, stop) = stopper.update(epoch, monitor);
        if improved {
            best = (lp.encoder.clone(), lp.head.clone());
        }
        rec.epoch_time = t_epoch.elapsed().as_secs_f64();
        rec.timings.io = (rec.epoch_time - rec.timings.measured()).max(0.0);
        info!(
            "epoch {epoch}: loss {:.5} monitor {monitor:.4} ({} batches, {} skipped)",
            rec.train_loss, rec.batches, rec.skipped
        );
        epochs.push(rec);
        if stop {
            stopped_early = true;
            break;
        }
    }

    let (encoder, mut head) = best;
    let z_train = encoder.embed(train.features())?;
    let z_val = encoder.embed(val.features())?;
    if !integrated {
        head = fit_linear_head(
            &z_train,
            train.labels(),
            &z_val,
            val.labels(),
            num_classes,
            config.head_eta,
            config.head_epochs,
        )?;
    }
    let test_ds = test_guard.open();
    let z_test = encoder.embed(test_ds.features())?;
    let pred = head.predict(&z_test)?;
    let test_metrics: Metrics = evaluate(&pred, test_ds.labels(), &z_test, num_classes)?;

    Ok(TrainReport {
        config: config.clone(),
        early_stop_epoch: epochs.len(),
        stopped_early,
        best_epoch: stopper.best_epoch,
        best_monitor: stopper.best,
        epochs,
        total_time: start.elapsed().as_secs_f64(),
        test: test_metrics,
        test_accesses: test_guard.accesses(),
        warnings,
        encoder: Some(encoder),
        head: Some(head),
        captures: lp.captures,
    })
}

/// Encoder and head trained jointly; early stopping on validation macro-F1.
pub fn train_integrated(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
) -> Result<TrainReport> {
    if config.mode != Mode::Integrated {
        return Err(Error::invalid("train_integrated called with a standalone config"));
    }
    run(config, train, val, test, opts)
}

/// Encoder trained on the representation loss alone with early stopping on
/// validation macro-silhouette, then a linear head on frozen embeddings.
pub fn train_standalone(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    opts: &RunOptions,
) -> Result<TrainReport> {
    if config.mode != Mode::Standalone {
        return Err(Error::invalid("train_standalone called with an integrated config"));
    }
    run(config, train, val, test, opts)
}
