use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::{Mode, SigmaMode, TrainConfig};
use crate::autodiff::{Matrix, Tape, Var};
use crate::dataset::Batch;
use crate::encoder::{ClassifierHead, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{build_graph, column_stochastic, sigma_sqrt};
use crate::losses::{composite, cosine_pair, cross_entropy, g_loss, scl, triplet, LossKind};
use crate::lpa::{gamma_split, normalize_soft_labels, one_hot, propagate_closed_form, spectral_radius};

/// Wall-clock seconds per phase. `io` is the residual of the epoch after the
/// measured phases (batching, evaluation, bookkeeping).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub forward: f64,
    pub graph_build: f64,
    pub lpa_solve: f64,
    pub backward: f64,
    pub optimizer: f64,
    pub io: f64,
}

impl PhaseTimings {
    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.forward += other.forward;
        self.graph_build += other.graph_build;
        self.lpa_solve += other.lpa_solve;
        self.backward += other.backward;
        self.optimizer += other.optimizer;
        self.io += other.io;
    }

    pub fn measured(&self) -> f64 {
        self.forward + self.graph_build + self.lpa_solve + self.backward + self.optimizer
    }

    pub fn total(&self) -> f64 {
        self.measured() + self.io
    }
}

/// Per-step values captured for post-hoc inspection of the graph.
#[derive(Debug, Clone)]
pub struct GraphCapture {
    pub embeddings: Matrix,
    pub sigma: f64,
    pub w: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    /// Propagation failed and the step fell back to cross-entropy alone.
    pub fallback: bool,
    pub timings: PhaseTimings,
    pub capture: Option<GraphCapture>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub total: f64,
    pub lg: Option<f64>,
    pub lce: Option<f64>,
    pub components: BTreeMap<String, f64>,
    /// Encoder tensors in order, then head weight and bias when trained.
    pub gradients: Vec<Matrix>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Done(StepResult),
    Skipped(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepContext {
    pub epoch: usize,
    pub batch_index: usize,
    pub capture: bool,
}

/// SplitMix64 over the given words, for per-(epoch, batch) seeds.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    let mut x = base;
    for &w in words {
        x ^= w.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

enum GraphTerm {
    Loss { lg: Var, rho: f64, sigma: f64 },
    Singular(String),
    Unsplittable(String),
}

fn graph_term(
    tape: &mut Tape,
    z: Var,
    batch: &Batch,
    num_classes: usize,
    config: &TrainConfig,
    ctx: StepContext,
    diag: &mut StepDiagnostics,
) -> Result<GraphTerm> {
    let t0 = Instant::now();
    let sigma = match config.sigma_mode() {
        SigmaMode::Sqrt => sigma_sqrt(tape.value(z))?,
        SigmaMode::Fixed(s) => s,
    } * config.sigma_scale;
    let split_seed = derive_seed(config.seed, &[ctx.epoch as u64, ctx.batch_index as u64]);
    let split = match gamma_split(&batch.y, config.gamma, split_seed, config.stratify) {
        Ok(s) => s,
        Err(e) => return Ok(GraphTerm::Unsplittable(e.to_string())),
    };
    let g = build_graph(tape, z, sigma)?;
    let tm = column_stochastic(tape, g.a_norm, &split)?;
    if ctx.capture {
        diag.capture = Some(GraphCapture {
            embeddings: tape.value(z).clone(),
            sigma,
            w: tape.value(g.w).clone(),
        });
    }
    diag.timings.graph_build += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let labeled: Vec<usize> = split.labeled_idx.iter().map(|&i| batch.y[i]).collect();
    let masked: Vec<usize> = split.masked_idx.iter().map(|&i| batch.y[i]).collect();
    let y_l = tape.constant(one_hot(&labeled, num_classes));
    let rho = spectral_radius(tape.value(tm.t_uu), 100, split_seed)?;
    let raw = match propagate_closed_form(tape, &tm, y_l) {
        Ok(v) => v,
        Err(e @ Error::Singular { .. }) => {
            diag.timings.lpa_solve += t1.elapsed().as_secs_f64();
            return Ok(GraphTerm::Singular(e.to_string()));
        }
        Err(e) => return Err(e),
    };
    let y_hat = normalize_soft_labels(tape, raw)?;
    let lg = g_loss(tape, y_hat, &one_hot(&masked, num_classes))?;
    diag.timings.lpa_solve += t1.elapsed().as_secs_f64();
    Ok(GraphTerm::Loss { lg, rho, sigma })
}

fn baseline_term(tape: &mut Tape, z: Var, y: &[usize], config: &TrainConfig) -> Result<Option<Var>> {
    let r = match config.loss {
        LossKind::Scl => scl(tape, z, y, config.tau),
        LossKind::Triplet => triplet(tape, z, y, config.margin),
        LossKind::Cosine => cosine_pair(tape, z, y),
        _ => return Ok(None),
    };
    r.map(Some)
}

/// One minibatch: encode, build the graph over the embeddings, split,
/// propagate, score, and backpropagate to every trained parameter.
pub fn train_step(
    batch: &Batch,
    encoder: &EncoderParams,
    head: Option<&ClassifierHead>,
    num_classes: usize,
    config: &TrainConfig,
    ctx: StepContext,
) -> Result<StepOutcome> {
    let mut diag = StepDiagnostics::default();
    let mut tape = Tape::new();
    let integrated = config.mode == Mode::Integrated;
    if integrated && head.is_none() {
        return Err(Error::invalid("integrated mode needs a classifier head"));
    }
    if config.uses_graph() && batch.len() < 4 {
        return Ok(StepOutcome::Skipped(format!(
            "batch {} has {} rows; graph loss needs at least 4",
            ctx.batch_index,
            batch.len()
        )));
    }

    let t0 = Instant::now();
    let enc_vars = encoder.bind(&mut tape);
    let x = tape.constant(batch.x_raw.clone());
    let z = encoder.encode(&mut tape, &enc_vars, x)?;
    let head_vars = match (integrated, head) {
        (true, Some(h)) => Some((h, h.bind(&mut tape))),
        _ => None,
    };
    let lce = match &head_vars {
        Some((h, hv)) => {
            let logits = h.classify(&mut tape, hv, z)?;
            Some(cross_entropy(&mut tape, logits, &batch.y)?)
        }
        None => None,
    };
    let baseline = match baseline_term(&mut tape, z, &batch.y, config) {
        Ok(v) => v,
        // no positives or no triplets: the batch carries no signal for the loss
        Err(Error::Validation(msg)) => {
            return Ok(StepOutcome::Skipped(format!("batch {}: {msg}", ctx.batch_index)));
        }
        Err(e) => return Err(e),
    };
    diag.timings.forward += t0.elapsed().as_secs_f64();

    let mut components = BTreeMap::new();
    let mut lg_value = None;
    let graph = if config.uses_graph() {
        match graph_term(&mut tape, z, batch, num_classes, config, ctx, &mut diag)? {
            GraphTerm::Loss { lg, rho, sigma } => {
                diag.rho = Some(rho);
                diag.sigma = Some(sigma);
                lg_value = Some(tape.scalar(lg));
                Some(lg)
            }
            GraphTerm::Singular(msg) if integrated => {
                warn!("epoch {} batch {}: {msg}; using cross-entropy only", ctx.epoch, ctx.batch_index);
                diag.fallback = true;
                None
            }
            GraphTerm::Singular(msg) | GraphTerm::Unsplittable(msg) => {
                warn!("epoch {} batch {}: {msg}; batch skipped", ctx.epoch, ctx.batch_index);
                return Ok(StepOutcome::Skipped(msg));
            }
        }
    } else {
        None
    };

    let t2 = Instant::now();
    let total = match (integrated, graph, baseline, lce) {
        (true, Some(lg), _, Some(ce)) => composite(&mut tape, lg, ce, config.lambda)?.total,
        (true, None, Some(b), Some(ce)) => {
            components.insert(config.loss.as_str().to_string(), tape.scalar(b));
            composite(&mut tape, b, ce, config.baseline_weight())?.total
        }
        (true, None, None, Some(ce)) => ce,
        (false, Some(lg), _, _) => lg,
        (false, None, Some(b), _) => b,
        _ => return Err(Error::invalid(format!("no objective for loss {} in this mode", config.loss))),
    };
    let total_value = tape.scalar(total);
    if !total_value.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at epoch {} batch {}",
            ctx.epoch, ctx.batch_index
        )));
    }
    diag.timings.forward += t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let grads = tape.backward(total)?;
    let mut gradients: Vec<Matrix> = enc_vars.iter().map(|&v| grads.wrt(v)).collect();
    if let Some((_, hv)) = &head_vars {
        gradients.push(grads.wrt(hv[0]));
        gradients.push(grads.wrt(hv[1]));
    }
    diag.timings.backward += t3.elapsed().as_secs_f64();

    let lce_value = lce.map(|v| tape.scalar(v));
    if let Some(v) = lg_value {
        components.insert("lg".into(), v);
    }
    if let Some(v) = lce_value {
        components.insert("lce".into(), v);
    }
    Ok(StepOutcome::Done(StepResult {
        total: total_value,
        lg: lg_value,
        lce: lce_value,
        components,
        gradients,
        diagnostics: diag,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_blobs, minibatches};
    use crate::encoder::Architecture;

    fn setup(loss: LossKind, mode: Mode, lambda: f64) -> (TrainConfig, Batch, EncoderParams, ClassifierHead) {
        let ds = generate_blobs(64, 6, 2, 4.0, 1).unwrap();
        let batch = minibatches(&ds, 16, 0, true).unwrap().remove(0);
        let mut cfg = TrainConfig::default();
        cfg.loss = loss;
        cfg.mode = mode;
        cfg.lambda = lambda;
        let enc = EncoderParams::init(Architecture::Mlp2 { hidden: 8 }, 6, 4, true, 2).unwrap();
        let head = ClassifierHead::init(4, 2, 3);
        (cfg, batch, enc, head)
    }

    fn done(o: StepOutcome) -> StepResult {
        match o {
            StepOutcome::Done(r) => r,
            StepOutcome::Skipped(m) => panic!("skipped: {m}"),
        }
    }

    #[test]
    fn lambda_zero_matches_ce_step() {
        let (cfg, batch, enc, head) = setup(LossKind::GlossO, Mode::Integrated, 0.0);
        let a = done(train_step(&batch, &enc, Some(&head), 2, &cfg, StepContext::default()).unwrap());
        let mut ce = cfg.clone();
        ce.loss = LossKind::Ce;
        let b = done(train_step(&batch, &enc, Some(&head), 2, &ce, StepContext::default()).unwrap());
        assert_eq!(a.total, b.total);
        assert_eq!(a.gradients, b.gradients);
        assert!(a.diagnostics.rho.is_none());
    }

    #[test]
    fn integrated_graph_step_populates_everything() {
        let (cfg, batch, enc, head) = setup(LossKind::GlossO, Mode::Integrated, 0.8);
        let ctx = StepContext {
            capture: true,
            ..Default::default()
        };
        let r = done(train_step(&batch, &enc, Some(&head), 2, &cfg, ctx).unwrap());
        assert_eq!(r.gradients.len(), enc.tensors.len() + 2);
        let (lg, lce) = (r.lg.unwrap(), r.lce.unwrap());
        assert!((r.total - (0.8 * lg + 0.2 * lce)).abs() < 1e-12);
        assert!(r.diagnostics.rho.unwrap() < 1.0);
        assert!(r.diagnostics.capture.is_some());
        assert!(r.diagnostics.timings.graph_build > 0.0);
    }

    #[test]
    fn standalone_steps_train_encoder_only() {
        for loss in [LossKind::GlossSqrt, LossKind::Scl, LossKind::Triplet, LossKind::Cosine] {
            let (cfg, batch, enc, _) = setup(loss, Mode::Standalone, 0.8);
            let r = done(train_step(&batch, &enc, None, 2, &cfg, StepContext::default()).unwrap());
            assert_eq!(r.gradients.len(), enc.tensors.len(), "{loss}");
            assert!(r.lce.is_none());
        }
    }

    #[test]
    fn tiny_batches_skipped_in_graph_mode() {
        let (cfg, mut batch, enc, head) = setup(LossKind::GlossO, Mode::Integrated, 0.5);
        batch.indices.truncate(3);
        batch.y.truncate(3);
        batch.x_raw = batch.x_raw.rows(0, 3).into_owned();
        let o = train_step(&batch, &enc, Some(&head), 2, &cfg, StepContext::default()).unwrap();
        assert!(matches!(o, StepOutcome::Skipped(_)));
    }

    #[test]
    fn scl_without_positives_skips() {
        let (cfg, mut batch, enc, _) = setup(LossKind::Scl, Mode::Standalone, 0.5);
        batch.y = (0..batch.len()).collect();
        let o = train_step(&batch, &enc, None, batch.len(), &cfg, StepContext::default()).unwrap();
        assert!(matches!(o, StepOutcome::Skipped(_)));
    }

    #[test]
    fn seeds_differ_per_batch() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2, 3]), derive_seed(5, &[2, 3]));
    }
}
