//! `gloss` command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::autodiff::Matrix;
use crate::dataset::{generate_blobs, load_dataset, minibatches, save_binary, save_csv, split, DataFormat, Dataset};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::evaluation::macro_silhouette;
use crate::graph::{build_graph, column_stochastic, sigma_sqrt};
use crate::losses::LossKind;
use crate::lpa::{self, gamma_split, one_hot};
use crate::trainer::{self, compare, sweep, write_compare, write_sweep_csv, SigmaMode, SweepGrid, TrainConfig};
use crate::verify::gradcheck_end_to_end;

/// Print to stdout, ignoring a closed pipe (`gloss ... | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "gloss", version, about = "Graph-guided fine-tuning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an isotropic Gaussian blobs dataset.
    GenBlobs(GenBlobsArgs),
    /// Train one model and write its report.
    Train(TrainArgs),
    /// Grid over gamma, sigma multipliers and lambda.
    Sweep(SweepArgs),
    /// Closed form against Neumann series and random-walk estimates.
    LpaVerify(LpaVerifyArgs),
    /// Finite-difference check of the full composite loss.
    Gradcheck(GradcheckArgs),
    /// Dump embeddings and graph matrices for one batch.
    DumpGraph(DumpGraphArgs),
    /// Run several losses under identical seeds with paired t-tests.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenBlobsArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Distance between every pair of class centers.
    #[arg(long, default_value_t = 5.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` writes text, anything else the binary format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Single dataset, split into train/val/test.
    #[arg(long, conflicts_with_all = ["train", "val", "test"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires_all = ["val", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Seed for the stratified split of `--data`.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    #[arg(long = "sigma-mult", value_delimiter = ',')]
    pub sigma_mult: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LpaVerifyArgs {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 32)]
    pub max_batch: usize,
    #[arg(long, default_value_t = 10)]
    pub walk_instances: usize,
    #[arg(long, default_value_t = 100_000)]
    pub walks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpGraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint; a freshly initialized encoder otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "gloss_o,scl,triplet,cosine")]
    pub losses: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn load_any(path: &Path) -> Result<Dataset> {
    load_dataset(path, DataFormat::from_path(path))
}

fn load_splits(args: &DataArgs) -> Result<(Dataset, Dataset, Dataset)> {
    match (&args.data, &args.train, &args.val, &args.test) {
        (Some(p), None, None, None) => split(&load_any(p)?, args.train_frac, args.val_frac, args.split_seed),
        (None, Some(tr), Some(va), Some(te)) => {
            let (tr, va, te) = (load_any(tr)?, load_any(va)?, load_any(te)?);
            let c = tr.num_classes().max(va.num_classes()).max(te.num_classes());
            Ok((tr.with_num_classes(c)?, va.with_num_classes(c)?, te.with_num_classes(c)?))
        }
        _ => Err(Error::Config("give either --data or all of --train, --val and --test".into())),
    }
}

fn build_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut s = String::new();
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_gen_blobs(a: &GenBlobsArgs) -> Result<()> {
    let ds = generate_blobs(a.n, a.dim, a.classes, a.sep, a.seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    match DataFormat::from_path(&a.out) {
        DataFormat::Csv => save_csv(&ds, &a.out)?,
        DataFormat::Binary => save_binary(&ds, &a.out)?,
    }
    let counts = ds.class_counts();
    say!("wrote {} rows, {} features, class sizes {counts:?} to {}", ds.len(), ds.dim(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = build_config(&a.cfg)?;
    let (tr, va, te) = load_splits(&a.data)?;
    let report = trainer::train(&cfg, &tr, &va, &te)?;
    fs::create_dir_all(&a.out)?;
    report.write(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    if let Some(enc) = &report.encoder {
        save_checkpoint(a.out.join("model.ck"), enc, report.head.as_ref())?;
    }
    let t = report.total_timings();
    say!(
        "{} ({:?}): test accuracy {:.4}, macro-F1 {:.4}, macro-silhouette {:.4}",
        cfg.loss, cfg.mode, report.test.accuracy, report.test.macro_f1, report.test.macro_silhouette
    );
    say!(
        "epochs {} (best {}), total {:.2}s; forward {:.3}s graph {:.3}s lpa {:.3}s backward {:.3}s optimizer {:.3}s io {:.3}s",
        report.early_stop_epoch,
        report.best_epoch,
        report.total_time,
        t.forward,
        t.graph_build,
        t.lpa_solve,
        t.backward,
        t.optimizer,
        t.io
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = build_config(&a.cfg)?;
    let (tr, va, te) = load_splits(&a.data)?;
    let grid = SweepGrid {
        gamma: a.gamma.clone(),
        sigma_multiplier: a.sigma_mult.clone(),
        lambda: a.lambda.clone(),
    };
    let rows = sweep(&cfg, &grid, &a.seeds, &tr, &va, &te)?;
    fs::create_dir_all(&a.out)?;
    write_sweep_csv(&rows, a.out.join("sweep.csv"))?;
    write_json(&a.out.join("sweep.json"), &rows)?;
    say!("gamma  sigma_x  lambda  acc_mean  f1_mean  f1_dev_from_best  failures");
    for r in &rows {
        say!(
            "{:<6} {:<8} {:<7} {:<9.4} {:<8.4} {:<17.4} {}",
            r.gamma, r.sigma_multiplier, r.lambda, r.accuracy_mean, r.macro_f1_mean, r.deviation_from_best, r.failures
        );
    }
    Ok(())
}

fn cmd_lpa_verify(a: &LpaVerifyArgs) -> Result<bool> {
    let t = Instant::now();
    let rep = lpa::oracle::verify_triangle(a.instances, a.max_batch, a.walk_instances, a.walks, a.seed)?;
    let ok = rep.max_closed_vs_neumann < 1e-8 && rep.max_closed_vs_walk < 2e-2 && rep.max_rho < 1.0;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("lpa_verify.json"), &rep)?;
    say!(
        "closed form vs neumann: max deviation {:.3e} over {} batches",
        rep.max_closed_vs_neumann, rep.neumann_instances
    );
    say!(
        "closed form vs random walks: max deviation {:.3e} over {} batches ({} walks per node)",
        rep.max_closed_vs_walk, rep.walk_instances, a.walks
    );
    say!(
        "max spectral radius {:.6}, max row mass {:.6}, {:.2}s; {}",
        rep.max_rho,
        rep.max_row_mass,
        t.elapsed().as_secs_f64(),
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let s = gradcheck_end_to_end(a.instances, a.seed, a.eps, a.tol)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("gradcheck.json"), &s)?;
    say!(
        "{} configurations: max relative error {:.3e}, max absolute error {:.3e}, tol {:.0e}: {}",
        s.instances,
        s.max_rel_err,
        s.max_abs_err,
        s.tol,
        if s.pass { "pass" } else { "FAIL" }
    );
    Ok(s.pass)
}

fn cmd_dump_graph(a: &DumpGraphArgs) -> Result<()> {
    let cfg = build_config(&a.cfg)?;
    cfg.validate()?;
    let ds = load_any(&a.data)?;
    let encoder = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.encoder,
        None => EncoderParams::init(cfg.architecture(), ds.dim(), cfg.embed_dim, cfg.normalize_embeddings, cfg.seed)?,
    };
    let batches = minibatches(&ds, cfg.batch_size, cfg.seed, true)?;
    let batch = batches
        .get(a.batch)
        .ok_or_else(|| Error::Config(format!("batch {} out of range ({} batches)", a.batch, batches.len())))?;
    let z = encoder.embed(&batch.x_raw)?;
    let sigma = match cfg.sigma_mode() {
        SigmaMode::Sqrt => sigma_sqrt(&z)?,
        SigmaMode::Fixed(s) => s,
    } * cfg.sigma_scale;
    let split = gamma_split(&batch.y, cfg.gamma, cfg.seed, cfg.stratify)?;
    let mut tape = crate::autodiff::Tape::new();
    let zv = tape.constant(z.clone());
    let g = build_graph(&mut tape, zv, sigma)?;
    let tm = column_stochastic(&mut tape, g.a_norm, &split)?;
    let y_l: Vec<usize> = split.labeled_idx.iter().map(|&i| batch.y[i]).collect();
    let y_hat = lpa::closed_form_values(tape.value(tm.t_uu), tape.value(tm.t_ul), &one_hot(&y_l, ds.num_classes()))?;

    fs::create_dir_all(&a.out)?;
    matrix_csv(&batch.x_raw, &a.out.join("features.csv"))?;
    matrix_csv(&z, &a.out.join("embeddings.csv"))?;
    matrix_csv(tape.value(g.w), &a.out.join("w.csv"))?;
    matrix_csv(tape.value(g.a_norm), &a.out.join("a_norm.csv"))?;
    matrix_csv(tape.value(tm.t), &a.out.join("t.csv"))?;
    matrix_csv(&y_hat, &a.out.join("y_hat.csv"))?;
    write_json(
        &a.out.join("graph.json"),
        &json!({
            "batch": a.batch,
            "indices": batch.indices,
            "labels": batch.y,
            "sigma": sigma,
            "labeled_idx": split.labeled_idx,
            "masked_idx": split.masked_idx,
            "spectral_radius": lpa::spectral_radius(tape.value(tm.t_uu), 500, 0)?,
            "macro_silhouette": macro_silhouette(&z, &batch.y).ok(),
        }),
    )?;
    say!("batch {} ({} rows, σ = {sigma:.4}) written to {}", a.batch, batch.len(), a.out.display());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let cfg = build_config(&a.cfg)?;
    let (tr, va, te) = load_splits(&a.data)?;
    let losses = a
        .losses
        .iter()
        .map(|s| s.parse::<LossKind>())
        .collect::<Result<Vec<_>>>()?;
    let out = compare(&cfg, &losses, &a.seeds, &tr, &va, &te)?;
    write_compare(&out, &a.out)?;
    say!(
        "{:<11} {:<11} {:>15} {:>15} {:>10} {:>11} {:>10} {:>6}",
        "loss", "mode", "test acc", "test F1", "silhouette", "total (s)", "epoch (s)", "stop"
    );
    for r in &out.rows {
        say!(
            "{:<11} {:<11} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>10.4} {:>11.2} {:>10.4} {:>6.1}",
            r.loss.as_str(),
            format!("{:?}", r.mode).to_lowercase(),
            r.accuracy_mean,
            r.accuracy_std,
            r.macro_f1_mean,
            r.macro_f1_std,
            r.silhouette_mean,
            r.total_time_mean,
            r.epoch_time_mean,
            r.early_stop_epoch_mean
        );
    }
    for s in &out.significance {
        say!(
            "{} vs {}: mean diff {:+.4}, t {:.3}, p {:.4} {}",
            s.reference, s.other, s.mean_diff, s.t_stat, s.p_value, s.stars
        );
    }
    Ok(())
}

/// Run the CLI and return the process exit code: 0 on success, 2 for
/// usage and config-key errors, 1 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenBlobs(a) => cmd_gen_blobs(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::LpaVerify(a) => cmd_lpa_verify(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DumpGraph(a) => cmd_dump_graph(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e @ Error::ConfigKey(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        for argv in [
            vec!["gloss", "gen-blobs", "--out", "x.bin"],
            vec!["gloss", "train", "--data", "x.bin", "--set", "gamma=0.3", "--set", "loss=scl"],
            vec!["gloss", "sweep", "--data", "x.bin", "--gamma", "0.1,0.5"],
            vec!["gloss", "lpa-verify"],
            vec!["gloss", "gradcheck", "--instances", "2"],
            vec!["gloss", "dump-graph", "--data", "x.bin"],
            vec!["gloss", "compare", "--data", "x.bin", "--losses", "gloss_o,ce"],
        ] {
            Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
    }

    #[test]
    fn bad_override_key_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.bin");
        assert_eq!(run(["gloss", "gen-blobs", "--n", "60", "--out", data.to_str().unwrap()]), 0);
        let code = run([
            "gloss",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "not_a_key=1",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        assert_eq!(run(["gloss", "train", "--data", "/nonexistent/file.bin"]), 1);
    }
}
