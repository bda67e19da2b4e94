//! Acceptance suite. Every criterion runs inside a single test so that the
//! timing-sensitive ones are not perturbed by sibling tests on other threads.
//! One line per criterion is printed; run with `--nocapture` to see them.

use std::time::Instant;

use gloss_core::autodiff::Matrix;
use gloss_core::dataset::{generate_blobs, split, Dataset};
use gloss_core::evaluation::{macro_silhouette, paired_t_test};
use gloss_core::graph::{kernel_value, sigma_sqrt};
use gloss_core::losses::LossKind;
use gloss_core::lpa::oracle::{random_batch, verify_triangle};
use gloss_core::lpa::{closed_form_values, spectral_radius};
use gloss_core::trainer::{
    compare, sweep, train, write_compare, write_sweep_csv, Mode, SweepGrid, TrainConfig,
};
use gloss_core::verify::gradcheck_end_to_end;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<(bool, String), String>;

fn blobs() -> (Dataset, Dataset, Dataset) {
    let ds = generate_blobs(600, 20, 3, 5.0, 0).unwrap();
    split(&ds, 0.6, 0.2, 0).unwrap()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn a1() -> Outcome {
    let t = Instant::now();
    let r = verify_triangle(50, 32, 10, 100_000, 11).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let pass = r.max_closed_vs_neumann < 1e-8 && r.max_closed_vs_walk < 2e-2 && secs < 30.0;
    Ok((
        pass,
        format!(
            "closed vs Neumann {:.2e} (< 1e-8), closed vs walk {:.2e} (< 2e-2), {secs:.1}s (< 30s)",
            r.max_closed_vs_neumann, r.max_closed_vs_walk
        ),
    ))
}

fn a2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut max_rho = 0.0f64;
    let mut solved = 0;
    for k in 0..100 {
        let b = rng.gen_range(4..=32);
        let inst = random_batch(&mut rng, b, 4, 3).map_err(err)?;
        if inst.split.labeled_idx.is_empty() {
            return Err(format!("batch {k} has no labeled node"));
        }
        max_rho = max_rho.max(spectral_radius(&inst.t_uu, 2000, k).map_err(err)?);
        if closed_form_values(&inst.t_uu, &inst.t_ul, &inst.y_labeled).is_ok() {
            solved += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        max_rho < 1.0 && solved == 100 && secs < 10.0,
        format!("max rho {max_rho:.6} (< 1), {solved}/100 solved, {secs:.2}s (< 10s)"),
    ))
}

fn a3() -> Outcome {
    let t = Instant::now();
    let s = gradcheck_end_to_end(20, 31, 1e-6, 1e-4).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let max_b = s.cases.iter().map(|c| c.batch).max().unwrap_or(0);
    let max_d = s.cases.iter().map(|c| c.d_in.max(c.embed_dim)).max().unwrap_or(0);
    let max_c = s.cases.iter().map(|c| c.num_classes).max().unwrap_or(0);
    let within = max_b <= 12 && max_d <= 8 && max_c <= 4;
    Ok((
        s.max_rel_err < 1e-4 && s.instances == 20 && within && secs < 60.0,
        format!(
            "20 configs (B<={max_b}, d<={max_d}, C<={max_c}), max rel err {:.2e} (< 1e-4), {secs:.1}s (< 60s)",
            s.max_rel_err
        ),
    ))
}

fn a4() -> Outcome {
    let (tr, va, te) = blobs();
    let mut cfg = TrainConfig::default();
    cfg.lambda = 0.0;
    cfg.max_epochs = 6;
    cfg.patience = 100;
    let g = train(&cfg, &tr, &va, &te).map_err(err)?;
    cfg.loss = LossKind::Ce;
    let c = train(&cfg, &tr, &va, &te).map_err(err)?;
    let (g, c) = (g.loss_trajectory(), c.loss_trajectory());
    if g.len() < 50 || c.len() < 50 {
        return Err(format!("only {} / {} steps recorded", g.len(), c.len()));
    }
    let same = g[..50].iter().zip(&c[..50]).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, "first 50 batch losses bit-identical between lambda=0 and CE".into()))
}

fn a5() -> Outcome {
    let t = Instant::now();
    let (tr, va, te) = blobs();
    let seeds = [0u64, 1, 2];
    let mut lines = Vec::new();
    let mut ok = true;
    for &seed in &seeds {
        let mut cfg = TrainConfig::default();
        cfg.seed = seed;
        let g = train(&cfg, &tr, &va, &te).map_err(err)?;
        cfg.loss = LossKind::Ce;
        let c = train(&cfg, &tr, &va, &te).map_err(err)?;
        let (ga, ca) = (g.test.accuracy, c.test.accuracy);
        ok &= ga >= 0.95 && ga >= ca - 0.02;
        lines.push(format!("{ga:.3}/{ca:.3}"));
    }
    let mut wins = 0;
    let mut sil = Vec::new();
    for &seed in &seeds {
        let mut cfg = TrainConfig::default();
        cfg.mode = Mode::Standalone;
        cfg.seed = seed;
        cfg.loss = LossKind::GlossSqrt;
        let g = train(&cfg, &tr, &va, &te).map_err(err)?;
        cfg.loss = LossKind::Cosine;
        let c = train(&cfg, &tr, &va, &te).map_err(err)?;
        wins += usize::from(g.best_monitor >= c.best_monitor);
        sil.push(format!("{:.3}/{:.3}", g.best_monitor, c.best_monitor));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        ok && wins >= 2 && secs < 300.0,
        format!(
            "test acc gloss_o+ce/ce [{}]; standalone val silhouette gloss_sqrt/cosine [{}], {wins}/3 wins; {secs:.1}s (< 300s)",
            lines.join(", "),
            sil.join(", ")
        ),
    ))
}

fn brute_median_sigma(x: &Matrix) -> f64 {
    let mut d2 = Vec::new();
    for i in 0..x.nrows() {
        for j in (i + 1)..x.nrows() {
            d2.push((0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).fold(0.0, |a, b| a + b));
        }
    }
    d2.sort_by(f64::total_cmp);
    (d2[(d2.len() - 1) / 2] / 3.0).sqrt()
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut exact = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=40);
        let d = rng.gen_range(1..=10);
        let x = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        if sigma_sqrt(&x).map_err(err)? == brute_median_sigma(&x) {
            exact += 1;
        }
    }
    let second = |d: f64, s: f64| {
        let h = 1e-4 * s;
        (kernel_value(d, s + h) - 2.0 * kernel_value(d, s) + kernel_value(d, s - h)) / (h * h)
    };
    let mut flips = 0;
    for _ in 0..20 {
        let d: f64 = rng.gen_range(0.01..50.0);
        let s = (d / 3.0).sqrt();
        if second(d, 0.95 * s) > 0.0 && second(d, 1.05 * s) < 0.0 {
            flips += 1;
        }
    }
    Ok((
        exact == 50 && flips == 20,
        format!("sigma_sqrt exact on {exact}/50; curvature sign change at sqrt(d/3) on {flips}/20"),
    ))
}

fn brute_silhouette(z: &Matrix, y: &[usize]) -> f64 {
    let n = z.nrows();
    let dist = |i: usize, j: usize| (0..z.ncols()).map(|k| (z[(i, k)] - z[(j, k)]).powi(2)).fold(0.0, |a, b| a + b).sqrt();
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mean_to = |i: usize, c: usize| {
        let others: Vec<usize> = (0..n).filter(|&j| j != i && y[j] == c).collect();
        others.iter().fold(0.0, |a, &j| a + dist(i, j)) / others.len() as f64
    };
    let mut per_class = Vec::new();
    for &c in &classes {
        let members: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        let mut total = 0.0;
        for &i in &members {
            if members.len() == 1 {
                continue;
            }
            let a = mean_to(i, c);
            let b = classes.iter().filter(|&&o| o != c).map(|&o| mean_to(i, o)).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            total += if m > 0.0 { (b - a) / m } else { 0.0 };
        }
        per_class.push(total / members.len() as f64);
    }
    per_class.iter().fold(0.0, |a, b| a + b) / classes.len() as f64
}

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut exact = 0;
    for _ in 0..50 {
        let n = rng.gen_range(4..=50);
        let d = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=5);
        let mut y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        y[0] = 0;
        y[1] = 1;
        let z = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        if macro_silhouette(&z, &y).map_err(err)? == brute_silhouette(&z, &y) {
            exact += 1;
        }
    }
    let z = Matrix::from_fn(40, 3, |i, j| {
        let offset = if i < 20 { 0.0 } else { 100.0 };
        offset + 0.1 * ((i * 7 + j * 3) % 11) as f64
    });
    let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let far = macro_silhouette(&z, &y).map_err(err)?;
    Ok((
        exact == 50 && far > 0.9,
        format!("exact match on {exact}/50; far two-cluster silhouette {far:.4} (> 0.9)"),
    ))
}

fn a8() -> Outcome {
    let (tr, va, te) = blobs();
    let gammas = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mults = [0.5, 1.0, 1.5, 2.0];
    let grid = SweepGrid {
        gamma: gammas.to_vec(),
        sigma_multiplier: mults.to_vec(),
        lambda: vec![],
    };
    let rows = sweep(&TrainConfig::default(), &grid, &[0, 1, 2], &tr, &va, &te).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&rows, &path).map_err(err)?;
    let text = std::fs::read_to_string(&path).map_err(err)?;
    let mut lines = text.lines();
    let width = lines.next().map(|h| h.split(',').count()).unwrap_or(0);
    let body: Vec<&str> = lines.collect();
    let well_formed = width > 0
        && body.len() == gammas.len() * mults.len()
        && body.iter().all(|l| l.split(',').count() == width);

    let failures: usize = rows.iter().map(|r| r.failures).sum();
    let acc = |g: f64, m: f64| rows.iter().find(|r| r.gamma == g && r.sigma_multiplier == m).map(|r| r.accuracy_mean);
    let mut worst = f64::INFINITY;
    for &m in &mults {
        let edge = acc(0.1, m).ok_or("missing gamma=0.1 row")?;
        for &g in &gammas[1..4] {
            worst = worst.min(acc(g, m).ok_or("missing row")? - edge);
        }
    }
    Ok((
        well_formed && failures == 0 && worst >= -0.02,
        format!(
            "{} rows x {width} columns, {failures} failed runs; worst interior-gamma minus gamma=0.1 mean accuracy {:+.2} pts (>= -2)",
            body.len(),
            100.0 * worst
        ),
    ))
}

fn a9() -> Outcome {
    let (tr, va, te) = blobs();
    let r = train(&TrainConfig::default(), &tr, &va, &te).map_err(err)?;
    let mut populated = true;
    let mut balanced = true;
    for e in &r.epochs {
        let t = &e.timings;
        let phases = [t.forward, t.graph_build, t.lpa_solve, t.backward, t.optimizer, t.io];
        populated &= phases.iter().all(|v| v.is_finite() && *v >= 0.0);
        populated &= phases[..5].iter().all(|v| *v > 0.0);
        balanced &= (t.total() - e.epoch_time).abs() <= 0.1 * e.epoch_time;
    }
    let tot = r.total_timings();
    let epoch_time: f64 = r.epochs.iter().map(|e| e.epoch_time).sum();
    let share = (tot.graph_build + tot.lpa_solve) / epoch_time;
    Ok((
        populated && balanced && share < 0.25,
        format!(
            "{} epochs, phases populated {populated}, sums within 10% {balanced}, graph+lpa share {:.1}% (< 25%)",
            r.epochs.len(),
            100.0 * share
        ),
    ))
}

fn a10() -> Outcome {
    let a = [0.91, 0.87, 0.93, 0.89, 0.90];
    let same = paired_t_test(&a, &a).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let b: Vec<f64> = a.iter().map(|v| v - 0.05 + rng.gen_range(-1e-3..1e-3)).collect();
    let shift = paired_t_test(&a, &b).map_err(err)?;

    let ds = generate_blobs(240, 8, 3, 4.0, 5).map_err(err)?;
    let (tr, va, te) = split(&ds, 0.6, 0.2, 0).map_err(err)?;
    let mut base = TrainConfig::default();
    base.max_epochs = 5;
    let out = compare(&base, &[LossKind::GlossO, LossKind::Ce, LossKind::Scl], &[0, 1, 2], &tr, &va, &te)
        .map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    write_compare(&out, dir.path()).map_err(err)?;
    let sig = std::fs::read_to_string(dir.path().join("significance.csv")).map_err(err)?;
    let sig_rows = sig.lines().count().saturating_sub(1);
    let p_ok = out.significance.iter().all(|s| (0.0..=1.0).contains(&s.p_value));
    Ok((
        same.p_value == 1.0 && shift.p_value < 0.01 && sig_rows == 2 && p_ok,
        format!(
            "identical p={}, shifted p={:.2e} (< 0.01), significance.csv has {sig_rows} rows",
            same.p_value, shift.p_value
        ),
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{name} {}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
