//! Acceptance criteria 1–11. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 11 is a known failure (see the decisions ledger): the process exits
//! nonzero only if any other criterion fails. Set QUADFEAT_ACCEPTANCE=1,3,5 to run a subset.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use quadfeat::experiment::{self, ExperimentConfig, ExperimentKind, ResultRow, RunOptions};
use quadfeat::linalg::loglog_slope;
use quadfeat::reconstruction::{corrected_residual, kernel_pair, t_operator_mc, t_star, t_star_gram_normalized};
use quadfeat::rng::{derive_indexed, derive_seed};
use quadfeat::targets::{expected_hessian, HessianMode};
use quadfeat::verify;
use quadfeat::{init_network, make_sign_features, sample_sphere, ActivationSpec};

const KNOWN_FAILURES: [usize; 1] = [11];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn out_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sem(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}

fn maes(rows: &[ResultRow], method: &str, p: usize, n2: usize) -> Vec<f64> {
    rows.iter().filter(|r| r.method == method && r.p == p && r.n2 == n2).map(|r| r.test_mae).collect()
}

fn criterion_1() -> quadfeat::Result<Outcome> {
    let checks = [
        verify::q_at_d_is_one(),
        verify::recursion_vs_explicit_q2(1, false),
        verify::product_linearization(1)?,
        verify::coefficient_bound()?,
    ];
    let detail = checks.iter().map(|c| format!("{}={:.1e}", c.name, c.value)).collect::<Vec<_>>().join(" ");
    Ok(outcome(checks.iter().all(|c| c.passed), detail))
}

fn criterion_2() -> quadfeat::Result<Outcome> {
    let mc = verify::quadratic_moment_mc(8, 10, 1_000_000, 2);
    let sign = verify::sign_features_unit_moment()?;
    Ok(outcome(mc.passed && sign.passed, format!("max |z|={:.2}, sign-feature moment dev={:.1e}", mc.value, sign.value)))
}

fn criterion_3() -> quadfeat::Result<Outcome> {
    let c = verify::symmetric_init_zero(16, 5, 100)?;
    Ok(outcome(c.passed, format!("max |f|={:.1e}", c.value)))
}

fn criterion_4() -> quadfeat::Result<Outcome> {
    let (c, out_of_zone) = verify::stage1_closed_form(8, 64, 512, 1024, 4)?;
    Ok(outcome(c.passed && out_of_zone == 0.0, format!("relative dev={:.1e}, out-of-zone={out_of_zone}", c.value)))
}

fn criterion_5() -> quadfeat::Result<Outcome> {
    let c = verify::ridge_fixed_point(256, 2048, &[0, 1, 2], &[0.1, 1.0, 10.0])?;
    Ok(outcome(c.passed, format!("max relative normal-equation residual={:.1e}", c.value)))
}

fn criterion_6() -> quadfeat::Result<Outcome> {
    let d = 16;
    let spec = ActivationSpec::default_q2(d);
    let x = sample_sphere(d, 100, 61)?;
    let x2 = sample_sphere(d, 100, 62)?;
    let widths = [1usize << 10, 1 << 12, 1 << 14];
    let draws = 8u64;
    let mut devs = Vec::new();
    for &m2 in &widths {
        let mut acc = 0.0;
        for s in 0..draws {
            let theta = init_network(d, 2, m2, 0.0, derive_indexed(6, "kernel-v", s), &spec)?;
            acc += (0..100).map(|i| kernel_pair(&theta.inner, x.row(i), x2.row(i)).deviation).fold(0.0, f64::max);
        }
        devs.push(acc / draws as f64);
    }
    let xs: Vec<f64> = widths.iter().map(|m| *m as f64).collect();
    let slope = loglog_slope(&xs, &devs);
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    Ok(outcome(
        decreasing && (-0.65..=-0.35).contains(&slope),
        format!("max dev (mean of {draws} draws)={:?}, slope={slope:.3}", devs.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()),
    ))
}

fn criterion_7() -> quadfeat::Result<Outcome> {
    let cfg = ExperimentConfig {
        d: vec![16],
        p: vec![2],
        m1: 256,
        m2: 8192,
        n: Vec::new(),
        seeds: vec![0],
        out: out_dir("criterion7"),
        ..ExperimentConfig::for_kind(ExperimentKind::Reconstruct)
    };
    let summary = experiment::run_reconstruct(&cfg, &RunOptions { jobs: 1, resume: false })?;
    let grid = experiment::reconstruct_grid(&cfg, 16);
    let per_n: Vec<Vec<f64>> = grid
        .iter()
        .map(|n1| {
            (0..3)
                .map(|k| {
                    let v: Vec<f64> =
                        summary.iter().filter(|r| r.n1 == *n1 && r.feature_idx == k).map(|r| r.correlation).collect();
                    mean(&v)
                })
                .collect()
        })
        .collect();
    let monotone = (0..3).all(|k| per_n.windows(2).all(|w| w[1][k] >= w[0][k]));
    let last = per_n.last().expect("nonempty grid");
    let above = last.iter().all(|c| *c >= 0.75);
    let detail = grid.iter().zip(&per_n).map(|(n, c)| format!("n1={n}: {c:.3?}")).collect::<Vec<_>>().join("; ");
    Ok(outcome(monotone && above, detail))
}

fn criterion_8() -> quadfeat::Result<Outcome> {
    let cfg = ExperimentConfig {
        d: vec![16],
        p: vec![4],
        n: vec![1 << 10, 1 << 12, 1 << 14],
        m1: 2048,
        m2: 4096,
        seeds: vec![0, 1, 2],
        out: out_dir("criterion8"),
        ..ExperimentConfig::for_kind(ExperimentKind::Compare)
    };
    let rows = experiment::run_compare(&cfg, &RunOptions { jobs: 1, resume: false })?;
    let n = 1 << 14;
    let alg1 = maes(&rows, "alg1", 4, n / 2);
    let rf = maes(&rows, "rf", 4, n);
    let se = (sem(&alg1).powi(2) + sem(&rf).powi(2)).sqrt();
    let gap = mean(&rf) - mean(&alg1);
    let curve: Vec<String> = cfg
        .n
        .iter()
        .map(|n| format!("n={n}: alg1 {:.3} rf {:.3}", mean(&maes(&rows, "alg1", 4, n / 2)), mean(&maes(&rows, "rf", 4, *n))))
        .collect();
    Ok(outcome(gap > se, format!("{}; gap={gap:.3} combined se={se:.3}", curve.join("; "))))
}

fn criterion_9() -> quadfeat::Result<Outcome> {
    let cfg = ExperimentConfig {
        d: vec![16],
        p: vec![4, 6],
        pretrain_p: 2,
        n1: 1 << 14,
        n: vec![1 << 10, 1 << 12, 1 << 14],
        m1: 2048,
        m2: 4096,
        seeds: vec![0, 1, 2],
        out: out_dir("criterion9"),
        ..ExperimentConfig::for_kind(ExperimentKind::Transfer)
    };
    let rows = experiment::run_transfer(&cfg, &RunOptions { jobs: 1, resume: false })?;
    let mut ok = true;
    let mut detail = Vec::new();
    for &p in &cfg.p {
        let curve: Vec<f64> = cfg.n.iter().map(|n2| mean(&maes(&rows, "transfer", p, *n2))).collect();
        ok &= curve.windows(2).all(|w| w[1] < w[0]);
        detail.push(format!("p={p}: {curve:.3?}"));
    }
    Ok(outcome(ok, detail.join("; ")))
}

fn criterion_10() -> quadfeat::Result<Outcome> {
    let cfg = ExperimentConfig {
        d: vec![8, 16, 32, 64],
        universality_n: 200_000,
        directions: 64,
        out: out_dir("criterion10"),
        ..ExperimentConfig::for_kind(ExperimentKind::Universality)
    };
    let rows = experiment::run_universality(&cfg, &RunOptions { jobs: 1, resume: false })?;
    let excess: Vec<f64> = rows.iter().map(|r| r.sliced_w1 - r.gaussian_floor).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let decreasing = excess.windows(2).all(|w| w[1] < w[0]);
    let positive = excess.iter().all(|e| *e > 0.0);
    let slope = if positive { loglog_slope(&ds, &excess) } else { f64::NAN };
    Ok(outcome(
        decreasing && (-0.9..=-0.2).contains(&slope),
        format!("floor-subtracted sliced W1={excess:.4?}, slope={slope:.3}"),
    ))
}

fn criterion_11() -> quadfeat::Result<Outcome> {
    let mut literal = Vec::new();
    let mut normalized = Vec::new();
    for d in [8usize, 16, 32] {
        let f = make_sign_features(d)?;
        let target = quadfeat::make_standard_target(d, 2, &f, 1 << 20, derive_seed(11, &format!("cal-{d}")))?;
        let h = expected_hessian(&target.standardized_link(), HessianMode::Analytic, 0, 0)?;
        let a1: Array2<f64> = f.matrices()[0].clone();
        let est = t_operator_mc(&target, a1.view(), 1 << 19, derive_seed(11, &format!("t-{d}")))?;
        literal.push(corrected_residual(&est, t_star(&f, h.h.view(), a1.view()).view()));
        normalized.push(corrected_residual(&est, t_star_gram_normalized(&f, h.h.view(), a1.view()).view()));
    }
    let decreasing = literal.windows(2).all(|w| w[1] < w[0]);
    Ok(outcome(
        decreasing,
        format!("residual vs (HA)_1 at d=8,16,32: {literal:.3?}; with output-side 1/|A_j|^2: {normalized:.3?}"),
    ))
}

type Criterion = fn() -> quadfeat::Result<Outcome>;

fn main() {
    let all: [(usize, Criterion); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let only: Option<Vec<usize>> = std::env::var("QUADFEAT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // libtest-style flags (e.g. from `cargo test -- --list`) are ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut unexpected = Vec::new();
    for (id, run) in all {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_FAILURES.contains(&id);
        let tag = if passed { "PASS" } else { "FAIL" };
        let note = if !passed && known { " (known failure, see ledger)" } else { "" };
        println!("criterion {id:>2}: {tag}{note} [{secs:.1}s] {detail}");
        if !passed && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
