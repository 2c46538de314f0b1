//! Named invariant checks across modules, runnable as one suite.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::make_sign_features;
use crate::mc;
use crate::network::{default_epsilon, forward_rows, init_network, ActivationSpec};
use crate::rng::{derive_indexed, derive_seed, rng_for};
use crate::sphere::{self, quadratic_moment};
use crate::targets::make_standard_target;
use crate::training::{stage1_step, Dataset, RidgeProblem, StepBudget, TrainConfig};

/// Faults accepted by `inject_fault`.
pub const FAULTS: [&str; 1] = ["q2_constant"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation in the check's own units.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult { name: name.to_string(), passed: value <= tolerance, value, tolerance, detail: detail.into() }
    }
}

pub fn q_at_d_is_one() -> CheckResult {
    let mut worst: f64 = 0.0;
    for d in [4, 8, 16, 32, 64] {
        for q in sphere::gegenbauer_all(8, d, d as f64) {
            worst = worst.max((q - 1.0).abs());
        }
    }
    CheckResult::new("gegenbauer.q_k_at_d", worst, 1e-9, "k <= 8, d in {4,8,16,32,64}")
}

/// Recursion vs closed-form Q₂. `fault` swaps the closed form's d−1 for d.
pub fn recursion_vs_explicit_q2(seed: u64, fault: bool) -> CheckResult {
    let mut r = rng_for(seed, "q2-points");
    let mut worst: f64 = 0.0;
    for d in [4, 8, 16, 32, 64] {
        let df = d as f64;
        for _ in 0..100 {
            let t = r.random_range(-df..df);
            let explicit = if fault { (t * t - df) / (df * df) } else { sphere::q2_explicit(d, t) };
            let rec = sphere::gegenbauer(2, d, t);
            worst = worst.max((rec - explicit).abs() / explicit.abs().max(1.0 / (df * (df - 1.0))));
        }
    }
    CheckResult::new("gegenbauer.recursion_vs_explicit_q2", worst, 1e-12, "100 random t per d")
}

pub fn product_linearization(seed: u64) -> Result<CheckResult> {
    let mut r = rng_for(seed, "linearization-points");
    let mut worst: f64 = 0.0;
    for d in [8usize, 16] {
        let df = d as f64;
        for i in 0..=4 {
            for j in 0..=4 {
                let table = sphere::linearize_product(i, j, d)?;
                for _ in 0..100 {
                    let t = r.random_range(-df..df);
                    let lhs = sphere::gegenbauer(i, d, t) * sphere::gegenbauer(j, d, t);
                    let rhs = table.eval(t);
                    let scale = lhs.abs().max(table.coefficients.iter().map(|c| c.abs()).sum::<f64>() * 1e-6);
                    worst = worst.max((lhs - rhs).abs() / scale);
                }
            }
        }
    }
    Ok(CheckResult::new("gegenbauer.product_linearization", worst, 1e-8, "i,j <= 4, d in {8,16}"))
}

pub fn coefficient_bound() -> Result<CheckResult> {
    let mut worst = f64::NEG_INFINITY;
    for d in [8usize, 16, 32] {
        for i in 0..=6 {
            for j in 0..=6 {
                let t = sphere::linearize_product(i, j, d)?;
                for (k, c) in t.c_parts.iter().enumerate() {
                    worst = worst.max(c / sphere::c_part_bound(d, k) - 1.0);
                }
            }
        }
    }
    Ok(CheckResult::new("gegenbauer.coefficient_bound", worst.max(0.0), 1e-12, "c-part / bound - 1, i,j <= 6"))
}

pub fn harmonic_dim_examples() -> Result<CheckResult> {
    let mut bad = 0.0;
    for d in [3usize, 8, 16] {
        bad += (sphere::harmonic_dim(d, 0)? != 1) as u8 as f64;
        bad += (sphere::harmonic_dim(d, 1)? != d as u64) as u8 as f64;
    }
    bad += (sphere::harmonic_dim(4, 2)? != 9) as u8 as f64;
    Ok(CheckResult::new("sphere.harmonic_dim", bad, 0.0, "B(d,0)=1, B(d,1)=d, B(4,2)=9"))
}

fn random_symmetric(d: usize, r: &mut crate::rng::Rng) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let v: f64 = r.random_range(-1.0..1.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

/// Largest |z| over `pairs` random symmetric pairs, exact moment vs MC.
pub fn quadratic_moment_mc(d: usize, pairs: usize, n: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for p in 0..pairs as u64 {
        let mut r = rng_for(derive_indexed(seed, "pair", p), "matrices");
        let a = random_symmetric(d, &mut r);
        let b = random_symmetric(d, &mut r);
        let exact = quadratic_moment(a.view(), b.view(), d);
        let est = mc::chunked_mean(n, derive_indexed(seed, "mc", p), |r| {
            let x = sphere::sphere_point(d, r);
            x.dot(&a.dot(&x)) * x.dot(&b.dot(&x))
        });
        worst = worst.max(est.z_score(exact).abs());
    }
    CheckResult::new("sphere.quadratic_moment_mc", worst, 5.0, format!("max |z| over {pairs} pairs, n={n}"))
}

pub fn sign_features_unit_moment() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for d in [8usize, 16, 32, 64] {
        let f = make_sign_features(d)?;
        let g = f.gram();
        for ((i, j), v) in g.indexed_iter() {
            worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
        for a in f.matrices() {
            worst = worst.max(a.diag().sum().abs());
        }
    }
    Ok(CheckResult::new("features.sign_orthonormal", worst, 1e-12, "Gram = I and traceless"))
}

pub fn symmetric_init_zero(d: usize, seeds: u64, points: usize) -> Result<CheckResult> {
    let spec = ActivationSpec::default_q2(d);
    let mut worst: f64 = 0.0;
    for s in 0..seeds {
        let theta = init_network(d, 64, 256, 0.5, derive_indexed(7, "init", s), &spec)?;
        let x = sphere::sample_sphere(d, points, derive_indexed(7, "points", s))?;
        let y = forward_rows(&theta, x.rows())?;
        worst = y.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(CheckResult::new("network.symmetric_init_zero_output", worst, 1e-12, format!("{seeds} seeds x {points} inputs")))
}

pub fn lifted_matches_dense(seed: u64) -> Result<CheckResult> {
    let spec = ActivationSpec::default_q2(8);
    let theta = init_network(8, 8, 128, 0.3, seed, &spec)?;
    let x = sphere::sample_sphere(8, 64, derive_seed(seed, "x"))?;
    let lifted = theta.inner.h0_rows(x.rows())?;
    let dense = theta.inner.clone().dense_only().h0_rows(x.rows())?;
    let worst = lifted.iter().zip(dense.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(CheckResult::new("network.lifted_matches_dense", worst, 1e-10, "h0 via Ψφ(x) vs σ₂(Vx)"))
}

/// Max relative deviation between the Stage-1 W⁽¹⁾ and (ηa_j/m₂)·M·w_j with M built
/// densely from h⁽⁰⁾. Returns the check and the out-of-zone fraction.
pub fn stage1_closed_form(d: usize, m1: usize, m2: usize, n1: usize, seed: u64) -> Result<(CheckResult, f64)> {
    let spec = ActivationSpec::default_q2(d);
    let f = make_sign_features(d)?;
    let target = make_standard_target(d, 2, &f, 1 << 14, derive_seed(seed, "calibration"))?;
    let eps = default_epsilon(&spec, n1, m1, m2);
    let theta = init_network(d, m1, m2, eps, derive_seed(seed, "init"), &spec)?;
    let d1 = Dataset::draw(&target, n1, derive_seed(seed, "d1"))?;
    let state = stage1_step(&theta, &d1)?.with_eta(0.37);
    let w1 = state.w1();

    let h0 = theta.inner.clone().dense_only().h0_rows(d1.x.rows())?;
    let weighted = &h0 * &d1.y.view().insert_axis(Axis(1));
    let m = weighted.t().dot(&h0) / n1 as f64;
    let wu = state.w_unit();
    let mw = wu.dot(&m);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for j in 0..m1 {
        let c = state.eta * theta.a[j] / m2 as f64;
        for (got, want) in w1.row(j).iter().zip(mw.row(j)) {
            num = num.max((got - c * want).abs());
            den = den.max((c * want).abs());
        }
    }
    let check = CheckResult::new(
        "training.stage1_closed_form",
        num / den.max(1e-300),
        1e-8,
        format!("d={d} m1={m1} m2={m2} n1={n1}, out-of-zone {:.2e}", state.out_of_zone),
    );
    Ok((check, state.out_of_zone))
}

/// Relative normal-equation residual of the explicit-GD fixed point for a random
/// sign-target ridge problem, maximized over seeds and λ multipliers.
pub fn ridge_fixed_point(m1: usize, n2: usize, seeds: &[u64], multipliers: &[f64]) -> Result<CheckResult> {
    use crate::training::{reinit_bias, Stage2Features};
    let d = 8;
    let spec = ActivationSpec::default_q2(d);
    let f = make_sign_features(d)?;
    let target = make_standard_target(d, 2, &f, 1 << 14, 11)?;
    let mut worst: f64 = 0.0;
    for &s in seeds {
        let theta = init_network(d, m1, 512, 0.01, derive_indexed(13, "ridge-init", s), &spec)?;
        let d1 = Dataset::draw(&target, 1024, derive_indexed(13, "ridge-d1", s))?;
        let d2 = Dataset::draw(&target, n2, derive_indexed(13, "ridge-d2", s))?;
        let state = stage1_step(&theta, &d1)?;
        let state = state.with_eta(crate::training::calibrate_eta(&state, &d2, 1.0)?);
        let b = reinit_bias(m1, derive_indexed(13, "ridge-bias", s));
        let feats = Stage2Features::learned(&state, b);
        let prob: RidgeProblem = feats.ridge_problem(d2.x.rows(), d2.y.view())?;
        let sm = prob.second_moment();
        let a0 = Array1::from_iter(state.a0.iter().map(|a| a / m1 as f64));
        for &mult in multipliers {
            let lambda = mult * sm;
            let cfg = TrainConfig { budget: StepBudget::Steps(200_000), grad_tol: 1e-13, ..TrainConfig::default() };
            let gd = prob.fit(a0.view(), lambda, &cfg)?;
            worst = worst.max(prob.normal_residual(gd.a.view(), lambda));
        }
    }
    Ok(CheckResult::new(
        "training.ridge_fixed_point",
        worst,
        1e-8,
        format!("m1={m1} n2={n2}, {} seeds x {} lambdas", seeds.len(), multipliers.len()),
    ))
}

pub fn chunking_deterministic() -> CheckResult {
    let f = |r: &mut crate::rng::Rng| r.random::<f64>();
    let a = mc::chunked_mean(3 * mc::MC_CHUNK + 17, 5, f);
    let b = mc::chunked_mean(3 * mc::MC_CHUNK + 17, 5, f);
    let dev = (a.estimate - b.estimate).abs() + (a.std_error - b.std_error).abs();
    CheckResult::new("mc.chunked_reduction_deterministic", dev, 0.0, "two identical calls")
}

/// The whole suite at verification scale.
pub fn run_all(seed: u64, fault: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(f) = fault {
        if !FAULTS.contains(&f) {
            return Err(Error::Config(format!("unknown fault {f:?}")));
        }
    }
    let mut out = vec![
        q_at_d_is_one(),
        recursion_vs_explicit_q2(seed, fault == Some("q2_constant")),
        product_linearization(seed)?,
        coefficient_bound()?,
        harmonic_dim_examples()?,
        quadratic_moment_mc(8, 10, 100_000, seed),
        sign_features_unit_moment()?,
        symmetric_init_zero(8, 5, 100)?,
        lifted_matches_dense(seed)?,
        stage1_closed_form(8, 64, 512, 1024, seed)?.0,
        ridge_fixed_point(64, 512, &[seed], &[1.0])?,
        chunking_deterministic(),
    ];
    for c in &mut out {
        if !c.value.is_finite() {
            c.passed = false;
        }
    }
    Ok(out)
}

/// Runs the suite, writes verify.csv under `dir`, and fails naming every broken check.
pub fn run_verify(cfg: &crate::experiment::ExperimentConfig) -> Result<Vec<CheckResult>> {
    let dir = crate::experiment::prepare_out_dir(cfg)?;
    let results = run_all(cfg.seed, cfg.inject_fault.as_deref())?;
    crate::io::write_csv(&dir.join("verify.csv"), &cfg.hash(), &results)?;
    crate::experiment::write_manifest(cfg, &dir, &["verify.csv"])?;
    let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(Error::Invariant(format!("failed checks: {}", failed.join(", "))))
    }
}
