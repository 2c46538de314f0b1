//! Configuration-driven experiment runners and their CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{make_sign_features, FeatureSet};
use crate::io;
use crate::network::{default_epsilon, init_network, ActivationSpec, NetworkParams};
use crate::reconstruction::{build_bstar, correlation_report, reconstruct_features};
use crate::rng::{derive_indexed, derive_seed};
use crate::sphere;
use crate::targets::{expected_hessian, make_standard_target, HessianMode, Target, ANALYTIC_HESSIAN_MAX_DEGREE};
use crate::training::{
    calibrate_eta, reinit_bias, rf_baseline_train, stage1_step, stage2_train, test_error, Dataset, Lambda2,
    StageOneState, StepBudget, TrainConfig,
};
use crate::universality::universality_report;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Compare,
    Transfer,
    Reconstruct,
    Universality,
    Verify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Compare => "compare",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::Universality => "universality",
            ExperimentKind::Verify => "verify",
        }
    }
}

/// Fully resolved experiment configuration. Grid meanings per experiment:
/// `n` is the total sample size (compare), the n₂ grid (transfer) or the n₁ grid
/// (reconstruct; empty means {d², d³, d⁴}); `p` lists target degrees (compare) or
/// transfer degrees (transfer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub d: Vec<usize>,
    pub r: usize,
    pub p: Vec<usize>,
    pub pretrain_p: usize,
    pub n: Vec<usize>,
    pub n1: usize,
    pub m1: usize,
    pub m2: usize,
    /// Replicate ids; each run seed is derived from (seed, id).
    pub seeds: Vec<u64>,
    /// Master seed.
    pub seed: u64,
    pub n_test: usize,
    pub n_cal: usize,
    pub epsilon: Option<f64>,
    pub eta_quantile: f64,
    pub lambda_multipliers: Vec<f64>,
    pub holdout: f64,
    /// Fixed λ₂ as a multiple of the feature second moment; disables the sweep.
    pub lambda2: Option<f64>,
    /// Stage-2 GD step budget; absent means the GD fixed point.
    pub stage2_steps: Option<usize>,
    pub grad_tol: f64,
    pub write_trace: bool,
    pub recon_test_points: usize,
    pub universality_n: usize,
    pub directions: usize,
    pub record_timing: bool,
    pub tile_budget_mb: usize,
    pub memory_budget_mb: usize,
    /// Verify only: deliberately break one identity to exercise failure reporting.
    pub inject_fault: Option<String>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Compare,
            d: vec![16],
            r: 3,
            p: vec![4],
            pretrain_p: 2,
            n: vec![1 << 10, 1 << 12, 1 << 14],
            n1: 1 << 14,
            m1: 2048,
            m2: 4096,
            seeds: vec![0, 1, 2],
            seed: 0,
            n_test: 10_000,
            n_cal: 1 << 20,
            epsilon: None,
            eta_quantile: 1.0,
            lambda_multipliers: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
            holdout: 0.2,
            lambda2: None,
            stage2_steps: None,
            grad_tol: 1e-10,
            write_trace: false,
            recon_test_points: 10_000,
            universality_n: 200_000,
            directions: 64,
            record_timing: true,
            tile_budget_mb: 256,
            memory_budget_mb: 3072,
            inject_fault: None,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig { experiment: kind, ..Default::default() };
        match kind {
            ExperimentKind::Transfer => c.p = vec![4, 6, 8],
            ExperimentKind::Reconstruct => {
                c.n = Vec::new();
                c.m2 = 8192;
                c.p = vec![2];
            }
            ExperimentKind::Universality => c.d = vec![8, 16, 32, 64],
            _ => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d.is_empty() || self.seeds.is_empty() {
            return bad("d and seeds grids must be nonempty");
        }
        if self.d.iter().any(|d| *d == 0 || d % 4 != 0) {
            return bad("every d must be a positive multiple of 4 (sign features)");
        }
        if self.r != 3 {
            return bad("r is fixed to 3 by the sign-pattern feature family");
        }
        if self.m1 == 0 || self.m1 % 2 != 0 || self.m2 == 0 {
            return bad("m1 must be positive and even, m2 positive");
        }
        match self.experiment {
            ExperimentKind::Compare | ExperimentKind::Transfer => {
                if self.n.is_empty() || self.p.is_empty() {
                    return bad("n and p grids must be nonempty");
                }
                if self.p.contains(&0) || self.pretrain_p == 0 {
                    return bad("target degrees must be >= 1");
                }
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::Compare && self.n.iter().any(|n| *n < 4 || n % 2 != 0) {
            return bad("compare needs even n >= 4 (n1 = n2 = n/2)");
        }
        if self.n.contains(&0) || self.n1 == 0 || self.n_test == 0 || self.n_cal < 2 {
            return bad("sample sizes must be positive");
        }
        if !(self.eta_quantile > 0.0 && self.eta_quantile <= 1.0) {
            return bad("eta_quantile must lie in (0, 1]");
        }
        if self.lambda2.is_none() && (self.lambda_multipliers.is_empty() || !(self.holdout > 0.0 && self.holdout < 1.0)) {
            return bad("lambda sweep needs multipliers and holdout in (0, 1)");
        }
        if self.lambda2.is_some_and(|l| !(l > 0.0)) || self.lambda_multipliers.iter().any(|l| !(*l > 0.0)) {
            return bad("ridge multipliers must be positive");
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return bad("epsilon must be positive");
        }
        if self.experiment == ExperimentKind::Universality && (self.universality_n < 1000 || self.directions == 0) {
            return bad("universality needs universality_n >= 1000 and directions >= 1");
        }
        if let Some(f) = &self.inject_fault {
            if !crate::verify::FAULTS.contains(&f.as_str()) {
                return Err(Error::Config(format!("unknown fault {f:?}; known: {:?}", crate::verify::FAULTS)));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the config, ignoring the output directory.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&ExperimentConfig { out: PathBuf::new(), ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta_quantile: self.eta_quantile,
            lambda2: match self.lambda2 {
                Some(m) => Lambda2::Relative(m),
                None => Lambda2::Sweep { multipliers: self.lambda_multipliers.clone(), holdout: self.holdout },
            },
            budget: self.stage2_steps.map_or(StepBudget::Converged, StepBudget::Steps),
            grad_tol: self.grad_tol,
        }
    }

    pub fn run_seed(&self, replicate: u64) -> u64 {
        derive_indexed(self.seed, "run", replicate)
    }

    pub fn spec(&self, d: usize) -> ActivationSpec {
        ActivationSpec::default_q2(d)
    }

    fn epsilon_for(&self, d: usize, n1: usize) -> f64 {
        self.epsilon.unwrap_or_else(|| default_epsilon(&self.spec(d), n1, self.m1, self.m2))
    }

    fn init(&self, d: usize, n1: usize, run_seed: u64) -> Result<NetworkParams> {
        let mut theta = init_network(d, self.m1, self.m2, self.epsilon_for(d, n1), run_seed, &self.spec(d))?;
        theta.inner = theta.inner.with_tile_budget(self.tile_budget_mb << 20).with_memory_budget(self.memory_budget_mb << 20);
        Ok(theta)
    }

    /// f*_{d,p}, calibrated on a draw that depends only on (seed, d, p).
    pub fn target(&self, features: &FeatureSet, p: usize) -> Result<Target> {
        let d = features.d();
        make_standard_target(d, p, features, self.n_cal, derive_seed(self.seed, &format!("calibration-d{d}-p{p}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub experiment: String,
    pub method: String,
    pub d: usize,
    pub r: usize,
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
    pub seed: u64,
    pub test_mae: f64,
    pub test_mse: f64,
    pub mae_stderr: f64,
    pub wall_seconds: f64,
}

pub const RESULT_COLUMNS: [&str; 15] = [
    "run_id", "experiment", "method", "d", "r", "p", "n1", "n2", "m1", "m2", "seed", "test_mae", "test_mse",
    "mae_stderr", "wall_seconds",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconRow {
    pub feature_idx: usize,
    pub true_value: f64,
    pub recon_value: f64,
    pub n1: usize,
    pub m2: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconSummaryRow {
    pub d: usize,
    pub n1: usize,
    pub m2: usize,
    pub seed: u64,
    pub feature_idx: usize,
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalityRow {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
    pub mean_abs_mean: f64,
    pub max_cov_dev: f64,
    pub sliced_w1: f64,
    pub gaussian_floor: f64,
}

/// Per-run bookkeeping for --resume.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub resume: bool,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct Timer(Instant, bool);

impl Timer {
    fn start(record: bool) -> Self {
        Timer(Instant::now(), record)
    }
    fn seconds(&self) -> f64 {
        if self.1 {
            self.0.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn run_id(kind: &str, method: &str, d: usize, p: usize, n1: usize, n2: usize, seed: u64) -> String {
    format!("{kind}-{method}-d{d}-p{p}-n1_{n1}-n2_{n2}-s{seed}")
}

/// Stage 1 plus η calibration on D₂'s inputs.
pub fn pretrain(theta0: &NetworkParams, d1: &Dataset, d2: &Dataset, q: f64) -> Result<StageOneState> {
    let state = stage1_step(theta0, d1)?;
    let eta = calibrate_eta(&state, d2, q)?;
    Ok(state.with_eta(eta))
}

fn row(cfg: &ExperimentConfig, method: &str, d: usize, p: usize, n1: usize, n2: usize, seed: u64, err: crate::training::TestError, secs: f64) -> ResultRow {
    ResultRow {
        run_id: run_id(cfg.experiment.name(), method, d, p, n1, n2, seed),
        experiment: cfg.experiment.name().to_string(),
        method: method.to_string(),
        d,
        r: cfg.r,
        p,
        n1,
        n2,
        m1: cfg.m1,
        m2: cfg.m2,
        seed,
        test_mae: err.mae,
        test_mse: err.mse,
        mae_stderr: err.mae_stderr,
        wall_seconds: secs,
    }
}

/// A finished run: its result rows plus optional Stage-2 trace per row.
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<(String, Vec<crate::training::TraceRow>)>,
}

fn targets_for(cfg: &ExperimentConfig, degrees: &[usize]) -> Result<BTreeMap<(usize, usize), Target>> {
    let mut out = BTreeMap::new();
    for &d in &cfg.d {
        let f = make_sign_features(d)?;
        for &p in degrees {
            out.insert((d, p), cfg.target(&f, p)?);
        }
    }
    Ok(out)
}

/// Layer-wise training with n₁ = n₂ = n/2 and the RF baseline on all n samples, same θ⁽⁰⁾ and b.
pub fn compare_run(cfg: &ExperimentConfig, target: &Target, p: usize, n: usize, replicate: u64) -> Result<RunOutput> {
    let d = target.d();
    let run_seed = cfg.run_seed(replicate);
    let (n1, n2) = (n / 2, n - n / 2);
    let tc = cfg.train_config();
    let test_seed = derive_seed(run_seed, "test");

    let timer = Timer::start(cfg.record_timing);
    let theta0 = cfg.init(d, n1, run_seed)?;
    let d1 = Dataset::draw(target, n1, derive_seed(run_seed, "d1"))?;
    let d2 = Dataset::draw(target, n2, derive_seed(run_seed, "d2"))?;
    let b = reinit_bias(cfg.m1, derive_seed(run_seed, "bias"));
    let state = pretrain(&theta0, &d1, &d2, cfg.eta_quantile)?;
    let alg1 = stage2_train(&state, &b, &d2, &tc, target)?;
    let e1 = test_error(&alg1, target, cfg.n_test, test_seed)?;
    let alg1_row = row(cfg, "alg1", d, p, n1, n2, replicate, e1, timer.seconds());

    let timer = Timer::start(cfg.record_timing);
    let all = d1.concat(&d2)?;
    let rf = rf_baseline_train(&theta0, &b, &all, &tc)?;
    let e2 = test_error(&rf, target, cfg.n_test, test_seed)?;
    let rf_row = row(cfg, "rf", d, p, 0, n, replicate, e2, timer.seconds());

    let traces = vec![(alg1_row.run_id.clone(), alg1.trace), (rf_row.run_id.clone(), rf.trace)];
    Ok(RunOutput { rows: vec![alg1_row, rf_row], traces })
}

/// One Stage-1 pretraining on f*_{d,pretrain_p}; Stage 2 for each transfer degree and n₂.
pub fn transfer_run(
    cfg: &ExperimentConfig,
    pretrain_target: &Target,
    transfer_targets: &[(usize, &Target)],
    replicate: u64,
) -> Result<RunOutput> {
    let d = pretrain_target.d();
    let run_seed = cfg.run_seed(replicate);
    let tc = cfg.train_config();
    let test_seed = derive_seed(run_seed, "test");
    let theta0 = cfg.init(d, cfg.n1, run_seed)?;
    let d1 = Dataset::draw(pretrain_target, cfg.n1, derive_seed(run_seed, "d1"))?;
    let b = reinit_bias(cfg.m1, derive_seed(run_seed, "bias"));
    let stage1 = stage1_step(&theta0, &d1)?;
    let mut out = RunOutput { rows: Vec::new(), traces: Vec::new() };
    for &n2 in &cfg.n {
        let d2 = Dataset::draw(pretrain_target, n2, derive_seed(run_seed, "d2"))?;
        let state = stage1.with_eta(calibrate_eta(&stage1, &d2, cfg.eta_quantile)?);
        for (p, target) in transfer_targets {
            let timer = Timer::start(cfg.record_timing);
            let model = stage2_train(&state, &b, &d2, &tc, target)?;
            let err = test_error(&model, target, cfg.n_test, test_seed)?;
            let r = row(cfg, "transfer", d, *p, cfg.n1, n2, replicate, err, timer.seconds());
            out.traces.push((r.run_id.clone(), model.trace));
            out.rows.push(r);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub scatter: Vec<ReconRow>,
    pub summary: Vec<ReconSummaryRow>,
}

/// Stage 1 on f*_{d,p} at n₁, then B*h⁽¹⁾ on fresh test points against the true p(x).
pub fn reconstruct_run(cfg: &ExperimentConfig, target: &Target, n1: usize, replicate: u64) -> Result<ReconOutput> {
    let d = target.d();
    let run_seed = cfg.run_seed(replicate);
    let theta0 = cfg.init(d, n1, run_seed)?;
    let d1 = Dataset::draw(target, n1, derive_seed(run_seed, "d1"))?;
    let state = stage1_step(&theta0, &d1)?;
    let link = target.standardized_link();
    let h = if link.degree() <= ANALYTIC_HESSIAN_MAX_DEGREE {
        expected_hessian(&link, HessianMode::Analytic, 0, 0)?
    } else {
        expected_hessian(&link, HessianMode::MonteCarlo, 1_000_000, derive_seed(run_seed, "hessian"))?
    };
    let bm = build_bstar(&target.features, &h, &state.inner)?;
    let x = sphere::sample_sphere(d, cfg.recon_test_points, derive_seed(run_seed, "test"))?;
    let recon = reconstruct_features(&bm, &state, x.rows())?;
    let truth = target.features.eval_rows(x.rows())?;
    let report = correlation_report(recon.view(), truth.view());
    let mut scatter = Vec::with_capacity(x.n() * target.r());
    for i in 0..x.n() {
        for k in 0..target.r() {
            scatter.push(ReconRow {
                feature_idx: k,
                true_value: truth[[i, k]],
                recon_value: report.matched[[i, k]],
                n1,
                m2: cfg.m2,
                seed: replicate,
            });
        }
    }
    let summary = report
        .correlations
        .iter()
        .enumerate()
        .map(|(k, c)| ReconSummaryRow { d, n1, m2: cfg.m2, seed: replicate, feature_idx: k, correlation: *c })
        .collect();
    Ok(ReconOutput { scatter, summary })
}

pub fn reconstruct_grid(cfg: &ExperimentConfig, d: usize) -> Vec<usize> {
    if cfg.n.is_empty() {
        vec![d * d, d * d * d, d * d * d * d]
    } else {
        cfg.n.clone()
    }
}

pub fn universality_run(cfg: &ExperimentConfig, d: usize) -> Result<UniversalityRow> {
    let f = make_sign_features(d)?;
    let seed = derive_seed(cfg.seed, &format!("universality-d{d}"));
    let rep = universality_report(&f, cfg.universality_n, cfg.directions, seed)?;
    Ok(UniversalityRow {
        d,
        r: f.r(),
        n: cfg.universality_n,
        l: cfg.directions,
        seed: cfg.seed,
        mean_abs_mean: rep.mean_abs_mean(),
        max_cov_dev: rep.max_cov_dev(),
        sliced_w1: rep.sliced.as_ref().map_or(f64::NAN, |s| s.average),
        gaussian_floor: rep.gaussian_floor.as_ref().map_or(f64::NAN, |s| s.average),
    })
}

/// Writes manifest.json and returns its path.
pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path, outputs: &[&str]) -> Result<PathBuf> {
    let manifest = serde_json::json!({
        "experiment": cfg.experiment.name(),
        "config": cfg,
        "config_hash": cfg.hash(),
        "library": env!("CARGO_PKG_NAME"),
        "library_version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Output directory prepared for this config: created, and checked against mixing.
pub fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone();
    io::check_dir_hash(&dir, &cfg.hash())?;
    fs::create_dir_all(dir.join("runs"))?;
    Ok(dir)
}

fn run_dir(dir: &Path, key: &str) -> PathBuf {
    dir.join("runs").join(key)
}

/// Runs `work` for each job key not already finished, one CSV per job under runs/,
/// and returns every job's rows in job order.
fn run_jobs<T, F>(cfg: &ExperimentConfig, dir: &Path, keys: &[String], opts: &RunOptions, work: F) -> Result<Vec<T>>
where
    T: Serialize + serde::de::DeserializeOwned + Send,
    F: Fn(usize) -> Result<(Vec<T>, Vec<(String, Vec<crate::training::TraceRow>)>)> + Sync,
{
    let hash = cfg.hash();
    let results: Vec<Result<Vec<T>>> = pool(opts.jobs)?.install(|| {
        keys.par_iter()
            .enumerate()
            .map(|(i, key)| {
                let rd = run_dir(dir, key);
                let file = rd.join("rows.csv");
                if opts.resume && file.exists() && io::read_csv_hash(&file)?.as_deref() == Some(hash.as_str()) {
                    log::info!("resume: skipping completed run {key}");
                    return io::read_csv(&file);
                }
                let (rows, traces) = work(i)?;
                fs::create_dir_all(&rd)?;
                if cfg.write_trace {
                    for (id, trace) in &traces {
                        let tdir = rd.join(id);
                        fs::create_dir_all(&tdir)?;
                        io::write_csv(&tdir.join("trace.csv"), &hash, trace)?;
                    }
                }
                io::write_csv(&file, &hash, &rows)?;
                Ok(rows)
            })
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

pub fn run_compare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let targets = targets_for(cfg, &cfg.p)?;
    let mut jobs = Vec::new();
    for &d in &cfg.d {
        for &p in &cfg.p {
            for &n in &cfg.n {
                for &s in &cfg.seeds {
                    jobs.push((d, p, n, s));
                }
            }
        }
    }
    let keys: Vec<String> = jobs.iter().map(|(d, p, n, s)| format!("compare-d{d}-p{p}-n{n}-s{s}")).collect();
    let rows = run_jobs(cfg, &dir, &keys, opts, |i| {
        let (d, p, n, s) = jobs[i];
        let out = compare_run(cfg, &targets[&(d, p)], p, n, s)?;
        Ok((out.rows, out.traces))
    })?;
    finish_results(cfg, &dir, &rows)?;
    Ok(rows)
}

pub fn run_transfer(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let mut degrees = cfg.p.clone();
    degrees.push(cfg.pretrain_p);
    let targets = targets_for(cfg, &degrees)?;
    let jobs: Vec<(usize, u64)> = cfg.d.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    let keys: Vec<String> = jobs.iter().map(|(d, s)| format!("transfer-d{d}-n1_{}-s{s}", cfg.n1)).collect();
    let rows = run_jobs(cfg, &dir, &keys, opts, |i| {
        let (d, s) = jobs[i];
        let tt: Vec<(usize, &Target)> = cfg.p.iter().map(|&p| (p, &targets[&(d, p)])).collect();
        let out = transfer_run(cfg, &targets[&(d, cfg.pretrain_p)], &tt, s)?;
        Ok((out.rows, out.traces))
    })?;
    finish_results(cfg, &dir, &rows)?;
    Ok(rows)
}

fn finish_results(cfg: &ExperimentConfig, dir: &Path, rows: &[ResultRow]) -> Result<()> {
    for r in rows {
        if r.test_mae * r.test_mae > r.test_mse + 1e-12 {
            return Err(Error::Invariant(format!("row {} has mae^2 > mse", r.run_id)));
        }
    }
    io::write_csv_with_header(&dir.join("results.csv"), &cfg.hash(), &RESULT_COLUMNS, rows)?;
    write_manifest(cfg, dir, &["results.csv"])?;
    Ok(())
}

pub fn run_reconstruct(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ReconSummaryRow>> {
    cfg.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let p = cfg.p.first().copied().unwrap_or(2);
    let targets = targets_for(cfg, &[p])?;
    let mut jobs = Vec::new();
    for &d in &cfg.d {
        for n1 in reconstruct_grid(cfg, d) {
            for &s in &cfg.seeds {
                jobs.push((d, n1, s));
            }
        }
    }
    let keys: Vec<String> = jobs.iter().map(|(d, n1, s)| format!("reconstruct-d{d}-n1_{n1}-s{s}")).collect();
    let hash = cfg.hash();
    let summary: Vec<ReconSummaryRow> = run_jobs(cfg, &dir, &keys, opts, |i| {
        let (d, n1, s) = jobs[i];
        let out = reconstruct_run(cfg, &targets[&(d, p)], n1, s)?;
        let rd = run_dir(&dir, &keys[i]);
        fs::create_dir_all(&rd)?;
        io::write_csv(&rd.join("scatter.csv"), &hash, &out.scatter)?;
        Ok((out.summary, Vec::new()))
    })?;
    let mut scatter: Vec<ReconRow> = Vec::new();
    for key in &keys {
        scatter.extend(io::read_csv::<ReconRow>(&run_dir(&dir, key).join("scatter.csv"))?);
    }
    io::write_csv(&dir.join("reconstruction.csv"), &hash, &scatter)?;
    io::write_csv(&dir.join("reconstruction_summary.csv"), &hash, &summary)?;
    write_manifest(cfg, &dir, &["reconstruction.csv", "reconstruction_summary.csv"])?;
    Ok(summary)
}

pub fn run_universality(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<UniversalityRow>> {
    cfg.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let keys: Vec<String> = cfg.d.iter().map(|d| format!("universality-d{d}")).collect();
    let rows = run_jobs(cfg, &dir, &keys, opts, |i| Ok((vec![universality_run(cfg, cfg.d[i])?], Vec::new())))?;
    io::write_csv(&dir.join("universality.csv"), &cfg.hash(), &rows)?;
    write_manifest(cfg, &dir, &["universality.csv"])?;
    Ok(rows)
}
