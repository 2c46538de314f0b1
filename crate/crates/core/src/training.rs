//! Layer-wise training: one gradient step on W (Stage 1), bias re-initialization, feature-scale
//! calibration, ridge-regularized gradient descent on a (Stage 2), plus the random-feature
//! baseline that skips Stage 1.
//!
//! Squared losses are written as ½·mean (f − y)², so the Stage-1 step with
//! η₁ = m₁η/(2εm₂) and λ₁ = 1/η₁ lands exactly on w_j⁽¹⁾ = (ηa_j/m₂)·M·w_j.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{sigma1, sigma1_prime, Directions, InnerLayer, NetworkParams};
use crate::rng;
use crate::sphere::{self, SampleMatrix};
use crate::targets::Target;

/// Ceiling on |η·⟨w_j, h(x)⟩| after calibration.
pub const CALIBRATION_CEILING: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub target_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: SampleMatrix,
    pub y: Array1<f64>,
    pub provenance: DatasetProvenance,
}

impl Dataset {
    pub fn draw(target: &Target, n: usize, seed: u64) -> Result<Self> {
        let x = sphere::sample_sphere(target.d(), n, seed)?;
        let y = target.eval(&x)?;
        Ok(Dataset { x, y, provenance: DatasetProvenance { target_id: target.id(), seed } })
    }

    pub fn from_parts(x: SampleMatrix, y: Array1<f64>, provenance: DatasetProvenance) -> Result<Self> {
        if x.n() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.n(), found: y.len() });
        }
        Ok(Dataset { x, y, provenance })
    }

    /// Same inputs, labels from another target.
    pub fn relabel(&self, target: &Target) -> Result<Self> {
        Ok(Dataset {
            x: self.x.clone(),
            y: target.eval(&self.x)?,
            provenance: DatasetProvenance { target_id: target.id(), seed: self.provenance.seed },
        })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        let x = self.x.concat(&other.x)?;
        let y = ndarray::concatenate(Axis(0), &[self.y.view(), other.y.view()]).expect("1-d concat");
        Ok(Dataset { x, y, provenance: self.provenance.clone() })
    }

    fn split_rows(&self, n_first: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>, ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let x = self.x.rows();
        (
            x.slice_move(s![..n_first, ..]),
            self.y.slice(s![..n_first]),
            self.x.rows().slice_move(s![n_first.., ..]),
            self.y.slice(s![n_first..]),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda2 {
    /// Absolute ridge strength.
    Fixed(f64),
    /// Multiple of the feature second moment mean(Ψ²).
    Relative(f64),
    /// Pick the multiplier with the lowest validation MAE on the first `holdout` fraction of D₂.
    Sweep { multipliers: Vec<f64>, holdout: f64 },
}

impl Default for Lambda2 {
    fn default() -> Self {
        Lambda2::Sweep { multipliers: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2], holdout: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepBudget {
    /// At most this many full-batch GD steps.
    Steps(usize),
    /// The GD fixed point, solved directly.
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta_quantile: f64,
    pub lambda2: Lambda2,
    pub budget: StepBudget,
    /// Early stop when ‖∇J‖ ≤ grad_tol·‖Ψᵀy/n‖.
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { eta_quantile: 1.0, lambda2: Lambda2::default(), budget: StepBudget::Converged, grad_tol: 1e-10 }
    }
}

/// Stage-1 output. W⁽¹⁾ is affine in η, so the gradient is stored and W⁽¹⁾ rebuilt per η.
#[derive(Clone, Debug)]
pub struct StageOneState {
    pub inner: InnerLayer,
    pub a0: Array1<f64>,
    pub w0: Array2<f64>,
    pub epsilon: f64,
    /// ∇_W of the Stage-1 loss at θ⁽⁰⁾ (m₁×m₂).
    pub grad: Array2<f64>,
    /// (1/n₁)Σ y_i e(x_i)e(x_i)ᵀ in the inner layer's space; M = ΨCΨᵀ on the lifted path.
    pub gram: Array2<f64>,
    pub eta: f64,
    pub d1: Dataset,
    pub out_of_zone: f64,
}

impl StageOneState {
    pub fn m1(&self) -> usize {
        self.a0.len()
    }

    pub fn m2(&self) -> usize {
        self.inner.m2()
    }

    pub fn eta1(&self) -> f64 {
        self.m1() as f64 * self.eta / (2.0 * self.epsilon * self.m2() as f64)
    }

    pub fn lambda1(&self) -> f64 {
        1.0 / self.eta1()
    }

    /// W⁽¹⁾ = W⁽⁰⁾ − η₁(∇ + λ₁W⁽⁰⁾).
    pub fn w1(&self) -> Array2<f64> {
        let eta1 = self.eta1();
        let step = &self.grad + &(&self.w0 * self.lambda1());
        &self.w0 - &(step * eta1)
    }

    pub fn w_unit(&self) -> Array2<f64> {
        &self.w0 / self.epsilon
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        StageOneState { eta, ..self.clone() }
    }

    /// The directions Q (m₂×k) pulled through h⁽¹⁾: the returned block gives
    /// ⟨q, h⁽¹⁾(x)⟩ = h⁽⁰⁾(x)ᵀMq/m₂ when projected.
    pub fn h1_directions(&self, q: ArrayView2<f64>) -> Directions {
        let lifted = self.inner.lift_directions(q);
        let mut mat = self.gram.dot(&lifted.mat);
        if let Some(metric) = self.inner.metric() {
            mat = metric.dot(&mat);
        }
        mat /= self.m2() as f64;
        Directions { space: lifted.space, mat }
    }

    /// h⁽¹⁾ for each row of x; n×m₂.
    pub fn h1_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h0 = self.inner.h0_rows(x)?;
        Ok(match self.inner.psi() {
            // h0 = Φ Ψᵀ, so h0 M / m2 = Φ ΨᵀΨ C Ψᵀ / m2
            Some(psi) => {
                let e = self.inner.embed(x);
                let t = e.dot(&psi.t().dot(&psi)).dot(&self.gram);
                t.dot(&psi.t()) / self.m2() as f64
            }
            None => h0.dot(&self.gram) / self.m2() as f64,
        })
    }

    pub fn compute_h1(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.h1_rows(x.insert_axis(Axis(0)))?.row(0).to_owned())
    }
}

/// One full-batch step on W from a symmetric initialization, at η = 1.
/// Use [`calibrate_eta`] and [`StageOneState::with_eta`] to set the feature scale.
pub fn stage1_step(theta0: &NetworkParams, d1: &Dataset) -> Result<StageOneState> {
    if !theta0.is_symmetric_init() {
        return Err(Error::InvalidArgument("stage 1 requires a symmetric initialization".into()));
    }
    if !(theta0.epsilon > 0.0) {
        return Err(Error::InvalidArgument("stage 1 requires epsilon > 0".into()));
    }
    let inner = &theta0.inner;
    let x = d1.x.rows();
    if x.ncols() != inner.d() {
        return Err(Error::DimensionMismatch { expected: inner.d(), found: x.ncols() });
    }
    let (n1, m1) = (d1.n(), theta0.m1());
    if n1 == 0 {
        return Err(Error::InvalidArgument("D1 is empty".into()));
    }
    let e_dim = inner.embed_dim();
    inner.check_alloc("stage-1 accumulators", m1 * e_dim + e_dim * e_dim + 2 * m1 * theta0.m2())?;
    let dirs = inner.lift_directions(theta0.w.t());
    let rows = inner.tile_rows(m1 + e_dim);
    let mut acc = Array2::<f64>::zeros((m1, e_dim));
    let mut gram = Array2::<f64>::zeros((e_dim, e_dim));
    let mut outside = 0usize;
    let scale = 1.0 / (m1 as f64 * n1 as f64);
    let mut start = 0;
    while start < n1 {
        let end = (start + rows).min(n1);
        let emb = inner.embed(x.slice(s![start..end, ..]));
        let z = emb.dot(&dirs.mat);
        let y = d1.y.slice(s![start..end]);
        let mut coef = Array2::<f64>::zeros(z.dim());
        for (i, zi) in z.outer_iter().enumerate() {
            let mut f = 0.0;
            for ((zij, bj), aj) in zi.iter().zip(&theta0.b).zip(&theta0.a) {
                f += aj * sigma1(zij + bj);
            }
            let resid = f / m1 as f64 - y[i];
            for (j, (zij, bj)) in zi.iter().zip(&theta0.b).enumerate() {
                let pre = zij + bj;
                if pre.abs() >= 1.0 {
                    outside += 1;
                }
                coef[[i, j]] = resid * theta0.a[j] * sigma1_prime(pre) * scale;
            }
        }
        acc += &coef.t().dot(&emb);
        let weighted = &emb * &y.insert_axis(Axis(1));
        gram += &weighted.t().dot(&emb);
        start = end;
    }
    gram /= n1 as f64;
    let out_of_zone = outside as f64 / (n1 * m1) as f64;
    if outside > 0 {
        log::warn!(
            "stage 1: {:.3e} of preactivations left (-1, 1); the closed form no longer holds exactly",
            out_of_zone
        );
    }
    Ok(StageOneState {
        inner: inner.clone(),
        a0: theta0.a.clone(),
        w0: theta0.w.clone(),
        epsilon: theta0.epsilon,
        grad: inner.to_neuron_rows(acc),
        gram,
        eta: 1.0,
        d1: d1.clone(),
        out_of_zone,
    })
}

fn quantile_abs(values: ArrayView2<f64>, q: f64) -> f64 {
    if q >= 1.0 {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let mut all: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    all.sort_by(f64::total_cmp);
    let idx = ((q.max(0.0) * all.len() as f64).ceil() as usize).clamp(1, all.len()) - 1;
    all[idx]
}

fn eta_for(u: ArrayView2<f64>, q: f64) -> Result<f64> {
    let top = quantile_abs(u, q);
    if top < 1e-30 {
        return Err(Error::DegenerateScale { max: top });
    }
    Ok(CALIBRATION_CEILING / top)
}

/// η such that the q-quantile of |η·⟨w_j, h⁽¹⁾(x')⟩| over j and x' ∈ D₂ is 0.9.
pub fn calibrate_eta(state: &StageOneState, d2: &Dataset, q: f64) -> Result<f64> {
    if d2.n() == 0 {
        return Err(Error::InvalidArgument("D2 is empty".into()));
    }
    let w_unit = state.w_unit();
    let u = state.inner.project(d2.x.rows(), &state.h1_directions(w_unit.t()))?;
    eta_for(u.view(), q)
}

pub fn reinit_bias(m1: usize, seed: u64) -> Array1<f64> {
    let mut r = rng::rng(seed);
    Array1::from_iter((0..m1).map(|_| r.random_range(-3.0..=3.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// h⁽¹⁾ from Stage 1.
    Learned,
    /// h⁽⁰⁾ (random-feature baseline).
    Initial,
}

/// The fixed Stage-2 map Ψ(x)_j = σ₁(η·a_j⁽⁰⁾⟨w_j, h(x)⟩ + b_j)/m₁.
#[derive(Clone, Debug)]
pub struct Stage2Features {
    pub inner: InnerLayer,
    pub dirs: Directions,
    pub a0: Array1<f64>,
    pub b: Array1<f64>,
    pub eta: f64,
    pub representation: Representation,
}

impl Stage2Features {
    pub fn learned(state: &StageOneState, b: Array1<f64>) -> Self {
        let w_unit = state.w_unit();
        Stage2Features {
            inner: state.inner.clone(),
            dirs: state.h1_directions(w_unit.t()),
            a0: state.a0.clone(),
            b,
            eta: state.eta,
            representation: Representation::Learned,
        }
    }

    /// Features on h⁽⁰⁾ with a given η.
    pub fn initial(theta0: &NetworkParams, b: Array1<f64>, eta: f64) -> Result<Self> {
        let w_unit = theta0.w_unit()?;
        Ok(Stage2Features {
            inner: theta0.inner.clone(),
            dirs: theta0.inner.lift_directions(w_unit.t()),
            a0: theta0.a.clone(),
            b,
            eta,
            representation: Representation::Initial,
        })
    }

    pub fn m1(&self) -> usize {
        self.a0.len()
    }

    /// ⟨w_j, h(x)⟩ for each row; n×m₁.
    pub fn preactivations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.inner.project(x, &self.dirs)
    }

    fn apply(&self, mut u: Array2<f64>) -> Array2<f64> {
        let m1 = self.m1() as f64;
        for mut row in u.outer_iter_mut() {
            for ((v, a), b) in row.iter_mut().zip(&self.a0).zip(&self.b) {
                *v = sigma1(self.eta * a * *v + b) / m1;
            }
        }
        u
    }

    pub fn eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.apply(self.preactivations(x)?))
    }

    fn tile_rows(&self) -> usize {
        self.inner.tile_rows(2 * self.m1())
    }

    /// Model output Ψ(x)·a, tile by tile.
    pub fn predict(&self, x: ArrayView2<f64>, a: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = x.nrows();
        let rows = self.tile_rows();
        let mut out = Array1::zeros(n);
        let mut start = 0;
        while start < n {
            let end = (start + rows).min(n);
            let f = self.eval(x.slice(s![start..end, ..]))?;
            out.slice_mut(s![start..end]).assign(&f.dot(&a));
            start = end;
        }
        Ok(out)
    }

    /// ΨᵀΨ/n, Ψᵀy/n and mean y² over the given rows.
    pub fn ridge_problem(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<RidgeProblem> {
        let n = x.nrows();
        let m1 = self.m1();
        self.inner.check_alloc("stage-2 Gram", m1 * m1)?;
        let rows = self.tile_rows();
        let mut g = Array2::zeros((m1, m1));
        let mut c = Array1::zeros(m1);
        let mut start = 0;
        while start < n {
            let end = (start + rows).min(n);
            let f = self.eval(x.slice(s![start..end, ..]))?;
            g += &f.t().dot(&f);
            c += &f.t().dot(&y.slice(s![start..end]));
            start = end;
        }
        let nf = n.max(1) as f64;
        Ok(RidgeProblem { g: g / nf, c: c / nf, y_sq: y.dot(&y) / nf, n })
    }
}

/// J(a) = ½(aᵀGa − 2cᵀa + ȳ²) + (λ/2)‖a‖² with G = ΨᵀΨ/n, c = Ψᵀy/n.
#[derive(Clone, Debug)]
pub struct RidgeProblem {
    pub g: Array2<f64>,
    pub c: Array1<f64>,
    pub y_sq: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub a_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GdResult {
    pub a: Array1<f64>,
    pub trace: Vec<TraceRow>,
    pub steps: usize,
    pub converged: bool,
}

impl RidgeProblem {
    pub fn from_features(f: ArrayView2<f64>, y: ArrayView1<f64>) -> Self {
        let nf = f.nrows().max(1) as f64;
        RidgeProblem { g: f.t().dot(&f) / nf, c: f.t().dot(&y) / nf, y_sq: y.dot(&y) / nf, n: f.nrows() }
    }

    /// The problem over the union of two disjoint row sets.
    pub fn combine(a: &RidgeProblem, b: &RidgeProblem) -> Self {
        let n = a.n + b.n;
        let (wa, wb) = (a.n as f64 / n as f64, b.n as f64 / n as f64);
        RidgeProblem {
            g: &a.g * wa + &b.g * wb,
            c: &a.c * wa + &b.c * wb,
            y_sq: a.y_sq * wa + b.y_sq * wb,
            n,
        }
    }

    pub fn m1(&self) -> usize {
        self.c.len()
    }

    /// Mean of Ψ² over samples and features.
    pub fn second_moment(&self) -> f64 {
        self.g.diag().sum() / self.m1().max(1) as f64
    }

    /// Unregularized empirical MSE.
    pub fn mse(&self, a: ArrayView1<f64>) -> f64 {
        (a.dot(&self.g.dot(&a)) - 2.0 * self.c.dot(&a) + self.y_sq).max(0.0)
    }

    pub fn objective(&self, a: ArrayView1<f64>, lambda: f64) -> f64 {
        0.5 * (a.dot(&self.g.dot(&a)) - 2.0 * self.c.dot(&a) + self.y_sq) + 0.5 * lambda * a.dot(&a)
    }

    pub fn gradient(&self, a: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
        self.g.dot(&a) - &self.c + &(&a * lambda)
    }

    /// ‖(G + λI)a − c‖ / ‖c‖ (absolute when c = 0).
    pub fn normal_residual(&self, a: ArrayView1<f64>, lambda: f64) -> f64 {
        let r = linalg::frobenius(self.gradient(a, lambda).insert_axis(Axis(0)).view());
        let cn = self.c.dot(&self.c).sqrt();
        if cn > 0.0 {
            r / cn
        } else {
            r
        }
    }

    pub fn lambda_max(&self) -> f64 {
        linalg::power_max_eig(self.g.view(), 5000, 1e-12)
    }

    /// The documented step 1/(λ + λ_max(G)).
    pub fn step_size(&self, lambda: f64) -> f64 {
        1.0 / (lambda + self.lambda_max() * (1.0 + 1e-9))
    }

    /// Closed-form ridge solution (G + λI)⁻¹c.
    pub fn solve(&self, lambda: f64) -> Result<Array1<f64>> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("ridge strength must be positive, got {lambda}")));
        }
        linalg::solve_spd_shifted(self.g.view(), lambda, self.c.view())
            .ok_or_else(|| Error::Invariant("ridge system is not positive definite".into()))
    }

    fn row(&self, step: usize, a: ArrayView1<f64>, lambda: f64) -> TraceRow {
        let g = self.gradient(a, lambda);
        TraceRow { step, loss: self.mse(a), grad_norm: g.dot(&g).sqrt(), a_norm: a.dot(&a).sqrt() }
    }

    /// Full-batch GD from `a0` with step 1/(λ + λ_max), at most `steps` steps.
    pub fn gd(&self, a0: ArrayView1<f64>, lambda: f64, steps: usize, grad_tol: f64) -> Result<GdResult> {
        let eta2 = self.step_size(lambda);
        let cn = self.c.dot(&self.c).sqrt();
        let tol = if cn > 0.0 { grad_tol * cn } else { grad_tol };
        let mut a = a0.to_owned();
        let mut trace = vec![self.row(0, a.view(), lambda)];
        let mut prev = self.objective(a.view(), lambda);
        let mut rises = 0;
        for step in 1..=steps {
            let g = self.gradient(a.view(), lambda);
            if g.dot(&g).sqrt() <= tol {
                return Ok(GdResult { a, trace, steps: step - 1, converged: true });
            }
            a.scaled_add(-eta2, &g);
            let obj = self.objective(a.view(), lambda);
            if obj > prev {
                rises += 1;
                if rises >= 10 {
                    return Err(Error::Divergence { step });
                }
            } else {
                rises = 0;
            }
            prev = obj;
            trace.push(self.row(step, a.view(), lambda));
        }
        let g = self.gradient(a.view(), lambda);
        let converged = g.dot(&g).sqrt() <= tol;
        Ok(GdResult { a, trace, steps, converged })
    }

    pub fn fit(&self, a0: ArrayView1<f64>, lambda: f64, cfg: &TrainConfig) -> Result<GdResult> {
        match cfg.budget {
            StepBudget::Steps(t) => self.gd(a0, lambda, t, cfg.grad_tol),
            StepBudget::Converged => {
                let a = self.solve(lambda)?;
                let trace = vec![self.row(0, a.view(), lambda)];
                Ok(GdResult { a, trace, steps: 0, converged: true })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub features: Stage2Features,
    pub a: Array1<f64>,
    pub lambda2: f64,
    pub trace: Vec<TraceRow>,
}

impl TrainedModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.features.predict(x, self.a.view())
    }

    pub fn eta(&self) -> f64 {
        self.features.eta
    }
}

fn mae(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len().max(1) as f64
}

/// Fits a on fixed features, resolving λ₂ per the config.
pub fn train_on_features(features: Stage2Features, d2: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let x = d2.x.rows();
    let a0 = features.a0.clone();
    let (lambda2, prob) = match &cfg.lambda2 {
        Lambda2::Fixed(l) => (*l, features.ridge_problem(x, d2.y.view())?),
        Lambda2::Relative(mult) => {
            let prob = features.ridge_problem(x, d2.y.view())?;
            (mult * prob.second_moment(), prob)
        }
        Lambda2::Sweep { multipliers, holdout } => {
            let n_val = ((d2.n() as f64) * holdout).floor() as usize;
            if multipliers.is_empty() || n_val == 0 || n_val >= d2.n() {
                return Err(Error::Config("lambda sweep needs multipliers and a proper holdout".into()));
            }
            let (xv, yv, xt, yt) = d2.split_rows(n_val);
            let train = features.ridge_problem(xt, yt)?;
            let fv = features.eval(xv)?;
            let sm = train.second_moment();
            let mut best = (f64::INFINITY, multipliers[0]);
            for &mult in multipliers {
                let fit = train.fit(a0.view(), mult * sm, cfg)?;
                let err = mae(fv.dot(&fit.a).view(), yv);
                log::debug!("lambda sweep: multiplier {mult:e} -> validation MAE {err:.5}");
                if err < best.0 {
                    best = (err, mult);
                }
            }
            let val = RidgeProblem::from_features(fv.view(), yv);
            let full = RidgeProblem::combine(&train, &val);
            (best.1 * full.second_moment(), full)
        }
    };
    let fit = prob.fit(a0.view(), lambda2, cfg)?;
    Ok(TrainedModel { features, a: fit.a, lambda2, trace: fit.trace })
}

/// Stage 2 of the layer-wise procedure. D₂'s inputs are relabelled with `target2`.
pub fn stage2_train(
    state: &StageOneState,
    b: &Array1<f64>,
    d2: &Dataset,
    cfg: &TrainConfig,
    target2: &Target,
) -> Result<TrainedModel> {
    if b.len() != state.m1() {
        return Err(Error::DimensionMismatch { expected: state.m1(), found: b.len() });
    }
    let d2 = d2.relabel(target2)?;
    train_on_features(Stage2Features::learned(state, b.clone()), &d2, cfg)
}

/// Random-feature baseline: Stage 2 on h⁽⁰⁾, with η calibrated on D's inputs by the same rule.
pub fn rf_baseline_train(theta0: &NetworkParams, b: &Array1<f64>, d: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let probe = Stage2Features::initial(theta0, b.clone(), 1.0)?;
    let eta = eta_for(probe.preactivations(d.x.rows())?.view(), cfg.eta_quantile)?;
    train_on_features(Stage2Features { eta, ..probe }, d, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestError {
    pub mae: f64,
    pub mse: f64,
    pub mae_stderr: f64,
    pub mse_stderr: f64,
    pub n: usize,
}

pub fn test_error_of<F>(predict: F, target: &Target, n_test: usize, seed: u64) -> Result<TestError>
where
    F: Fn(ArrayView2<f64>) -> Result<Array1<f64>>,
{
    let x = sphere::sample_sphere(target.d(), n_test, seed)?;
    let y = target.eval(&x)?;
    let pred = predict(x.rows())?;
    let abs = crate::mc::moments_of(pred.iter().zip(&y).map(|(p, t)| (p - t).abs())).estimate();
    let sq = crate::mc::moments_of(pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t))).estimate();
    Ok(TestError { mae: abs.estimate, mse: sq.estimate, mae_stderr: abs.std_error, mse_stderr: sq.std_error, n: n_test })
}

/// Fresh-sample MAE/MSE of a trained model.
pub fn test_error(model: &TrainedModel, target: &Target, n_test: usize, seed: u64) -> Result<TestError> {
    test_error_of(|x| model.predict(x), target, n_test, seed)
}
