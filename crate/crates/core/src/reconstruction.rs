//! Kernels K⁽⁰⁾, the reconstruction map B*, reconstructed features B*h⁽¹⁾(x), and the
//! T / T* operator diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg;
use crate::mc;
use crate::network::{ActivationSpec, InnerLayer};
use crate::sphere::{self, gegenbauer_all, harmonic_dim};
use crate::targets::{HessianMatrix, Target};
use crate::training::StageOneState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub empirical: f64,
    pub analytic: f64,
    pub deviation: f64,
}

/// K⁽⁰⁾ at t = ⟨x, x'⟩: Σ_i c_i²·Q_i(t)/B(d, i).
pub fn analytic_kernel(spec: &ActivationSpec, t: f64) -> f64 {
    let q = gegenbauer_all(spec.max_degree(), spec.d, t);
    spec.coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| c * c * q[i] / harmonic_dim(spec.d, i).expect("small degree") as f64)
        .sum()
}

/// (1/m₂)⟨σ₂(Vx), σ₂(Vx')⟩ against its infinite-width limit.
pub fn kernel_pair(inner: &InnerLayer, x: ArrayView1<f64>, x2: ArrayView1<f64>) -> KernelEstimate {
    let empirical = inner.h0_point(x).dot(&inner.h0_point(x2)) / inner.m2() as f64;
    let analytic = analytic_kernel(inner.spec(), x.dot(&x2));
    KernelEstimate { empirical, analytic, deviation: (empirical - analytic).abs() }
}

#[derive(Clone, Debug)]
pub struct ReconMatrix {
    /// r×m₂.
    pub b: Array2<f64>,
    /// B(d,2)²·d·(d−1)/c₂².
    pub scale: f64,
    pub h: Array2<f64>,
    /// P with P_jk = v_jᵀA_kv_j (m₂×r).
    pub p: Array2<f64>,
    pub m2: usize,
    pub d: usize,
    pub r: usize,
    pub op_norm: f64,
}

/// B* = (B(d,2)²d(d−1)/c₂²)·(1/m₂)·H⁻¹Pᵀ.
pub fn build_bstar(features: &FeatureSet, h: &HessianMatrix, inner: &InnerLayer) -> Result<ReconMatrix> {
    let (d, r, m2) = (inner.d(), features.r(), inner.m2());
    if features.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: features.d() });
    }
    if h.r() != r {
        return Err(Error::DimensionMismatch { expected: r, found: h.r() });
    }
    let c2 = inner.spec().c2();
    if c2 == 0.0 {
        return Err(Error::ZeroC2);
    }
    let min_abs = h.min_abs_eigenvalue();
    if !(min_abs > 1e-8) {
        return Err(Error::SingularHessian { min_abs_eig: min_abs });
    }
    let h_inv = linalg::inverse(h.h.view()).ok_or(Error::SingularHessian { min_abs_eig: min_abs })?;
    let bd2 = harmonic_dim(d, 2)? as f64;
    let scale = bd2 * bd2 * d as f64 * (d as f64 - 1.0) / (c2 * c2);
    let p = features.eval_rows(inner.v())?;
    let b = h_inv.dot(&p.t()) * (scale / m2 as f64);
    let op_norm = linalg::op_norm(b.view());
    Ok(ReconMatrix { b, scale, h: h.h.clone(), p, m2, d, r, op_norm })
}

/// Row i is B*·h⁽¹⁾(x_i); n×r.
pub fn reconstruct_features(bm: &ReconMatrix, state: &StageOneState, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if bm.m2 != state.m2() {
        return Err(Error::DimensionMismatch { expected: state.m2(), found: bm.m2 });
    }
    let dirs = state.h1_directions(bm.b.t());
    state.inner.project(x, &dirs)
}

/// Affine map of `recon` onto the mean and variance of `truth`.
pub fn variance_match(recon: ArrayView1<f64>, truth: ArrayView1<f64>) -> Array1<f64> {
    let n = recon.len() as f64;
    let (mr, mt) = (recon.sum() / n, truth.sum() / n);
    let sr = (recon.iter().map(|v| (v - mr) * (v - mr)).sum::<f64>() / n).sqrt();
    let st = (truth.iter().map(|v| (v - mt) * (v - mt)).sum::<f64>() / n).sqrt();
    if sr == 0.0 {
        return Array1::from_elem(recon.len(), mt);
    }
    recon.mapv(|v| (v - mr) * st / sr + mt)
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    /// Pearson correlation per feature, after variance matching.
    pub correlations: Vec<f64>,
    pub matched: Array2<f64>,
}

pub fn correlation_report(recon: ArrayView2<f64>, truth: ArrayView2<f64>) -> CorrelationReport {
    let r = truth.ncols();
    let mut matched = Array2::zeros(recon.dim());
    let mut correlations = Vec::with_capacity(r);
    for k in 0..r {
        let m = variance_match(recon.column(k), truth.column(k));
        correlations.push(linalg::pearson(m.view(), truth.column(k)));
        matched.column_mut(k).assign(&m);
    }
    CorrelationReport { correlations, matched }
}

#[derive(Clone, Debug)]
pub struct MatrixEstimate {
    pub mean: Array2<f64>,
    pub std_error: Array2<f64>,
}

/// Monte-Carlo estimate of T(W) = E[f(x)·⟨W, xxᵀ − I⟩·(xxᵀ − I)].
pub fn t_operator_mc(f: &Target, w: ArrayView2<f64>, n: usize, seed: u64) -> Result<MatrixEstimate> {
    let d = f.d();
    if w.dim() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: w.nrows() });
    }
    let tr = w.diag().sum();
    let est = mc::chunked_mean_vec(n, d * d, seed, |r, out| {
        let x = sphere::sphere_point(d, r);
        let s = f.eval_point(x.view()) * (x.dot(&w.dot(&x)) - tr);
        for a in 0..d {
            for b in 0..d {
                let m = x[a] * x[b] - if a == b { 1.0 } else { 0.0 };
                out[a * d + b] = s * m;
            }
        }
    });
    Ok(MatrixEstimate {
        mean: Array2::from_shape_fn((d, d), |(a, b)| est[a * d + b].estimate),
        std_error: Array2::from_shape_fn((d, d), |(a, b)| est[a * d + b].std_error),
    })
}

fn coordinates(features: &FeatureSet, w: ArrayView2<f64>) -> Vec<f64> {
    features
        .matrices()
        .iter()
        .map(|a| linalg::frob_inner(w, a.view()) / linalg::frob_inner(a.view(), a.view()))
        .collect()
}

/// T*(W) = Σ_k ⟨W, A_k⟩/‖A_k‖²_F · Σ_j H_kj A_j.
pub fn t_star(features: &FeatureSet, h: ArrayView2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    let coef = coordinates(features, w);
    let d = features.d();
    let mut out = Array2::zeros((d, d));
    for (k, ck) in coef.iter().enumerate() {
        for (j, a) in features.matrices().iter().enumerate() {
            out.scaled_add(ck * h[[k, j]], a);
        }
    }
    out
}

/// T* with the output side also divided by ‖A_j‖²_F. Population T maps A_k onto
/// Σ_j E[f p_k p_j]/‖A_j‖²_F · A_j exactly when T(A_k) lies in span{A_j}, so this is the
/// operator T̂ actually tends to.
pub fn t_star_gram_normalized(features: &FeatureSet, h: ArrayView2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    let coef = coordinates(features, w);
    let d = features.d();
    let mut out = Array2::zeros((d, d));
    for (k, ck) in coef.iter().enumerate() {
        for (j, a) in features.matrices().iter().enumerate() {
            let na = linalg::frob_inner(a.view(), a.view());
            out.scaled_add(ck * h[[k, j]] / na, a);
        }
    }
    out
}

/// ‖T̂ − reference‖_F with the Monte-Carlo bias Σ se² removed (floored at 0).
pub fn corrected_residual(est: &MatrixEstimate, reference: ArrayView2<f64>) -> f64 {
    let raw: f64 = est.mean.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let bias: f64 = est.std_error.iter().map(|s| s * s).sum();
    (raw - bias).max(0.0).sqrt()
}
