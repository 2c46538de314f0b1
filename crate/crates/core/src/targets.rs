//! Polynomial links g, hierarchical targets f = g∘p, expected Hessians and
//! projection-norm diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg;
use crate::mc::{self, McEstimate};
use crate::sphere::{self, gegenbauer, harmonic_dim, SampleMatrix};

/// Highest degree for which the analytic expected Hessian is implemented.
pub const ANALYTIC_HESSIAN_MAX_DEGREE: usize = 6;

/// g(z) = Σ_k ⟨T_k, z^⊗k⟩ with dense symmetric T_k stored row-major (r^k entries).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkPolynomial {
    r: usize,
    tensors: Vec<Vec<f64>>,
    /// Nonzero entries per degree as (multi-index, value); evaluation only visits these.
    nonzeros: Vec<Vec<(Vec<usize>, f64)>>,
}

fn unflatten(mut flat: usize, r: usize, k: usize) -> Vec<usize> {
    let mut idx = vec![0; k];
    for m in (0..k).rev() {
        idx[m] = flat % r;
        flat /= r;
    }
    idx
}

fn flatten(idx: &[usize], r: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * r + i)
}

fn sorted(idx: &[usize]) -> Vec<usize> {
    let mut s = idx.to_vec();
    s.sort_unstable();
    s
}

impl LinkPolynomial {
    pub fn from_tensors(r: usize, mut tensors: Vec<Vec<f64>>) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidArgument("link needs r >= 1".into()));
        }
        if tensors.is_empty() {
            tensors.push(vec![0.0]);
        }
        for (k, t) in tensors.iter().enumerate() {
            let len = r.checked_pow(k as u32).ok_or(Error::Overflow("link tensor size"))?;
            if t.len() != len {
                return Err(Error::DimensionMismatch { expected: len, found: t.len() });
            }
            let scale = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (flat, v) in t.iter().enumerate() {
                let canon = flatten(&sorted(&unflatten(flat, r, k)), r);
                if (v - t[canon]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!("tensor T_{k} is not symmetric")));
                }
            }
        }
        while tensors.len() > 1 && tensors.last().is_some_and(|t| t.iter().all(|v| *v == 0.0)) {
            tensors.pop();
        }
        let nonzeros = tensors
            .iter()
            .enumerate()
            .map(|(k, t)| {
                t.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(flat, v)| (unflatten(flat, r, k), *v))
                    .collect()
            })
            .collect();
        Ok(LinkPolynomial { r, tensors, nonzeros })
    }

    /// Σ_terms c·Π_i z_i^{α_i}; each term is (c, α) with α of length r.
    pub fn from_monomials(r: usize, terms: &[(f64, Vec<usize>)]) -> Result<Self> {
        let p = terms.iter().map(|(_, a)| a.iter().sum::<usize>()).max().unwrap_or(0);
        let mut tensors: Vec<Vec<f64>> = (0..=p).map(|k| vec![0.0; r.pow(k as u32)]).collect();
        for (c, alpha) in terms {
            if alpha.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: alpha.len() });
            }
            let k: usize = alpha.iter().sum();
            // spread c evenly over all index tuples with multiplicities α
            let mut count = 0usize;
            let mut hits = Vec::new();
            for flat in 0..r.pow(k as u32) {
                let idx = unflatten(flat, r, k);
                let mut mult = vec![0; r];
                idx.iter().for_each(|&i| mult[i] += 1);
                if &mult == alpha {
                    count += 1;
                    hits.push(flat);
                }
            }
            for flat in hits {
                tensors[k][flat] += c / count as f64;
            }
        }
        LinkPolynomial::from_tensors(r, tensors)
    }

    /// Σ_k z_k^p.
    pub fn power_sum(r: usize, p: usize) -> Result<Self> {
        let terms: Vec<(f64, Vec<usize>)> = (0..r)
            .map(|i| {
                let mut a = vec![0; r];
                a[i] = p;
                (1.0, a)
            })
            .collect();
        LinkPolynomial::from_monomials(r, &terms)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn degree(&self) -> usize {
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn is_zero(&self) -> bool {
        self.nonzeros.iter().all(Vec::is_empty)
    }

    /// (g − shift)/scale.
    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        let mut tensors: Vec<Vec<f64>> =
            self.tensors.iter().map(|t| t.iter().map(|v| v / scale).collect()).collect();
        tensors[0][0] -= shift / scale;
        LinkPolynomial::from_tensors(self.r, tensors)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.r {
            return Err(Error::DimensionMismatch { expected: self.r, found: n });
        }
        Ok(())
    }

    pub fn eval(&self, z: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(z.len(), self.r);
        let mut total = 0.0;
        for entries in &self.nonzeros {
            for (idx, v) in entries {
                total += v * idx.iter().map(|&i| z[i]).product::<f64>();
            }
        }
        total
    }

    /// g at each row of `z`.
    pub fn eval_rows(&self, z: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_len(z.ncols())?;
        Ok(Array1::from_iter(z.outer_iter().map(|row| self.eval(row))))
    }

    pub fn gradient(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(self.r);
        for (k, entries) in self.nonzeros.iter().enumerate().skip(1) {
            for (idx, v) in entries {
                g[idx[0]] += k as f64 * v * idx[1..].iter().map(|&i| z[i]).product::<f64>();
            }
        }
        g
    }

    pub fn hessian_at(&self, z: ArrayView1<f64>) -> Array2<f64> {
        let mut h = Array2::zeros((self.r, self.r));
        for (k, entries) in self.nonzeros.iter().enumerate().skip(2) {
            let c = (k * (k - 1)) as f64;
            for (idx, v) in entries {
                h[[idx[0], idx[1]]] += c * v * idx[2..].iter().map(|&i| z[i]).product::<f64>();
            }
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    Analytic,
    MonteCarlo,
}

#[derive(Clone, Debug)]
pub struct HessianMatrix {
    pub h: Array2<f64>,
    pub lambda_min: f64,
    /// Entrywise standard errors (Monte-Carlo mode only).
    pub std_error: Option<Array2<f64>>,
}

impl HessianMatrix {
    pub fn from_matrix(h: Array2<f64>) -> Result<Self> {
        if !linalg::is_symmetric(h.view(), 1e-12) {
            return Err(Error::InvalidArgument("Hessian must be symmetric".into()));
        }
        let lambda_min = linalg::sym_eigenvalues(h.view()).first().copied().unwrap_or(0.0);
        Ok(HessianMatrix { h, lambda_min, std_error: None })
    }

    pub fn r(&self) -> usize {
        self.h.nrows()
    }

    pub fn min_abs_eigenvalue(&self) -> f64 {
        linalg::sym_eigenvalues(self.h.view()).iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// E[Π_m z_{idx_m}] for z ~ N(0, I): the product of (α_i − 1)!! over index multiplicities.
fn gaussian_moment(idx: &[usize], r: usize) -> f64 {
    let mut mult = vec![0usize; r];
    idx.iter().for_each(|&i| mult[i] += 1);
    mult.iter()
        .map(|&a| if a % 2 == 1 { 0.0 } else { (1..a).step_by(2).map(|v| v as f64).product() })
        .product()
}

/// E_{z∼N(0,I_r)}[∇²g(z)].
pub fn expected_hessian(g: &LinkPolynomial, mode: HessianMode, n_mc: usize, seed: u64) -> Result<HessianMatrix> {
    let r = g.r;
    match mode {
        HessianMode::Analytic => {
            if g.degree() > ANALYTIC_HESSIAN_MAX_DEGREE {
                return Err(Error::UnsupportedDegree(g.degree()));
            }
            let mut h = Array2::zeros((r, r));
            for (k, entries) in g.nonzeros.iter().enumerate().skip(2) {
                let c = (k * (k - 1)) as f64;
                for (idx, v) in entries {
                    h[[idx[0], idx[1]]] += c * v * gaussian_moment(&idx[2..], r);
                }
            }
            let h = (&h + &h.t()) * 0.5;
            HessianMatrix::from_matrix(h)
        }
        HessianMode::MonteCarlo => {
            if n_mc == 0 {
                return Err(Error::InvalidArgument("n_mc must be positive".into()));
            }
            let est = mc::chunked_mean_vec(n_mc, r * r, seed, |rng, out| {
                let z = Array1::from_iter((0..r).map(|_| StandardNormal.sample(rng)));
                let h = g.hessian_at(z.view());
                for a in 0..r {
                    for b in 0..r {
                        out[a * r + b] = 0.5 * (h[[a, b]] + h[[b, a]]);
                    }
                }
            });
            let h = Array2::from_shape_fn((r, r), |(a, b)| est[a * r + b].estimate);
            let se = Array2::from_shape_fn((r, r), |(a, b)| est[a * r + b].std_error);
            let mut out = HessianMatrix::from_matrix(h)?;
            out.std_error = Some(se);
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_cal: usize,
    pub seed: u64,
}

/// f(x) = (g(p(x)) − shift)/scale.
#[derive(Clone, Debug)]
pub struct Target {
    pub link: LinkPolynomial,
    pub features: FeatureSet,
    pub shift: f64,
    pub scale: f64,
    pub provenance: Provenance,
    pub flags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TargetDoc {
    r: usize,
    link_tensors: Vec<Vec<f64>>,
    features: serde_json::Value,
    shift: f64,
    scale: f64,
    provenance: Provenance,
}

impl Target {
    /// Target with given standardization constants; no calibration is performed.
    pub fn with_constants(link: LinkPolynomial, features: FeatureSet, shift: f64, scale: f64) -> Result<Self> {
        if link.r() != features.r() {
            return Err(Error::DimensionMismatch { expected: features.r(), found: link.r() });
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("target scale must be positive, got {scale}")));
        }
        let mut flags = Vec::new();
        if link.degree() == 1 {
            flags.push("degenerate: P2 dominant".to_string());
        }
        Ok(Target { link, features, shift, scale, provenance: Provenance { n_cal: 0, seed: 0 }, flags })
    }

    /// Estimates shift and scale on an n_cal calibration draw so that f has mean 0 and
    /// variance 1 on that draw.
    pub fn standardize(link: LinkPolynomial, features: FeatureSet, n_cal: usize, seed: u64) -> Result<Self> {
        let x = sphere::sample_sphere(features.d(), n_cal, seed)?;
        let raw = link.eval_rows(features.eval_rows(x.rows())?.view())?;
        let n = raw.len() as f64;
        let mean = raw.sum() / n;
        let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var < 1e-12 {
            return Err(Error::ScaleUnderflow { variance: var });
        }
        let mut t = Target::with_constants(link, features, mean, var.sqrt())?;
        t.provenance = Provenance { n_cal, seed };
        Ok(t)
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn r(&self) -> usize {
        self.features.r()
    }

    /// The link of the standardized target, (g − shift)/scale.
    pub fn standardized_link(&self) -> LinkPolynomial {
        self.link.affine(self.shift, self.scale).expect("affine map preserves validity")
    }

    /// c·f, realised by dividing the scale.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("scaling factor must be positive".into()));
        }
        let mut t = self.clone();
        t.scale = self.scale / c;
        Ok(t)
    }

    pub fn eval_point(&self, x: ArrayView1<f64>) -> f64 {
        (self.link.eval(self.features.eval_point(x).view()) - self.shift) / self.scale
    }

    pub fn eval_rows(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let z = self.features.eval_rows(x)?;
        Ok(self.link.eval_rows(z.view())?.mapv(|v| (v - self.shift) / self.scale))
    }

    pub fn eval(&self, x: &SampleMatrix) -> Result<Array1<f64>> {
        self.eval_rows(x.rows())
    }

    /// Short identifier used in dataset provenance.
    pub fn id(&self) -> String {
        format!("g{}-r{}-d{}-cal{}", self.link.degree(), self.r(), self.d(), self.provenance.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TargetDoc {
            r: self.link.r(),
            link_tensors: self.link.tensors().to_vec(),
            features: serde_json::from_str(&self.features.to_json()?)?,
            shift: self.shift,
            scale: self.scale,
            provenance: self.provenance,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TargetDoc = serde_json::from_str(s)?;
        let link = LinkPolynomial::from_tensors(doc.r, doc.link_tensors)?;
        let features = FeatureSet::from_json(&doc.features.to_string())?;
        let mut t = Target::with_constants(link, features, doc.shift, doc.scale)?;
        t.provenance = doc.provenance;
        Ok(t)
    }
}

/// f*_{d,p}: standardized Σ_k (xᵀA_kx)^p.
pub fn make_standard_target(d: usize, p: usize, features: &FeatureSet, n_cal: usize, seed: u64) -> Result<Target> {
    if p == 0 {
        return Err(Error::InvalidArgument("target degree must be >= 1".into()));
    }
    if features.d() != d {
        return Err(Error::DimensionMismatch { expected: d, found: features.d() });
    }
    let link = LinkPolynomial::power_sum(features.r(), p)?;
    Target::standardize(link, features.clone(), n_cal, seed)
}

/// Estimate of ‖P_k f‖² as B(d,k)·E[f(x)f(x')Q_k(⟨x,x'⟩)] over independent pairs.
pub fn projection_norm(f: &Target, k: usize, n_pairs: usize, seed: u64) -> Result<McEstimate> {
    projection_norm_fn(f.d(), |x| f.eval_point(x), k, n_pairs, seed)
}

/// [`projection_norm`] for an arbitrary function on the sphere.
pub fn projection_norm_fn<F>(d: usize, f: F, k: usize, n_pairs: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(ArrayView1<f64>) -> f64 + Sync,
{
    let b = harmonic_dim(d, k)? as f64;
    let est = mc::chunked_mean(n_pairs, seed, |r| {
        let x = sphere::sphere_point(d, r);
        let y = sphere::sphere_point(d, r);
        f(x.view()) * f(y.view()) * gegenbauer(k, d, x.dot(&y))
    });
    Ok(est.scaled(b))
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetDiagnostics {
    pub mean: McEstimate,
    pub second_moment: McEstimate,
    pub p2_norm_sq: McEstimate,
    /// √d·‖P₂f‖, the measured counterpart of κ₂.
    pub kappa2: f64,
    pub lambda_min: f64,
    pub sqrt_r_lambda_min: f64,
    pub hessian_mode: HessianMode,
    pub warnings: Vec<String>,
}

pub const DIAGNOSTIC_SAMPLES: usize = 200_000;

/// Mean, P₂-norm and Hessian conditioning of a target, with warnings when the
/// preprocessing assumptions look violated.
pub fn hermite_target_check(f: &Target, seed: u64) -> Result<TargetDiagnostics> {
    let d = f.d();
    let mut warnings = f.flags.clone();
    let mean = mc::chunked_mean(DIAGNOSTIC_SAMPLES, seed, |r| f.eval_point(sphere::sphere_point(d, r).view()));
    let second_moment = mc::chunked_mean(DIAGNOSTIC_SAMPLES, seed, |r| {
        let v = f.eval_point(sphere::sphere_point(d, r).view());
        v * v
    });
    let p2 = projection_norm(f, 2, DIAGNOSTIC_SAMPLES, crate::rng::derive_seed(seed, "p2"))?;
    let link = f.standardized_link();
    let (hess, mode) = if link.degree() <= ANALYTIC_HESSIAN_MAX_DEGREE {
        (expected_hessian(&link, HessianMode::Analytic, 0, 0)?, HessianMode::Analytic)
    } else {
        (
            expected_hessian(&link, HessianMode::MonteCarlo, DIAGNOSTIC_SAMPLES, crate::rng::derive_seed(seed, "hess"))?,
            HessianMode::MonteCarlo,
        )
    };
    if mean.estimate.abs() > 5.0 * mean.std_error + 1e-3 {
        warnings.push(format!("target mean {:.3e} is not centred", mean.estimate));
    }
    if p2.estimate > 0.25 * second_moment.estimate {
        warnings.push(format!(
            "large P2-norm: ||P2 f||^2 = {:.3} of E f^2 = {:.3}",
            p2.estimate, second_moment.estimate
        ));
    }
    if hess.lambda_min <= 0.0 {
        warnings.push(format!("expected Hessian not positive definite (lambda_min = {:.3e})", hess.lambda_min));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(TargetDiagnostics {
        mean,
        second_moment,
        kappa2: (d as f64).sqrt() * p2.estimate.max(0.0).sqrt(),
        p2_norm_sq: p2,
        lambda_min: hess.lambda_min,
        sqrt_r_lambda_min: (f.r() as f64).sqrt() * hess.lambda_min,
        hessian_mode: mode,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_sign_features;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn eval_examples() {
        let g = LinkPolynomial::from_monomials(3, &[(1.0, vec![2, 0, 0])]).unwrap();
        assert_eq!(g.eval(array![2.0, 0.0, 0.0].view()), 4.0);
        let c = LinkPolynomial::from_tensors(2, vec![vec![1.5]]).unwrap();
        assert_eq!(c.eval(array![3.0, -1.0].view()), 1.5);
        assert_eq!(c.degree(), 0);
        let s3 = 3f64.sqrt();
        let q = LinkPolynomial::from_monomials(
            3,
            &[(1.0 / s3, vec![2, 0, 0]), (1.0 / s3, vec![0, 2, 0]), (1.0 / s3, vec![0, 0, 2]), (-s3, vec![0, 0, 0])],
        )
        .unwrap();
        assert!(q.eval(array![1.0, 1.0, 1.0].view()).abs() < 1e-15);
        assert!(g.eval_rows(Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn hessian_examples() {
        let s3 = 3f64.sqrt();
        let q = LinkPolynomial::from_monomials(
            3,
            &[(1.0 / s3, vec![2, 0, 0]), (1.0 / s3, vec![0, 2, 0]), (1.0 / s3, vec![0, 0, 2]), (-s3, vec![0, 0, 0])],
        )
        .unwrap();
        let h = expected_hessian(&q, HessianMode::Analytic, 0, 0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 2.0 / s3 } else { 0.0 };
                assert!((h.h[[a, b]] - want).abs() < 1e-14);
            }
        }
        assert_relative_eq!(h.lambda_min, 2.0 / s3, max_relative = 1e-12);
        let lin = LinkPolynomial::from_monomials(2, &[(1.0, vec![1, 0]), (2.0, vec![0, 1])]).unwrap();
        assert!(expected_hessian(&lin, HessianMode::Analytic, 0, 0).unwrap().h.iter().all(|v| *v == 0.0));
        let cross = LinkPolynomial::from_monomials(2, &[(1.0, vec![1, 1])]).unwrap();
        let h = expected_hessian(&cross, HessianMode::Analytic, 0, 0).unwrap();
        assert_eq!(h.h, array![[0.0, 1.0], [1.0, 0.0]]);
        assert_relative_eq!(h.lambda_min, -1.0, max_relative = 1e-12);
        let p8 = LinkPolynomial::power_sum(2, 8).unwrap();
        assert!(matches!(expected_hessian(&p8, HessianMode::Analytic, 0, 0), Err(Error::UnsupportedDegree(8))));
    }

    #[test]
    fn power_sum_fourth_hessian() {
        // E[12 z^2] = 12
        let g = LinkPolynomial::power_sum(3, 4).unwrap();
        let h = expected_hessian(&g, HessianMode::Analytic, 0, 0).unwrap();
        assert_relative_eq!(h.h[[0, 0]], 12.0, max_relative = 1e-14);
        assert_eq!(h.h[[0, 1]], 0.0);
    }

    #[test]
    fn standardization_contract() {
        let f = make_sign_features(16).unwrap();
        let t = make_standard_target(16, 2, &f, 50_000, 4).unwrap();
        let x = sphere::sample_sphere(16, 50_000, 4).unwrap();
        let v = t.eval(&x).unwrap();
        let m = v.sum() / v.len() as f64;
        let var = v.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / v.len() as f64;
        assert!(m.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-3);
        let t2 = make_standard_target(16, 2, &f, 50_000, 4).unwrap();
        assert_eq!(t.shift.to_bits(), t2.shift.to_bits());
        assert_eq!(t.scale.to_bits(), t2.scale.to_bits());
        let lin = make_standard_target(16, 1, &f, 10_000, 1).unwrap();
        assert!(lin.flags.iter().any(|s| s == "degenerate: P2 dominant"));
        let zero = LinkPolynomial::from_tensors(3, vec![vec![0.0]]).unwrap();
        assert!(matches!(Target::standardize(zero, f, 1000, 1), Err(Error::ScaleUnderflow { .. })));
    }

    #[test]
    fn json_round_trip() {
        let f = make_sign_features(8).unwrap();
        let t = make_standard_target(8, 3, &f, 2_000, 9).unwrap();
        let u = Target::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t.link, u.link);
        assert_eq!(t.shift, u.shift);
        assert_eq!(t.provenance, u.provenance);
    }
}
