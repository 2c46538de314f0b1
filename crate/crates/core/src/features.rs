//! Orthonormal quadratic feature sets p(x) = [xᵀA₁x, …, xᵀA_rx].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sphere::{quadratic_moment, SampleMatrix};

const PIVOT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    d: usize,
    matrices: Vec<Array2<f64>>,
    kappa1: f64,
    /// r×d diagonals when every matrix is diagonal.
    diagonal: Option<Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FeatureSetDoc {
    d: usize,
    r: usize,
    matrices: Vec<Vec<f64>>,
}

impl FeatureSet {
    /// Builds a set from matrices that are already traceless and orthonormal.
    pub fn from_matrices(d: usize, matrices: Vec<Array2<f64>>) -> Result<Self> {
        for m in &matrices {
            if m.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
            }
            if !linalg::is_symmetric(m.view(), 0.0) {
                return Err(Error::InvalidArgument("feature matrix is not symmetric".into()));
            }
        }
        let is_diag = matrices
            .iter()
            .all(|m| m.indexed_iter().all(|((i, j), v)| i == j || *v == 0.0));
        let diagonal = is_diag.then(|| {
            Array2::from_shape_fn((matrices.len(), d), |(k, i)| matrices[k][[i, i]])
        });
        let max_op = matrices.iter().fold(0.0f64, |acc, m| {
            let op = match &diagonal {
                Some(_) => m.diag().iter().fold(0.0f64, |a, v| a.max(v.abs())),
                None => linalg::op_norm_sym(m.view()),
            };
            acc.max(op)
        });
        let fs = FeatureSet { d, kappa1: (d as f64).sqrt() * max_op, matrices, diagonal };
        fs.validate()?;
        Ok(fs)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// Analytic feature Gram E[p_k p_l].
    pub fn gram(&self) -> Array2<f64> {
        let r = self.r();
        Array2::from_shape_fn((r, r), |(k, l)| {
            quadratic_moment(self.matrices[k].view(), self.matrices[l].view(), self.d)
        })
    }

    /// Checks tracelessness and the identity Gram to 1e-9.
    pub fn validate(&self) -> Result<()> {
        for (k, m) in self.matrices.iter().enumerate() {
            let tr = m.diag().sum();
            if tr.abs() > 1e-9 {
                return Err(Error::Invariant(format!("feature {k} has trace {tr:.3e}")));
            }
        }
        let g = self.gram();
        for ((k, l), v) in g.indexed_iter() {
            let target = if k == l { 1.0 } else { 0.0 };
            if (v - target).abs() > 1e-9 {
                return Err(Error::Invariant(format!("feature Gram entry ({k},{l}) = {v}")));
            }
        }
        Ok(())
    }

    pub fn eval_point(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match &self.diagonal {
            Some(diag) => diag.dot(&x.mapv(|v| v * v)),
            None => Array1::from_iter(self.matrices.iter().map(|a| x.dot(&a.dot(&x)))),
        }
    }

    /// p(x) for each row of `x`; n×r.
    pub fn eval_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: x.ncols() });
        }
        Ok(match &self.diagonal {
            Some(diag) => x.mapv(|v| v * v).dot(&diag.t()),
            None => {
                let mut out = Array2::zeros((x.nrows(), self.r()));
                for (k, a) in self.matrices.iter().enumerate() {
                    let ax = x.dot(a);
                    for i in 0..x.nrows() {
                        out[[i, k]] = ax.row(i).dot(&x.row(i));
                    }
                }
                out
            }
        })
    }

    /// Same set with features reordered: output feature i is input feature `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.r()];
        if order.len() != self.r() || order.iter().any(|&i| i >= self.r() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("not a permutation of the features".into()));
        }
        FeatureSet::from_matrices(self.d, order.iter().map(|&i| self.matrices[i].clone()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = FeatureSetDoc {
            d: self.d,
            r: self.r(),
            matrices: self.matrices.iter().map(|m| m.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FeatureSetDoc = serde_json::from_str(s)?;
        if doc.matrices.len() != doc.r {
            return Err(Error::DimensionMismatch { expected: doc.r, found: doc.matrices.len() });
        }
        let mats = doc
            .matrices
            .into_iter()
            .map(|v| {
                Array2::from_shape_vec((doc.d, doc.d), v)
                    .map_err(|e| Error::InvalidArgument(format!("bad matrix shape: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::from_matrices(doc.d, mats)
    }
}

/// The three block sign patterns at size d, scaled so each feature has unit second moment.
pub fn make_sign_features(d: usize) -> Result<FeatureSet> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::InvalidArgument(format!("sign features need d divisible by 4, got {d}")));
    }
    let c = ((d as f64 + 2.0) / (2.0 * (d * d) as f64)).sqrt();
    let q = d / 4;
    let patterns: [[f64; 4]; 3] = [[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    let mats = patterns
        .iter()
        .map(|pat| {
            let mut m = Array2::zeros((d, d));
            for i in 0..d {
                m[[i, i]] = c * pat[i / q];
            }
            m
        })
        .collect();
    FeatureSet::from_matrices(d, mats)
}

/// Trace removal followed by Gram–Schmidt under ⟨A,B⟩ = 2d/(d+2)·⟨A,B⟩_F.
pub fn orthonormalize(raw: &[Array2<f64>]) -> Result<FeatureSet> {
    let Some(first) = raw.first() else {
        return Err(Error::InvalidArgument("empty feature list".into()));
    };
    let d = first.nrows();
    let w = 2.0 * d as f64 / (d as f64 + 2.0);
    let inner = |a: &Array2<f64>, b: &Array2<f64>| w * linalg::frob_inner(a.view(), b.view());
    let mut centred = Vec::with_capacity(raw.len());
    for m in raw {
        if m.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
        }
        if !linalg::is_symmetric(m.view(), 1e-12 * linalg::frobenius(m.view()).max(1.0)) {
            return Err(Error::InvalidArgument("input matrix is not symmetric".into()));
        }
        let sym = (m + &m.t()) * 0.5;
        let tr = sym.diag().sum() / d as f64;
        centred.push(sym - &(Array2::<f64>::eye(d) * tr));
    }
    let scale = centred.iter().map(|a| inner(a, a).sqrt()).fold(0.0, f64::max);
    let mut basis: Vec<Array2<f64>> = Vec::with_capacity(raw.len());
    for (index, a) in centred.into_iter().enumerate() {
        let mut v = a;
        // two passes of modified Gram–Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let proj = inner(&v, q);
                v.scaled_add(-proj, q);
            }
        }
        let norm = inner(&v, &v).sqrt();
        if scale == 0.0 || norm < PIVOT_TOL * scale {
            return Err(Error::RankDeficient { index, pivot: if scale == 0.0 { 0.0 } else { norm / scale } });
        }
        v /= norm;
        // enforce exact symmetry after floating-point updates
        let v = (&v + &v.t()) * 0.5;
        basis.push(v);
    }
    FeatureSet::from_matrices(d, basis)
}

pub fn eval_features(f: &FeatureSet, x: &SampleMatrix) -> Result<Array2<f64>> {
    f.eval_rows(x.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sign_feature_examples() {
        let f = make_sign_features(16).unwrap();
        for a in f.matrices() {
            assert_eq!(a.diag().sum(), 0.0);
        }
        assert_eq!(linalg::frob_inner(f.matrices()[0].view(), f.matrices()[1].view()), 0.0);
        assert_relative_eq!(
            quadratic_moment(f.matrices()[0].view(), f.matrices()[0].view(), 16),
            1.0,
            max_relative = 1e-14
        );
        let f8 = make_sign_features(8).unwrap();
        assert_relative_eq!(f8.kappa1(), 8f64.sqrt() * (10.0f64 / 128.0).sqrt(), max_relative = 1e-14);
        assert!(make_sign_features(10).is_err());
    }

    #[test]
    fn coordinate_vector_values() {
        let f = make_sign_features(16).unwrap();
        let mut x = Array1::zeros(16);
        x[0] = 4.0;
        let p = f.eval_point(x.view());
        let c = (18.0f64 / 512.0).sqrt();
        for k in 0..3 {
            assert_relative_eq!(p[k], 16.0 * c, max_relative = 1e-14);
        }
        let empty = f.eval_rows(Array2::zeros((0, 16)).view()).unwrap();
        assert_eq!(empty.dim(), (0, 3));
        assert!(f.eval_rows(Array2::zeros((2, 8)).view()).is_err());
    }

    #[test]
    fn orthonormalize_rejects_identity() {
        assert!(matches!(orthonormalize(&[Array2::eye(5)]), Err(Error::RankDeficient { .. })));
        let a = Array2::from_diag(&Array1::from(vec![1.0, -1.0, 0.0]));
        assert!(matches!(orthonormalize(&[a.clone(), a * 2.0]), Err(Error::RankDeficient { index: 1, .. })));
    }

    #[test]
    fn orthonormalize_idempotent_on_sign_features() {
        let f = make_sign_features(16).unwrap();
        let g = orthonormalize(f.matrices()).unwrap();
        for (a, b) in f.matrices().iter().zip(g.matrices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
        assert!(g.is_diagonal());
    }

    #[test]
    fn json_round_trip() {
        let f = make_sign_features(8).unwrap();
        let g = FeatureSet::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn dense_and_diagonal_paths_agree() {
        let f = make_sign_features(8).unwrap();
        let x = crate::sphere::sample_sphere(8, 20, 2).unwrap();
        let fast = f.eval_rows(x.rows()).unwrap();
        for i in 0..20 {
            for (k, a) in f.matrices().iter().enumerate() {
                let slow = x.row(i).dot(&a.dot(&x.row(i)));
                assert!((slow - fast[[i, k]]).abs() < 1e-12);
            }
        }
    }
}
