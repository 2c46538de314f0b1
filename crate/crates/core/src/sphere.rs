//! Sphere sampling, Gegenbauer polynomials and spherical moment formulas.
//!
//! The sphere is S^{d-1}(√d), so every sample has squared norm d and Gegenbauer
//! polynomials take the scaled argument t = ⟨x, y⟩ ∈ [-d, d] with Q_k(d) = 1.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{self, McEstimate};
use crate::rng::{self, Rng};

pub const MAX_DEGREE: usize = 16;

/// Set `QUADFEAT_SPHERE_TRACE=1` in a debug build to log recursion depth and
/// arguments outside [-d, d].
fn trace_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    cfg!(debug_assertions)
        && *FLAG.get_or_init(|| std::env::var_os("QUADFEAT_SPHERE_TRACE").is_some_and(|v| v != "0"))
}

/// n points on S^{d-1}(√d), one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    rows: Array2<f64>,
}

impl SampleMatrix {
    /// Wraps existing rows, checking |‖x‖² − d| ≤ 1e-9·d.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let d = rows.ncols();
        if d == 0 {
            return Err(Error::InvalidArgument("sample dimension must be positive".into()));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            let sq = row.dot(&row);
            if (sq - d as f64).abs() > 1e-9 * d as f64 {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has squared norm {sq}, expected {d}"
                )));
            }
        }
        Ok(SampleMatrix { rows })
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn into_rows(self) -> Array2<f64> {
        self.rows
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> SampleMatrix {
        SampleMatrix { rows: self.rows.slice(ndarray::s![..n, ..]).to_owned() }
    }

    pub fn concat(&self, other: &SampleMatrix) -> Result<SampleMatrix> {
        if self.d() != other.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), found: other.d() });
        }
        let rows = ndarray::concatenate(Axis(0), &[self.rows.view(), other.rows.view()])
            .expect("column counts agree");
        Ok(SampleMatrix { rows })
    }
}

/// One uniform point on S^{d-1}(√d), written into `out`.
pub fn fill_sphere_point(out: &mut [f64], r: &mut Rng) {
    let d = out.len();
    loop {
        let mut sq = 0.0;
        for v in out.iter_mut() {
            let g: f64 = StandardNormal.sample(r);
            *v = g;
            sq += g * g;
        }
        if sq > 0.0 && d == 1 {
            out[0] = out[0].signum();
            return;
        }
        if sq > 0.0 {
            let s = (d as f64 / sq).sqrt();
            out.iter_mut().for_each(|v| *v *= s);
            return;
        }
    }
}

pub fn sphere_point(d: usize, r: &mut Rng) -> Array1<f64> {
    let mut v = vec![0.0; d];
    fill_sphere_point(&mut v, r);
    Array1::from(v)
}

pub fn sample_sphere_with(d: usize, n: usize, r: &mut Rng) -> Array2<f64> {
    let mut rows = Array2::zeros((n, d));
    for mut row in rows.outer_iter_mut() {
        fill_sphere_point(row.as_slice_mut().expect("standard layout"), r);
    }
    rows
}

/// Rows drawn sequentially from one stream, so a larger n extends a smaller one.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<SampleMatrix> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("sample_sphere needs d, n >= 1 (got d={d}, n={n})")));
    }
    let mut r = rng::rng(seed);
    Ok(SampleMatrix { rows: sample_sphere_with(d, n, &mut r) })
}

/// Q_0..=Q_kmax at t.
pub fn gegenbauer_all(kmax: usize, d: usize, t: f64) -> Vec<f64> {
    assert!(kmax <= MAX_DEGREE, "Gegenbauer degree {kmax} exceeds cap {MAX_DEGREE}");
    debug_assert!(kmax < 2 || d >= 3, "Q_k for k >= 2 needs d >= 3");
    let df = d as f64;
    if trace_enabled() {
        log::debug!("gegenbauer: recursion depth {kmax}, d={d}");
        if t.abs() > df {
            log::debug!("gegenbauer: argument {t} outside [-{d}, {d}]");
        }
    }
    let mut q = Vec::with_capacity(kmax + 1);
    q.push(1.0);
    if kmax >= 1 {
        q.push(t / df);
    }
    for k in 1..kmax {
        let kf = k as f64;
        let next = ((2.0 * kf + df - 2.0) * (t / df) * q[k] - kf * q[k - 1]) / (kf + df - 2.0);
        q.push(next);
    }
    q
}

pub fn gegenbauer(k: usize, d: usize, t: f64) -> f64 {
    gegenbauer_all(k, d, t)[k]
}

/// The closed form of Q_2, kept separate from the recursion so the two can be compared.
pub fn q2_explicit(d: usize, t: f64) -> f64 {
    let df = d as f64;
    (t * t - df) / (df * (df - 1.0))
}

fn binomial_u128(n: u64, k: u64) -> Result<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c
            .checked_mul((n - i) as u128)
            .ok_or(Error::Overflow("harmonic_dim binomial"))?
            / (i as u128 + 1);
    }
    Ok(c)
}

/// B(d, k), the dimension of degree-k spherical harmonics in d variables.
pub fn harmonic_dim(d: usize, k: usize) -> Result<u64> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("harmonic_dim needs d >= 2, got {d}")));
    }
    if k == 0 {
        return Ok(1);
    }
    let (d, k) = (d as u64, k as u64);
    let c = binomial_u128(k + d - 3, k - 1)?;
    let num = c.checked_mul((2 * k + d - 2) as u128).ok_or(Error::Overflow("harmonic_dim"))?;
    debug_assert_eq!(num % k as u128, 0);
    u64::try_from(num / k as u128).map_err(|_| Error::Overflow("harmonic_dim"))
}

/// Q_i·Q_j = Σ_k coefficients[k]·Q_{i+j−2k}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearizationTable {
    pub i: usize,
    pub j: usize,
    pub d: usize,
    pub coefficients: Vec<f64>,
    /// The Pochhammer ratio inside each coefficient, without the degree prefactor
    /// and the binomial/factorial multiplicities.
    pub c_parts: Vec<f64>,
}

impl LinearizationTable {
    pub fn degree_of(&self, k: usize) -> usize {
        self.i + self.j - 2 * k
    }

    pub fn eval(&self, t: f64) -> f64 {
        let q = gegenbauer_all(self.i + self.j, self.d, t);
        self.coefficients.iter().enumerate().map(|(k, c)| c * q[self.degree_of(k)]).sum()
    }
}

fn pochhammer(z: &BigRational, n: usize) -> BigRational {
    let mut acc = BigRational::one();
    let mut term = z.clone();
    for _ in 0..n {
        acc *= &term;
        term += BigRational::one();
    }
    acc
}

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn factorial(n: usize) -> BigRational {
    (1..=n as u64).fold(BigRational::one(), |acc, k| acc * big(k))
}

fn binomial(n: usize, k: usize) -> BigRational {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Linearization coefficients of Q_i·Q_j, computed in exact rational arithmetic.
pub fn linearize_product(i: usize, j: usize, d: usize) -> Result<LinearizationTable> {
    if d < 4 {
        return Err(Error::InvalidArgument(format!("linearize_product needs d >= 4, got {d}")));
    }
    if i + j > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!("degree {} exceeds cap {MAX_DEGREE}", i + j)));
    }
    let dm2 = big(d as u64 - 2);
    let half = &dm2 / big(2);
    let half_d = big(d as u64) / big(2);
    let mut coefficients = Vec::new();
    let mut c_parts = Vec::new();
    for k in 0..=i.min(j) {
        let s = i + j - k;
        let num = pochhammer(&half, k) * pochhammer(&half, i - k) * pochhammer(&half, j - k) * pochhammer(&dm2, s);
        let den = pochhammer(&dm2, i) * pochhammer(&dm2, j) * pochhammer(&half_d, s);
        let c = num / den;
        let prefactor = (big(2 * (i + j - 2 * k) as u64) + &dm2) / &dm2;
        let coef = &prefactor * &c * binomial(i, k) * binomial(j, k) * factorial(k);
        if trace_enabled() {
            log::debug!("linearize({i},{j},{d}) k={k}: {coef}");
        }
        coefficients.push(to_f64(&coef));
        c_parts.push(to_f64(&c));
    }
    Ok(LinearizationTable { i, j, d, coefficients, c_parts })
}

/// 1/(d−2)_k, the bound on the c-part of linearization coefficient k.
pub fn c_part_bound(d: usize, k: usize) -> f64 {
    to_f64(&(BigRational::one() / pochhammer(&big(d as u64 - 2), k)))
}

/// E[(xᵀAx)(xᵀBx)] for x uniform on S^{d-1}(√d).
pub fn quadratic_moment(a: ArrayView2<f64>, b: ArrayView2<f64>, d: usize) -> f64 {
    let df = d as f64;
    let tra = a.diag().sum();
    let trb = b.diag().sum();
    let frob: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    df / (df + 2.0) * (tra * trb + 2.0 * frob)
}

/// Monte-Carlo estimate of E_x[Q_j(⟨x,y⟩)·Q_k(⟨x,y'⟩)].
pub fn mc_gegenbauer_orthogonality(
    j: usize,
    k: usize,
    y: ArrayView1<f64>,
    y2: ArrayView1<f64>,
    n: usize,
    seed: u64,
) -> McEstimate {
    let d = y.len();
    if j == 0 && k == 0 {
        return McEstimate { estimate: 1.0, std_error: 0.0, n };
    }
    let kmax = j.max(k);
    mc::chunked_mean(n, seed, |r| {
        let x = sphere_point(d, r);
        let qa = gegenbauer_all(kmax, d, x.dot(&y));
        let qb = gegenbauer_all(kmax, d, x.dot(&y2));
        qa[j] * qb[k]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gegenbauer_examples() {
        assert_relative_eq!(gegenbauer(2, 16, 16.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gegenbauer(2, 4, 0.0), -1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(gegenbauer(3, 4, 2.0), -0.25, epsilon = 1e-15);
        assert_eq!(gegenbauer(0, 7, 3.3), 1.0);
    }

    #[test]
    fn normalization_at_d() {
        for d in [4usize, 8, 16, 32, 64] {
            let q = gegenbauer_all(8, d, d as f64);
            for v in q {
                assert!((v - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn harmonic_dims() {
        assert_eq!(harmonic_dim(4, 2).unwrap(), 9);
        assert_eq!(harmonic_dim(16, 2).unwrap(), 135);
        assert_eq!(harmonic_dim(8, 2).unwrap(), 35);
        for d in 2..40 {
            assert_eq!(harmonic_dim(d, 0).unwrap(), 1);
            assert_eq!(harmonic_dim(d, 1).unwrap(), d as u64);
        }
        // d=3: 2k+1
        for k in 0..10 {
            assert_eq!(harmonic_dim(3, k).unwrap(), 2 * k as u64 + 1);
        }
        assert!(matches!(harmonic_dim(1_000_000, 40), Err(Error::Overflow(_))));
        assert!(harmonic_dim(1, 2).is_err());
    }

    #[test]
    fn linearize_one_one() {
        for d in [4usize, 7, 16] {
            let t = linearize_product(1, 1, d).unwrap();
            let df = d as f64;
            assert_relative_eq!(t.coefficients[0], (df - 1.0) / df, max_relative = 1e-14);
            assert_relative_eq!(t.coefficients[1], 1.0 / df, max_relative = 1e-14);
        }
        let t = linearize_product(0, 3, 8).unwrap();
        assert_eq!(t.coefficients, vec![1.0]);
    }

    #[test]
    fn quadratic_moment_examples() {
        let d = 6;
        let eye = Array2::<f64>::eye(d);
        assert_relative_eq!(quadratic_moment(eye.view(), eye.view(), d), 36.0, max_relative = 1e-15);
        let mut a = Array2::<f64>::zeros((d, d));
        let s = ((d as f64 + 2.0) / (2.0 * d as f64) / 2.0).sqrt();
        a[[0, 0]] = s;
        a[[1, 1]] = -s;
        assert_relative_eq!(quadratic_moment(a.view(), a.view(), d), 1.0, max_relative = 1e-14);
        assert_eq!(quadratic_moment(a.view(), eye.view(), d), 0.0);
    }

    #[test]
    fn sampling_contract() {
        let x = sample_sphere(16, 100, 7).unwrap();
        for row in x.rows().outer_iter() {
            assert!((row.dot(&row) - 16.0).abs() <= 1e-9);
        }
        let x = sample_sphere(1, 10, 0).unwrap();
        assert!(x.rows().iter().all(|v| *v == 1.0 || *v == -1.0));
        assert!(sample_sphere(0, 3, 0).is_err());
        assert!(sample_sphere(3, 0, 0).is_err());
        assert_eq!(sample_sphere(5, 9, 3).unwrap(), sample_sphere(5, 9, 3).unwrap());
        assert_eq!(sample_sphere(5, 20, 3).unwrap().prefix(9), sample_sphere(5, 9, 3).unwrap());
    }

    #[test]
    fn coordinate_means_vanish() {
        let n = 100_000;
        let x = sample_sphere(8, n, 1).unwrap();
        let tol = 4.0 / (n as f64).sqrt() * 8f64.sqrt();
        for m in x.rows().mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < tol);
        }
    }

    #[test]
    fn orthogonality_zero_zero_exact() {
        let y = Array1::from(vec![1.0, 1.0, 1.0, 1.0]);
        let e = mc_gegenbauer_orthogonality(0, 0, y.view(), y.view(), 10, 1);
        assert_eq!(e.estimate, 1.0);
        assert_eq!(e.std_error, 0.0);
    }
}
