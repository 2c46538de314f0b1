//! Small dense linear-algebra helpers bridging ndarray and nalgebra.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = to_na(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn op_norm_sym(a: ArrayView2<f64>) -> f64 {
    sym_eigenvalues(a).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest singular value, via the eigenvalues of AᵀA or AAᵀ (whichever is smaller).
pub fn op_norm(a: ArrayView2<f64>) -> f64 {
    let g = if a.nrows() <= a.ncols() { a.dot(&a.t()) } else { a.t().dot(&a) };
    sym_eigenvalues(g.view()).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn inverse(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    to_na(a).try_inverse().map(|m| from_na(&m))
}

/// Solves (A + shift·I)x = b for symmetric positive definite A + shift·I.
pub fn solve_spd_shifted(a: ArrayView2<f64>, shift: f64, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    let mut m = to_na(a);
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    let chol = m.cholesky()?;
    let x = chol.solve(&DVector::from_iterator(b.len(), b.iter().copied()));
    Some(Array1::from_iter(x.iter().copied()))
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration
/// from a fixed start vector.
pub fn power_max_eig(a: ArrayView2<f64>, max_iter: usize, rel_tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.01 * ((i * 7919) % 101) as f64 / 101.0);
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= rel_tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frob_inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn is_symmetric(a: ArrayView2<f64>, tol: f64) -> bool {
    a.nrows() == a.ncols()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[[i, j]] - a[[j, i]]).abs() <= tol))
}

pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_and_norms() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = sym_eigenvalues(a.view());
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        assert!((power_max_eig(a.view(), 1000, 1e-14) - 3.0).abs() < 1e-10);
        assert!((op_norm(array![[3.0, 0.0, 0.0], [0.0, -4.0, 0.0]].view()) - 4.0).abs() < 1e-12);
        let x = solve_spd_shifted(a.view(), 1.0, array![1.0, 2.0].view()).unwrap();
        let back = (&a + &Array2::<f64>::eye(2)).dot(&x);
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
