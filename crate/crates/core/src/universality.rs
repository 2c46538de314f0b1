//! How close p(x) is to N(0, I_r): moments and sliced Wasserstein-1 against a Gaussian.

use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::mc::{moments_of, McEstimate};
use crate::rng;
use crate::sphere;

#[derive(Clone, Debug, Serialize)]
pub struct SlicedW1 {
    pub average: f64,
    pub std_error: f64,
    pub per_direction: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct UniversalityReport {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub mean: Vec<McEstimate>,
    /// None when n < 2.
    pub covariance: Option<Array2<f64>>,
    pub covariance_std_error: Option<Array2<f64>>,
    pub third_moment: Vec<f64>,
    pub fourth_moment: Vec<f64>,
    pub sliced: Option<SlicedW1>,
    pub gaussian_floor: Option<SlicedW1>,
}

impl UniversalityReport {
    pub fn covariance_defined(&self) -> bool {
        self.covariance.is_some()
    }

    pub fn mean_abs_mean(&self) -> f64 {
        self.mean.iter().map(|m| m.estimate.abs()).sum::<f64>() / self.r as f64
    }

    pub fn max_cov_dev(&self) -> f64 {
        self.covariance.as_ref().map_or(f64::NAN, |c| {
            c.indexed_iter().fold(0.0, |m, ((i, j), v)| m.max((v - if i == j { 1.0 } else { 0.0 }).abs()))
        })
    }

    /// Sliced W₁ minus the Gaussian noise floor.
    pub fn floor_subtracted(&self) -> Option<f64> {
        Some(self.sliced.as_ref()?.average - self.gaussian_floor.as_ref()?.average)
    }
}

fn feature_samples(f: &FeatureSet, n: usize, seed: u64) -> Result<Array2<f64>> {
    let x = sphere::sample_sphere(f.d(), n, seed)?;
    f.eval_rows(x.rows())
}

/// Mean, covariance and marginal third/fourth moments of p(x) over n sphere samples.
pub fn moment_diagnostics(f: &FeatureSet, n: usize, seed: u64) -> Result<UniversalityReport> {
    let p = feature_samples(f, n, seed)?;
    Ok(moments_of_samples(p.view(), f.d()))
}

fn moments_of_samples(p: ArrayView2<f64>, d: usize) -> UniversalityReport {
    let (n, r) = p.dim();
    let mean: Vec<McEstimate> = (0..r).map(|k| moments_of(p.column(k).iter().copied()).estimate()).collect();
    let (covariance, covariance_std_error) = if n < 2 {
        (None, None)
    } else {
        let mut cov = Array2::zeros((r, r));
        let mut se = Array2::zeros((r, r));
        for a in 0..r {
            for b in 0..r {
                let (ma, mb) = (mean[a].estimate, mean[b].estimate);
                let m = moments_of(p.column(a).iter().zip(p.column(b)).map(|(x, y)| (x - ma) * (y - mb)));
                cov[[a, b]] = m.mean * n as f64 / (n - 1) as f64;
                se[[a, b]] = m.estimate().std_error;
            }
        }
        (Some(cov), Some(se))
    };
    let raw = |k: i32| -> Vec<f64> {
        (0..r).map(|c| p.column(c).iter().map(|v| v.powi(k)).sum::<f64>() / n as f64).collect()
    };
    UniversalityReport {
        d,
        r,
        n,
        mean,
        covariance,
        covariance_std_error,
        third_moment: raw(3),
        fourth_moment: raw(4),
        sliced: None,
        gaussian_floor: None,
    }
}

/// Standard normal quantiles at the midpoints (i + ½)/n.
pub fn gaussian_midpoint_quantiles(n: usize) -> Vec<f64> {
    let normal = Normal::standard();
    (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
}

/// W₁ between the empirical law of `samples` and N(0,1) by quantile matching; sorts in place.
pub fn w1_to_gaussian(samples: &mut [f64], quantiles: &[f64]) -> f64 {
    assert_eq!(samples.len(), quantiles.len());
    samples.sort_by(f64::total_cmp);
    samples.iter().zip(quantiles).map(|(s, q)| (s - q).abs()).sum::<f64>() / samples.len() as f64
}

/// W₁ between two empirical distributions with equal sample counts.
pub fn w1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64)
}

/// L unit directions, uniform on S^{r−1}.
pub fn random_directions(r: usize, l: usize, seed: u64) -> Array2<f64> {
    let mut g = rng::rng(seed);
    let mut out = Array2::zeros((l, r));
    for mut row in out.outer_iter_mut() {
        sphere::fill_sphere_point(row.as_slice_mut().expect("standard layout"), &mut g);
        let norm = (r as f64).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Sliced W₁ of the rows of `z` against N(0, I_r) along the given directions.
pub fn sliced_w1_of(z: ArrayView2<f64>, directions: ArrayView2<f64>) -> SlicedW1 {
    let q = gaussian_midpoint_quantiles(z.nrows());
    let proj = z.dot(&directions.t());
    let per_direction: Vec<f64> = proj
        .columns()
        .into_iter()
        .map(|c| {
            let mut v: Vec<f64> = c.to_vec();
            w1_to_gaussian(&mut v, &q)
        })
        .collect();
    let m = moments_of(per_direction.iter().copied()).estimate();
    SlicedW1 { average: m.estimate, std_error: m.std_error, per_direction }
}

fn direction_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, "directions")
}

pub fn sliced_w1(f: &FeatureSet, n: usize, l: usize, seed: u64) -> Result<SlicedW1> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("sliced W1 needs n >= 1000, got {n}")));
    }
    let p = feature_samples(f, n, seed)?;
    Ok(sliced_w1_of(p.view(), random_directions(f.r(), l, direction_seed(seed)).view()))
}

/// The same estimator on exact N(0, I_r) draws, with the directions of [`sliced_w1`].
pub fn gaussian_floor(r: usize, n: usize, l: usize, seed: u64) -> SlicedW1 {
    let mut g = rng::rng_for(seed, "gaussian-floor");
    let z = Array2::from_shape_simple_fn((n, r), || StandardNormal.sample(&mut g));
    sliced_w1_of(z.view(), random_directions(r, l, direction_seed(seed)).view())
}

/// Moments, sliced W₁ and its Gaussian floor from one sample.
pub fn universality_report(f: &FeatureSet, n: usize, l: usize, seed: u64) -> Result<UniversalityReport> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("sliced W1 needs n >= 1000, got {n}")));
    }
    let p = feature_samples(f, n, seed)?;
    let mut rep = moments_of_samples(p.view(), f.d());
    rep.sliced = Some(sliced_w1_of(p.view(), random_directions(f.r(), l, direction_seed(seed)).view()));
    rep.gaussian_floor = Some(gaussian_floor(f.r(), n, l, seed));
    Ok(rep)
}

/// Convenience for one-feature checks: the W₁ of a 1-d sample against N(0,1).
pub fn w1_gaussian_1d(samples: &Array1<f64>) -> f64 {
    let q = gaussian_midpoint_quantiles(samples.len());
    let mut v = samples.to_vec();
    w1_to_gaussian(&mut v, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_sign_features;

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = [0.3, -1.0, 2.5, 0.0];
        assert_eq!(w1_empirical(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_sample_covariance_undefined() {
        let f = make_sign_features(8).unwrap();
        let rep = moment_diagnostics(&f, 1, 3).unwrap();
        assert!(!rep.covariance_defined());
    }

    #[test]
    fn directions_are_unit() {
        let d = random_directions(3, 10, 1);
        for row in d.outer_iter() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }
}
