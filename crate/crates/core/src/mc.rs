//! Monte-Carlo bookkeeping shared by every stochastic check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};

/// Chunk size for parallel Monte-Carlo loops. Results depend on it, so it is fixed.
pub const MC_CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        McEstimate { estimate: value, std_error: 0.0, n: 0 }
    }

    pub fn scaled(self, c: f64) -> Self {
        McEstimate { estimate: self.estimate * c, std_error: self.std_error * c.abs(), n: self.n }
    }

    /// |estimate - truth| measured in standard errors. Exact agreement is 0 even at zero error.
    pub fn z_score(&self, truth: f64) -> f64 {
        let dev = (self.estimate - truth).abs();
        if dev == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            dev / self.std_error
        }
    }
}

/// Running mean and centred second moment (Chan et al. merge).
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let se = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        McEstimate { estimate: self.mean, std_error: se, n: self.n }
    }
}

pub fn moments_of(values: impl IntoIterator<Item = f64>) -> Moments {
    let mut m = Moments::default();
    for v in values {
        m.push(v);
    }
    m
}

/// Mean of `sample(rng)` over `n` draws. Chunk `c` gets its own stream derived from
/// `(seed, c)`, and chunk moments are merged in chunk order, so the result does not
/// depend on the thread count.
pub fn chunked_mean<F>(n: usize, seed: u64, sample: F) -> McEstimate
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut r = rng::rng(rng::derive_indexed(seed, "mc-chunk", c as u64));
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(sample(&mut r));
            }
            m
        })
        .collect();
    let mut total = Moments::default();
    for p in &parts {
        total.merge(p);
    }
    total.estimate()
}

/// Entrywise version of [`chunked_mean`] for vector-valued samples of length `dim`.
pub fn chunked_mean_vec<F>(n: usize, dim: usize, seed: u64, sample: F) -> Vec<McEstimate>
where
    F: Fn(&mut Rng, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    let parts: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut r = rng::rng(rng::derive_indexed(seed, "mc-chunk", c as u64));
            let mut m = vec![Moments::default(); dim];
            let mut buf = vec![0.0; dim];
            for _ in 0..len {
                sample(&mut r, &mut buf);
                for (mi, v) in m.iter_mut().zip(&buf) {
                    mi.push(*v);
                }
            }
            m
        })
        .collect();
    let mut total = vec![Moments::default(); dim];
    for p in &parts {
        for (t, m) in total.iter_mut().zip(p) {
            t.merge(m);
        }
    }
    total.iter().map(Moments::estimate).collect()
}
