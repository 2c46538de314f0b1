//! Three-layer network f(x) = (1/m₁)Σ_j a_j σ₁(⟨w_j, σ₂(Vx)⟩ + b_j) with a frozen inner layer.
//!
//! Products against h⁽⁰⁾(x) = σ₂(Vx) go through [`InnerLayer`]. For a pure-Q₂ inner
//! activation the embedding factors exactly as h⁽⁰⁾(x) = Ψ·φ(x), where
//! φ(x) = svec(xxᵀ − I) has d(d+1)/2 entries, because
//! Q₂(vᵀx) = ⟨vvᵀ − I, xxᵀ − I⟩_F / (d(d−1)) on the sphere. All heavy products then run
//! in the lifted space; general activations use dense tiles of σ₂(XVᵀ).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sphere::{self, gegenbauer_all, SampleMatrix};

pub const MAX_INNER_DEGREE: usize = 6;
pub const DEFAULT_TILE_BUDGET: usize = 256 << 20;
pub const DEFAULT_MEMORY_BUDGET: usize = 3 << 30;

pub fn sigma1(t: f64) -> f64 {
    if t.abs() < 1.0 {
        t * t
    } else {
        2.0 * t.abs() - 1.0
    }
}

pub fn sigma1_prime(t: f64) -> f64 {
    if t.abs() < 1.0 {
        2.0 * t
    } else {
        2.0 * t.signum()
    }
}

/// Inner activation σ₂ = Σ_{i≥2} c_i Q_i(·, d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub d: usize,
    /// c_i indexed by degree; entries 0 and 1 are zero.
    pub coeffs: Vec<f64>,
}

impl ActivationSpec {
    pub fn default_q2(d: usize) -> Self {
        ActivationSpec { d, coeffs: vec![0.0, 0.0, 1.0] }
    }

    /// Series with the given (degree, coefficient) pairs; degrees must lie in 2..=6.
    pub fn series(d: usize, terms: &[(usize, f64)]) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidArgument(format!("inner activation needs d >= 3, got {d}")));
        }
        let mut coeffs = vec![0.0; 3];
        for &(i, c) in terms {
            if !(2..=MAX_INNER_DEGREE).contains(&i) {
                return Err(Error::InvalidArgument(format!("inner series degree {i} outside 2..={MAX_INNER_DEGREE}")));
            }
            if coeffs.len() <= i {
                coeffs.resize(i + 1, 0.0);
            }
            coeffs[i] += c;
        }
        while coeffs.len() > 3 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Ok(ActivationSpec { d, coeffs })
    }

    pub fn c(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    pub fn c2(&self) -> f64 {
        self.c(2)
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_pure_q2(&self) -> bool {
        self.coeffs.iter().enumerate().all(|(i, c)| i == 2 || *c == 0.0)
    }

    pub fn sigma2(&self, t: f64) -> f64 {
        if self.is_pure_q2() {
            return self.c2() * sphere::q2_explicit(self.d, t);
        }
        let q = gegenbauer_all(self.max_degree(), self.d, t);
        self.coeffs.iter().zip(&q).map(|(c, v)| c * v).sum()
    }

    /// max_{|t|≤d} |σ₂(t)| on a 4001-point grid.
    pub fn c_sigma(&self) -> f64 {
        let d = self.d as f64;
        (0..=4000).map(|i| self.sigma2(-d + 2.0 * d * i as f64 / 4000.0).abs()).fold(0.0, f64::max)
    }
}

pub fn sigma2(t: f64, spec: &ActivationSpec) -> f64 {
    spec.sigma2(t)
}

/// ε = 1/(C_σ·√(2·ln(n₁m₁)·m₂)).
pub fn default_epsilon(spec: &ActivationSpec, n1: usize, m1: usize, m2: usize) -> f64 {
    1.0 / (spec.c_sigma() * (2.0 * ((n1 * m1) as f64).ln() * m2 as f64).sqrt())
}

/// Which coordinates an embedding tile lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Columns are the m₂ inner neurons.
    Neuron,
    /// Columns are svec(xxᵀ − I) coordinates.
    Lifted,
}

/// A block of k linear functionals of h⁽⁰⁾(x), expressed in the layer's space.
#[derive(Clone, Debug, PartialEq)]
pub struct Directions {
    pub space: Space,
    pub mat: Array2<f64>,
}

impl Directions {
    pub fn k(&self) -> usize {
        self.mat.ncols()
    }
}

pub fn lifted_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// svec(xxᵀ − I) with √2 weights off the diagonal, so that ⟨svec A, svec B⟩ = ⟨A, B⟩_F.
pub fn lift_point(x: ArrayView1<f64>, out: &mut [f64]) {
    let d = x.len();
    let r2 = std::f64::consts::SQRT_2;
    let mut idx = 0;
    for a in 0..d {
        out[idx] = x[a] * x[a] - 1.0;
        idx += 1;
        for b in a + 1..d {
            out[idx] = r2 * x[a] * x[b];
            idx += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerLayer {
    v: Array2<f64>,
    spec: ActivationSpec,
    /// Ψ (m₂ × d(d+1)/2) when the activation is pure Q₂ and the lifted path is enabled.
    psi: Option<Array2<f64>>,
    tile_budget: usize,
    tile_rows: Option<usize>,
    memory_budget: usize,
}

impl InnerLayer {
    pub fn new(v: Array2<f64>, spec: ActivationSpec) -> Result<Self> {
        let d = v.ncols();
        if spec.d != d {
            return Err(Error::DimensionMismatch { expected: spec.d, found: d });
        }
        for (j, row) in v.outer_iter().enumerate() {
            let sq = row.dot(&row);
            if (sq - d as f64).abs() > 1e-9 * d as f64 {
                return Err(Error::InvalidArgument(format!("inner weight {j} has squared norm {sq}")));
            }
        }
        let mut layer = InnerLayer {
            v,
            spec,
            psi: None,
            tile_budget: DEFAULT_TILE_BUDGET,
            tile_rows: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        };
        if layer.spec.is_pure_q2() {
            layer.psi = Some(layer.build_psi());
        }
        Ok(layer)
    }

    fn build_psi(&self) -> Array2<f64> {
        let d = self.d();
        let scale = self.spec.c2() / (d as f64 * (d as f64 - 1.0));
        let mut psi = Array2::zeros((self.m2(), lifted_dim(d)));
        for (j, v) in self.v.outer_iter().enumerate() {
            let mut row = psi.row_mut(j);
            let out = row.as_slice_mut().expect("standard layout");
            lift_point(v, out);
            out.iter_mut().for_each(|e| *e *= scale);
        }
        psi
    }

    /// Same layer forced onto the dense σ₂(XVᵀ) path.
    pub fn dense_only(mut self) -> Self {
        self.psi = None;
        self
    }

    pub fn with_tile_rows(mut self, rows: usize) -> Self {
        self.tile_rows = Some(rows.max(1));
        self
    }

    pub fn with_tile_budget(mut self, bytes: usize) -> Self {
        self.tile_budget = bytes;
        self
    }

    pub fn with_memory_budget(mut self, bytes: usize) -> Self {
        self.memory_budget = bytes;
        self
    }

    pub fn d(&self) -> usize {
        self.v.ncols()
    }

    pub fn m2(&self) -> usize {
        self.v.nrows()
    }

    pub fn v(&self) -> ArrayView2<'_, f64> {
        self.v.view()
    }

    pub fn spec(&self) -> &ActivationSpec {
        &self.spec
    }

    pub fn space(&self) -> Space {
        if self.psi.is_some() {
            Space::Lifted
        } else {
            Space::Neuron
        }
    }

    /// Width of an embedding row: m₂ or d(d+1)/2.
    pub fn embed_dim(&self) -> usize {
        match &self.psi {
            Some(p) => p.ncols(),
            None => self.m2(),
        }
    }

    pub fn psi(&self) -> Option<ArrayView2<'_, f64>> {
        self.psi.as_ref().map(|p| p.view())
    }

    /// Rows per tile so that one embedding tile plus a k-column output fit the tile budget.
    pub fn tile_rows(&self, k: usize) -> usize {
        self.tile_rows
            .unwrap_or_else(|| (self.tile_budget / (8 * (self.embed_dim() + k).max(1))).max(1))
    }

    pub fn check_alloc(&self, what: &'static str, entries: usize) -> Result<()> {
        let needed = entries.saturating_mul(8);
        if needed > self.memory_budget {
            return Err(Error::MemoryBudget { what, needed, budget: self.memory_budget });
        }
        Ok(())
    }

    /// Embedding of a block of rows in the layer's space.
    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match &self.psi {
            Some(_) => {
                let mut out = Array2::zeros((x.nrows(), self.embed_dim()));
                for (xi, mut row) in x.outer_iter().zip(out.outer_iter_mut()) {
                    lift_point(xi, row.as_slice_mut().expect("standard layout"));
                }
                out
            }
            None => self.h0_dense(x),
        }
    }

    fn h0_dense(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut t = x.dot(&self.v.t());
        t.mapv_inplace(|v| self.spec.sigma2(v));
        t
    }

    fn check_x(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), found: x.ncols() });
        }
        Ok(())
    }

    /// Expresses neuron-space directions Q (m₂×k) in the layer's space.
    pub fn lift_directions(&self, q: ArrayView2<f64>) -> Directions {
        assert_eq!(q.nrows(), self.m2(), "directions must have m2 rows");
        match &self.psi {
            Some(p) => Directions { space: Space::Lifted, mat: p.t().dot(&q) },
            None => Directions { space: Space::Neuron, mat: q.to_owned() },
        }
    }

    /// ΨᵀΨ in the lifted space, None on the dense path (where the metric is I).
    pub fn metric(&self) -> Option<Array2<f64>> {
        self.psi.as_ref().map(|p| p.t().dot(p))
    }

    /// Maps a k×E block accumulated in the layer's space back to k×m₂ neuron coordinates.
    pub fn to_neuron_rows(&self, acc: Array2<f64>) -> Array2<f64> {
        match &self.psi {
            Some(p) => acc.dot(&p.t()),
            None => acc,
        }
    }

    /// ⟨q_k, h⁽⁰⁾(x_i)⟩ for each row of x and each direction; n×k, computed tile by tile.
    pub fn project(&self, x: ArrayView2<f64>, dirs: &Directions) -> Result<Array2<f64>> {
        self.check_x(x)?;
        if dirs.space != self.space() || dirs.mat.nrows() != self.embed_dim() {
            return Err(Error::InvalidArgument("directions do not match the inner layer".into()));
        }
        let n = x.nrows();
        let rows = self.tile_rows(dirs.k());
        let mut out = Array2::zeros((n, dirs.k()));
        let mut start = 0;
        while start < n {
            let end = (start + rows).min(n);
            let e = self.embed(x.slice(s![start..end, ..]));
            out.slice_mut(s![start..end, ..]).assign(&e.dot(&dirs.mat));
            start = end;
        }
        Ok(out)
    }

    /// h⁽⁰⁾(x) = σ₂(Vx) for each row; n×m₂.
    pub fn h0_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_x(x)?;
        self.check_alloc("h0 rows", x.nrows() * self.m2())?;
        Ok(match &self.psi {
            Some(p) => {
                let n = x.nrows();
                let rows = self.tile_rows(self.m2());
                let mut out = Array2::zeros((n, self.m2()));
                let mut start = 0;
                while start < n {
                    let end = (start + rows).min(n);
                    let e = self.embed(x.slice(s![start..end, ..]));
                    out.slice_mut(s![start..end, ..]).assign(&e.dot(&p.t()));
                    start = end;
                }
                out
            }
            None => self.h0_dense(x),
        })
    }

    pub fn h0_point(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.v.dot(&x).mapv(|t| self.spec.sigma2(t))
    }

    /// (1/n)·Σ_i y_i e(x_i)e(x_i)ᵀ in the layer's space (E×E), accumulated over row tiles in order.
    pub fn weighted_gram(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_x(x)?;
        let e = self.embed_dim();
        self.check_alloc("weighted Gram", e * e)?;
        let n = x.nrows();
        let rows = self.tile_rows(e);
        let mut acc = Array2::zeros((e, e));
        let mut start = 0;
        while start < n {
            let end = (start + rows).min(n);
            let emb = self.embed(x.slice(s![start..end, ..]));
            let weighted = &emb * &y.slice(s![start..end]).insert_axis(Axis(1));
            acc += &weighted.t().dot(&emb);
            start = end;
        }
        if n > 0 {
            acc /= n as f64;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub a: Array1<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub inner: InnerLayer,
    pub epsilon: f64,
    pub seed: u64,
}

impl NetworkParams {
    pub fn d(&self) -> usize {
        self.inner.d()
    }

    pub fn m1(&self) -> usize {
        self.a.len()
    }

    pub fn m2(&self) -> usize {
        self.inner.m2()
    }

    pub fn spec(&self) -> &ActivationSpec {
        self.inner.spec()
    }

    /// Checks the paired symmetric initialization a_j = −a_{m₁−1−j}, w_j = w_{m₁−1−j}, b = 0.
    pub fn is_symmetric_init(&self) -> bool {
        let m1 = self.m1();
        m1 % 2 == 0
            && self.b.iter().all(|v| *v == 0.0)
            && (0..m1 / 2).all(|j| {
                let k = m1 - 1 - j;
                self.a[j] == -self.a[k] && self.w.row(j) == self.w.row(k)
            })
    }

    /// The layer-2 weights divided by ε, i.e. the N(0, I) draws.
    pub fn w_unit(&self) -> Result<Array2<f64>> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive to normalize W".into()));
        }
        Ok(&self.w / self.epsilon)
    }
}

/// Symmetric initialization: V rows uniform on S^{d−1}(√d), neuron j paired with m₁−1−j.
pub fn init_network(
    d: usize,
    m1: usize,
    m2: usize,
    epsilon: f64,
    seed: u64,
    spec: &ActivationSpec,
) -> Result<NetworkParams> {
    if m1 == 0 || m1 % 2 != 0 {
        return Err(Error::InvalidArgument(format!("m1 must be positive and even, got {m1}")));
    }
    if m2 == 0 || d == 0 {
        return Err(Error::InvalidArgument("widths and dimension must be positive".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let mut rv = rng::rng_for(seed, "inner-v");
    let v = sphere::sample_sphere_with(d, m2, &mut rv);
    let inner = InnerLayer::new(v, spec.clone())?;
    let mut ra = rng::rng_for(seed, "outer-a");
    let mut rw = rng::rng_for(seed, "middle-w");
    let half = m1 / 2;
    let mut a = Array1::zeros(m1);
    let mut w = Array2::zeros((m1, m2));
    for j in 0..half {
        let sign = if ra.random::<bool>() { 1.0 } else { -1.0 };
        a[j] = sign;
        a[m1 - 1 - j] = -sign;
        for c in 0..m2 {
            let g: f64 = StandardNormal.sample(&mut rw);
            w[[j, c]] = epsilon * g;
        }
        let row = w.row(j).to_owned();
        w.row_mut(m1 - 1 - j).assign(&row);
    }
    Ok(NetworkParams { a, w, b: Array1::zeros(m1), inner, epsilon, seed })
}

/// Network output at each row of x.
pub fn forward_rows(theta: &NetworkParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    let dirs = theta.inner.lift_directions(theta.w.t());
    let z = theta.inner.project(x, &dirs)?;
    let m1 = theta.m1() as f64;
    Ok(Array1::from_iter(z.outer_iter().map(|zi| {
        zi.iter().zip(&theta.b).zip(&theta.a).map(|((z, b), a)| a * sigma1(z + b)).sum::<f64>() / m1
    })))
}

pub fn forward(theta: &NetworkParams, x: &SampleMatrix) -> Result<Array1<f64>> {
    forward_rows(theta, x.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigma1_branches() {
        assert_eq!(sigma1(0.5), 0.25);
        assert_eq!(sigma1_prime(0.5), 1.0);
        assert_eq!(sigma1(2.0), 3.0);
        assert_eq!(sigma1_prime(2.0), 2.0);
        assert_eq!(sigma1(1.0), 1.0);
        assert!((sigma1(1.0 - 1e-12) - 1.0).abs() < 1e-8);
        assert!((sigma1_prime(1.0 - 1e-12) - 2.0).abs() < 1e-8);
        assert!((sigma1_prime(-1.0 + 1e-12) + 2.0).abs() < 1e-8);
        assert_eq!(sigma1_prime(-1.0), -2.0);
    }

    #[test]
    fn sigma2_examples() {
        let s = ActivationSpec::default_q2(16);
        assert_relative_eq!(s.sigma2(16.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(s.sigma2(0.0), -1.0 / 15.0, max_relative = 1e-15);
        assert_eq!(s.sigma2(4.0), 0.0);
        assert_eq!(s.c_sigma(), 1.0);
        let g = ActivationSpec::series(16, &[(2, 1.0), (3, 0.5)]).unwrap();
        assert_relative_eq!(g.sigma2(16.0), 1.5, max_relative = 1e-14);
        assert!(ActivationSpec::series(16, &[(7, 1.0)]).is_err());
    }

    #[test]
    fn init_contract() {
        let spec = ActivationSpec::default_q2(8);
        let p = init_network(8, 6, 10, 0.1, 3, &spec).unwrap();
        assert!(p.is_symmetric_init());
        assert_eq!(p, init_network(8, 6, 10, 0.1, 3, &spec).unwrap());
        let z = init_network(8, 6, 10, 0.0, 3, &spec).unwrap();
        assert!(z.w.iter().all(|v| *v == 0.0));
        assert!(init_network(8, 5, 10, 0.1, 3, &spec).is_err());
        let x = sphere::sample_sphere(8, 100, 1).unwrap();
        assert!(forward(&p, &x).unwrap().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn lifted_and_dense_agree() {
        let spec = ActivationSpec::default_q2(8);
        let p = init_network(8, 4, 50, 0.3, 5, &spec).unwrap();
        let x = sphere::sample_sphere(8, 37, 2).unwrap();
        let lifted = p.inner.h0_rows(x.rows()).unwrap();
        let dense = p.inner.clone().dense_only().h0_rows(x.rows()).unwrap();
        for (a, b) in lifted.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..5 {
            let h = p.inner.h0_point(x.row(i));
            for (a, b) in h.iter().zip(dense.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_neuron_arithmetic() {
        let spec = ActivationSpec::default_q2(8);
        let mut p = init_network(8, 2, 30, 0.2, 1, &spec).unwrap();
        p.a = Array1::from(vec![1.0, -1.0]);
        p.b = Array1::from(vec![1.0, -1.0]);
        let x = sphere::sample_sphere(8, 5, 4).unwrap();
        let out = forward(&p, &x).unwrap();
        for i in 0..5 {
            let z = p.w.row(0).dot(&p.inner.h0_point(x.row(i)));
            let want = 0.5 * (sigma1(z + 1.0) - sigma1(z - 1.0));
            assert!((out[i] - want).abs() < 1e-12);
        }
    }
}
