use approx::assert_relative_eq;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use quadfeat::mc::chunked_mean;
use quadfeat::sphere::{gegenbauer, linearize_product, quadratic_moment};
use quadfeat::training::{RidgeProblem, StepBudget, TrainConfig};
use quadfeat::universality::w1_empirical;
use quadfeat::{orthonormalize, LinkPolynomial};
use rand::Rng;

fn monomial_eval(terms: &[(f64, Vec<usize>)], z: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(c, a)| c * a.iter().zip(z).map(|(k, zi)| zi.powi(*k as i32)).product::<f64>())
        .sum()
}

fn symmetric(d: usize, entries: &[f64]) -> Array2<f64> {
    let mut a = Array2::zeros((d, d));
    let mut it = entries.iter().cycle();
    for i in 0..d {
        for j in i..d {
            let v = *it.next().unwrap();
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn link_tensor_form_matches_monomials(
        coefs in prop::collection::vec(-2.0f64..2.0, 1..5),
        exps in prop::collection::vec(prop::collection::vec(0usize..3, 3), 5),
        z in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let terms: Vec<(f64, Vec<usize>)> = coefs.iter().zip(&exps).map(|(c, a)| (*c, a.clone())).collect();
        let g = LinkPolynomial::from_monomials(3, &terms).unwrap();
        let want = monomial_eval(&terms, &z);
        let got = g.eval(Array1::from(z.clone()).view());
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn linearization_holds_pointwise(i in 0usize..6, j in 0usize..6, dq in 1usize..9, u in -1.0f64..1.0) {
        let d = 4 * dq;
        let t = u * d as f64;
        let table = linearize_product(i, j, d).unwrap();
        let lhs = gegenbauer(i, d, t) * gegenbauer(j, d, t);
        let scale = table.coefficients.iter().map(|c| c.abs()).sum::<f64>().max(lhs.abs());
        prop_assert!((lhs - table.eval(t)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn orthonormalize_gives_identity_gram(
        d in 4usize..10,
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 60), 3),
    ) {
        let mats: Vec<Array2<f64>> = raw.iter().map(|e| symmetric(d, e)).collect();
        if let Ok(f) = orthonormalize(&mats) {
            for (k, a) in f.matrices().iter().enumerate() {
                prop_assert!(a.diag().sum().abs() < 1e-10);
                for (l, b) in f.matrices().iter().enumerate() {
                    let want = if k == l { 1.0 } else { 0.0 };
                    prop_assert!((quadratic_moment(a.view(), b.view(), d) - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sorted_w1_matches_best_assignment(
        a in prop::collection::vec(-3.0f64..3.0, 1..7),
        seed in any::<u64>(),
    ) {
        let n = a.len();
        let mut r = quadfeat::rng::rng(seed);
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let brute = permutations(n)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        prop_assert!((w1_empirical(&a, &b).unwrap() - brute).abs() < 1e-12);
    }
}

#[test]
fn explicit_gd_reaches_the_cholesky_solution() {
    let mut r = quadfeat::rng::rng(4);
    for (n, m) in [(200, 20), (64, 80)] {
        let f = Array2::from_shape_fn((n, m), |_| r.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |_| r.random_range(-1.0..1.0));
        let prob = RidgeProblem::from_features(f.view(), y.view());
        let lambda = 0.05 * prob.second_moment();
        let exact = prob.solve(lambda).unwrap();
        let cfg = TrainConfig { budget: StepBudget::Steps(100_000), grad_tol: 1e-14, ..TrainConfig::default() };
        let gd = prob.fit(Array1::zeros(m).view(), lambda, &cfg).unwrap();
        for (a, b) in gd.a.iter().zip(&exact) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9, max_relative = 1e-7);
        }
        assert!(prob.normal_residual(exact.view(), lambda) < 1e-10);
    }
}

#[test]
fn chunked_mean_is_independent_of_thread_count() {
    let f = |r: &mut quadfeat::rng::Rng| r.random::<f64>().powi(3);
    let n = 5 * quadfeat::mc::MC_CHUNK + 123;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| chunked_mean(n, 9, f));
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| chunked_mean(n, 9, f));
    assert_eq!(one.estimate.to_bits(), four.estimate.to_bits());
    assert_eq!(one.std_error.to_bits(), four.std_error.to_bits());
    assert_relative_eq!(one.estimate, 0.25, epsilon = 6.0 * one.std_error);
}
