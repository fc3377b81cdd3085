use cellshape_turbo::gp::{GpPosterior, Surrogate};
use cellshape_turbo::{Dataset, GpHyperparams, KernelKind, Observation};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernel written out directly from the ARD distance.
fn k_literal(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&h.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let r = r2.sqrt();
    match h.kernel {
        KernelKind::Matern52 => h.signal_var * (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp(),
        KernelKind::Rbf => h.signal_var * (-r2 / 2.0).exp(),
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= pivot);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let src = a[c].clone();
                a[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// mean = mu + k*^T (K + s_n I)^-1 (y - mu), var = k** - k*^T (K + s_n I)^-1 k*,
/// with both solves polished by iterative refinement.
fn dense_posterior(xs: &[Vec<f64>], y: &[f64], h: &GpHyperparams, q: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| k_literal(&xs[i], &xs[j], h) + if i == j { h.noise_var } else { 0.0 }).collect())
        .collect();
    let kinv = inverse(&k);
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * b[j]).sum()).collect();
        for _ in 0..3 {
            let r: Vec<f64> = (0..n).map(|i| b[i] - (0..n).map(|j| k[i][j] * x[j]).sum::<f64>()).collect();
            for i in 0..n {
                x[i] += (0..n).map(|j| kinv[i][j] * r[j]).sum::<f64>();
            }
        }
        x
    };
    let ks: Vec<f64> = xs.iter().map(|x| k_literal(x, q, h)).collect();
    let resid: Vec<f64> = y.iter().map(|v| v - h.mean).collect();
    let alpha = solve(&resid);
    let beta = solve(&ks);
    let mean = h.mean + ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    let quad: f64 = ks.iter().zip(&beta).map(|(a, b)| a * b).sum();
    (mean, k_literal(q, q, h) - quad)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>, GpHyperparams) {
    let n = rng.random_range(1..=20);
    let d = rng.random_range(1..=10);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let h = GpHyperparams {
        mean: rng.random_range(-2.0..2.0),
        signal_var: rng.random_range(0.1..4.0),
        lengthscales: (0..d).map(|_| rng.random_range(0.1..2.0)).collect(),
        noise_var: 10f64.powf(rng.random_range(-3.0..-1.0)),
        kernel: if rng.random::<bool>() { KernelKind::Matern52 } else { KernelKind::Rbf },
    };
    (xs, y, h)
}

fn dataset(xs: &[Vec<f64>], y: &[f64]) -> Dataset {
    let obs = xs.iter().zip(y).map(|(x, y)| Observation::new(x.clone(), *y)).collect();
    Dataset::from_observations(xs[0].len(), obs).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn posterior_matches_dense_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (xs, y, h) = random_instance(&mut rng);
        let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
        assert_eq!(post.jitter(), 0.0);
        for _ in 0..5 {
            let q: Vec<f64> = (0..h.dim()).map(|_| rng.random()).collect();
            let (m, v) = post.predict(&q).unwrap();
            let (mo, vo) = dense_posterior(&xs, &y, &h, &q);
            assert!(rel(m, mo) < 1e-8, "mean {m} vs {mo}");
            assert!(rel(v, vo) < 1e-8, "var {v} vs {vo}");
        }
    }
}

#[test]
fn standardized_surrogate_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (xs, y, mut h) = random_instance(&mut rng);
        if y.len() < 2 {
            continue;
        }
        h.mean = 0.0;
        let n = y.len() as f64;
        let mu = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        let z: Vec<f64> = y.iter().map(|v| (v - mu) / sd).collect();
        let s = Surrogate::new(&dataset(&xs, &y), &h).unwrap();
        let q: Vec<f64> = (0..h.dim()).map(|_| rng.random()).collect();
        let (m, v) = s.predict(&q).unwrap();
        let (mo, vo) = dense_posterior(&xs, &z, &h, &q);
        assert!(rel(m, mu + sd * mo) < 1e-8);
        assert!(rel(v, sd * sd * vo) < 1e-8, "{v} vs {} (n={}, noise={}, s2={})", sd * sd * vo, y.len(), h.noise_var, h.signal_var);
    }
}

#[test]
fn noiseless_interpolation_and_prior_reversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h = GpHyperparams::defaults(3);
    h.noise_var = 0.0;
    h.mean = 0.3;
    let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
    for (x, yi) in xs.iter().zip(&y) {
        let (m, v) = post.predict(x).unwrap();
        assert!((m - yi).abs() < 1e-8);
        assert!(v.abs() < 1e-8);
    }
    h.lengthscales = vec![1e-3; 3];
    let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
    let (m, v) = post.predict(&[0.999, 0.001, 0.5]).unwrap();
    assert!((m - 0.3).abs() < 1e-12);
    assert!((v - h.signal_var).abs() < 1e-12);
}

fn gp_inputs(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, GpHyperparams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut h = GpHyperparams::defaults(d);
    h.signal_var = rng.random_range(0.2..3.0);
    h.lengthscales = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
    (xs, y, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_never_exceeds_prior(n in 1usize..15, d in 1usize..6, seed in any::<u64>(), q in prop::collection::vec(0.0..1.0f64, 6)) {
        let (xs, y, h) = gp_inputs(n, d, seed);
        let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
        let (_, v) = post.predict(&q[..d]).unwrap();
        prop_assert!(v <= h.signal_var + 1e-8);
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn extra_observation_never_raises_variance(n in 1usize..12, d in 1usize..5, seed in any::<u64>(), q in prop::collection::vec(0.0..1.0f64, 5)) {
        let (xs, y, mut h) = gp_inputs(n + 1, d, seed);
        h.noise_var = 0.0;
        let fewer = GpPosterior::new(&dataset(&xs[..n], &y[..n]), &h).unwrap();
        let more = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
        let q = &q[..d];
        prop_assert!(more.predict(q).unwrap().1 <= fewer.predict(q).unwrap().1 + 1e-8);
    }

    #[test]
    fn shifting_targets_shifts_means(n in 2usize..15, d in 1usize..6, seed in any::<u64>(), shift in -100.0..100.0f64) {
        let (xs, y, h) = gp_inputs(n, d, seed);
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let a = Surrogate::new(&dataset(&xs, &y), &h).unwrap();
        let b = Surrogate::new(&dataset(&xs, &shifted), &h).unwrap();
        let q: Vec<f64> = xs[0].iter().map(|v| 1.0 - v).collect();
        let (ma, va) = a.predict(&q).unwrap();
        let (mb, vb) = b.predict(&q).unwrap();
        prop_assert!((mb - ma - shift).abs() < 1e-8 * (1.0 + shift.abs()));
        prop_assert!((va - vb).abs() < 1e-8);
    }
}

#[test]
fn gram_matrix_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (xs, _, mut h) = random_instance(&mut rng);
        h.noise_var = 0.0;
        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| cellshape_turbo::gp::kernel(&xs[i], &xs[j], &h));
        let min_eig = k.symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= -1e-10, "{min_eig}");
    }
}
