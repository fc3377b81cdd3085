use cellshape_turbo::{optimize, TurboConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Negated Ackley on `[-32.768, 32.768]^d`, maximum 0 at the origin.
fn neg_ackley(u: &[f64]) -> f64 {
    let x: Vec<f64> = u.iter().map(|v| -32.768 + 65.536 * v).collect();
    let d = x.len() as f64;
    let s1 = x.iter().map(|v| v * v).sum::<f64>() / d;
    let s2 = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>() / d;
    20.0 * (-0.2 * s1.sqrt()).exp() + s2.exp() - 20.0 - std::f64::consts::E
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

#[test]
fn beats_random_search_on_ackley() {
    let d = 10;
    let cfg = TurboConfig { n_initial: 100, max_evals: 500, batch_size: 4, n_trust_regions: 5, ..TurboConfig::default() };
    let mut turbo = Vec::new();
    let mut random = Vec::new();
    for seed in 0..10 {
        let res = optimize(|x: &[f64]| Ok(neg_ackley(x)), d, &cfg, None, seed).unwrap();
        assert_eq!(res.archive.len(), 500);
        turbo.push(res.best_y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let best = (0..500)
            .map(|_| neg_ackley(&(0..d).map(|_| rng.random()).collect::<Vec<f64>>()))
            .fold(f64::NEG_INFINITY, f64::max);
        random.push(best);
    }
    let (mt, mr) = (median(turbo), median(random));
    assert!(mt >= mr + 1.0, "turbo median {mt}, random median {mr}");
}
