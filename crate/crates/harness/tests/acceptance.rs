//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion N: PASS|FAIL` line to stderr, bypassing output capture.
//!
//! Criteria 7-10 share optimization runs through process-wide caches, so
//! the full suite is far cheaper than the sum of its parts.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cellshape_core::antenna::{horizontal_attenuation, max_gain, pattern_gain, vertical_attenuation, PatternParams};
use cellshape_core::scenario::UserKind;
use cellshape_core::simulator::{LinkTable, SimParams};
use cellshape_harness::config::Case;
use cellshape_harness::experiment::{report_identity_residuals, run_optimization, RunOutcome};
use cellshape_harness::transfer::{iterations_to_reach, run_transfer_study, target_experiment, TransferStudy};
use cellshape_harness::{Experiment, ExperimentConfig, TransferConfig};
use cellshape_turbo::gp::GpPosterior;
use cellshape_turbo::trust_region::tr_side_lengths;
use cellshape_turbo::{optimize, Dataset, GpHyperparams, KernelKind, Observation, TrustRegion, TurboConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SCENARIO_SITES: usize = 16;
const SCENARIO_SEED: u64 = 1;

fn report(n: u32, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_01_antenna_pattern() {
    let t = Instant::now();
    let p = PatternParams { bearing_deg: 120.0, tilt_deg: -12.0, v_hpbw_deg: 10.0, h_hpbw_deg: 65.0 };
    let checks = [
        (pattern_gain(120.0, -12.0, &p), 0.0),
        (horizontal_attenuation(120.0 + 32.5, &p), -3.0),
        (horizontal_attenuation(120.0 - 32.5, &p), -3.0),
        (vertical_attenuation(-12.0 + 5.0, &p), -3.0),
        (vertical_attenuation(-12.0 - 5.0, &p), -3.0),
        (vertical_attenuation(60.0, &p), -20.0),
        (horizontal_attenuation(300.0, &p), -25.0),
        (pattern_gain(300.0, 60.0, &p), -25.0),
        (max_gain(10.0).unwrap(), 14.0),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = worst <= 1e-12 && t.elapsed() < Duration::from_secs(1);
    report(1, pass, t.elapsed(), &format!("max abs error {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_02_sinr_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let noise = SimParams::default().noise_power_dbm();
    let mw = |dbm: f64| 10f64.powf(dbm / 10.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_bs = rng.random_range(1..=10);
        let n_users = rng.random_range(1..=20);
        let table = LinkTable {
            n_users,
            antenna_ids: (0..n_bs as u32).collect(),
            tx_power_dbm: (0..n_bs).map(|_| rng.random_range(20.0..49.0)).collect(),
            gains_db: (0..n_users * n_bs).map(|_| rng.random_range(-150.0..-60.0)).collect(),
        };
        for (u, b) in table.associate().into_iter().enumerate() {
            let rx: Vec<f64> = (0..n_bs).map(|j| mw(table.tx_power_dbm[j]) * 10f64.powf(table.row(u)[j] / 10.0)).collect();
            let interference: f64 = rx.iter().enumerate().filter(|(j, _)| *j != b).map(|(_, r)| r).sum();
            let expected = rx[b] / (interference + mw(noise));
            let got = 10f64.powf(table.sinr_db(u, b, noise) / 10.0);
            worst = worst.max(((got - expected) / expected).abs());
        }
    }
    let pass = worst <= 1e-10 && t.elapsed() < Duration::from_secs(5);
    report(2, pass, t.elapsed(), &format!("max relative error {worst:.1e}"));
    assert!(pass);
}

fn literal_kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&h.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let r = r2.sqrt();
    match h.kernel {
        KernelKind::Matern52 => h.signal_var * (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp(),
        KernelKind::Rbf => h.signal_var * (-r2 / 2.0).exp(),
    }
}

/// Dense posterior: explicit Gauss-Jordan inverse of `K + noise I`, solves
/// polished by iterative refinement.
fn dense_posterior(xs: &[Vec<f64>], y: &[f64], h: &GpHyperparams, q: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| literal_kernel(&xs[i], &xs[j], h) + if i == j { h.noise_var } else { 0.0 }).collect())
        .collect();
    let mut aug: Vec<Vec<f64>> = k
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().copied().chain((0..n).map(|j| if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs())).unwrap();
        aug.swap(c, p);
        let pivot = aug[c][c];
        aug[c].iter_mut().for_each(|v| *v /= pivot);
        let src = aug[c].clone();
        for (r, row) in aug.iter_mut().enumerate() {
            if r != c {
                let f = row[c];
                row.iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    let kinv: Vec<&[f64]> = aug.iter().map(|r| &r[n..]).collect();
    let solve = |b: &[f64]| {
        let mut x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i][j] * b[j]).sum()).collect();
        for _ in 0..3 {
            let r: Vec<f64> = (0..n).map(|i| b[i] - (0..n).map(|j| k[i][j] * x[j]).sum::<f64>()).collect();
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += (0..n).map(|j| kinv[i][j] * r[j]).sum::<f64>();
            }
        }
        x
    };
    let ks: Vec<f64> = xs.iter().map(|x| literal_kernel(x, q, h)).collect();
    let resid: Vec<f64> = y.iter().map(|v| v - h.mean).collect();
    let mean = h.mean + ks.iter().zip(solve(&resid)).map(|(a, b)| a * b).sum::<f64>();
    let var = literal_kernel(q, q, h) - ks.iter().zip(solve(&ks)).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

fn dataset(xs: &[Vec<f64>], y: &[f64]) -> Dataset {
    let obs = xs.iter().zip(y).map(|(x, y)| Observation::new(x.clone(), *y)).collect();
    Dataset::from_observations(xs[0].len(), obs).unwrap()
}

#[test]
fn criterion_03_gp_posterior_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
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
        let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let (m, v) = post.predict(&q).unwrap();
        let (mo, vo) = dense_posterior(&xs, &y, &h, &q);
        worst = worst.max(((m - mo) / mo).abs()).max(((v - vo) / vo).abs());
    }

    let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h = GpHyperparams { noise_var: 0.0, mean: 0.7, ..GpHyperparams::defaults(3) };
    let post = GpPosterior::new(&dataset(&xs, &y), &h).unwrap();
    let interpolates = xs.iter().zip(&y).all(|(x, yi)| {
        let (m, v) = post.predict(x).unwrap();
        (m - yi).abs() <= 1e-8 && v.abs() <= 1e-8
    });
    h.lengthscales = vec![1e-3; 3];
    let (m, v) = GpPosterior::new(&dataset(&xs, &y), &h).unwrap().predict(&[2.0, -1.0, 3.0]).unwrap();
    let reverts = (m - 0.7).abs() <= 1e-12 && (v - h.signal_var).abs() <= 1e-12;

    let pass = worst <= 1e-8 && interpolates && reverts && t.elapsed() < Duration::from_secs(30);
    report(3, pass, t.elapsed(), &format!("max relative error {worst:.1e}, interpolation {interpolates}, prior reversion {reverts}"));
    assert!(pass);
}

#[test]
fn criterion_04_side_length_identities() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    let mut symmetric = true;
    for _ in 0..1000 {
        let d = rng.random_range(1..=100);
        let l = rng.random_range(0.005..1.6);
        let ls: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
        let sides = tr_side_lengths(l, &ls).unwrap();
        let log_ratio = sides.iter().map(|s| s.ln()).sum::<f64>() - d as f64 * l.ln();
        worst = worst.max(log_ratio.exp_m1().abs());
        let lam = ls[0];
        symmetric &= tr_side_lengths(l, &vec![lam; d]).unwrap().iter().all(|s| *s == l);
    }
    let pass = worst <= 1e-10 && symmetric && t.elapsed() < Duration::from_secs(1);
    report(4, pass, t.elapsed(), &format!("max relative volume error {worst:.1e}, equal-lengthscale symmetry {symmetric}"));
    assert!(pass);
}

#[test]
fn criterion_05_trust_region_state_machine() {
    let t = Instant::now();
    let cfg = TurboConfig::default();
    let local = Dataset::from_observations(2, vec![Observation::new(vec![0.5, 0.5], 0.0)]).unwrap();
    let mut tr = TrustRegion::new(0, local.clone(), cfg.length_init).unwrap();
    let mut best = 0.0;
    let mut ok = true;
    for _ in 0..3 {
        best += 1.0;
        tr.update(best, &cfg);
    }
    ok &= tr.length == 1.6;
    for _ in 0..3 {
        best += 1.0;
        tr.update(best, &cfg);
    }
    ok &= tr.length == 1.6;
    for _ in 0..15 {
        tr.update(best, &cfg);
    }
    ok &= tr.length == 0.8;
    for _ in 0..2 {
        best += 1.0;
        tr.update(best, &cfg);
    }
    tr.update(best, &cfg);
    ok &= (tr.success_count, tr.fail_count, tr.length) == (0, 1, 0.8);

    tr.length = 2f64.powi(-7);
    ok &= !tr.needs_restart(&cfg);
    tr.length = 2f64.powi(-8);
    ok &= tr.needs_restart(&cfg);
    tr.restart(local, &cfg).unwrap();
    ok &= tr.length == 0.8 && tr.restarts == 1;

    let pass = ok && t.elapsed() < Duration::from_secs(1);
    report(5, pass, t.elapsed(), "double at 3 successes, halve at 15 failures, cap 1.6, restart below 2^-7");
    assert!(pass);
}

/// Negated Ackley on `[-32.768, 32.768]^d`.
fn neg_ackley(u: &[f64]) -> f64 {
    let x: Vec<f64> = u.iter().map(|v| -32.768 + 65.536 * v).collect();
    let d = x.len() as f64;
    let s1 = x.iter().map(|v| v * v).sum::<f64>() / d;
    let s2 = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>() / d;
    20.0 * (-0.2 * s1.sqrt()).exp() + s2.exp() - 20.0 - std::f64::consts::E
}

/// Negated Levy on `[-10, 10]^d`.
fn neg_levy(u: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let w: Vec<f64> = u.iter().map(|v| 1.0 + (-10.0 + 20.0 * v - 1.0) / 4.0).collect();
    let d = w.len();
    let mut s = (PI * w[0]).sin().powi(2);
    for wi in &w[..d - 1] {
        s += (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2));
    }
    s += (w[d - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[d - 1]).sin().powi(2));
    -s
}

#[test]
fn criterion_06_optimizer_competence() {
    let t = Instant::now();
    let d = 10;
    let cfg = TurboConfig { n_initial: 100, max_evals: 500, batch_size: 4, n_trust_regions: 5, ..TurboConfig::default() };
    let mut details = Vec::new();
    let mut pass = true;
    let functions: [(&str, fn(&[f64]) -> f64); 2] = [("ackley", neg_ackley), ("levy", neg_levy)];
    for (name, f) in functions {
        let mut turbo = Vec::new();
        let mut random = Vec::new();
        for seed in 0..10u64 {
            let res = optimize(|x: &[f64]| Ok(f(x)), d, &cfg, None, seed).unwrap();
            turbo.push(res.best_y);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
            let best = (0..500).map(|_| f(&(0..d).map(|_| rng.random()).collect::<Vec<f64>>())).fold(f64::NEG_INFINITY, f64::max);
            random.push(best);
        }
        let wins = turbo.iter().zip(&random).filter(|(a, b)| a > b).count();
        pass &= wins >= 9;
        details.push(format!(
            "{name}: wins {wins}/10, median {:.3} vs random {:.3}",
            median(turbo.clone()),
            median(random.clone())
        ));
    }
    pass &= t.elapsed() < Duration::from_secs(600);
    report(6, pass, t.elapsed(), &details.join("; "));
    assert!(pass);
}

struct CachedRuns<T> {
    value: T,
    elapsed: Duration,
}

fn timed<T>(f: impl FnOnce() -> T) -> CachedRuns<T> {
    let t = Instant::now();
    let value = f();
    CachedRuns { value, elapsed: t.elapsed() }
}

fn case_experiment(corridors: bool, case: Case) -> Experiment {
    let mut cfg = ExperimentConfig::synthetic(SCENARIO_SITES, SCENARIO_SEED, corridors);
    cfg.case = case;
    Experiment::new(cfg).unwrap()
}

fn runs(exp: &Experiment) -> Vec<RunOutcome> {
    SEEDS.iter().map(|&s| run_optimization(exp, s).unwrap()).collect()
}

/// Ground users only, budget 1000.
fn gue_only_runs() -> &'static CachedRuns<Vec<RunOutcome>> {
    static CELL: OnceLock<CachedRuns<Vec<RunOutcome>>> = OnceLock::new();
    CELL.get_or_init(|| timed(|| runs(&case_experiment(false, Case::GueOnly))))
}

fn corridor_experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| case_experiment(true, Case::GueAndUav))
}

/// Ground users plus UAVs in 140-160 m corridors, budget 1000.
fn corridor_runs() -> &'static CachedRuns<Vec<RunOutcome>> {
    static CELL: OnceLock<CachedRuns<Vec<RunOutcome>>> = OnceLock::new();
    CELL.get_or_init(|| timed(|| runs(corridor_experiment())))
}

/// Corridor runs transferred to 40-60 m corridors.
fn transfer_runs() -> &'static CachedRuns<TransferStudy> {
    static CELL: OnceLock<CachedRuns<TransferStudy>> = OnceLock::new();
    CELL.get_or_init(|| {
        let sources: Vec<(u64, Dataset)> = corridor_runs().value.iter().map(|r| (r.seed, r.target_archive().unwrap())).collect();
        timed(|| {
            let tcfg = TransferConfig::default();
            let target = target_experiment(corridor_experiment(), &tcfg).unwrap();
            run_transfer_study(&target, &sources, &[1.0, 0.5, 0.0], tcfg.budget_after_init, None).unwrap()
        })
    })
}

#[test]
fn criterion_07_gue_only_improvement() {
    let cached = gue_only_runs();
    let t = Instant::now();
    let mut good = 0;
    let mut ratios = Vec::new();
    for r in &cached.value {
        let g = &r.kpi_gains()[&UserKind::Gue];
        if g.rate_p10_ratio >= 1.3 && g.rate_p50_ratio >= 1.15 {
            good += 1;
        }
        ratios.push(format!("{:.2}/{:.2}", g.rate_p10_ratio, g.rate_p50_ratio));
    }
    let elapsed = cached.elapsed + t.elapsed();
    let pass = good >= 4 && elapsed < Duration::from_secs(3600);
    report(7, pass, elapsed, &format!("{good}/5 seeds meet p10 >= 1.30x and p50 >= 1.15x; p10/p50 ratios {}", ratios.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_08_uav_corridor_improvement() {
    let cached = corridor_runs();
    let t = Instant::now();
    let mut good = 0;
    let mut outage_down = 0;
    let mut details = Vec::new();
    for r in &cached.value {
        let gains = r.kpi_gains();
        let (uav, gue) = (&gains[&UserKind::Uav], &gains[&UserKind::Gue]);
        if uav.rate_p50_ratio >= 2.0 && gue.rate_p50_ratio >= 1.0 {
            good += 1;
        }
        if uav.outage_optimized < uav.outage_baseline {
            outage_down += 1;
        }
        details.push(format!(
            "uav p50 {:.2}x, gue p50 {:.2}x, uav outage {:.3}->{:.3}",
            uav.rate_p50_ratio, gue.rate_p50_ratio, uav.outage_baseline, uav.outage_optimized
        ));
    }
    let elapsed = cached.elapsed + t.elapsed();
    let pass = good >= 4 && outage_down >= 4 && elapsed < Duration::from_secs(5400);
    report(
        8,
        pass,
        elapsed,
        &format!("{good}/5 seeds meet rates, {outage_down}/5 reduce UAV outage; {}", details.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_09_transfer_learning() {
    let cached = transfer_runs();
    let t = Instant::now();
    let study = &cached.value;
    let mut final_ratios = Vec::new();
    let mut speed_ratios = Vec::new();
    for &seed in &SEEDS {
        let full = study.row(1.0, seed).unwrap();
        let none = study.row(0.0, seed).unwrap();
        let half = study.row(0.5, seed).unwrap();
        final_ratios.push(none.final_best_rbar_bps / full.final_best_rbar_bps);
        let level = 0.95 * full.final_best_rbar_bps;
        let it_full = iterations_to_reach(&full.curve, level).expect("full run reaches its own level");
        let it_half = iterations_to_reach(&half.curve, level).map_or(f64::INFINITY, |i| i as f64);
        speed_ratios.push(it_half / (it_full.max(1)) as f64);
    }
    let (final_med, speed_med) = (median(final_ratios.clone()), median(speed_ratios.clone()));
    let elapsed = cached.elapsed + t.elapsed();
    let pass = final_med >= 0.9 && speed_med <= 1.5 && elapsed < Duration::from_secs(3 * 3600);
    report(
        9,
        pass,
        elapsed,
        &format!(
            "median R(0.0)/R(1.0) {final_med:.3} (per seed {:?}); median iterations-to-95% ratio (0.5 vs 1.0) {speed_med:.2} (per seed {:?})",
            final_ratios.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            speed_ratios.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_report_identities() {
    let t = Instant::now();
    let mut worst_rbar: f64 = 0.0;
    let mut worst_share: f64 = 0.0;
    let mut n_reports = 0;
    let all_runs = gue_only_runs().value.iter().chain(&corridor_runs().value);
    for r in all_runs {
        for rep in [&r.final_report, &r.baseline_report] {
            let (a, b) = report_identity_residuals(rep);
            worst_rbar = worst_rbar.max(a);
            worst_share = worst_share.max(b);
            n_reports += 1;
        }
    }
    let exp = corridor_experiment();
    let evaluator = exp.evaluator().unwrap();
    for &seed in &SEEDS {
        let rep = evaluator.evaluate_seeds(&exp.baseline(), &[seed]).unwrap();
        let (a, b) = report_identity_residuals(&rep);
        worst_rbar = worst_rbar.max(a);
        worst_share = worst_share.max(b);
        n_reports += 1;
    }
    let pass = worst_rbar <= 1e-9 && worst_share <= 1e-9;
    report(10, pass, t.elapsed(), &format!("{n_reports} reports, max R identity error {worst_rbar:.1e}, max time-share error {worst_share:.1e}"));
    assert!(pass);
}
