//! Baseline evaluation, optimization runs and their artifacts.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use cellshape_core::propagation::{AnalyticModel, GainMap, GainProvider};
use cellshape_core::scenario::{generate_synthetic_scenario, ConfigVector, Scenario, UserKind};
use cellshape_core::simulator::{EvalReport, Evaluator, KpiTable, PreparedDrop, UserSet};
use cellshape_turbo::design::latin_hypercube;
use cellshape_turbo::{optimize, Dataset, ObjectiveError, Observation, OptimizeResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_fraction, DropPolicy, ExperimentConfig, ProviderConfig, ScenarioSource};
use crate::error::{Error, Result};
use crate::normalize::{to_physical, to_unit};
use crate::output::{write_json, write_with};

const OPT_DROPS: u64 = 1;
const FINAL_DROPS: u64 = 2;
const DESIGN: u64 = 3;
const FRESH_DROPS: u64 = 4;
const OPTIMIZER: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for `(stream, index)` under a run seed.
pub fn derive_seed(run_seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(run_seed ^ splitmix64(stream.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ splitmix64(index)))
}

/// Drop seeds used for the final report of a run.
pub fn final_drop_seeds(run_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(run_seed, FINAL_DROPS, i)).collect()
}

pub fn load_scenario(source: &ScenarioSource) -> Result<Scenario> {
    match source {
        ScenarioSource::File { path } => Ok(Scenario::load(path)?),
        ScenarioSource::Synthetic { n_sites, seed, corridors, corridor_heights } => {
            let s = generate_synthetic_scenario(*n_sites, *seed, *corridors)?;
            match corridor_heights {
                Some([lo, hi]) => Ok(s.with_corridor_heights(*lo, *hi)?),
                None => Ok(s),
            }
        }
    }
}

pub fn build_provider(cfg: &ProviderConfig, scenario: &Scenario) -> Result<Arc<dyn GainProvider>> {
    match cfg {
        ProviderConfig::Analytic { params } => Ok(Arc::new(AnalyticModel::new(scenario, params.clone())?)),
        ProviderConfig::GainMap { path } => {
            let map = GainMap::load(path)?;
            for a in &scenario.antennas {
                if !map.antenna_ids.contains(&a.id) {
                    return Err(Error::config(format!("gain map {} lacks antenna {}", path.display(), a.id)));
                }
            }
            Ok(Arc::new(map))
        }
    }
}

/// A loaded scenario with its propagation model and settings.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub provider: Arc<dyn GainProvider>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let scenario = load_scenario(&config.scenario)?;
        let provider = build_provider(&config.provider, &scenario)?;
        Ok(Self { config, scenario, provider })
    }

    /// Same settings on another scenario; the provider is rebuilt for it.
    pub fn with_scenario(&self, scenario: Scenario) -> Result<Self> {
        let provider = build_provider(&self.config.provider, &scenario)?;
        Ok(Self { config: self.config.clone(), scenario, provider })
    }

    pub fn dim(&self) -> usize {
        self.scenario.config_dim()
    }

    pub fn population(&self) -> UserSet {
        self.config.case.population()
    }

    pub fn evaluator(&self) -> Result<Evaluator> {
        Ok(Evaluator::new(self.scenario.clone(), Arc::clone(&self.provider), self.config.sim.clone(), self.population())?)
    }

    pub fn baseline(&self) -> ConfigVector {
        ConfigVector::baseline(self.scenario.antennas.len())
    }
}

/// Evaluates the uniform baseline on drops seeded by `cfg.seeds`.
pub fn run_baseline(exp: &Experiment) -> Result<EvalReport> {
    Ok(exp.evaluator()?.evaluate_seeds(&exp.baseline(), &exp.config.seeds)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub objective: f64,
    pub n_objective_users: f64,
    pub geo_mean_rate_bps: f64,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self { objective: r.objective, n_objective_users: r.n_objective_users, geo_mean_rate_bps: r.geo_mean_rate_bps }
    }
}

fn key(u: &[f64]) -> Vec<u64> {
    u.iter().map(|v| v.to_bits()).collect()
}

/// The optimization objective on the unit cube for one run.
pub struct Objective {
    evaluator: Evaluator,
    policy: DropPolicy,
    run_seed: u64,
    common: Vec<PreparedDrop>,
    log: Mutex<HashMap<Vec<u64>, EvalSummary>>,
}

impl Objective {
    pub fn new(exp: &Experiment, run_seed: u64) -> Result<Self> {
        let evaluator = exp.evaluator()?;
        let policy = exp.config.drops;
        let common = match policy {
            DropPolicy::Common => {
                let seeds: Vec<u64> = (0..exp.config.sim.drops_per_eval as u64)
                    .map(|i| derive_seed(run_seed, OPT_DROPS, i))
                    .collect();
                evaluator.prepare_all(&seeds)?
            }
            DropPolicy::Fresh => Vec::new(),
        };
        Ok(Self { evaluator, policy, run_seed, common, log: Mutex::new(HashMap::new()) })
    }

    pub fn dim(&self) -> usize {
        self.evaluator.scenario().config_dim()
    }

    /// Seeds of the shared drops (empty under the fresh policy).
    pub fn common_drop_seeds(&self) -> Vec<u64> {
        self.common.iter().map(|d| d.seed).collect()
    }

    pub fn report(&self, u: &[f64]) -> Result<EvalReport> {
        let x = to_physical(u);
        let report = match self.policy {
            DropPolicy::Common => self.evaluator.evaluate_on(&x, &self.common)?,
            DropPolicy::Fresh => {
                let h = key(u).into_iter().fold(self.run_seed, |acc, b| splitmix64(acc ^ b));
                let k = self.evaluator.params().drops_per_eval as u64;
                let seeds: Vec<u64> = (0..k).map(|i| derive_seed(h, FRESH_DROPS, i)).collect();
                self.evaluator.evaluate_seeds(&x, &seeds)?
            }
        };
        self.log.lock().expect("objective log poisoned").insert(key(u), EvalSummary::from(&report));
        Ok(report)
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.report(u)?.objective)
    }

    /// Summary of a previous evaluation of exactly `u`.
    pub fn summary(&self, u: &[f64]) -> Option<EvalSummary> {
        self.log.lock().expect("objective log poisoned").get(&key(u)).copied()
    }

    pub fn callback(&self) -> impl Fn(&[f64]) -> std::result::Result<f64, ObjectiveError> + Sync + '_ {
        move |u: &[f64]| self.value(u).map_err(|e| Box::new(e) as ObjectiveError)
    }
}

/// Initial design plus how many of its leading entries were evaluated on the
/// target objective; the rest are copied from a source dataset.
#[derive(Debug, Clone)]
pub struct InitialDesign {
    pub dataset: Dataset,
    pub n_target: usize,
}

/// `round(fraction * n_initial)` fresh target evaluations (the baseline
/// first when `inject_baseline`), followed by the best remaining-count
/// observations of `source` copied verbatim.
pub fn build_initial_dataset(
    objective: &Objective,
    n_initial: usize,
    target_fraction: f64,
    source: Option<&Dataset>,
    inject_baseline: bool,
    seed: u64,
) -> Result<InitialDesign> {
    check_fraction(target_fraction)?;
    let d = objective.dim();
    let n_target = (target_fraction * n_initial as f64).round() as usize;
    let n_source = n_initial - n_target;
    let source_obs: Vec<Observation> = if n_source > 0 {
        let src = source.ok_or(Error::InsufficientSource { needed: n_source, available: 0 })?;
        if src.dim() != d {
            return Err(Error::config(format!("source dataset has dimension {}, target needs {d}", src.dim())));
        }
        if src.len() < n_source {
            return Err(Error::InsufficientSource { needed: n_source, available: src.len() });
        }
        let mut order: Vec<usize> = (0..src.len()).collect();
        let obs = src.observations();
        order.sort_by(|a, b| obs[*b].y.total_cmp(&obs[*a].y).then(a.cmp(b)));
        order.into_iter().take(n_source).map(|i| obs[i].clone()).collect()
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DESIGN, 0));
    let mut points = Vec::with_capacity(n_target);
    if inject_baseline && n_target > 0 {
        points.push(to_unit(&ConfigVector::baseline(d / 2)));
    }
    points.extend(latin_hypercube(n_target - points.len(), d, &mut rng));
    let values: Vec<f64> = points.par_iter().map(|u| objective.value(u)).collect::<Result<_>>()?;
    let mut obs: Vec<Observation> = points.into_iter().zip(values).map(|(x, y)| Observation::new(x, y)).collect();
    obs.extend(source_obs);
    Ok(InitialDesign { dataset: Dataset::from_observations(d, obs)?, n_target })
}

/// Best target-evaluated value after each iteration (0 = initial design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub target_evaluations: usize,
    pub best_objective: Option<f64>,
    /// `exp(best_objective / |U|)` for the evaluation achieving it.
    pub best_rbar_bps: Option<f64>,
}

/// KPIs of a report without the per-user records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub objective: f64,
    pub n_objective_users: f64,
    pub geo_mean_rate_bps: f64,
    pub n_drops: usize,
    pub drop_seeds: Vec<u64>,
    pub population: UserSet,
    pub kpis: KpiTable,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            objective: r.objective,
            n_objective_users: r.n_objective_users,
            geo_mean_rate_bps: r.geo_mean_rate_bps,
            n_drops: r.n_drops,
            drop_seeds: r.drop_seeds.clone(),
            population: r.population,
            kpis: r.kpis.clone(),
        }
    }
}

/// Ratios of optimized to baseline KPIs per user kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiGain {
    pub rate_p10_ratio: f64,
    pub rate_p50_ratio: f64,
    pub outage_optimized: f64,
    pub outage_baseline: f64,
}

pub fn kpi_gains(optimized: &EvalReport, baseline: &EvalReport) -> BTreeMap<UserKind, KpiGain> {
    optimized
        .kpis
        .iter()
        .filter_map(|(k, o)| {
            let b = baseline.kpi(*k)?;
            Some((
                *k,
                KpiGain {
                    rate_p10_ratio: o.rate_p10_bps / b.rate_p10_bps,
                    rate_p50_ratio: o.rate_p50_bps / b.rate_p50_bps,
                    outage_optimized: o.outage,
                    outage_baseline: b.outage,
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub target_fraction: f64,
    pub n_target_initial: usize,
    pub optimization: OptimizeResult,
    /// Per archive entry: evaluated on this run's objective (as opposed to
    /// copied from a source dataset).
    pub target_evaluated: Vec<bool>,
    pub summaries: Vec<Option<EvalSummary>>,
    pub best_unit: Vec<f64>,
    pub best_config: ConfigVector,
    pub best: EvalSummary,
    /// Baseline on the same drops the optimizer saw.
    pub baseline: EvalSummary,
    pub optimization_drop_seeds: Vec<u64>,
    pub final_report: EvalReport,
    pub baseline_report: EvalReport,
}

impl RunOutcome {
    pub fn convergence(&self) -> Vec<CurvePoint> {
        let mut out: Vec<CurvePoint> = Vec::new();
        let mut best: Option<(f64, f64)> = None;
        let mut n_target = 0;
        let history = &self.optimization.history;
        for (i, h) in history.iter().enumerate() {
            if self.target_evaluated[i] {
                n_target += 1;
                if best.is_none_or(|(f, _)| h.f_tilde > f) {
                    let rbar = self.summaries[i].map_or(f64::NAN, |s| s.geo_mean_rate_bps);
                    best = Some((h.f_tilde, rbar));
                }
            }
            let last_of_iteration = history.get(i + 1).is_none_or(|n| n.iteration != h.iteration);
            if last_of_iteration {
                out.push(CurvePoint {
                    iteration: h.iteration,
                    target_evaluations: n_target,
                    best_objective: best.map(|b| b.0),
                    best_rbar_bps: best.map(|b| b.1),
                });
            }
        }
        if out.first().is_none_or(|p| p.iteration != 0) {
            out.insert(0, CurvePoint { iteration: 0, target_evaluations: 0, best_objective: None, best_rbar_bps: None });
        }
        out
    }

    pub fn target_archive(&self) -> Result<Dataset> {
        let obs = self
            .optimization
            .archive
            .iter()
            .zip(&self.target_evaluated)
            .filter(|(_, t)| **t)
            .map(|(o, _)| o.clone())
            .collect();
        Ok(Dataset::from_observations(self.optimization.archive.dim(), obs)?)
    }

    pub fn kpi_gains(&self) -> BTreeMap<UserKind, KpiGain> {
        kpi_gains(&self.final_report, &self.baseline_report)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions<'a> {
    pub seed: u64,
    pub target_fraction: f64,
    pub source: Option<&'a Dataset>,
    /// Total budget including the initial dataset.
    pub max_evals: usize,
}

/// Optimizes from a fresh initial design with `cfg.turbo.max_evals`.
pub fn run_optimization(exp: &Experiment, seed: u64) -> Result<RunOutcome> {
    let opts = RunOptions { seed, target_fraction: 1.0, source: None, max_evals: exp.config.turbo.max_evals };
    run_with(exp, &opts)
}

pub fn run_with(exp: &Experiment, opts: &RunOptions<'_>) -> Result<RunOutcome> {
    let cfg = &exp.config;
    let objective = Objective::new(exp, opts.seed)?;
    let d = objective.dim();
    let design = build_initial_dataset(
        &objective,
        cfg.turbo.n_initial,
        opts.target_fraction,
        opts.source,
        cfg.inject_baseline,
        opts.seed,
    )?;
    let n_initial = design.dataset.len();
    let turbo_cfg = cellshape_turbo::TurboConfig { max_evals: opts.max_evals, ..cfg.turbo.clone() };
    let result = optimize(objective.callback(), d, &turbo_cfg, Some(design.dataset), derive_seed(opts.seed, OPTIMIZER, 0))?;

    let target_evaluated: Vec<bool> = (0..result.archive.len()).map(|i| i < design.n_target || i >= n_initial).collect();
    let summaries: Vec<Option<EvalSummary>> = result
        .archive
        .iter()
        .zip(&target_evaluated)
        .map(|(o, t)| if *t { objective.summary(&o.x) } else { None })
        .collect();

    let best_idx = (0..result.archive.len())
        .filter(|i| target_evaluated[*i])
        .reduce(|a, b| if result.archive.observations()[b].y > result.archive.observations()[a].y { b } else { a });
    let (best_unit, best) = match best_idx {
        Some(i) => {
            let u = result.archive.observations()[i].x.clone();
            let s = summaries[i].ok_or_else(|| Error::config("missing evaluation summary"))?;
            (u, s)
        }
        None => {
            // nothing was evaluated on the target: score the best source point
            let u = result.archive.best().expect("non-empty archive").x.clone();
            let s = EvalSummary::from(&objective.report(&u)?);
            (u, s)
        }
    };
    let baseline_unit = to_unit(&exp.baseline());
    let baseline = objective.summary(&baseline_unit).map_or_else(|| objective.report(&baseline_unit).map(|r| EvalSummary::from(&r)), Ok)?;

    let evaluator = exp.evaluator()?;
    let final_drops = evaluator.prepare_all(&final_drop_seeds(opts.seed, cfg.final_drops))?;
    let best_config = to_physical(&best_unit);
    let final_report = evaluator.evaluate_on(&best_config, &final_drops)?;
    let baseline_report = evaluator.evaluate_on(&exp.baseline(), &final_drops)?;

    Ok(RunOutcome {
        seed: opts.seed,
        target_fraction: opts.target_fraction,
        n_target_initial: design.n_target,
        optimization: result,
        target_evaluated,
        summaries,
        best_unit,
        best_config,
        best,
        baseline,
        optimization_drop_seeds: objective.common_drop_seeds(),
        final_report,
        baseline_report,
    })
}

#[derive(Serialize)]
struct BestConfigFile<'a> {
    seed: u64,
    objective: f64,
    geo_mean_rate_bps: f64,
    tilts_deg: &'a [f64],
    v_hpbws_deg: &'a [f64],
    unit: &'a [f64],
}

#[derive(Serialize)]
struct RunReportFile<'a> {
    seed: u64,
    case: crate::config::Case,
    target_fraction: f64,
    n_target_initial: usize,
    evaluations: usize,
    target_evaluations: usize,
    iterations: usize,
    optimization_drop_seeds: &'a [u64],
    best: EvalSummary,
    baseline: EvalSummary,
    final_report: ReportSummary,
    baseline_report: ReportSummary,
    kpi_gains: BTreeMap<UserKind, KpiGain>,
}

/// Writes `history.csv`, `best_config.json`, `report.json`,
/// `final_users.csv`, `baseline_users.csv`, `archive.json` (target-evaluated
/// observations) and `checkpoint.json` into `dir`.
pub fn write_run_outputs(exp: &Experiment, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    let opt = &outcome.optimization;
    write_with(&dir.join("history.csv"), |w| opt.write_history_csv(w))?;
    write_json(
        &dir.join("best_config.json"),
        &BestConfigFile {
            seed: outcome.seed,
            objective: outcome.best.objective,
            geo_mean_rate_bps: outcome.best.geo_mean_rate_bps,
            tilts_deg: outcome.best_config.tilts(),
            v_hpbws_deg: outcome.best_config.v_hpbws(),
            unit: &outcome.best_unit,
        },
    )?;
    write_json(
        &dir.join("report.json"),
        &RunReportFile {
            seed: outcome.seed,
            case: exp.config.case,
            target_fraction: outcome.target_fraction,
            n_target_initial: outcome.n_target_initial,
            evaluations: opt.archive.len(),
            target_evaluations: outcome.target_evaluated.iter().filter(|t| **t).count(),
            iterations: opt.iterations,
            optimization_drop_seeds: &outcome.optimization_drop_seeds,
            best: outcome.best,
            baseline: outcome.baseline,
            final_report: ReportSummary::from(&outcome.final_report),
            baseline_report: ReportSummary::from(&outcome.baseline_report),
            kpi_gains: outcome.kpi_gains(),
        },
    )?;
    write_with(&dir.join("final_users.csv"), |w| {
        outcome.final_report.write_csv(w).map_err(std::io::Error::other)
    })?;
    write_with(&dir.join("baseline_users.csv"), |w| {
        outcome.baseline_report.write_csv(w).map_err(std::io::Error::other)
    })?;
    write_json(&dir.join("archive.json"), &outcome.target_archive()?)?;
    write_json(&dir.join("checkpoint.json"), opt)?;
    Ok(())
}

/// Relative error of `R = exp(f/|U|)` and the largest deviation of a
/// serving antenna's summed time shares from 1, over all drops.
pub fn report_identity_residuals(report: &EvalReport) -> (f64, f64) {
    let rbar = (report.objective / report.n_objective_users).exp();
    let rel = (rbar - report.geo_mean_rate_bps).abs() / report.geo_mean_rate_bps.abs().max(f64::MIN_POSITIVE);
    let mut shares: HashMap<(usize, u32), f64> = HashMap::new();
    for u in &report.users {
        *shares.entry((u.drop, u.serving)).or_insert(0.0) += u.time_share;
    }
    let worst = shares.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    (rel, worst)
}
