//! Multi-trust-region Bayesian optimization loop with batched Thompson
//! sampling.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::latin_hypercube;
use crate::error::{Error, ObjectiveError, Result};
use crate::gp::{Dataset, FitOptions, GpHyperparams, KernelKind, Observation, SamplingOptions, Surrogate};
use crate::trust_region::TrustRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurboConfig {
    pub succ_tolerance: u32,
    pub fail_tolerance: u32,
    pub length_init: f64,
    pub length_min: f64,
    pub length_max: f64,
    pub batch_size: usize,
    pub n_trust_regions: usize,
    /// Candidates per region and iteration; `None` means `min(5000, 100 d)`.
    pub n_candidates: Option<usize>,
    pub n_initial: usize,
    /// Total evaluation budget, initial design included.
    pub max_evals: usize,
    pub kernel: KernelKind,
    pub fit_starts: usize,
    pub fit_max_steps: usize,
    pub fit_learning_rate: f64,
    /// Lengthscale search box for local model fits, unit-cube units.
    pub lengthscale_bounds: (f64, f64),
    /// Starts used when refitting from a region's previous hyperparameters.
    pub warm_fit_starts: usize,
    /// Hyperparameters are refit after every batch while a region holds at
    /// most this many observations, and every `refit_every` batches after.
    pub refit_full_until: usize,
    pub refit_every: usize,
    /// Expected number of perturbed coordinates per candidate.
    pub perturb_dims: f64,
    pub sampling: SamplingOptions,
    /// Restarted regions are seeded with this many LHS points per dimension.
    pub restart_points_per_dim: usize,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            succ_tolerance: 3,
            fail_tolerance: 15,
            length_init: 0.8,
            length_min: 2f64.powi(-7),
            length_max: 1.6,
            batch_size: 4,
            n_trust_regions: 5,
            n_candidates: None,
            n_initial: 200,
            max_evals: 1000,
            kernel: KernelKind::Matern52,
            fit_starts: 3,
            fit_max_steps: 200,
            fit_learning_rate: 0.1,
            lengthscale_bounds: crate::gp::LENGTHSCALE_BOUNDS,
            warm_fit_starts: 1,
            refit_full_until: 300,
            refit_every: 5,
            perturb_dims: 20.0,
            sampling: SamplingOptions::default(),
            restart_points_per_dim: 2,
        }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_lengths = 0.0 < self.length_min && self.length_min < self.length_init && self.length_init <= self.length_max;
        if !ok_lengths {
            return Err(Error::invalid(format!(
                "need 0 < length_min < length_init <= length_max, got {} / {} / {}",
                self.length_min, self.length_init, self.length_max
            )));
        }
        if self.batch_size == 0 || self.n_trust_regions == 0 {
            return Err(Error::invalid("batch_size and n_trust_regions must be at least 1"));
        }
        if self.succ_tolerance == 0 || self.fail_tolerance == 0 {
            return Err(Error::invalid("success and failure tolerances must be at least 1"));
        }
        if self.n_candidates == Some(0) {
            return Err(Error::invalid("n_candidates must be at least 1"));
        }
        if self.refit_every == 0 || self.fit_starts == 0 {
            return Err(Error::invalid("refit_every and fit_starts must be at least 1"));
        }
        let (llo, lhi) = self.lengthscale_bounds;
        if !(llo > 0.0 && llo < lhi) {
            return Err(Error::invalid(format!("need 0 < lengthscale bounds, lower < upper, got {llo} / {lhi}")));
        }
        if !(self.perturb_dims > 0.0) {
            return Err(Error::invalid("perturb_dims must be positive"));
        }
        Ok(())
    }

    pub fn candidates_for(&self, dim: usize) -> usize {
        self.n_candidates.unwrap_or_else(|| (100 * dim).min(5000))
    }

    fn fit_options(&self, seed: u64, warm_start: Option<GpHyperparams>) -> FitOptions {
        let starts = if warm_start.is_some() { self.warm_fit_starts.max(1) } else { self.fit_starts };
        FitOptions {
            kernel: self.kernel,
            starts,
            max_steps: self.fit_max_steps,
            learning_rate: self.fit_learning_rate,
            seed,
            warm_start,
            lengthscale_bounds: self.lengthscale_bounds,
            ..FitOptions::default()
        }
    }
}

/// One line of the evaluation history. `tr_id` is `None` for initial-design
/// evaluations, which also carry `iteration` 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub eval_index: usize,
    pub iteration: usize,
    pub tr_id: Option<usize>,
    pub f_tilde: f64,
    pub best_so_far: f64,
}

pub fn write_history_csv<W: Write>(history: &[HistoryRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "eval_index,tr_id,f_tilde,best_so_far")?;
    for h in history {
        let tr = h.tr_id.map_or(-1, |t| t as i64);
        writeln!(w, "{},{},{},{}", h.eval_index, tr, h.f_tilde, h.best_so_far)?;
    }
    Ok(())
}

/// State recovered from an aborted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRun {
    pub archive: Dataset,
    pub history: Vec<HistoryRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    /// Every evaluated point in evaluation order, initial design first.
    pub archive: Dataset,
    pub history: Vec<HistoryRecord>,
    pub trust_regions: Vec<TrustRegion>,
    pub n_initial: usize,
    pub iterations: usize,
}

impl OptimizeResult {
    pub fn write_history_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_history_csv(&self.history, w)
    }

    /// JSON checkpoint of all trust-region states and the archive.
    pub fn checkpoint_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// A candidate chosen for evaluation, attributed to the region (by index in
/// the slice passed to [`propose_batch`]) that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub region: usize,
    pub x: Vec<f64>,
}

/// Pools one Thompson draw per candidate from every region and returns the
/// `cfg.batch_size` best candidates, best first.
pub fn propose_batch(trs: &[TrustRegion], cfg: &TurboConfig, seed: u64) -> Result<Vec<Proposal>> {
    if trs.is_empty() {
        return Err(Error::invalid("no trust regions"));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = trs.iter().map(|_| seeder.random()).collect();
    let per_region: Vec<(DMatrix<f64>, Vec<f64>)> = trs
        .par_iter()
        .zip(seeds)
        .map(|(tr, s)| {
            let model = tr.model().ok_or(Error::NotReady(tr.id))?;
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let ls = &model.hyperparams().lengthscales;
            let cands = tr.candidates(cfg.candidates_for(tr.dim()), ls, cfg.perturb_dims, &mut rng)?;
            let draws = model.sample(&cands, &cfg.sampling, &mut rng)?;
            Ok((cands, draws.as_slice().to_vec()))
        })
        .collect::<Result<_>>()?;

    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (r, (_, draws)) in per_region.iter().enumerate() {
        pool.extend(draws.iter().enumerate().map(|(i, v)| (*v, r, i)));
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(pool
        .into_iter()
        .take(cfg.batch_size)
        .map(|(_, r, i)| Proposal { region: r, x: per_region[r].0.row(i).iter().copied().collect() })
        .collect())
}

struct Run<'a, F> {
    objective: &'a F,
    cfg: &'a TurboConfig,
    archive: Dataset,
    history: Vec<HistoryRecord>,
    iteration: usize,
}

impl<F> Run<'_, F>
where
    F: Fn(&[f64]) -> std::result::Result<f64, ObjectiveError> + Sync,
{
    fn remaining(&self) -> usize {
        self.cfg.max_evals.saturating_sub(self.archive.len())
    }

    fn abort(&self, source: ObjectiveError) -> Error {
        Error::Objective {
            source,
            partial: Box::new(PartialRun { archive: self.archive.clone(), history: self.history.clone() }),
        }
    }

    fn record(&mut self, obs: Observation, tr_id: Option<usize>) -> Result<()> {
        let best = self.history.last().map_or(obs.y, |h| h.best_so_far.max(obs.y));
        self.history.push(HistoryRecord {
            eval_index: self.archive.len(),
            iteration: self.iteration,
            tr_id,
            f_tilde: obs.y,
            best_so_far: best,
        });
        self.archive.push(obs)
    }

    /// Evaluates the points concurrently and appends them in order.
    fn evaluate(&mut self, points: Vec<Vec<f64>>, tr_ids: &[Option<usize>]) -> Result<Vec<Observation>> {
        let results: Vec<std::result::Result<f64, ObjectiveError>> =
            points.par_iter().map(|x| (self.objective)(x)).collect();
        let mut out = Vec::with_capacity(points.len());
        for ((x, r), tr) in points.into_iter().zip(results).zip(tr_ids) {
            let y = match r {
                Ok(y) if y.is_finite() => y,
                Ok(y) => return Err(self.abort(format!("objective returned non-finite value {y}").into())),
                Err(e) => return Err(self.abort(e)),
            };
            let obs = Observation::new(x, y);
            self.record(obs.clone(), *tr)?;
            out.push(obs);
        }
        Ok(out)
    }
}

/// Allocates each region the `per_region` archive points nearest its center.
fn nearest_points(archive: &Dataset, center: &[f64], per_region: usize) -> Result<Dataset> {
    let mut idx: Vec<(f64, usize)> = archive
        .iter()
        .enumerate()
        .map(|(i, o)| (o.x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let obs = idx.into_iter().take(per_region).map(|(_, i)| archive.observations()[i].clone()).collect();
    Dataset::from_observations(archive.dim(), obs)
}

fn initial_regions(archive: &Dataset, cfg: &TurboConfig) -> Result<Vec<TrustRegion>> {
    let n_tr = cfg.n_trust_regions.min(archive.len());
    let mut order: Vec<usize> = (0..archive.len()).collect();
    let obs = archive.observations();
    order.sort_by(|a, b| obs[*b].y.total_cmp(&obs[*a].y).then(a.cmp(b)));
    let per_region = (archive.len() / n_tr).max(1);
    order
        .into_iter()
        .take(n_tr)
        .enumerate()
        .map(|(id, i)| {
            let mut local = nearest_points(archive, &obs[i].x, per_region)?;
            if !local.iter().any(|o| o.x == obs[i].x) {
                local.push(obs[i].clone())?;
            }
            TrustRegion::new(id, local, cfg.length_init)
        })
        .collect()
}

/// Fits or re-conditions the local model of every region that lacks one.
fn refresh_models(trs: &mut [TrustRegion], cfg: &TurboConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let seeds: Vec<u64> = trs.iter().map(|_| rng.random()).collect();
    trs.par_iter_mut().zip(seeds).try_for_each(|(tr, seed)| {
        if tr.is_ready() {
            return Ok(());
        }
        let d = tr.dim();
        let refit = tr.hyperparams.is_none()
            || tr.local.len() <= cfg.refit_full_until
            || tr.batches_since_fit() >= cfg.refit_every;
        let (model, refitted) = if tr.local.len() < 2 {
            (Surrogate::new(&tr.local, &GpHyperparams::defaults(d).with_kernel(cfg.kernel))?, false)
        } else if refit {
            let h = crate::gp::fit_hyperparams(&tr.local, &cfg.fit_options(seed, tr.hyperparams.clone()))?;
            (Surrogate::new(&tr.local, &h)?, true)
        } else {
            let h = tr.hyperparams.as_ref().expect("checked above");
            (Surrogate::new(&tr.local, h)?, false)
        };
        tr.set_model(model, refitted);
        Ok(())
    })
}

/// Maximizes `objective` over `[0,1]^dim`.
///
/// With `initial = None` the first `cfg.n_initial` evaluations are a Latin
/// hypercube. The objective may be called concurrently within a batch.
pub fn optimize<F>(objective: F, dim: usize, cfg: &TurboConfig, initial: Option<Dataset>, seed: u64) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> std::result::Result<f64, ObjectiveError> + Sync,
{
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = Run { objective: &objective, cfg, archive: Dataset::new(dim), history: Vec::new(), iteration: 0 };

    match initial {
        Some(ds) => {
            if ds.dim() != dim {
                return Err(Error::invalid(format!("initial dataset has dimension {}, expected {dim}", ds.dim())));
            }
            ds.validate()?;
            for o in ds.iter() {
                run.record(o.clone(), None)?;
            }
        }
        None => {
            let n0 = cfg.n_initial.min(cfg.max_evals);
            let pts = latin_hypercube(n0, dim, &mut rng);
            run.evaluate(pts, &vec![None; n0])?;
        }
    }
    let n_initial = run.archive.len();
    if run.archive.is_empty() {
        return Err(Error::invalid("no initial observations and zero budget"));
    }

    let mut trs = if run.remaining() > 0 { initial_regions(&run.archive, cfg)? } else { Vec::new() };
    while run.remaining() > 0 {
        run.iteration += 1;
        refresh_models(&mut trs, cfg, &mut rng)?;
        let mut proposals = propose_batch(&trs, cfg, rng.random())?;
        proposals.truncate(run.remaining());
        let tr_ids: Vec<Option<usize>> = proposals.iter().map(|p| Some(trs[p.region].id)).collect();
        let regions: Vec<usize> = proposals.iter().map(|p| p.region).collect();
        let evaluated = run.evaluate(proposals.into_iter().map(|p| p.x).collect(), &tr_ids)?;

        for (r, tr) in trs.iter_mut().enumerate() {
            let batch: Vec<Observation> =
                regions.iter().zip(&evaluated).filter(|(g, _)| **g == r).map(|(_, o)| o.clone()).collect();
            if !batch.is_empty() {
                tr.record(&batch, cfg)?;
            }
        }
        for tr in trs.iter_mut() {
            if !tr.needs_restart(cfg) || run.remaining() == 0 {
                continue;
            }
            let n = (cfg.restart_points_per_dim * dim).max(1).min(run.remaining());
            let pts = latin_hypercube(n, dim, &mut rng);
            let obs = run.evaluate(pts, &vec![Some(tr.id); n])?;
            tr.restart(Dataset::from_observations(dim, obs)?, cfg)?;
        }
    }

    let best = run.archive.best().expect("archive is non-empty").clone();
    Ok(OptimizeResult {
        best_x: best.x,
        best_y: best.y,
        archive: run.archive,
        history: run.history,
        trust_regions: trs,
        n_initial,
        iterations: run.iteration,
    })
}
