//! Trust-region state: the hyperrectangle around a local incumbent, its
//! success/failure resizing rule and its local GP.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::ScrambledSobol;
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpHyperparams, Observation, Surrogate};
use crate::optimizer::TurboConfig;

/// Per-dimension side lengths `L_i = lambda_i * L / geomean(lambda)`, before
/// clipping to the unit cube.
pub fn tr_side_lengths(length: f64, lengthscales: &[f64]) -> Result<Vec<f64>> {
    if lengthscales.is_empty() {
        return Err(Error::invalid("no lengthscales given"));
    }
    if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
    }
    let logs: Vec<f64> = lengthscales.iter().map(|l| (l / lengthscales[0]).ln()).collect();
    let log_geomean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.iter().map(|l| length * (l - log_geomean).exp()).collect())
}

/// Outcome of feeding one batch result to [`TrustRegion::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resize {
    None,
    Expanded,
    Shrunk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustRegion {
    pub id: usize,
    pub center: Vec<f64>,
    pub length: f64,
    pub success_count: u32,
    pub fail_count: u32,
    pub best_value: f64,
    pub local: Dataset,
    pub restarts: u32,
    /// Standardized-space hyperparameters of the most recent fit.
    pub hyperparams: Option<GpHyperparams>,
    #[serde(skip)]
    model: Option<Surrogate>,
    #[serde(skip)]
    batches_since_fit: usize,
}

impl TrustRegion {
    pub fn new(id: usize, local: Dataset, length: f64) -> Result<Self> {
        let best = local
            .best()
            .ok_or_else(|| Error::invalid("trust region needs at least one local observation"))?
            .clone();
        Ok(Self {
            id,
            center: best.x,
            length,
            success_count: 0,
            fail_count: 0,
            best_value: best.y,
            local,
            restarts: 0,
            hyperparams: None,
            model: None,
            batches_since_fit: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.local.dim()
    }

    pub fn is_ready(&self) -> bool {
        self.model.is_some()
    }

    pub fn model(&self) -> Option<&Surrogate> {
        self.model.as_ref()
    }

    /// Installs a model. `refitted` marks freshly fitted hyperparameters as
    /// opposed to re-conditioning with the previous ones.
    pub fn set_model(&mut self, model: Surrogate, refitted: bool) {
        if refitted {
            self.hyperparams = Some(model.hyperparams().clone());
            self.batches_since_fit = 0;
        }
        self.model = Some(model);
    }

    /// Batches absorbed since the hyperparameters were last fitted.
    pub fn batches_since_fit(&self) -> usize {
        self.batches_since_fit
    }

    /// Lower and upper corners of the region, clipped to `[0,1]^d`.
    pub fn bounds(&self, lengthscales: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if lengthscales.len() != self.dim() {
            return Err(Error::invalid("lengthscale count does not match dimension"));
        }
        let sides = tr_side_lengths(self.length, lengthscales)?;
        let lb = self.center.iter().zip(&sides).map(|(c, s)| (c - s / 2.0).clamp(0.0, 1.0)).collect();
        let ub = self.center.iter().zip(&sides).map(|(c, s)| (c + s / 2.0).clamp(0.0, 1.0)).collect();
        Ok((lb, ub))
    }

    /// Success/failure bookkeeping for one batch whose best value is
    /// `batch_best`.
    pub fn update(&mut self, batch_best: f64, cfg: &TurboConfig) -> Resize {
        if batch_best > self.best_value {
            self.best_value = batch_best;
            self.success_count += 1;
            self.fail_count = 0;
        } else {
            self.fail_count += 1;
            self.success_count = 0;
        }
        if self.success_count >= cfg.succ_tolerance {
            self.length = (2.0 * self.length).min(cfg.length_max);
            self.success_count = 0;
            self.fail_count = 0;
            Resize::Expanded
        } else if self.fail_count >= cfg.fail_tolerance {
            self.length /= 2.0;
            self.success_count = 0;
            self.fail_count = 0;
            Resize::Shrunk
        } else {
            Resize::None
        }
    }

    /// Appends evaluated batch members to the local data, moves the center
    /// on improvement and applies [`TrustRegion::update`]. The model is
    /// dropped and must be rebuilt before the next proposal.
    pub fn record(&mut self, batch: &[Observation], cfg: &TurboConfig) -> Result<Resize> {
        let Some(best) = batch.iter().reduce(|a, b| if b.y > a.y { b } else { a }) else {
            return Err(Error::invalid("empty batch"));
        };
        for o in batch {
            self.local.push(o.clone())?;
        }
        if best.y > self.best_value {
            self.center = best.x.clone();
        }
        self.model = None;
        self.batches_since_fit += 1;
        Ok(self.update(best.y, cfg))
    }

    pub fn needs_restart(&self, cfg: &TurboConfig) -> bool {
        self.length < cfg.length_min
    }

    /// Replaces the region with a fresh one built on `local`.
    pub fn restart(&mut self, local: Dataset, cfg: &TurboConfig) -> Result<()> {
        let mut fresh = TrustRegion::new(self.id, local, cfg.length_init)?;
        fresh.restarts = self.restarts + 1;
        *self = fresh;
        Ok(())
    }

    /// `n` candidates inside the region: scrambled Sobol points that replace
    /// a random subset of the center's coordinates, each coordinate chosen
    /// with probability `min(1, perturb_dims / d)` and at least one per
    /// candidate. One candidate per row.
    pub fn candidates<R: Rng + ?Sized>(
        &self,
        n: usize,
        lengthscales: &[f64],
        perturb_dims: f64,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let (lb, ub) = self.bounds(lengthscales)?;
        let prob = (perturb_dims / d as f64).min(1.0);
        let mut seq = ScrambledSobol::new(d, rng.random());
        let mut point = vec![0.0; d];
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            if !seq.fill_next(&mut point) {
                point.iter_mut().for_each(|p| *p = rng.random());
            }
            let mut mask: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < prob).collect();
            if !mask.iter().any(|m| *m) {
                mask[rng.random_range(0..d)] = true;
            }
            for j in 0..d {
                out[(i, j)] = if mask[j] { lb[j] + (ub[j] - lb[j]) * point[j] } else { self.center[j] };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TurboConfig {
        TurboConfig::default()
    }

    fn region(d: usize) -> TrustRegion {
        let local = Dataset::from_observations(d, vec![Observation::new(vec![0.5; d], 0.0)]).unwrap();
        TrustRegion::new(0, local, 0.8).unwrap()
    }

    #[test]
    fn equal_lengthscales_keep_base_length() {
        let s = tr_side_lengths(0.8, &[0.3; 7]).unwrap();
        assert!(s.iter().all(|v| *v == 0.8), "{s:?}");
    }

    #[test]
    fn worked_side_length_example() {
        let s = tr_side_lengths(0.8, &[1.0, 4.0]).unwrap();
        assert!((s[0] - 0.4).abs() < 1e-12 && (s[1] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn side_lengths_reject_nonpositive() {
        assert!(tr_side_lengths(0.8, &[1.0, 0.0]).is_err());
        assert!(tr_side_lengths(0.8, &[-1.0]).is_err());
    }

    #[test]
    fn doubling_after_three_successes() {
        let mut tr = region(2);
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            let r = tr.update(v, &cfg());
            assert_eq!(r, if i == 2 { Resize::Expanded } else { Resize::None });
        }
        assert_eq!(tr.length, 1.6);
        assert_eq!((tr.success_count, tr.fail_count), (0, 0));
        for v in [4.0, 5.0, 6.0] {
            tr.update(v, &cfg());
        }
        assert_eq!(tr.length, 1.6);
    }

    #[test]
    fn halving_after_fifteen_failures() {
        let mut tr = region(2);
        for _ in 0..14 {
            assert_eq!(tr.update(-1.0, &cfg()), Resize::None);
        }
        assert_eq!(tr.length, 0.8);
        assert_eq!(tr.update(0.0, &cfg()), Resize::Shrunk);
        assert_eq!(tr.length, 0.4);
        assert_eq!((tr.success_count, tr.fail_count), (0, 0));
    }

    #[test]
    fn failure_breaks_success_streak() {
        let mut tr = region(2);
        tr.update(1.0, &cfg());
        tr.update(2.0, &cfg());
        tr.update(1.5, &cfg());
        assert_eq!((tr.success_count, tr.fail_count), (0, 1));
        assert_eq!(tr.length, 0.8);
    }

    #[test]
    fn restart_threshold_is_strict() {
        let mut tr = region(3);
        tr.length = 2f64.powi(-7);
        assert!(!tr.needs_restart(&cfg()));
        tr.length = 2f64.powi(-8);
        assert!(tr.needs_restart(&cfg()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = crate::design::latin_hypercube(6, 3, &mut rng);
        let local = Dataset::from_observations(3, pts.into_iter().enumerate().map(|(i, x)| Observation::new(x, i as f64)).collect()).unwrap();
        tr.restart(local, &cfg()).unwrap();
        assert_eq!(tr.length, 0.8);
        assert_eq!(tr.local.len(), 6);
        assert_eq!(tr.best_value, 5.0);
        assert_eq!(tr.restarts, 1);
    }

    #[test]
    fn record_moves_center_on_improvement() {
        let mut tr = region(2);
        tr.record(&[Observation::new(vec![0.1, 0.1], -1.0)], &cfg()).unwrap();
        assert_eq!(tr.center, vec![0.5, 0.5]);
        tr.record(&[Observation::new(vec![0.2, 0.3], 2.0), Observation::new(vec![0.9, 0.9], 1.0)], &cfg()).unwrap();
        assert_eq!(tr.center, vec![0.2, 0.3]);
        assert_eq!(tr.best_value, 2.0);
        assert_eq!(tr.local.len(), 4);
    }

    #[test]
    fn candidates_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tr = region(30);
        tr.center = (0..30).map(|i| i as f64 / 29.0).collect();
        tr.length = 0.3;
        let ls: Vec<f64> = (0..30).map(|i| 0.1 + i as f64 * 0.05).collect();
        let (lb, ub) = tr.bounds(&ls).unwrap();
        let c = tr.candidates(500, &ls, 20.0, &mut rng).unwrap();
        for row in c.row_iter() {
            let moved = row.iter().zip(&tr.center).filter(|(a, b)| *a != *b).count();
            assert!(moved >= 1);
            for j in 0..30 {
                assert!(row[j] >= lb[j] && row[j] <= ub[j]);
            }
        }
    }
}
