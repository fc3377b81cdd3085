//! Gaussian-process regression on `[0,1]^d` with a constant prior mean and an
//! ARD stationary kernel.
//!
//! [`GpPosterior`] is the exact conditional for fixed hyperparameters in raw
//! target units. [`Surrogate`] wraps it with per-fit target standardization,
//! which is what the optimizer uses; its hyperparameters live in standardized
//! space where the prior mean is 0.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (5e-3, 2e3);
pub const SIGNAL_VAR_BOUNDS: (f64, f64) = (1e-2, 1e2);
pub const NOISE_VAR_BOUNDS: (f64, f64) = (1e-8, 1.0);
pub const DEFAULT_LENGTHSCALE: f64 = 0.5;
pub const DEFAULT_SIGNAL_VAR: f64 = 1.0;
pub const DEFAULT_NOISE_VAR: f64 = 1e-4;

/// Diagonal jitter tried in order, relative to the signal variance.
pub const JITTER_LEVELS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

const MATERN_NU: f64 = 2.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Matern52,
    Rbf,
}

impl KernelKind {
    #[inline]
    fn eval_r2(self, signal_var: f64, r2: f64) -> f64 {
        match self {
            KernelKind::Matern52 => {
                let a = (5.0 * r2).sqrt();
                signal_var * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            KernelKind::Rbf => signal_var * (-0.5 * r2).exp(),
        }
    }

    /// `g(r)` such that `dk / d log(lambda_i) = g(r) * (delta_i / lambda_i)^2`.
    #[inline]
    fn lengthscale_factor(self, signal_var: f64, r2: f64) -> f64 {
        match self {
            KernelKind::Matern52 => {
                let a = (5.0 * r2).sqrt();
                signal_var * (5.0 / 3.0) * (1.0 + a) * (-a).exp()
            }
            KernelKind::Rbf => signal_var * (-0.5 * r2).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub mean: f64,
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    #[serde(default)]
    pub kernel: KernelKind,
}

impl GpHyperparams {
    pub fn defaults(dim: usize) -> Self {
        Self {
            mean: 0.0,
            signal_var: DEFAULT_SIGNAL_VAR,
            lengthscales: vec![DEFAULT_LENGTHSCALE; dim],
            noise_var: DEFAULT_NOISE_VAR,
            kernel: KernelKind::Matern52,
        }
    }

    pub fn with_kernel(mut self, kernel: KernelKind) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::invalid("prior mean must be finite"));
        }
        if !(self.signal_var > 0.0 && self.signal_var.is_finite()) {
            return Err(Error::invalid(format!("signal variance must be positive, got {}", self.signal_var)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be non-negative, got {}", self.noise_var)));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
        }
        Ok(())
    }

    fn to_log_params(&self) -> Vec<f64> {
        let mut theta: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        theta.push(self.signal_var.ln());
        theta.push(self.noise_var.max(NOISE_VAR_BOUNDS.0).ln());
        theta
    }

    fn from_log_params(theta: &[f64], kernel: KernelKind) -> Self {
        let d = theta.len() - 2;
        Self {
            mean: 0.0,
            signal_var: theta[d].exp(),
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            noise_var: theta[d + 1].exp(),
            kernel,
        }
    }
}

/// Kernel value between two points.
///
/// # Panics
/// If the point dimensions disagree with the hyperparameters.
pub fn kernel(x: &[f64], x2: &[f64], h: &GpHyperparams) -> f64 {
    assert_eq!(x.len(), h.dim(), "point dimension mismatch");
    assert_eq!(x2.len(), h.dim(), "point dimension mismatch");
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&h.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    h.kernel.eval_r2(h.signal_var, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, observations: Vec::new() }
    }

    pub fn from_observations(dim: usize, observations: Vec<Observation>) -> Result<Self> {
        let mut ds = Self::new(dim);
        for o in observations {
            ds.push(o)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        Self::check(self.dim, &obs)?;
        self.observations.push(obs);
        Ok(())
    }

    fn check(dim: usize, obs: &Observation) -> Result<()> {
        if obs.x.len() != dim {
            return Err(Error::invalid(format!("observation has dimension {}, expected {dim}", obs.x.len())));
        }
        if let Some(v) = obs.x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("coordinate {v} outside [0, 1]")));
        }
        if !obs.y.is_finite() {
            return Err(Error::invalid("observation target must be finite"));
        }
        Ok(())
    }

    /// Re-checks every observation, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.observations.iter().try_for_each(|o| Self::check(self.dim, o))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    /// Index of the first maximum of `y`.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.observations.iter().enumerate() {
            if best.is_none_or(|b| o.y > self.observations[b].y) {
                best = Some(i);
            }
        }
        best
    }

    pub fn best(&self) -> Option<&Observation> {
        self.argmax().map(|i| &self.observations[i])
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim, |i, j| self.observations[i].x[j])
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.y))
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;
    fn into_iter(self) -> Self::IntoIter {
        self.observations.iter()
    }
}

/// Rows of `x` divided elementwise by the lengthscales.
fn scaled(x: &DMatrix<f64>, lengthscales: &[f64]) -> DMatrix<f64> {
    let mut z = x.clone();
    for (j, l) in lengthscales.iter().enumerate() {
        z.column_mut(j).unscale_mut(*l);
    }
    z
}

fn sym_sq_dists(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    // one contiguous column per point
    let zt = z.transpose();
    let mut r2 = DMatrix::zeros(n, n);
    for a in 0..n {
        let pa = zt.column(a);
        for b in (a + 1)..n {
            let s: f64 = pa.iter().zip(zt.column(b).iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            r2[(a, b)] = s;
            r2[(b, a)] = s;
        }
    }
    r2
}

/// Gram-identity variant of [`sym_sq_dists`]; faster for large inputs at the
/// cost of some cancellation error.
fn sym_sq_dists_fast(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let q: Vec<f64> = z.row_iter().map(|r| r.norm_squared()).collect();
    let mut r2 = z * z.transpose();
    for b in 0..n {
        for a in 0..n {
            r2[(a, b)] = if a == b { 0.0 } else { (q[a] + q[b] - 2.0 * r2[(a, b)]).max(0.0) };
        }
    }
    r2
}

/// Inverse of an SPD matrix from its Cholesky factor, via an explicit
/// triangular inverse and one matrix product.
fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let l = chol.l_dirty();
    let n = l.nrows();
    let mut x = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut col = x.column_mut(j);
        col[j] = 1.0;
        for k in j..n {
            let xk = col[k] / l[(k, k)];
            col[k] = xk;
            if xk != 0.0 {
                let lk = l.column(k);
                for i in (k + 1)..n {
                    col[i] -= lk[i] * xk;
                }
            }
        }
    }
    x.transpose() * x
}

/// Squared scaled distances between rows of `za` (m) and `zb` (n), m x n.
fn cross_sq_dists(za: &DMatrix<f64>, zb: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = za.shape();
    let n = zb.nrows();
    if m * n * d < 200_000 {
        return DMatrix::from_fn(m, n, |a, b| {
            (0..d).map(|j| (za[(a, j)] - zb[(b, j)]).powi(2)).sum()
        });
    }
    let qa: Vec<f64> = za.row_iter().map(|r| r.norm_squared()).collect();
    let qb: Vec<f64> = zb.row_iter().map(|r| r.norm_squared()).collect();
    let mut r2 = za * zb.transpose();
    for b in 0..n {
        for a in 0..m {
            let v = qa[a] + qb[b] - 2.0 * r2[(a, b)];
            r2[(a, b)] = v.max(0.0);
        }
    }
    r2
}

/// Cholesky factor of `k + jitter * scale * I`, escalating jitter until the
/// factorization succeeds.
fn factor_with_jitter(k: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularModel { jitter: 0.0 });
    }
    let n = k.nrows();
    for level in JITTER_LEVELS {
        let jitter = level * scale;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
    }
    Err(Error::SingularModel { jitter: JITTER_LEVELS[JITTER_LEVELS.len() - 1] * scale })
}

/// Exact GP conditional for fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    hyper: GpHyperparams,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    residual: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    pub fn new(dataset: &Dataset, h: &GpHyperparams) -> Result<Self> {
        Self::from_parts(dataset.x_matrix(), dataset.y_vector(), h)
    }

    /// `x` holds one observation per row.
    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>, h: &GpHyperparams) -> Result<Self> {
        h.validate()?;
        if x.nrows() == 0 {
            return Err(Error::invalid("posterior requires at least one observation"));
        }
        if x.ncols() != h.dim() || y.len() != x.nrows() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {}x{} inputs, {} targets, {} lengthscales",
                x.nrows(),
                x.ncols(),
                y.len(),
                h.dim()
            )));
        }
        let z = scaled(&x, &h.lengthscales);
        let mut k = sym_sq_dists(&z).map(|r2| h.kernel.eval_r2(h.signal_var, r2));
        for i in 0..k.nrows() {
            k[(i, i)] += h.noise_var;
        }
        let (chol, jitter) = factor_with_jitter(&k, h.signal_var)?;
        let residual = y.add_scalar(-h.mean);
        let alpha = chol.solve(&residual);
        Ok(Self { hyper: h.clone(), x, z, residual, chol, alpha, jitter })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn n_observations(&self) -> usize {
        self.x.nrows()
    }

    /// Diagonal jitter the factorization needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross_cov(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let zs = scaled(xs, &self.hyper.lengthscales);
        let (kind, s2) = (self.hyper.kernel, self.hyper.signal_var);
        cross_sq_dists(&zs, &self.z).map(|r2| kind.eval_r2(s2, r2))
    }

    fn check_queries(&self, xs: &DMatrix<f64>) -> Result<()> {
        if xs.ncols() != self.hyper.dim() {
            return Err(Error::invalid(format!(
                "query dimension {} does not match model dimension {}",
                xs.ncols(),
                self.hyper.dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let xs = DMatrix::from_row_slice(1, x.len(), x);
        let (m, v) = self.predict_batch(&xs)?;
        Ok((m[0], v[0]))
    }

    /// Posterior means and variances at each row of `xs`.
    pub fn predict_batch(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_queries(xs)?;
        let ks = self.cross_cov(xs);
        let mean = (&ks * &self.alpha).add_scalar(self.hyper.mean);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks.transpose())
            .ok_or(Error::SingularModel { jitter: self.jitter })?;
        let var = DVector::from_iterator(
            xs.nrows(),
            v.column_iter().map(|c| (self.hyper.signal_var - c.norm_squared()).max(0.0)),
        );
        Ok((mean, var))
    }

    /// Joint posterior mean and covariance over the rows of `xs`.
    pub fn joint(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_queries(xs)?;
        let ks = self.cross_cov(xs);
        let mean = (&ks * &self.alpha).add_scalar(self.hyper.mean);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks.transpose())
            .ok_or(Error::SingularModel { jitter: self.jitter })?;
        let zs = scaled(xs, &self.hyper.lengthscales);
        let prior = sym_sq_dists(&zs).map(|r2| self.hyper.kernel.eval_r2(self.hyper.signal_var, r2));
        let mut cov = prior - v.transpose() * &v;
        cov.fill_lower_triangle_with_upper_triangle();
        Ok((mean, cov))
    }

    /// One draw from the joint posterior over the rows of `xs`. Falls back to
    /// independent marginal draws when the covariance cannot be factorized.
    pub fn sample_joint<R: Rng + ?Sized>(&self, xs: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let (mean, cov) = self.joint(xs)?;
        let m = mean.len();
        let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        match factor_with_jitter(&cov, self.hyper.signal_var) {
            Ok((chol, _)) => Ok(mean + chol.l() * eps),
            Err(_) => Ok(DVector::from_fn(m, |i, _| mean[i] + cov[(i, i)].max(0.0).sqrt() * eps[i])),
        }
    }

    /// Approximate posterior draw via a random-Fourier-feature prior sample
    /// corrected by the data (pathwise conditioning). Cost is linear in the
    /// number of query rows.
    pub fn sample_pathwise<R: Rng + ?Sized>(
        &self,
        xs: &DMatrix<f64>,
        n_features: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        self.check_queries(xs)?;
        if n_features == 0 {
            return Err(Error::invalid("pathwise sampling needs at least one feature"));
        }
        let prior = FourierPrior::draw(&self.hyper, n_features, rng);
        let f_data = prior.eval(&self.x);
        let noise_sd = (self.hyper.noise_var + self.jitter).sqrt();
        let target = DVector::from_fn(self.residual.len(), |i, _| {
            self.residual[i] - f_data[i] - noise_sd * rng.sample::<f64, _>(StandardNormal)
        });
        let v = self.chol.solve(&target);
        let ks = self.cross_cov(xs);
        Ok((prior.eval(xs) + ks * v).add_scalar(self.hyper.mean))
    }
}

/// Random Fourier feature draw from the GP prior (zero mean).
#[derive(Debug, Clone)]
pub struct FourierPrior {
    /// d x M frequencies.
    omega: DMatrix<f64>,
    phase: DVector<f64>,
    /// Feature weights already scaled by `sqrt(2 s^2 / M)`.
    weights: DVector<f64>,
}

impl FourierPrior {
    pub fn draw<R: Rng + ?Sized>(h: &GpHyperparams, n_features: usize, rng: &mut R) -> Self {
        let d = h.dim();
        let gamma = Gamma::new(MATERN_NU, 1.0).expect("valid gamma parameters");
        let mut omega = DMatrix::zeros(d, n_features);
        for m in 0..n_features {
            let scale = match h.kernel {
                KernelKind::Matern52 => (MATERN_NU / gamma.sample(rng)).sqrt(),
                KernelKind::Rbf => 1.0,
            };
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                omega[(j, m)] = z * scale / h.lengthscales[j];
            }
        }
        let phase = DVector::from_fn(n_features, |_, _| rng.random::<f64>() * std::f64::consts::TAU);
        let amp = (2.0 * h.signal_var / n_features as f64).sqrt();
        let weights = DVector::from_fn(n_features, |_, _| amp * rng.sample::<f64, _>(StandardNormal));
        Self { omega, phase, weights }
    }

    /// Sample-path values at each row of `xs`.
    pub fn eval(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        let mut proj = xs * &self.omega;
        for (m, mut col) in proj.column_iter_mut().enumerate() {
            let b = self.phase[m];
            col.apply(|v| *v = (*v + b).cos());
        }
        proj * &self.weights
    }

    /// Frequency vectors, one per column.
    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.omega
    }
}

/// Posterior mean and variance at one query point.
pub fn posterior(dataset: &Dataset, h: &GpHyperparams, x_query: &[f64]) -> Result<(f64, f64)> {
    GpPosterior::new(dataset, h)?.predict(x_query)
}

/// Index of the argmax of one joint posterior draw over `candidates`.
pub fn thompson_sample(dataset: &Dataset, h: &GpHyperparams, candidates: &[Vec<f64>], seed: u64) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("thompson sampling needs at least one candidate"));
    }
    let post = GpPosterior::new(dataset, h)?;
    let xs = rows_to_matrix(candidates, h.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = post.sample_joint(&xs, &mut rng)?;
    Ok(argmax(draw.as_slice()))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::invalid(format!("point has dimension {}, expected {dim}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// Log marginal likelihood of targets `y` (raw units, prior mean `h.mean`).
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, h: &GpHyperparams) -> Result<f64> {
    h.validate()?;
    let resid = y.add_scalar(-h.mean);
    Ok(lml_and_grad(x, &resid, h, false)?.0)
}

/// Returns the LML and, if requested, its gradient with respect to
/// `(log lambda_1..d, log s^2, log sigma^2)`.
fn lml_and_grad(x: &DMatrix<f64>, y: &DVector<f64>, h: &GpHyperparams, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let n = x.nrows();
    let d = x.ncols();
    let (kind, s2) = (h.kernel, h.signal_var);
    let z = scaled(x, &h.lengthscales);
    let r2 = if n * n * d > 200_000 { sym_sq_dists_fast(&z) } else { sym_sq_dists(&z) };
    let kf = r2.map(|v| kind.eval_r2(s2, v));
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += h.noise_var;
    }
    let (chol, _) = factor_with_jitter(&k, s2)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * std::f64::consts::TAU.ln();
    if !lml.is_finite() {
        return Err(Error::SingularModel { jitter: 0.0 });
    }
    if !want_grad {
        return Ok((lml, Vec::new()));
    }

    let mut w = &alpha * alpha.transpose() - spd_inverse(&chol);
    w.fill_lower_triangle_with_upper_triangle();
    let mut m = r2.map(|v| kind.lengthscale_factor(s2, v));
    m.component_mul_assign(&w);
    let mz = &m * &z;
    let mut grad = vec![0.0; d + 2];
    for a in 0..n {
        let rs: f64 = m.row(a).sum();
        for (j, g) in grad.iter_mut().take(d).enumerate() {
            let za = z[(a, j)];
            *g += za * (za * rs - mz[(a, j)]);
        }
    }
    grad[d] = 0.5 * w.component_mul(&kf).sum();
    grad[d + 1] = 0.5 * h.noise_var * w.trace();
    Ok((lml, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub kernel: KernelKind,
    /// Total optimizer starts: the first from the warm start (or defaults),
    /// the rest random.
    pub starts: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    /// Early stop once the best LML improves by less than this (per
    /// observation) over `patience` steps.
    pub tolerance: f64,
    pub patience: usize,
    pub seed: u64,
    pub warm_start: Option<GpHyperparams>,
    /// Search box for the lengthscales, intersected with [`LENGTHSCALE_BOUNDS`].
    pub lengthscale_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Matern52,
            starts: 3,
            max_steps: 200,
            learning_rate: 0.1,
            tolerance: 1e-4,
            patience: 10,
            seed: 0,
            warm_start: None,
            lengthscale_bounds: LENGTHSCALE_BOUNDS,
        }
    }
}

/// Per-fit target standardization `(y - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn of(y: &DVector<f64>) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
        Self { mean, std: if degenerate { 1.0 } else { std } }
    }

    fn is_degenerate(y: &DVector<f64>) -> bool {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        !(var.sqrt() > 1e-12 * mean.abs().max(1.0))
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.mean) / self.std)
    }
}

fn clamp_log_params(theta: &mut [f64], lengthscale_bounds: (f64, f64)) {
    let d = theta.len() - 2;
    let llo = lengthscale_bounds.0.max(LENGTHSCALE_BOUNDS.0).ln();
    let lhi = lengthscale_bounds.1.min(LENGTHSCALE_BOUNDS.1).ln().max(llo);
    for t in theta.iter_mut().take(d) {
        *t = t.clamp(llo, lhi);
    }
    theta[d] = theta[d].clamp(SIGNAL_VAR_BOUNDS.0.ln(), SIGNAL_VAR_BOUNDS.1.ln());
    theta[d + 1] = theta[d + 1].clamp(NOISE_VAR_BOUNDS.0.ln(), NOISE_VAR_BOUNDS.1.ln());
}

/// Projected Adam ascent on the LML from one start. Returns the best point
/// visited and its LML.
fn adam_ascent(x: &DMatrix<f64>, y: &DVector<f64>, start: Vec<f64>, kernel: KernelKind, opts: &FitOptions) -> Option<(Vec<f64>, f64)> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let p = start.len();
    let mut theta = start;
    clamp_log_params(&mut theta, opts.lengthscale_bounds);
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stale = 0;
    let tol = opts.tolerance * x.nrows() as f64;
    for step in 0..=opts.max_steps {
        let h = GpHyperparams::from_log_params(&theta, kernel);
        let Ok((lml, grad)) = lml_and_grad(x, y, &h, step < opts.max_steps) else {
            break;
        };
        match &best {
            Some((_, b)) if lml <= b + tol => stale += 1,
            _ => stale = 0,
        }
        if best.as_ref().is_none_or(|(_, b)| lml > *b) {
            best = Some((theta.clone(), lml));
        }
        if step == opts.max_steps || stale >= opts.patience || grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let t = (step + 1) as i32;
        for i in 0..p {
            m1[i] = B1 * m1[i] + (1.0 - B1) * grad[i];
            m2[i] = B2 * m2[i] + (1.0 - B2) * grad[i] * grad[i];
            let mh = m1[i] / (1.0 - B1.powi(t));
            let vh = m2[i] / (1.0 - B2.powi(t));
            theta[i] += opts.learning_rate * mh / (vh.sqrt() + EPS);
        }
        clamp_log_params(&mut theta, opts.lengthscale_bounds);
    }
    best
}

/// Maximizes the log marginal likelihood of the standardized targets. The
/// returned hyperparameters are in standardized space (mean 0).
pub fn fit_hyperparams(dataset: &Dataset, opts: &FitOptions) -> Result<GpHyperparams> {
    if dataset.len() < 2 {
        return Err(Error::invalid("hyperparameter fitting needs at least two observations"));
    }
    let d = dataset.dim();
    let defaults = GpHyperparams::defaults(d).with_kernel(opts.kernel);
    let y_raw = dataset.y_vector();
    if Standardization::is_degenerate(&y_raw) {
        return Ok(defaults);
    }
    let x = dataset.x_matrix();
    let y = Standardization::of(&y_raw).apply(&y_raw);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut default_theta = defaults.to_log_params();
    clamp_log_params(&mut default_theta, opts.lengthscale_bounds);
    let mut best: Option<(Vec<f64>, f64)> =
        lml_and_grad(&x, &y, &GpHyperparams::from_log_params(&default_theta, opts.kernel), false)
            .ok()
            .map(|(l, _)| (default_theta, l));
    let first = match &opts.warm_start {
        Some(w) if w.dim() == d && w.validate().is_ok() => w.to_log_params(),
        _ => defaults.to_log_params(),
    };
    for s in 0..opts.starts.max(1) {
        let start = if s == 0 {
            first.clone()
        } else {
            let mut t: Vec<f64> = (0..d).map(|_| rng.random_range(0.1f64.ln()..2.0f64.ln())).collect();
            t.push(rng.random_range(0.5f64.ln()..2.0f64.ln()));
            t.push(rng.random_range(1e-6f64.ln()..1e-1f64.ln()));
            t
        };
        if let Some((theta, lml)) = adam_ascent(&x, &y, start, opts.kernel, opts) {
            if best.as_ref().is_none_or(|(_, b)| lml > *b) {
                best = Some((theta, lml));
            }
        }
    }
    Ok(best.map(|(t, _)| GpHyperparams::from_log_params(&t, opts.kernel)).unwrap_or(defaults))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    /// Candidate sets up to this size are sampled from the exact joint
    /// posterior; larger sets use pathwise sampling.
    pub exact_limit: usize,
    pub fourier_features: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { exact_limit: 300, fourier_features: 1024 }
    }
}

/// Serializable model state: the data and standardized-space hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dataset: Dataset,
    pub hyperparams: GpHyperparams,
}

/// GP on standardized targets, reporting in original units.
#[derive(Debug, Clone)]
pub struct Surrogate {
    standardization: Standardization,
    posterior: GpPosterior,
}

impl Surrogate {
    /// Conditions on `dataset` with fixed standardized-space hyperparameters.
    pub fn new(dataset: &Dataset, h: &GpHyperparams) -> Result<Self> {
        let y_raw = dataset.y_vector();
        let standardization = Standardization::of(&y_raw);
        let mut h = h.clone();
        h.mean = 0.0;
        let posterior = GpPosterior::from_parts(dataset.x_matrix(), standardization.apply(&y_raw), &h)?;
        Ok(Self { standardization, posterior })
    }

    pub fn fit(dataset: &Dataset, opts: &FitOptions) -> Result<Self> {
        let h = fit_hyperparams(dataset, opts)?;
        Self::new(dataset, &h)
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        state.dataset.validate()?;
        Self::new(&state.dataset, &state.hyperparams)
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        self.posterior.hyperparams()
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn posterior(&self) -> &GpPosterior {
        &self.posterior
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.posterior.predict(x)?;
        let s = self.standardization;
        Ok((s.mean + s.std * m, s.std * s.std * v))
    }

    /// One posterior draw over the rows of `xs`, in original units.
    pub fn sample<R: Rng + ?Sized>(&self, xs: &DMatrix<f64>, opts: &SamplingOptions, rng: &mut R) -> Result<DVector<f64>> {
        let draw = if xs.nrows() <= opts.exact_limit {
            self.posterior.sample_joint(xs, rng)?
        } else {
            self.posterior.sample_pathwise(xs, opts.fourier_features, rng)?
        };
        let s = self.standardization;
        Ok(draw.map(|v| s.mean + s.std * v))
    }
}
