//! System-level evaluation of an antenna configuration.
//!
//! Users attach to the strongest received signal; every other antenna
//! interferes at full power. Rates are Shannon rates scaled by an equal
//! round-robin time share of the serving cell, and the objective is the
//! sum of log-rates.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::antenna::{max_gain_unchecked, pattern_gain, ray_angles, PatternParams};
use crate::geometry::Point3;
use crate::propagation::{total_gain, GainProvider};
use crate::scenario::{apply_config, sample_users, ConfigVector, Scenario, User, UserDrop, UserKind};
use crate::{Error, Result};

/// Rates are floored here so that `ln` stays finite.
pub const RATE_FLOOR_BPS: f64 = 1e-3;
/// SINR below which a user is counted as in outage.
pub const OUTAGE_SINR_DB: f64 = -5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
    /// Number of user drops averaged per objective evaluation.
    pub drops_per_eval: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10.0e6,
            noise_density_dbm_hz: -174.0,
            tx_power_dbm: 46.0,
            carrier_hz: 2.0e9,
            drops_per_eval: 4,
        }
    }
}

impl SimParams {
    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_density_dbm_hz + 10.0 * self.bandwidth_hz.log10()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        if self.drops_per_eval == 0 {
            return Err(Error::invalid("drops_per_eval must be at least 1"));
        }
        Ok(())
    }
}

/// Which users contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserSet {
    GueOnly,
    #[default]
    All,
}

impl UserSet {
    pub fn includes(&self, kind: UserKind) -> bool {
        match self {
            UserSet::GueOnly => kind == UserKind::Gue,
            UserSet::All => true,
        }
    }
}

/// Per-link total gains (dB) and antenna transmit powers for one drop.
#[derive(Debug, Clone)]
pub struct LinkTable {
    pub n_users: usize,
    /// Antenna ids, column order of `gains_db`.
    pub antenna_ids: Vec<u32>,
    pub tx_power_dbm: Vec<f64>,
    /// Row-major `n_users x n_antennas`.
    pub gains_db: Vec<f64>,
}

impl LinkTable {
    pub fn n_antennas(&self) -> usize {
        self.antenna_ids.len()
    }

    pub fn row(&self, user: usize) -> &[f64] {
        let n = self.n_antennas();
        &self.gains_db[user * n..(user + 1) * n]
    }

    pub fn rss_dbm(&self, user: usize, antenna: usize) -> f64 {
        self.tx_power_dbm[antenna] + self.row(user)[antenna]
    }

    /// Serving antenna (column index) per user: strongest RSS, ties to the
    /// lowest antenna id.
    pub fn associate(&self) -> Vec<usize> {
        (0..self.n_users)
            .map(|u| {
                let mut best = 0;
                for b in 1..self.n_antennas() {
                    let (rb, rbest) = (self.rss_dbm(u, b), self.rss_dbm(u, best));
                    if rb > rbest || (rb == rbest && self.antenna_ids[b] < self.antenna_ids[best]) {
                        best = b;
                    }
                }
                best
            })
            .collect()
    }

    /// Downlink SINR (dB) of `user` served by column `serving`.
    pub fn sinr_db(&self, user: usize, serving: usize, noise_dbm: f64) -> f64 {
        let signal_dbm = self.rss_dbm(user, serving);
        let mut denom_mw = dbm_to_mw(noise_dbm);
        for b in 0..self.n_antennas() {
            if b != serving {
                denom_mw += dbm_to_mw(self.rss_dbm(user, b));
            }
        }
        signal_dbm - 10.0 * denom_mw.log10()
    }
}

#[inline]
fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Shannon rate with time share `eta`, floored at [`RATE_FLOOR_BPS`].
pub fn rate_bps(sinr_db: f64, eta: f64, bandwidth_hz: f64) -> f64 {
    let sinr = 10f64.powf(sinr_db / 10.0);
    (eta * bandwidth_hz * sinr.ln_1p() / std::f64::consts::LN_2).max(RATE_FLOOR_BPS)
}

/// Equal round-robin time share: `1 / load` of each user's serving cell.
pub fn time_shares(association: &[usize], n_antennas: usize) -> Vec<f64> {
    let mut load = vec![0usize; n_antennas];
    for &b in association {
        load[b] += 1;
    }
    association.iter().map(|&b| 1.0 / load[b] as f64).collect()
}

/// Builds the link table by querying the provider for every user/antenna pair.
pub fn link_table(drop: &UserDrop, scenario: &Scenario, provider: &dyn GainProvider) -> Result<LinkTable> {
    let mut gains = Vec::with_capacity(drop.len() * scenario.antennas.len());
    for (u, user) in drop.users.iter().enumerate() {
        for a in &scenario.antennas {
            let g = total_gain(scenario, a, &user.position, provider)
                .map_err(|e| Error::UserEvaluation { user: u, source: Box::new(e) })?;
            gains.push(g);
        }
    }
    Ok(LinkTable {
        n_users: drop.len(),
        antenna_ids: scenario.antennas.iter().map(|a| a.id).collect(),
        tx_power_dbm: scenario.antennas.iter().map(|a| a.tx_power_dbm).collect(),
        gains_db: gains,
    })
}

/// Associates every user of `drop` by received signal strength. Returns
/// `(user index, antenna id)` pairs.
pub fn associate(drop: &UserDrop, scenario: &Scenario, provider: &dyn GainProvider) -> Result<Vec<(usize, u32)>> {
    if scenario.antennas.is_empty() {
        return Err(Error::invalid("scenario has no antennas"));
    }
    let table = link_table(drop, scenario, provider)?;
    Ok(table
        .associate()
        .into_iter()
        .enumerate()
        .map(|(u, b)| (u, table.antenna_ids[b]))
        .collect())
}

/// Configuration-independent link geometry for one drop: omnidirectional
/// gains and ray angles per user/antenna pair. Computing the total gain for
/// a new configuration then needs only the antenna pattern.
#[derive(Debug, Clone)]
pub struct PreparedDrop {
    pub seed: u64,
    pub drop: UserDrop,
    n_antennas: usize,
    omni_db: Vec<f64>,
    phi_deg: Vec<f64>,
    theta_deg: Vec<f64>,
}

impl PreparedDrop {
    pub fn new(scenario: &Scenario, provider: &dyn GainProvider, drop: UserDrop, seed: u64) -> Result<Self> {
        let n = scenario.antennas.len();
        let bs: Vec<Point3> = scenario
            .antennas
            .iter()
            .map(|a| scenario.antenna_position(a))
            .collect::<Result<_>>()?;
        let cap = drop.len() * n;
        let (mut omni_db, mut phi_deg, mut theta_deg) =
            (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
        for (u, user) in drop.users.iter().enumerate() {
            let wrap = |e| Error::UserEvaluation { user: u, source: Box::new(e) };
            for (a, pos) in scenario.antennas.iter().zip(&bs) {
                let (phi, theta) = ray_angles(pos, &user.position).map_err(wrap)?;
                omni_db.push(provider.omni_gain(a.id, &user.position).map_err(wrap)?);
                phi_deg.push(phi);
                theta_deg.push(theta);
            }
        }
        Ok(Self { seed, drop, n_antennas: n, omni_db, phi_deg, theta_deg })
    }

    /// Link table for `scenario`'s current antenna settings. `scenario` must
    /// share geometry with the one this drop was prepared on.
    pub fn link_table(&self, scenario: &Scenario) -> LinkTable {
        debug_assert_eq!(scenario.antennas.len(), self.n_antennas);
        let params: Vec<(PatternParams, f64)> = scenario
            .antennas
            .iter()
            .map(|a| (PatternParams::from(a), max_gain_unchecked(a.v_hpbw_deg)))
            .collect();
        let mut gains = Vec::with_capacity(self.omni_db.len());
        for u in 0..self.drop.len() {
            for (b, (p, peak)) in params.iter().enumerate() {
                let i = u * self.n_antennas + b;
                gains.push(self.omni_db[i] + peak + pattern_gain(self.phi_deg[i], self.theta_deg[i], p));
            }
        }
        LinkTable {
            n_users: self.drop.len(),
            antenna_ids: scenario.antennas.iter().map(|a| a.id).collect(),
            tx_power_dbm: scenario.antennas.iter().map(|a| a.tx_power_dbm).collect(),
            gains_db: gains,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub drop: usize,
    pub kind: UserKind,
    pub position: Point3,
    pub serving: u32,
    pub sinr_db: f64,
    pub rate_bps: f64,
    pub time_share: f64,
    pub in_objective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: usize,
    pub rate_p10_bps: f64,
    pub rate_p50_bps: f64,
    pub sinr_p10_db: f64,
    pub sinr_p50_db: f64,
    pub outage: f64,
}

pub type KpiTable = BTreeMap<UserKind, KindStats>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sum of log-rates over objective users, averaged over drops.
    pub objective: f64,
    /// Objective users per drop, averaged over drops.
    pub n_objective_users: f64,
    /// `exp(objective / n_objective_users)`.
    pub geo_mean_rate_bps: f64,
    pub n_drops: usize,
    pub drop_seeds: Vec<u64>,
    pub population: UserSet,
    pub kpis: KpiTable,
    pub users: Vec<UserRecord>,
}

impl EvalReport {
    pub fn kpi(&self, kind: UserKind) -> Option<&KindStats> {
        self.kpis.get(&kind)
    }

    /// Per-kind sums of log-rates over objective users, averaged over drops.
    pub fn objective_by_kind(&self) -> BTreeMap<UserKind, f64> {
        let mut out = BTreeMap::new();
        for u in self.users.iter().filter(|u| u.in_objective) {
            *out.entry(u.kind).or_insert(0.0) += u.rate_bps.ln() / self.n_drops as f64;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "user_id,kind,x,y,z,serving,sinr_db,rate_bps")?;
        for u in &self.users {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                u.user_id,
                u.kind.as_str(),
                u.position.x,
                u.position.y,
                u.position.z,
                u.serving,
                u.sinr_db,
                u.rate_bps
            )?;
        }
        Ok(())
    }
}

/// Empirical percentile with linear interpolation between order statistics
/// (`p` in `[0, 1]`). `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Rate/SINR percentiles and outage fraction per user kind. Kinds with no
/// users are absent.
pub fn kpi_percentiles(users: &[UserRecord]) -> KpiTable {
    let mut out = BTreeMap::new();
    for kind in [UserKind::Gue, UserKind::Uav] {
        let mut rates: Vec<f64> = users.iter().filter(|u| u.kind == kind).map(|u| u.rate_bps).collect();
        if rates.is_empty() {
            continue;
        }
        let mut sinrs: Vec<f64> = users.iter().filter(|u| u.kind == kind).map(|u| u.sinr_db).collect();
        rates.sort_by(f64::total_cmp);
        sinrs.sort_by(f64::total_cmp);
        let outage = sinrs.iter().filter(|&&s| s < OUTAGE_SINR_DB).count() as f64 / sinrs.len() as f64;
        out.insert(
            kind,
            KindStats {
                count: rates.len(),
                rate_p10_bps: percentile(&rates, 0.1),
                rate_p50_bps: percentile(&rates, 0.5),
                sinr_p10_db: percentile(&sinrs, 0.1),
                sinr_p50_db: percentile(&sinrs, 0.5),
                outage,
            },
        );
    }
    out
}

/// Per-user outcome of one drop under a fixed link table.
fn simulate_table(table: &LinkTable, users: &[User], params: &SimParams) -> Vec<(usize, f64, f64, f64)> {
    let association = table.associate();
    let eta = time_shares(&association, table.n_antennas());
    let noise = params.noise_power_dbm();
    association
        .iter()
        .enumerate()
        .map(|(u, &b)| {
            debug_assert!(u < users.len());
            let sinr = table.sinr_db(u, b, noise);
            (b, sinr, rate_bps(sinr, eta[u], params.bandwidth_hz), eta[u])
        })
        .collect()
}

/// Evaluates `scenario` (already configured) on prepared drops and pools the
/// results into one report.
pub fn evaluate_prepared(
    scenario: &Scenario,
    drops: &[PreparedDrop],
    params: &SimParams,
    population: UserSet,
) -> Result<EvalReport> {
    if drops.is_empty() {
        return Err(Error::Evaluation("no user drops to evaluate".into()));
    }
    let mut records = Vec::new();
    let (mut objective_sum, mut n_obj_sum) = (0.0, 0usize);
    for (d, prepared) in drops.iter().enumerate() {
        let table = prepared.link_table(scenario);
        let outcome = simulate_table(&table, &prepared.drop.users, params);
        let mut f = 0.0;
        let mut n_obj = 0usize;
        for (u, ((b, sinr, rate, eta), user)) in outcome.into_iter().zip(&prepared.drop.users).enumerate() {
            let in_objective = population.includes(user.kind);
            if in_objective {
                f += rate.ln();
                n_obj += 1;
            }
            records.push(UserRecord {
                user_id: u,
                drop: d,
                kind: user.kind,
                position: user.position,
                serving: table.antenna_ids[b],
                sinr_db: sinr,
                rate_bps: rate,
                time_share: eta,
                in_objective,
            });
        }
        if n_obj == 0 {
            return Err(Error::Evaluation(format!("drop {} (seed {}) has no objective users", d, prepared.seed)));
        }
        objective_sum += f;
        n_obj_sum += n_obj;
    }
    let n = drops.len() as f64;
    let objective = objective_sum / n;
    let n_objective_users = n_obj_sum as f64 / n;
    Ok(EvalReport {
        objective,
        n_objective_users,
        geo_mean_rate_bps: (objective / n_objective_users).exp(),
        n_drops: drops.len(),
        drop_seeds: drops.iter().map(|d| d.seed).collect(),
        population,
        kpis: kpi_percentiles(&records),
        users: records,
    })
}

/// Applies `x`, draws the drop for `seed`, and returns the sum-log-rate over
/// all users together with the full report.
pub fn evaluate(
    x: &ConfigVector,
    scenario: &Scenario,
    provider: &dyn GainProvider,
    params: &SimParams,
    seed: u64,
) -> Result<(f64, EvalReport)> {
    let configured = apply_config(scenario, x)?;
    let drop = sample_users(scenario, seed)?;
    let prepared = PreparedDrop::new(scenario, provider, drop, seed)?;
    let report = evaluate_prepared(&configured, std::slice::from_ref(&prepared), params, UserSet::All)?;
    Ok((report.objective, report))
}

/// Reusable evaluator: caches prepared drops so repeated evaluations on the
/// same seeds only recompute antenna patterns. Immutable and `Sync`, so a
/// batch of configurations may be evaluated concurrently.
pub struct Evaluator {
    scenario: Scenario,
    provider: Arc<dyn GainProvider>,
    params: SimParams,
    population: UserSet,
}

impl Evaluator {
    pub fn new(scenario: Scenario, provider: Arc<dyn GainProvider>, params: SimParams, population: UserSet) -> Result<Self> {
        scenario.validate()?;
        params.validate()?;
        Ok(Self { scenario, provider, params, population })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn population(&self) -> UserSet {
        self.population
    }

    pub fn prepare(&self, seed: u64) -> Result<PreparedDrop> {
        let drop = sample_users(&self.scenario, seed)?;
        PreparedDrop::new(&self.scenario, self.provider.as_ref(), drop, seed)
    }

    pub fn prepare_all(&self, seeds: &[u64]) -> Result<Vec<PreparedDrop>> {
        seeds.iter().map(|&s| self.prepare(s)).collect()
    }

    pub fn evaluate_on(&self, x: &ConfigVector, drops: &[PreparedDrop]) -> Result<EvalReport> {
        let configured = apply_config(&self.scenario, x)?;
        evaluate_prepared(&configured, drops, &self.params, self.population)
    }

    pub fn evaluate_seeds(&self, x: &ConfigVector, seeds: &[u64]) -> Result<EvalReport> {
        let drops = self.prepare_all(seeds)?;
        self.evaluate_on(x, &drops)
    }
}
