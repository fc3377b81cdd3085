//! Deployment geometry, synthetic deployments and seeded user drops.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Rect};
use crate::{Error, Result};

/// Horizontal half-power beamwidth shared by every sector, degrees.
pub const H_HPBW_DEG: f64 = 65.0;
/// Height of ground users, meters.
pub const GUE_HEIGHT_M: f64 = 1.5;

pub const TILT_RANGE_DEG: (f64, f64) = (-90.0, 90.0);
pub const V_HPBW_MAX_DEG: f64 = 360.0;

pub const DEFAULT_GUE_DENSITY: f64 = 10.0;
pub const DEFAULT_UAV_PER_CORRIDOR: f64 = 70.0;
pub const DEFAULT_TX_POWER_DBM: f64 = 46.0;

pub const BASELINE_TILT_DEG: f64 = -12.0;
pub const BASELINE_V_HPBW_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: u32,
    #[serde(flatten)]
    pub position: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorAntenna {
    pub id: u32,
    pub site_id: u32,
    pub bearing_deg: f64,
    pub tilt_deg: f64,
    pub v_hpbw_deg: f64,
    pub tx_power_dbm: f64,
}

impl SectorAntenna {
    pub fn h_hpbw_deg(&self) -> f64 {
        H_HPBW_DEG
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    #[serde(flatten)]
    pub footprint: Rect,
    pub height: f64,
}

/// A straight aerial corridor: a horizontal axis segment swept by `width`
/// and extruded between two altitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub ax0: f64,
    pub ay0: f64,
    pub ax1: f64,
    pub ay1: f64,
    pub width: f64,
    pub hmin: f64,
    pub hmax: f64,
}

impl Corridor {
    pub fn length(&self) -> f64 {
        (self.ax1 - self.ax0).hypot(self.ay1 - self.ay0)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let len = self.length();
        if len == 0.0 || p.z < self.hmin || p.z > self.hmax {
            return false;
        }
        let (ux, uy) = ((self.ax1 - self.ax0) / len, (self.ay1 - self.ay0) / len);
        let (rx, ry) = (p.x - self.ax0, p.y - self.ay0);
        let along = rx * ux + ry * uy;
        let across = rx * uy - ry * ux;
        along >= -1e-9 && along <= len + 1e-9 && across.abs() <= self.width / 2.0 + 1e-9
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        let len = self.length();
        let (ux, uy) = ((self.ax1 - self.ax0) / len, (self.ay1 - self.ay0) / len);
        let along = rng.random::<f64>() * len;
        let across = (rng.random::<f64>() - 0.5) * self.width;
        let z = self.hmin + rng.random::<f64>() * (self.hmax - self.hmin);
        Point3::new(
            self.ax0 + along * ux + across * uy,
            self.ay0 + along * uy - across * ux,
            z,
        )
    }
}

/// Immutable description of a deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bounds: Rect,
    pub sites: Vec<Site>,
    pub antennas: Vec<SectorAntenna>,
    #[serde(default)]
    pub buildings: Vec<Building>,
    #[serde(default)]
    pub corridors: Vec<Corridor>,
    #[serde(default = "default_gue_density")]
    pub gue_density: f64,
    #[serde(default = "default_uav_per_corridor")]
    pub uav_per_corridor: f64,
}

fn default_gue_density() -> f64 {
    DEFAULT_GUE_DENSITY
}

fn default_uav_per_corridor() -> f64 {
    DEFAULT_UAV_PER_CORRIDOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Gue,
    Uav,
}

impl UserKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UserKind::Gue => "gue",
            UserKind::Uav => "uav",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub position: Point3,
    pub kind: UserKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserDrop {
    pub users: Vec<User>,
}

impl UserDrop {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn count(&self, kind: UserKind) -> usize {
        self.users.iter().filter(|u| u.kind == kind).count()
    }
}

/// One optimization point: all tilts followed by all vertical HPBWs,
/// in antenna order, degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigVector(pub Vec<f64>);

impl ConfigVector {
    pub fn uniform(n_antennas: usize, tilt_deg: f64, v_hpbw_deg: f64) -> Self {
        let mut v = vec![tilt_deg; n_antennas];
        v.extend(std::iter::repeat_n(v_hpbw_deg, n_antennas));
        Self(v)
    }

    /// The uniform -12 deg / 10 deg reference configuration.
    pub fn baseline(n_antennas: usize) -> Self {
        Self::uniform(n_antennas, BASELINE_TILT_DEG, BASELINE_V_HPBW_DEG)
    }

    pub fn n_antennas(&self) -> usize {
        self.0.len() / 2
    }

    pub fn tilts(&self) -> &[f64] {
        &self.0[..self.n_antennas()]
    }

    pub fn v_hpbws(&self) -> &[f64] {
        &self.0[self.n_antennas()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Scenario {
    pub fn antenna(&self, id: u32) -> Option<&SectorAntenna> {
        self.antennas.iter().find(|a| a.id == id)
    }

    pub fn site(&self, id: u32) -> Option<&Site> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// Position of the site hosting `antenna`.
    pub fn antenna_position(&self, antenna: &SectorAntenna) -> Result<Point3> {
        self.site(antenna.site_id)
            .map(|s| s.position)
            .ok_or_else(|| Error::invalid(format!("antenna {} references unknown site {}", antenna.id, antenna.site_id)))
    }

    pub fn config_dim(&self) -> usize {
        2 * self.antennas.len()
    }

    pub fn current_config(&self) -> ConfigVector {
        let mut v: Vec<f64> = self.antennas.iter().map(|a| a.tilt_deg).collect();
        v.extend(self.antennas.iter().map(|a| a.v_hpbw_deg));
        ConfigVector(v)
    }

    pub fn is_outdoor(&self, x: f64, y: f64) -> bool {
        !self.buildings.iter().any(|b| b.footprint.contains(x, y))
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas.is_empty() {
            return Err(Error::invalid("scenario has no antennas"));
        }
        if !(self.bounds.area() > 0.0) {
            return Err(Error::invalid("scenario bounds are empty"));
        }
        let mut site_ids = HashSet::new();
        for s in &self.sites {
            if !site_ids.insert(s.id) {
                return Err(Error::invalid(format!("duplicate site id {}", s.id)));
            }
        }
        let mut antenna_ids = HashSet::new();
        for a in &self.antennas {
            if !antenna_ids.insert(a.id) {
                return Err(Error::invalid(format!("duplicate antenna id {}", a.id)));
            }
            if !site_ids.contains(&a.site_id) {
                return Err(Error::invalid(format!("antenna {} references unknown site {}", a.id, a.site_id)));
            }
            check_tilt(a.tilt_deg)?;
            check_v_hpbw(a.v_hpbw_deg)?;
        }
        for b in &self.buildings {
            if !(b.height > 0.0) {
                return Err(Error::invalid("building height must be positive"));
            }
            if !self.bounds.contains_rect(&b.footprint) {
                return Err(Error::invalid("building footprint outside bounds"));
            }
        }
        for c in &self.corridors {
            if !(c.hmin < c.hmax) || !(c.width > 0.0) || c.length() == 0.0 {
                return Err(Error::invalid("degenerate corridor"));
            }
        }
        if self.gue_density < 0.0 || self.uav_per_corridor < 0.0 {
            return Err(Error::invalid("user densities must be non-negative"));
        }
        Ok(())
    }

    /// Copy of the scenario with every corridor moved to `[hmin, hmax]`.
    pub fn with_corridor_heights(&self, hmin: f64, hmax: f64) -> Result<Scenario> {
        if !(hmin < hmax) {
            return Err(Error::invalid("corridor hmin must be below hmax"));
        }
        let mut out = self.clone();
        for c in &mut out.corridors {
            c.hmin = hmin;
            c.hmax = hmax;
        }
        Ok(out)
    }

    pub fn from_json_str(s: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

fn check_tilt(t: f64) -> Result<()> {
    if !(TILT_RANGE_DEG.0..=TILT_RANGE_DEG.1).contains(&t) {
        return Err(Error::invalid(format!("tilt {t} deg outside [-90, 90]")));
    }
    Ok(())
}

fn check_v_hpbw(h: f64) -> Result<()> {
    if !(h > 0.0 && h <= V_HPBW_MAX_DEG) {
        return Err(Error::invalid(format!("vertical HPBW {h} deg outside (0, 360]")));
    }
    Ok(())
}

/// Builds a synthetic deployment of `n_sites` three-sector sites on a
/// jittered grid.
pub fn generate_synthetic_scenario(n_sites: usize, seed: u64, with_corridors: bool) -> Result<Scenario> {
    if n_sites == 0 {
        return Err(Error::invalid("n_sites must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 350.0 * (n_sites as f64).sqrt();
    let bounds = Rect::new(0.0, 0.0, side, side);

    let cols = (n_sites as f64).sqrt().ceil() as usize;
    let rows = n_sites.div_ceil(cols);
    let pitch_x = side / cols as f64;
    let pitch_y = side / rows as f64;

    let mut sites = Vec::with_capacity(n_sites);
    let mut antennas = Vec::with_capacity(3 * n_sites);
    for i in 0..n_sites {
        let (r, c) = (i / cols, i % cols);
        let jx = (rng.random::<f64>() - 0.5) * 0.5 * pitch_x;
        let jy = (rng.random::<f64>() - 0.5) * 0.5 * pitch_y;
        let x = ((c as f64 + 0.5) * pitch_x + jx).clamp(0.0, side);
        let y = ((r as f64 + 0.5) * pitch_y + jy).clamp(0.0, side);
        let z = rng.random_range(22.0..=56.0);
        let id = i as u32;
        sites.push(Site { id, position: Point3::new(x, y, z) });

        let offset = rng.random::<f64>() * 120.0;
        for s in 0..3u32 {
            antennas.push(SectorAntenna {
                id: 3 * id + s,
                site_id: id,
                bearing_deg: (s as f64 * 120.0 + offset) % 360.0,
                tilt_deg: BASELINE_TILT_DEG,
                v_hpbw_deg: BASELINE_V_HPBW_DEG,
                tx_power_dbm: DEFAULT_TX_POWER_DBM,
            });
        }
    }

    let n_buildings = rng.random_range(10..=30);
    let mut buildings = Vec::with_capacity(n_buildings);
    let mut attempts = 0;
    while buildings.len() < n_buildings && attempts < 10_000 {
        attempts += 1;
        let w = rng.random_range(20.0..=80.0_f64).min(side * 0.5);
        let d = rng.random_range(20.0..=80.0_f64).min(side * 0.5);
        let x0 = rng.random::<f64>() * (side - w);
        let y0 = rng.random::<f64>() * (side - d);
        let footprint = Rect::new(x0, y0, x0 + w, y0 + d);
        let margin = Rect::new(x0 - 5.0, y0 - 5.0, x0 + w + 5.0, y0 + d + 5.0);
        if sites.iter().any(|s| margin.contains(s.position.x, s.position.y)) {
            continue;
        }
        let overlaps = buildings.iter().any(|b: &Building| {
            b.footprint.x0 < footprint.x1
                && footprint.x0 < b.footprint.x1
                && b.footprint.y0 < footprint.y1
                && footprint.y0 < b.footprint.y1
        });
        if overlaps {
            continue;
        }
        let height = rng.random_range(10.0..=80.0);
        buildings.push(Building { footprint, height });
    }

    let corridors = if with_corridors {
        let len = 900.0_f64.min(0.9 * side);
        let width = 40.0;
        let mut out = Vec::with_capacity(2);
        // east-west corridor
        let cx = rng.random_range(len / 2.0..=side - len / 2.0);
        let cy = rng.random_range(0.25 * side..=0.75 * side);
        out.push(Corridor {
            ax0: cx - len / 2.0,
            ay0: cy,
            ax1: cx + len / 2.0,
            ay1: cy,
            width,
            hmin: 140.0,
            hmax: 160.0,
        });
        // north-south corridor
        let cx = rng.random_range(0.25 * side..=0.75 * side);
        let cy = rng.random_range(len / 2.0..=side - len / 2.0);
        out.push(Corridor {
            ax0: cx,
            ay0: cy - len / 2.0,
            ax1: cx,
            ay1: cy + len / 2.0,
            width,
            hmin: 140.0,
            hmax: 160.0,
        });
        out
    } else {
        Vec::new()
    };

    let scenario = Scenario {
        bounds,
        sites,
        antennas,
        buildings,
        corridors,
        gue_density: DEFAULT_GUE_DENSITY,
        uav_per_corridor: DEFAULT_UAV_PER_CORRIDOR,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

/// Draws one user drop. GUEs are uniform over the outdoor ground area,
/// UAVs uniform within each corridor volume.
pub fn sample_users(scenario: &Scenario, seed: u64) -> Result<UserDrop> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = scenario.bounds;
    if scenario.buildings.iter().any(|bd| bd.footprint.contains_rect(&b)) {
        return Err(Error::InfeasibleScenario("buildings cover the whole region".into()));
    }

    let n_gue = poisson(&mut rng, scenario.gue_density * scenario.antennas.len() as f64);
    let mut users = Vec::with_capacity(n_gue);
    for _ in 0..n_gue {
        let mut placed = false;
        for _ in 0..100_000 {
            let x = b.x0 + rng.random::<f64>() * b.width();
            let y = b.y0 + rng.random::<f64>() * b.height();
            if scenario.is_outdoor(x, y) {
                users.push(User { position: Point3::new(x, y, GUE_HEIGHT_M), kind: UserKind::Gue });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleScenario("no outdoor ground area found".into()));
        }
    }

    for corridor in &scenario.corridors {
        let n = poisson(&mut rng, scenario.uav_per_corridor);
        users.extend((0..n).map(|_| User { position: corridor.sample(&mut rng), kind: UserKind::Uav }));
    }
    Ok(UserDrop { users })
}

/// Returns a copy of `scenario` with antenna `i` set to tilt `x[i]` and
/// vertical HPBW `x[n + i]`.
pub fn apply_config(scenario: &Scenario, x: &ConfigVector) -> Result<Scenario> {
    let n = scenario.antennas.len();
    if x.0.len() != 2 * n {
        return Err(Error::invalid(format!(
            "config has {} entries, expected {}",
            x.0.len(),
            2 * n
        )));
    }
    let mut out = scenario.clone();
    for (i, antenna) in out.antennas.iter_mut().enumerate() {
        let (tilt, hpbw) = (x.0[i], x.0[n + i]);
        check_tilt(tilt)?;
        check_v_hpbw(hpbw)?;
        antenna.tilt_deg = tilt;
        antenna.v_hpbw_deg = hpbw;
    }
    Ok(out)
}
