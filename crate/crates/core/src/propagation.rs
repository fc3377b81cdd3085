//! Large-scale channel gain between a sector antenna and a 3D position.
//!
//! A [`GainProvider`] returns the omnidirectional gain (pathloss and
//! shadowing, no antenna pattern). Two providers are available: the
//! self-contained [`AnalyticModel`] and [`GainMap`], which ingests gains
//! computed by an external tool (e.g. a ray tracer).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::antenna::{max_gain, pattern_gain, ray_angles, PatternParams};
use crate::geometry::{segment_hits_box, Point3};
use crate::scenario::{Building, Scenario, SectorAntenna};
use crate::{Error, Result};

pub trait GainProvider: Send + Sync {
    /// Omnidirectional gain in dB (negative) from antenna `antenna_id` to `position`.
    fn omni_gain(&self, antenna_id: u32, position: &Point3) -> Result<f64>;
}

/// Total gain `G_{b,k}` in dB: omnidirectional gain plus peak antenna gain
/// plus the normalised pattern along the BS-to-user ray.
pub fn total_gain(
    scenario: &Scenario,
    antenna: &SectorAntenna,
    position: &Point3,
    provider: &dyn GainProvider,
) -> Result<f64> {
    let bs = scenario.antenna_position(antenna)?;
    let (phi, theta) = ray_angles(&bs, position)?;
    let omni = provider.omni_gain(antenna.id, position)?;
    Ok(omni + max_gain(antenna.v_hpbw_deg)? + pattern_gain(phi, theta, &PatternParams::from(antenna)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticParams {
    pub carrier_hz: f64,
    /// Pathloss at the 1 m reference distance, dB.
    pub pl_ref_db: f64,
    pub exponent_los: f64,
    pub exponent_nlos: f64,
    pub sigma_los_db: f64,
    pub sigma_nlos_db: f64,
    /// Decorrelation grid of the shadowing field, meters.
    pub shadow_grid_m: f64,
    pub shadow_seed: u64,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        Self {
            carrier_hz: 2.0e9,
            pl_ref_db: 38.4,
            exponent_los: 2.2,
            exponent_nlos: 3.5,
            sigma_los_db: 4.0,
            sigma_nlos_db: 6.0,
            shadow_grid_m: 10.0,
            shadow_seed: 0x5eed,
        }
    }
}

/// Log-distance pathloss with building blockage and a deterministic,
/// spatially consistent shadowing field.
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    params: AnalyticParams,
    positions: HashMap<u32, Point3>,
    buildings: Vec<Building>,
}

impl AnalyticModel {
    pub fn new(scenario: &Scenario, params: AnalyticParams) -> Result<Self> {
        let mut positions = HashMap::with_capacity(scenario.antennas.len());
        for a in &scenario.antennas {
            positions.insert(a.id, scenario.antenna_position(a)?);
        }
        Ok(Self { params, positions, buildings: scenario.buildings.clone() })
    }

    pub fn params(&self) -> &AnalyticParams {
        &self.params
    }

    pub fn is_los(&self, bs: &Point3, position: &Point3) -> bool {
        !self.buildings.iter().any(|b| segment_hits_box(bs, position, &b.footprint, b.height))
    }

    /// Unit-variance Gaussian value of the shadowing field for `antenna_id`
    /// at the grid cell containing `position`.
    pub fn shadow_field(&self, antenna_id: u32, position: &Point3) -> f64 {
        let g = self.params.shadow_grid_m;
        let q = |v: f64| (v / g).floor() as i64 as u64;
        let mut h = splitmix64(self.params.shadow_seed ^ 0x9e37_79b9_7f4a_7c15);
        for word in [antenna_id as u64, q(position.x), q(position.y), q(position.z)] {
            h = splitmix64(h ^ word);
        }
        let u1 = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let u2 = ((splitmix64(h) >> 11) as f64) / (1u64 << 53) as f64;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gain from an explicit BS position; `antenna_id` only keys the shadowing field.
    pub fn gain_from(&self, antenna_id: u32, bs: &Point3, position: &Point3) -> f64 {
        let d = bs.distance(position).max(1.0);
        let p = &self.params;
        let (n, sigma) = if self.is_los(bs, position) {
            (p.exponent_los, p.sigma_los_db)
        } else {
            (p.exponent_nlos, p.sigma_nlos_db)
        };
        let shadow = if sigma == 0.0 { 0.0 } else { sigma * self.shadow_field(antenna_id, position) };
        -(p.pl_ref_db + 10.0 * n * d.log10() + shadow)
    }
}

impl GainProvider for AnalyticModel {
    fn omni_gain(&self, antenna_id: u32, position: &Point3) -> Result<f64> {
        let bs = self
            .positions
            .get(&antenna_id)
            .ok_or_else(|| Error::invalid(format!("unknown antenna {antenna_id}")))?;
        Ok(self.gain_from(antenna_id, bs, position))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GAINMAP_MAGIC: &[u8; 4] = b"CGM1";

/// Gridded per-antenna omnidirectional gains. Values are stored
/// antenna-major, then height layer, then row (y), then column (x).
/// NaN marks an invalid (e.g. indoor) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMap {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub nx: u32,
    pub ny: u32,
    pub heights: Vec<f64>,
    pub antenna_ids: Vec<u32>,
    pub data: Vec<f32>,
}

impl GainMap {
    pub fn new(
        origin: (f64, f64),
        cell_size: f64,
        nx: u32,
        ny: u32,
        heights: Vec<f64>,
        antenna_ids: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let map = Self { origin, cell_size, nx, ny, heights, antenna_ids, data };
        map.validate()?;
        Ok(map)
    }

    fn layer_len(&self) -> usize {
        self.nx as usize * self.ny as usize
    }

    fn expected_len(&self) -> usize {
        self.layer_len() * self.heights.len() * self.antenna_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::GainMapFormat(m.to_string()));
        if !(self.cell_size > 0.0) {
            return bad("cell size must be positive");
        }
        if self.nx == 0 || self.ny == 0 || self.heights.is_empty() || self.antenna_ids.is_empty() {
            return bad("empty grid");
        }
        if self.heights.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("heights must be strictly increasing");
        }
        if self.data.len() != self.expected_len() {
            return bad("data length does not match grid dimensions");
        }
        if self.data.iter().any(|v| v.is_finite() && !(-250.0..=0.0).contains(v)) {
            return bad("gain values must lie in [-250, 0] dB");
        }
        if self.data.iter().any(|v| v.is_infinite()) {
            return bad("infinite gain value");
        }
        Ok(())
    }

    fn index(&self, antenna: usize, iz: usize, iy: usize, ix: usize) -> usize {
        ((antenna * self.heights.len() + iz) * self.ny as usize + iy) * self.nx as usize + ix
    }

    pub fn value(&self, antenna: usize, iz: usize, iy: usize, ix: usize) -> f32 {
        self.data[self.index(antenna, iz, iy, ix)]
    }

    /// Samples `provider` on a grid; non-finite values and positions inside
    /// buildings are stored as NaN, finite values are clamped to `[-250, 0]`.
    pub fn from_provider(
        provider: &dyn GainProvider,
        scenario: &Scenario,
        cell_size: f64,
        heights: Vec<f64>,
    ) -> Result<Self> {
        let b = scenario.bounds;
        let nx = (b.width() / cell_size).floor() as u32 + 1;
        let ny = (b.height() / cell_size).floor() as u32 + 1;
        let antenna_ids: Vec<u32> = scenario.antennas.iter().map(|a| a.id).collect();
        let mut data = Vec::with_capacity(antenna_ids.len() * heights.len() * (nx * ny) as usize);
        for &id in &antenna_ids {
            for &z in &heights {
                for iy in 0..ny {
                    for ix in 0..nx {
                        let (x, y) = (b.x0 + ix as f64 * cell_size, b.y0 + iy as f64 * cell_size);
                        let indoor = scenario
                            .buildings
                            .iter()
                            .any(|bd| bd.footprint.contains(x, y) && z <= bd.height);
                        let v = if indoor {
                            f32::NAN
                        } else {
                            match provider.omni_gain(id, &Point3::new(x, y, z)) {
                                Ok(g) if g.is_finite() => g.clamp(-250.0, 0.0) as f32,
                                _ => f32::NAN,
                            }
                        };
                        data.push(v);
                    }
                }
            }
        }
        Self::new((b.x0, b.y0), cell_size, nx, ny, heights, antenna_ids, data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GAINMAP_MAGIC)?;
        w.write_all(&self.origin.0.to_le_bytes())?;
        w.write_all(&self.origin.1.to_le_bytes())?;
        w.write_all(&self.cell_size.to_le_bytes())?;
        w.write_all(&self.nx.to_le_bytes())?;
        w.write_all(&self.ny.to_le_bytes())?;
        w.write_all(&(self.heights.len() as u32).to_le_bytes())?;
        for h in &self.heights {
            w.write_all(&h.to_le_bytes())?;
        }
        w.write_all(&(self.antenna_ids.len() as u32).to_le_bytes())?;
        for id in &self.antenna_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GAINMAP_MAGIC {
            return Err(Error::GainMapFormat("bad magic".into()));
        }
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let cell_size = read_f64(&mut r)?;
        let nx = read_u32(&mut r)?;
        let ny = read_u32(&mut r)?;
        let n_heights = read_u32(&mut r)? as usize;
        let heights = (0..n_heights).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_antennas = read_u32(&mut r)? as usize;
        let antenna_ids = (0..n_antennas).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n = (nx as usize)
            .checked_mul(ny as usize)
            .and_then(|v| v.checked_mul(n_heights))
            .and_then(|v| v.checked_mul(n_antennas))
            .ok_or_else(|| Error::GainMapFormat("grid too large".into()))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::GainMapFormat("trailing bytes after gain data".into()));
        }
        Self::new((ox, oy), cell_size, nx, ny, heights, antenna_ids, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Locates `v` on an axis of `n` nodes spaced `step` from `start`.
    /// Returns the lower node index and the fractional offset.
    fn locate(v: f64, start: f64, step: f64, n: u32) -> Option<(usize, f64)> {
        let t = (v - start) / step;
        let last = (n - 1) as f64;
        if !(t >= -1e-9 && t <= last + 1e-9) {
            return None;
        }
        let t = t.clamp(0.0, last);
        let i = (t.floor() as usize).min(n.saturating_sub(2) as usize);
        Some((i, t - i as f64))
    }

    fn locate_height(&self, z: f64) -> Option<(usize, f64)> {
        let h = &self.heights;
        if h.len() == 1 {
            // single layer: a 2D map, valid at any height
            return Some((0, 0.0));
        }
        if !(z >= h[0] - 1e-9 && z <= h[h.len() - 1] + 1e-9) {
            return None;
        }
        let i = match h.iter().rposition(|&v| v <= z) {
            Some(i) => i.min(h.len() - 2),
            None => 0,
        };
        Some((i, ((z - h[i]) / (h[i + 1] - h[i])).clamp(0.0, 1.0)))
    }

    /// Trilinear interpolation; falls back to the nearest valid contributing
    /// node when any neighbour is NaN.
    pub fn interpolate(&self, antenna_id: u32, position: &Point3) -> Result<f64> {
        let out = || Error::OutOfCoverage { x: position.x, y: position.y, z: position.z };
        let a = self
            .antenna_ids
            .iter()
            .position(|&id| id == antenna_id)
            .ok_or_else(|| Error::invalid(format!("antenna {antenna_id} not in gain map")))?;
        let (ix, fx) = Self::locate(position.x, self.origin.0, self.cell_size, self.nx).ok_or_else(out)?;
        let (iy, fy) = Self::locate(position.y, self.origin.1, self.cell_size, self.ny).ok_or_else(out)?;
        let (iz, fz) = self.locate_height(position.z).ok_or_else(out)?;

        let ix1 = if self.nx > 1 { ix + 1 } else { ix };
        let iy1 = if self.ny > 1 { iy + 1 } else { iy };
        let iz1 = if self.heights.len() > 1 { iz + 1 } else { iz };

        let mut acc = 0.0;
        let mut any_nan = false;
        let mut nearest: Option<(f64, f64)> = None;
        for (cz, wz) in [(iz, 1.0 - fz), (iz1, fz)] {
            for (cy, wy) in [(iy, 1.0 - fy), (iy1, fy)] {
                for (cx, wx) in [(ix, 1.0 - fx), (ix1, fx)] {
                    let v = self.value(a, cz, cy, cx) as f64;
                    let w = wx * wy * wz;
                    if v.is_nan() {
                        any_nan = true;
                        continue;
                    }
                    acc += w * v;
                    let (dx, dy) = ((cx as f64 - ix as f64) - fx, (cy as f64 - iy as f64) - fy);
                    let dz_m = (self.heights[cz] - position.z) / self.cell_size;
                    let dist = if self.heights.len() > 1 {
                        dx * dx + dy * dy + dz_m * dz_m
                    } else {
                        dx * dx + dy * dy
                    };
                    if nearest.is_none_or(|(d, _)| dist < d) {
                        nearest = Some((dist, v));
                    }
                }
            }
        }
        match (any_nan, nearest) {
            (false, _) => Ok(acc),
            (true, Some((_, v))) => Ok(v),
            (true, None) => Err(out()),
        }
    }
}

impl GainProvider for GainMap {
    fn omni_gain(&self, antenna_id: u32, position: &Point3) -> Result<f64> {
        self.interpolate(antenna_id, position)
    }
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
