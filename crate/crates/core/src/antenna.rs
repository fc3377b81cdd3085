//! Parametric sector antenna pattern.
//!
//! Azimuth and elevation attenuations are parabolic in the angular offset
//! from boresight, normalised by the half-power beamwidth, and saturate at a
//! side-lobe floor. The combined pattern is floored at -25 dB.

use crate::geometry::Point3;
use crate::scenario::SectorAntenna;
use crate::{Error, Result};

pub const H_FLOOR_DB: f64 = 25.0;
pub const V_FLOOR_DB: f64 = 20.0;
pub const COMBINED_FLOOR_DB: f64 = 25.0;

/// Peak gain at the reference 10 deg vertical beamwidth.
pub const REFERENCE_MAX_GAIN_DBI: f64 = 14.0;
pub const REFERENCE_V_HPBW_DEG: f64 = 10.0;
pub const MAX_GAIN_CLAMP_DBI: (f64, f64) = (-10.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternParams {
    pub bearing_deg: f64,
    pub tilt_deg: f64,
    pub v_hpbw_deg: f64,
    pub h_hpbw_deg: f64,
}

impl From<&SectorAntenna> for PatternParams {
    fn from(a: &SectorAntenna) -> Self {
        Self {
            bearing_deg: a.bearing_deg,
            tilt_deg: a.tilt_deg,
            v_hpbw_deg: a.v_hpbw_deg,
            h_hpbw_deg: a.h_hpbw_deg(),
        }
    }
}

/// Wraps an angle into `[-180, 180)`.
pub fn wrap_deg(angle: f64) -> f64 {
    (angle + 180.0).rem_euclid(360.0) - 180.0
}

pub fn horizontal_attenuation(phi_deg: f64, params: &PatternParams) -> f64 {
    let offset = wrap_deg(phi_deg - params.bearing_deg) / params.h_hpbw_deg;
    -(12.0 * offset * offset).min(H_FLOOR_DB)
}

pub fn vertical_attenuation(theta_deg: f64, params: &PatternParams) -> f64 {
    let offset = (theta_deg - params.tilt_deg) / params.v_hpbw_deg;
    -(12.0 * offset * offset).min(V_FLOOR_DB)
}

/// Combined normalised pattern, dB in `[-25, 0]`.
pub fn pattern_gain(phi_deg: f64, theta_deg: f64, params: &PatternParams) -> f64 {
    let sum = horizontal_attenuation(phi_deg, params) + vertical_attenuation(theta_deg, params);
    -(-sum).min(COMBINED_FLOOR_DB)
}

/// Peak gain for a given vertical HPBW: directivity inversely proportional to
/// the beamwidth, anchored at 14 dBi for 10 deg.
pub fn max_gain(v_hpbw_deg: f64) -> Result<f64> {
    if !(v_hpbw_deg > 0.0) {
        return Err(Error::invalid(format!("vertical HPBW must be positive, got {v_hpbw_deg}")));
    }
    Ok(max_gain_unchecked(v_hpbw_deg))
}

#[inline]
pub(crate) fn max_gain_unchecked(v_hpbw_deg: f64) -> f64 {
    let g = REFERENCE_MAX_GAIN_DBI - 10.0 * (v_hpbw_deg / REFERENCE_V_HPBW_DEG).log10();
    g.clamp(MAX_GAIN_CLAMP_DBI.0, MAX_GAIN_CLAMP_DBI.1)
}

/// Azimuth (clockwise from north, `[0, 360)`) and elevation of the ray from
/// `bs` to `ue`, degrees.
pub fn ray_angles(bs: &Point3, ue: &Point3) -> Result<(f64, f64)> {
    let (dx, dy, dz) = (ue.x - bs.x, ue.y - bs.y, ue.z - bs.z);
    if dx == 0.0 && dy == 0.0 && dz == 0.0 {
        return Err(Error::invalid("BS and UE positions coincide"));
    }
    let phi = dx.atan2(dy).to_degrees().rem_euclid(360.0);
    let theta = dz.atan2(dx.hypot(dy)).to_degrees();
    Ok((phi, theta))
}
