//! Affine map between the optimizer's unit cube and physical antenna
//! settings. The first half of a point holds tilts, the second half vertical
//! HPBWs, matching [`ConfigVector`]'s layout.

use cellshape_core::scenario::{ConfigVector, TILT_RANGE_DEG, V_HPBW_MAX_DEG};

/// Lower edge of the HPBW range; 0 deg would be a degenerate beam.
pub const V_HPBW_MIN_DEG: f64 = 1.0;

pub fn tilt_from_unit(u: f64) -> f64 {
    TILT_RANGE_DEG.0 + (TILT_RANGE_DEG.1 - TILT_RANGE_DEG.0) * u
}

pub fn tilt_to_unit(tilt_deg: f64) -> f64 {
    ((tilt_deg - TILT_RANGE_DEG.0) / (TILT_RANGE_DEG.1 - TILT_RANGE_DEG.0)).clamp(0.0, 1.0)
}

pub fn hpbw_from_unit(u: f64) -> f64 {
    V_HPBW_MIN_DEG + (V_HPBW_MAX_DEG - V_HPBW_MIN_DEG) * u
}

pub fn hpbw_to_unit(hpbw_deg: f64) -> f64 {
    ((hpbw_deg - V_HPBW_MIN_DEG) / (V_HPBW_MAX_DEG - V_HPBW_MIN_DEG)).clamp(0.0, 1.0)
}

/// Physical configuration for a unit-cube point of even length.
pub fn to_physical(u: &[f64]) -> ConfigVector {
    let n = u.len() / 2;
    ConfigVector(
        u.iter()
            .enumerate()
            .map(|(i, &v)| if i < n { tilt_from_unit(v) } else { hpbw_from_unit(v) })
            .collect(),
    )
}

pub fn to_unit(x: &ConfigVector) -> Vec<f64> {
    let n = x.n_antennas();
    x.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < n { tilt_to_unit(v) } else { hpbw_to_unit(v) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_map_to_bounds() {
        let x = to_physical(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(x.0, vec![-90.0, 90.0, 1.0, 360.0]);
    }

    #[test]
    fn baseline_round_trip() {
        let b = ConfigVector::baseline(6);
        let u = to_unit(&b);
        let back = to_physical(&u);
        for (a, b) in back.0.iter().zip(&b.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((u[0] - 78.0 / 180.0).abs() < 1e-15);
        assert!((u[6] - 9.0 / 359.0).abs() < 1e-15);
    }
}
