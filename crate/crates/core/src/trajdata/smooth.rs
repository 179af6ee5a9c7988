use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ekf_smooth, EkfConfig, VehicleTrack};
use crate::{Error, Result};

/// First-order exponential smoothing: `s[0] = x[0]`,
/// `s[k] = alpha * x[k] + (1 - alpha) * s[k-1]`.
pub fn exp_smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("smoothing factor must lie in (0, 1], got {alpha}")));
    }
    let Some(&first) = series.first() else {
        return Err(Error::Parameter("cannot smooth an empty series".into()));
    };
    let mut out = Vec::with_capacity(series.len());
    let mut s = first;
    out.push(s);
    for &x in &series[1..] {
        s = alpha * x + (1.0 - alpha) * s;
        out.push(s);
    }
    Ok(out)
}

/// Lateral speed from a central difference of `y` (one-sided at the ends),
/// positive toward decreasing lane id.
pub fn lateral_speed(track: &VehicleTrack) -> Result<Vec<f64>> {
    let n = track.samples.len();
    if n < 2 {
        return Err(Error::Length { need: 2, got: n });
    }
    let y = |k: usize| track.samples[k].y;
    let ts = track.ts;
    let mut out = Vec::with_capacity(n);
    out.push(-(y(1) - y(0)) / ts);
    for k in 1..n - 1 {
        out.push(-(y(k + 1) - y(k - 1)) / (2.0 * ts));
    }
    out.push(-(y(n - 1) - y(n - 2)) / ts);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub ekf: EkfConfig,
    /// Exponential smoothing factor applied to the lateral-speed signal.
    pub alpha: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { ekf: EkfConfig::default(), alpha: 0.3 }
    }
}

/// EKF on positions, then exponential smoothing of the lateral speed.
pub fn smooth_track(track: &VehicleTrack, cfg: &SmoothingConfig) -> Result<VehicleTrack> {
    let mut out = ekf_smooth(track, &cfg.ekf)?;
    out.lateral_speed = exp_smooth(&out.lateral_speed, cfg.alpha)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::RawSample;
    use alloc::vec;
    use proptest::prelude::*;

    fn track_from_y(ys: &[f64], ts: f64) -> VehicleTrack {
        let samples = ys
            .iter()
            .enumerate()
            .map(|(k, &y)| RawSample { vehicle_id: 1, frame: k as i64, x: 0.0, y, speed: 0.0, lane_id: 1, length: 4.0, width: 2.0 })
            .collect();
        VehicleTrack::from_samples(1, 0, ts, samples).unwrap()
    }

    #[test]
    fn alpha_one_is_identity() {
        let x = [3.0, -1.0, 2.5, 7.0];
        assert_eq!(exp_smooth(&x, 1.0).unwrap(), x.to_vec());
    }

    #[test]
    fn constant_is_fixed_point() {
        assert_eq!(exp_smooth(&[4.2; 6], 0.3).unwrap(), vec![4.2; 6]);
    }

    #[test]
    fn two_point_recurrence() {
        assert_eq!(exp_smooth(&[0.0, 1.0], 0.5).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn bad_alpha_and_empty() {
        assert!(matches!(exp_smooth(&[1.0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(exp_smooth(&[1.0], 1.5), Err(Error::Parameter(_))));
        assert!(matches!(exp_smooth(&[], 0.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn constant_y_has_zero_lateral_speed() {
        let t = track_from_y(&[1.5; 8], 0.1);
        assert!(lateral_speed(&t).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_gives_constant_speed() {
        let ts = 0.1;
        let ys: Vec<f64> = (0..20).map(|k| 0.2 * k as f64 * ts).collect();
        let v = lateral_speed(&track_from_y(&ys, ts)).unwrap();
        // y grows rightward, so the leftward-positive speed is -0.2
        for &vk in &v[1..v.len() - 1] {
            assert!((vk + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn short_track_is_error() {
        let t = track_from_y(&[0.0], 0.1);
        assert_eq!(lateral_speed(&t), Err(Error::Length { need: 2, got: 1 }));
    }

    proptest! {
        #[test]
        fn smoothed_value_stays_in_prefix_range(xs in proptest::collection::vec(-100.0f64..100.0, 1..50), alpha in 0.01f64..=1.0) {
            let s = exp_smooth(&xs, alpha).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (k, &sk) in s.iter().enumerate() {
                lo = lo.min(xs[k]);
                hi = hi.max(xs[k]);
                prop_assert!(sk >= lo - 1e-9 && sk <= hi + 1e-9);
            }
        }

        #[test]
        fn shift_equivariant(xs in proptest::collection::vec(-100.0f64..100.0, 1..50), alpha in 0.01f64..=1.0, c in -50.0f64..50.0) {
            let s = exp_smooth(&xs, alpha).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let t = exp_smooth(&shifted, alpha).unwrap();
            for (a, b) in s.iter().zip(&t) {
                prop_assert!((a + c - b).abs() < 1e-9);
            }
        }

        #[test]
        fn time_reversal_negates_interior(ys in proptest::collection::vec(-5.0f64..5.0, 3..40)) {
            let fwd = lateral_speed(&track_from_y(&ys, 0.1)).unwrap();
            let rev_y: Vec<f64> = ys.iter().rev().copied().collect();
            let rev = lateral_speed(&track_from_y(&rev_y, 0.1)).unwrap();
            let n = ys.len();
            for k in 1..n - 1 {
                prop_assert!((rev[k] + fwd[n - 1 - k]).abs() < 1e-12);
            }
        }
    }
}
