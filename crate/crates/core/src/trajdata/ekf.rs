use alloc::format;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::{lateral_speed, VehicleTrack};
use crate::{Error, Result};

/// Extended Kalman filter settings. State order is `(x, y, heading, speed)`.
///
/// The heading entry of `process_noise` is a steering-angle variance
/// (rad²); it reaches the heading through the bicycle model, scaled by
/// `(Ts * v / wheelbase)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    pub wheelbase: f64,
    pub process_noise: [f64; 4],
    pub measurement_noise: [f64; 2],
    pub initial_covariance: [f64; 4],
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            wheelbase: 2.7,
            process_noise: [0.05, 0.05, 0.01, 0.2],
            measurement_noise: [0.25, 0.25],
            initial_covariance: [1.0, 1.0, 0.1, 1.0],
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !(self.wheelbase > 0.0)
            || !positive(&self.process_noise)
            || !positive(&self.measurement_noise)
            || !positive(&self.initial_covariance)
        {
            return Err(Error::Parameter("EKF wheelbase and variances must be positive".into()));
        }
        Ok(())
    }
}

/// Filters positions and speed with a kinematic bicycle process model and
/// position-only measurements. Track length and time base are preserved.
pub fn ekf_smooth(track: &VehicleTrack, cfg: &EkfConfig) -> Result<VehicleTrack> {
    cfg.validate()?;
    let n = track.samples.len();
    if n < 2 {
        return Err(Error::Length { need: 2, got: n });
    }
    let ts = track.ts;
    let s0 = &track.samples[0];
    let s1 = &track.samples[1];
    let (dx, dy) = (s1.x - s0.x, s1.y - s0.y);
    let heading0 = if libm::hypot(dx, dy) > 1e-3 { libm::atan2(dy, dx) } else { 0.0 };

    let mut state = Vector4::new(s0.x, s0.y, heading0, s0.speed.max(0.0));
    let mut cov = Matrix4::from_diagonal(&Vector4::from(cfg.initial_covariance));
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let meas_cov = Matrix2::from_diagonal(&Vector2::from(cfg.measurement_noise));

    let mut out = track.clone();
    for k in 0..n {
        let sample = &track.samples[k];
        if k > 0 {
            let (heading, speed) = (state[2], state[3]);
            let (sin, cos) = libm::sincos(heading);
            let jac = Matrix4::new(
                1.0, 0.0, -ts * speed * sin, ts * cos,
                0.0, 1.0, ts * speed * cos, ts * sin,
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            );
            state = Vector4::new(state[0] + ts * speed * cos, state[1] + ts * speed * sin, heading, speed);
            let steer_gain = ts * speed / cfg.wheelbase;
            let q = Matrix4::from_diagonal(&Vector4::new(
                cfg.process_noise[0],
                cfg.process_noise[1],
                steer_gain * steer_gain * cfg.process_noise[2],
                cfg.process_noise[3],
            ));
            cov = jac * cov * jac.transpose() + q;
        }

        let innovation = Vector2::new(sample.x, sample.y) - h * state;
        let s = h * cov * h.transpose() + meas_cov;
        let det = s.determinant();
        let s_inv = match s.try_inverse() {
            Some(inv) if det.is_finite() && det > 1e-300 => inv,
            _ => {
                return Err(Error::NumericalAtFrame {
                    frame: sample.frame,
                    msg: format!("singular innovation covariance (det = {det:e})"),
                })
            }
        };
        let gain: Matrix4x2<f64> = cov * h.transpose() * s_inv;
        state += gain * innovation;
        state[3] = state[3].max(0.0);
        let i_kh = Matrix4::identity() - gain * h;
        // Joseph form keeps the covariance symmetric PSD
        cov = i_kh * cov * i_kh.transpose() + gain * meas_cov * gain.transpose();

        let smoothed = &mut out.samples[k];
        smoothed.x = state[0];
        smoothed.y = state[1];
        smoothed.speed = state[3];
        out.longitudinal_speed[k] = state[3] * libm::cos(state[2]);
    }
    out.lateral_speed = lateral_speed(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::RawSample;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(points: &[(f64, f64, f64)]) -> VehicleTrack {
        let samples = points
            .iter()
            .enumerate()
            .map(|(k, &(x, y, v))| RawSample { vehicle_id: 3, frame: 100 + k as i64, x, y, speed: v, lane_id: 2, length: 4.5, width: 1.8 })
            .collect();
        VehicleTrack::from_samples(3, 0, 0.1, samples).unwrap()
    }

    #[test]
    fn stationary_vehicle_is_fixed_point() {
        let t = track(&[(12.0, 5.5, 0.0); 30]);
        let out = ekf_smooth(&t, &EkfConfig::default()).unwrap();
        for s in &out.samples {
            assert!((s.x - 12.0).abs() < 1e-9 && (s.y - 5.5).abs() < 1e-9);
        }
    }

    #[test]
    fn two_samples_run_one_cycle() {
        let t = track(&[(0.0, 1.0, 20.0), (2.0, 1.0, 20.0)]);
        let out = ekf_smooth(&t, &EkfConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.first_frame(), t.first_frame());
    }

    #[test]
    fn one_sample_is_error() {
        let t = track(&[(0.0, 1.0, 20.0)]);
        assert_eq!(ekf_smooth(&t, &EkfConfig::default()), Err(Error::Length { need: 2, got: 1 }));
    }

    #[test]
    fn invalid_config_rejected() {
        let t = track(&[(0.0, 1.0, 20.0), (2.0, 1.0, 20.0)]);
        let cfg = EkfConfig { measurement_noise: [0.0, 0.25], ..EkfConfig::default() };
        assert!(matches!(ekf_smooth(&t, &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn filtering_reduces_lateral_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (v, ts, y_true) = (25.0, 0.1, 5.55);
        let sigma = 0.3;
        let mut raw_se = 0.0;
        let mut filt_se = 0.0;
        for _ in 0..20 {
            let pts: Vec<(f64, f64, f64)> = (0..200)
                .map(|k| {
                    let nx: f64 = rng.gen_range(-1.0..1.0) * sigma * 1.732;
                    let ny: f64 = rng.gen_range(-1.0..1.0) * sigma * 1.732;
                    (v * ts * k as f64 + nx, y_true + ny, v)
                })
                .collect();
            let t = track(&pts);
            let out = ekf_smooth(&t, &EkfConfig::default()).unwrap();
            raw_se += t.samples.iter().map(|s| (s.y - y_true).powi(2)).sum::<f64>();
            filt_se += out.samples.iter().map(|s| (s.y - y_true).powi(2)).sum::<f64>();
        }
        assert!(filt_se.sqrt() < raw_se.sqrt(), "filtered {filt_se} vs raw {raw_se}");
    }

    #[test]
    fn preserves_length_and_time_base() {
        let pts: Vec<(f64, f64, f64)> = (0..17).map(|k| (k as f64 * 2.0, 1.0 + 0.01 * k as f64, 20.0)).collect();
        let t = track(&pts);
        let out = ekf_smooth(&t, &EkfConfig::default()).unwrap();
        assert_eq!(out.len(), t.len());
        assert_eq!(out.ts, t.ts);
        let frames: Vec<i64> = out.samples.iter().map(|s| s.frame).collect();
        let orig: Vec<i64> = t.samples.iter().map(|s| s.frame).collect();
        assert_eq!(frames, orig);
    }
}
