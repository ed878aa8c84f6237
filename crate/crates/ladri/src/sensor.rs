//! Simulated on-board sensors: ground-truth scene state is turned into
//! noisy, range-limited readings per timestep.
//!
//! The forward-looking range/range-rate channel stands in for the fused
//! radar/LiDAR/ultrasonic stack; wheel speed and an independently-noised
//! engine-speed proxy cover powertrain speed sensing; pedal positions are
//! reconstructed from the effective acceleration through the actuator map.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::scenario::{AccelLimits, TraceRecord};

/// Per-channel Gaussian noise levels plus an optional radar dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma_range: f64,
    pub sigma_range_rate: f64,
    pub sigma_wheel: f64,
    pub sigma_pedal: f64,
    /// Probability per frame that the radar channels report no detection.
    pub dropout_prob: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_range: 0.3,
            sigma_range_rate: 0.2,
            sigma_wheel: 0.1,
            sigma_pedal: 0.01,
            dropout_prob: 0.0,
        }
    }
}

impl NoiseSpec {
    /// All noise disabled; frames reproduce ground truth exactly.
    pub fn zero() -> Self {
        Self {
            sigma_range: 0.0,
            sigma_range_rate: 0.0,
            sigma_wheel: 0.0,
            sigma_pedal: 0.0,
            dropout_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_range,
            self.sigma_range_rate,
            self.sigma_wheel,
            self.sigma_pedal,
        ];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(LadriError::config("noise", "sigmas must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(LadriError::config("noise", "dropout_prob must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One timestep of simulated sensor readings for the subject vehicle.
/// `None` on the radar channels means no detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub time: f64,
    pub radar_range: Option<f64>,
    /// Rate of change of range: negative while closing.
    pub radar_range_rate: Option<f64>,
    pub wheel_speed: f64,
    pub engine_speed_proxy: f64,
    pub throttle_pos: f64,
    pub brake_pos: f64,
}

/// Ground-truth quantities a sensor frame is sampled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorTruth {
    pub time: f64,
    /// Gap to the vehicle directly ahead, already gated by detection range.
    pub gap: Option<f64>,
    /// d(gap)/dt for the detected vehicle: ahead speed minus subject speed.
    pub range_rate: Option<f64>,
    pub subject_speed: f64,
    /// Effective acceleration applied this step, within actuator limits.
    pub subject_accel: f64,
}

/// Extracts the subject vehicle's sensor ground truth from a trace record.
pub fn subject_truth(record: &TraceRecord, subject: usize, detection_range: f64) -> Result<SensorTruth> {
    let state = record
        .vehicles
        .get(subject)
        .ok_or_else(|| LadriError::InvalidScene(format!("subject index {subject} out of range")))?;
    let (gap, range_rate) = match record.vehicles.get(subject + 1) {
        Some(ahead) => {
            let gap = ahead.position - state.position;
            if gap <= detection_range {
                (Some(gap), Some(ahead.speed - state.speed))
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };
    Ok(SensorTruth {
        time: record.time,
        gap,
        range_rate,
        subject_speed: state.speed,
        subject_accel: state.accel,
    })
}

/// Inverse actuator map: positive accelerations show up on the throttle as a
/// fraction of `a_max`, negative ones on the brake as a fraction of `a_min`.
pub fn pedals_from_accel(a_eff: f64, limits: &AccelLimits) -> Result<(f64, f64)> {
    if !a_eff.is_finite() || a_eff < limits.a_min || a_eff > limits.a_max {
        return Err(LadriError::InvalidState(format!(
            "effective accel {a_eff} outside [{}, {}]",
            limits.a_min, limits.a_max
        )));
    }
    if a_eff >= 0.0 {
        Ok((a_eff / limits.a_max, 0.0))
    } else {
        Ok((0.0, a_eff / limits.a_min))
    }
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    // Normal::new only rejects negative/non-finite sigma, which validate()
    // already rules out.
    Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
}

/// Samples one noisy sensor frame. Each channel is the true value plus
/// zero-mean Gaussian noise, clamped to its physical domain.
pub fn sample_sensors<R: Rng>(
    truth: &SensorTruth,
    noise: &NoiseSpec,
    limits: &AccelLimits,
    rng: &mut R,
) -> Result<SensorFrame> {
    noise.validate()?;
    let dropout = noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob;
    let (radar_range, radar_range_rate) = match (truth.gap, truth.range_rate, dropout) {
        (Some(gap), Some(rate), false) => (
            Some((gap + gauss(rng, noise.sigma_range)).max(0.0)),
            Some(rate + gauss(rng, noise.sigma_range_rate)),
        ),
        _ => (None, None),
    };
    let wheel_speed = (truth.subject_speed + gauss(rng, noise.sigma_wheel)).max(0.0);
    let engine_speed_proxy = (truth.subject_speed + gauss(rng, noise.sigma_wheel)).max(0.0);
    let (throttle, brake) = pedals_from_accel(truth.subject_accel, limits)?;
    Ok(SensorFrame {
        time: truth.time,
        radar_range,
        radar_range_rate,
        wheel_speed,
        engine_speed_proxy,
        throttle_pos: (throttle + gauss(rng, noise.sigma_pedal)).clamp(0.0, 1.0),
        brake_pos: (brake + gauss(rng, noise.sigma_pedal)).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth(gap: Option<f64>, rate: Option<f64>, speed: f64, accel: f64) -> SensorTruth {
        SensorTruth {
            time: 1.0,
            gap,
            range_rate: rate,
            subject_speed: speed,
            subject_accel: accel,
        }
    }

    #[test]
    fn zero_noise_passes_ground_truth_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = sample_sensors(
            &truth(Some(30.0), Some(-5.0), 20.0, 1.2),
            &NoiseSpec::zero(),
            &AccelLimits::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(frame.radar_range, Some(30.0));
        assert_eq!(frame.radar_range_rate, Some(-5.0));
        assert_eq!(frame.wheel_speed, 20.0);
        assert_eq!(frame.engine_speed_proxy, 20.0);
        assert!((frame.throttle_pos - 0.4).abs() < 1e-12);
        assert_eq!(frame.brake_pos, 0.0);
    }

    #[test]
    fn out_of_range_target_reports_no_detection() {
        use crate::scenario::{VehicleRole, VehicleState};
        let record = TraceRecord {
            time: 0.0,
            vehicles: vec![
                VehicleState::new(VehicleRole::Ego, 0.0, 20.0),
                VehicleState::new(VehicleRole::Lead, 200.0, 18.0),
            ],
            accel_cmd: 0.0,
            accel_eff: 0.0,
            fault_active: false,
        };
        let t = subject_truth(&record, 0, 150.0).unwrap();
        assert_eq!(t.gap, None);
        assert_eq!(t.range_rate, None);
        let in_range = subject_truth(&record, 0, 250.0).unwrap();
        assert_eq!(in_range.gap, Some(200.0));
        assert_eq!(in_range.range_rate, Some(-2.0));
        // Frontmost vehicle never detects anything.
        assert_eq!(subject_truth(&record, 1, 150.0).unwrap().gap, None);
    }

    #[test]
    fn range_noise_is_unbiased() {
        // 3 sigma / sqrt(n) = 3 * 0.3 / 100 = 0.009 around the true 30 m.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = NoiseSpec {
            sigma_range: 0.3,
            ..NoiseSpec::zero()
        };
        let t = truth(Some(30.0), Some(0.0), 20.0, 0.0);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_sensors(&t, &noise, &AccelLimits::default(), &mut rng)
                .unwrap()
                .radar_range
                .unwrap();
        }
        let mean = sum / n as f64;
        assert!((mean - 30.0).abs() < 0.009, "sample mean {mean}");
    }

    #[test]
    fn pedal_map_examples() {
        let limits = AccelLimits::default();
        assert_eq!(pedals_from_accel(0.0, &limits).unwrap(), (0.0, 0.0));
        assert_eq!(pedals_from_accel(3.0, &limits).unwrap(), (1.0, 0.0));
        assert_eq!(pedals_from_accel(-4.0, &limits).unwrap(), (0.0, 0.5));
        assert!(matches!(
            pedals_from_accel(4.0, &limits),
            Err(LadriError::InvalidState(_))
        ));
    }

    #[test]
    fn pedals_are_exclusive_before_noise() {
        let limits = AccelLimits::default();
        for i in -80..=30 {
            let (throttle, brake) = pedals_from_accel(i as f64 / 10.0, &limits).unwrap();
            assert!(throttle == 0.0 || brake == 0.0);
            assert!((0.0..=1.0).contains(&throttle));
            assert!((0.0..=1.0).contains(&brake));
        }
    }

    #[test]
    fn same_seed_gives_identical_frames() {
        let noise = NoiseSpec::default();
        let t = truth(Some(42.0), Some(-3.0), 25.0, -1.0);
        let sample_run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| sample_sensors(&t, &noise, &AccelLimits::default(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(sample_run(9), sample_run(9));
        assert_ne!(sample_run(9), sample_run(10));
    }

    #[test]
    fn dropout_blanks_radar_channels() {
        let noise = NoiseSpec {
            dropout_prob: 0.5,
            ..NoiseSpec::zero()
        };
        let t = truth(Some(30.0), Some(-5.0), 20.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut dropped = 0;
        for _ in 0..1000 {
            let frame = sample_sensors(&t, &noise, &AccelLimits::default(), &mut rng).unwrap();
            if frame.radar_range.is_none() {
                assert!(frame.radar_range_rate.is_none());
                dropped += 1;
            }
        }
        assert!((300..700).contains(&dropped), "dropped {dropped} of 1000");
    }
}
