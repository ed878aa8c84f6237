//! Risk features computed from a sensor frame: the classifier input.
//!
//! Feature names and order are a versioned contract shared by the dataset
//! CSV columns and the network input layer.

use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::sensor::SensorFrame;

/// Time-to-collision cap, seconds. Also the "not closing" sentinel.
pub const TTC_CAP: f64 = 60.0;
/// Time-headway cap, seconds. Also the standstill sentinel.
pub const HEADWAY_CAP: f64 = 10.0;
/// Required-deceleration cap, m/s².
pub const DECEL_CAP: f64 = 12.0;
/// Ego speeds below this count as standstill for headway purposes.
const STANDSTILL_SPEED: f64 = 0.1;

pub const FEATURE_COUNT: usize = 8;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "rel_distance",
    "rel_speed",
    "ego_speed",
    "ttc",
    "headway",
    "required_decel",
    "throttle_pos",
    "brake_pos",
];

/// The 8 risk features, in contract order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Gap to the vehicle ahead, meters. Detection range when nothing is seen.
    pub rel_distance: f64,
    /// Closing speed, m/s; positive while closing.
    pub rel_speed: f64,
    pub ego_speed: f64,
    pub ttc: f64,
    pub headway: f64,
    pub required_decel: f64,
    pub throttle_pos: f64,
    pub brake_pos: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.rel_distance,
            self.rel_speed,
            self.ego_speed,
            self.ttc,
            self.headway,
            self.required_decel,
            self.throttle_pos,
            self.brake_pos,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            rel_distance: a[0],
            rel_speed: a[1],
            ego_speed: a[2],
            ttc: a[3],
            headway: a[4],
            required_decel: a[5],
            throttle_pos: a[6],
            brake_pos: a[7],
        }
    }
}

/// Constant-velocity time-to-collision, capped at [`TTC_CAP`].
/// Opening or steady targets return the cap.
pub fn compute_ttc(gap: f64, closing_speed: f64) -> Result<f64> {
    if !gap.is_finite() || gap < 0.0 {
        return Err(LadriError::InvalidInput(format!("gap must be >= 0, got {gap}")));
    }
    if closing_speed <= 0.0 {
        return Ok(TTC_CAP);
    }
    Ok((gap / closing_speed).min(TTC_CAP))
}

/// Time headway: gap over ego speed, capped at [`HEADWAY_CAP`].
pub fn compute_headway(gap: f64, ego_speed: f64) -> Result<f64> {
    if !gap.is_finite() || gap < 0.0 || !ego_speed.is_finite() || ego_speed < 0.0 {
        return Err(LadriError::InvalidInput(format!(
            "gap and ego speed must be >= 0, got {gap}, {ego_speed}"
        )));
    }
    if ego_speed < STANDSTILL_SPEED {
        return Ok(HEADWAY_CAP);
    }
    Ok((gap / ego_speed).min(HEADWAY_CAP))
}

/// Minimum constant deceleration avoiding impact if the lead holds speed:
/// `closing² / (2 gap)`, capped at [`DECEL_CAP`].
pub fn compute_required_decel(gap: f64, closing_speed: f64) -> Result<f64> {
    if !gap.is_finite() || gap < 0.0 {
        return Err(LadriError::InvalidInput(format!("gap must be >= 0, got {gap}")));
    }
    if closing_speed <= 0.0 {
        return Ok(0.0);
    }
    if gap == 0.0 {
        return Ok(DECEL_CAP);
    }
    Ok((closing_speed * closing_speed / (2.0 * gap)).min(DECEL_CAP))
}

/// Builds the classifier input from one frame. No-detection radar encodes as
/// "far and not closing": `rel_distance = detection_range`, `rel_speed = 0`.
///
/// `_prev` reserves room for temporal features; the current contract is
/// single-frame.
pub fn build_feature_vector(
    frame: &SensorFrame,
    _prev: Option<&SensorFrame>,
    detection_range: f64,
) -> FeatureVector {
    let gap = frame.radar_range.unwrap_or(detection_range).max(0.0);
    let closing = frame.radar_range_rate.map_or(0.0, |rate| -rate);
    let ego_speed = frame.wheel_speed.max(0.0);
    FeatureVector {
        rel_distance: gap,
        rel_speed: closing,
        ego_speed,
        ttc: compute_ttc(gap, closing).expect("gap clamped non-negative"),
        headway: compute_headway(gap, ego_speed).expect("inputs clamped non-negative"),
        required_decel: compute_required_decel(gap, closing).expect("gap clamped non-negative"),
        throttle_pos: frame.throttle_pos,
        brake_pos: frame.brake_pos,
    }
}

/// Per-feature z-score statistics, population-std convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits z-score statistics over training rows. Needs at least 2 rows.
pub fn fit_normalizer(rows: &[FeatureVector]) -> Result<NormStats> {
    if rows.len() < 2 {
        return Err(LadriError::InvalidInput(format!(
            "normalizer needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; FEATURE_COUNT];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row.to_array()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; FEATURE_COUNT];
    for row in rows {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(row.to_array()) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt()).collect();
    Ok(NormStats { mean, std })
}

/// Applies z-score normalization. Degenerate features (std 0) map to 0.
pub fn apply_normalizer(stats: &NormStats, v: &FeatureVector) -> Vec<f64> {
    let mut out = vec![0.0; FEATURE_COUNT];
    apply_normalizer_into(stats, v, &mut out);
    out
}

/// Allocation-free variant of [`apply_normalizer`].
pub fn apply_normalizer_into(stats: &NormStats, v: &FeatureVector, out: &mut [f64]) {
    for (i, x) in v.to_array().iter().enumerate() {
        out[i] = if stats.std[i] > 0.0 {
            (x - stats.mean[i]) / stats.std[i]
        } else {
            0.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(range: Option<f64>, rate: Option<f64>, speed: f64, throttle: f64, brake: f64) -> SensorFrame {
        SensorFrame {
            time: 0.0,
            radar_range: range,
            radar_range_rate: rate,
            wheel_speed: speed,
            engine_speed_proxy: speed,
            throttle_pos: throttle,
            brake_pos: brake,
        }
    }

    #[test]
    fn ttc_examples() {
        assert!((compute_ttc(30.0, 5.0).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(compute_ttc(30.0, 0.0).unwrap(), TTC_CAP);
        assert_eq!(compute_ttc(30.0, -2.0).unwrap(), TTC_CAP);
        assert_eq!(compute_ttc(0.0, 2.0).unwrap(), 0.0);
        assert!(matches!(compute_ttc(-1.0, 2.0), Err(LadriError::InvalidInput(_))));
    }

    #[test]
    fn headway_examples() {
        assert!((compute_headway(30.0, 20.0).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(compute_headway(30.0, 0.0).unwrap(), HEADWAY_CAP);
        assert_eq!(compute_headway(500.0, 10.0).unwrap(), HEADWAY_CAP);
        assert!(matches!(
            compute_headway(30.0, -1.0),
            Err(LadriError::InvalidInput(_))
        ));
    }

    #[test]
    fn required_decel_examples() {
        assert!((compute_required_decel(30.0, 5.0).unwrap() - 25.0 / 60.0).abs() < 1e-12);
        assert_eq!(compute_required_decel(30.0, -5.0).unwrap(), 0.0);
        assert_eq!(compute_required_decel(1.0, 10.0).unwrap(), DECEL_CAP);
        assert_eq!(compute_required_decel(0.0, 2.0).unwrap(), DECEL_CAP);
    }

    #[test]
    fn feature_vector_composes_the_metrics() {
        let v = build_feature_vector(&frame(Some(30.0), Some(-5.0), 20.0, 0.3, 0.0), None, 150.0);
        assert_eq!(v.rel_distance, 30.0);
        assert_eq!(v.rel_speed, 5.0);
        assert_eq!(v.ego_speed, 20.0);
        assert!((v.ttc - 6.0).abs() < 1e-12);
        assert!((v.headway - 1.5).abs() < 1e-12);
        assert!((v.required_decel - 25.0 / 60.0).abs() < 1e-12);
        assert_eq!(v.throttle_pos, 0.3);
        assert_eq!(v.brake_pos, 0.0);
    }

    #[test]
    fn no_detection_encodes_as_free_road() {
        let v = build_feature_vector(&frame(None, None, 20.0, 0.0, 0.0), None, 150.0);
        assert_eq!(v.rel_distance, 150.0);
        assert_eq!(v.rel_speed, 0.0);
        assert_eq!(v.ttc, TTC_CAP);
        assert_eq!(v.headway, (150.0f64 / 20.0).min(HEADWAY_CAP));
        assert_eq!(v.required_decel, 0.0);
    }

    #[test]
    fn brake_fault_is_visible_in_features() {
        // End to end through the sensor model with zero noise: an unintended
        // brake of magnitude 0.8 puts 0.8 on the brake feature.
        use crate::scenario::{apply_fault, AccelLimits, FaultKind, FaultSpec};
        use crate::sensor::{pedals_from_accel, sample_sensors, NoiseSpec, SensorTruth};
        use rand::SeedableRng;

        let limits = AccelLimits::default();
        let fault = FaultSpec {
            kind: FaultKind::UnintendedBrake,
            magnitude: 0.8,
            t_start: 0.0,
            t_end: 1.0,
        };
        let a_eff = apply_fault(0.5, Some(&fault), 0.5, &limits);
        assert_eq!(pedals_from_accel(a_eff, &limits).unwrap().1, 0.8);

        let truth = SensorTruth {
            time: 0.5,
            gap: Some(30.0),
            range_rate: Some(0.0),
            subject_speed: 20.0,
            subject_accel: a_eff,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = sample_sensors(&truth, &NoiseSpec::zero(), &limits, &mut rng).unwrap();
        let v = build_feature_vector(&f, None, 150.0);
        assert!((v.brake_pos - 0.8).abs() < 1e-12);
        assert_eq!(v.throttle_pos, 0.0);
    }

    #[test]
    fn normalizer_examples() {
        let rows: Vec<FeatureVector> = [0.0, 10.0]
            .iter()
            .map(|&x| FeatureVector::from_array([x; FEATURE_COUNT]))
            .collect();
        let stats = fit_normalizer(&rows).unwrap();
        assert_eq!(stats.mean[0], 5.0);
        assert_eq!(stats.std[0], 5.0);
        let z = apply_normalizer(&stats, &rows[1]);
        assert!((z[0] - 1.0).abs() < 1e-12);

        // Constant feature maps to 0.
        let constant: Vec<FeatureVector> = (0..5)
            .map(|_| FeatureVector::from_array([4.2; FEATURE_COUNT]))
            .collect();
        let stats = fit_normalizer(&constant).unwrap();
        assert_eq!(stats.std[0], 0.0);
        assert_eq!(apply_normalizer(&stats, &constant[0])[0], 0.0);

        assert!(matches!(fit_normalizer(&[]), Err(LadriError::InvalidInput(_))));
    }

    #[test]
    fn normalizing_the_training_set_centers_it() {
        let rows: Vec<FeatureVector> = (0..50)
            .map(|i| {
                let x = i as f64;
                FeatureVector::from_array([x, 2.0 * x - 3.0, x * x, 1.0, -x, x / 7.0, 0.5, x % 3.0])
            })
            .collect();
        let stats = fit_normalizer(&rows).unwrap();
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| apply_normalizer(&stats, r)).collect();
        for j in 0..FEATURE_COUNT {
            let n = normalized.len() as f64;
            let mean: f64 = normalized.iter().map(|r| r[j]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
            if stats.std[j] > 0.0 {
                let var: f64 = normalized.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                assert!((var.sqrt() - 1.0).abs() < 1e-9, "feature {j} std {}", var.sqrt());
            }
        }
    }

    proptest! {
        #[test]
        fn derived_features_stay_capped_and_finite(
            gap in 0.0..500.0f64,
            closing in -50.0..50.0f64,
            ego in 0.0..60.0f64,
        ) {
            let ttc = compute_ttc(gap, closing).unwrap();
            let hw = compute_headway(gap, ego).unwrap();
            let rd = compute_required_decel(gap, closing).unwrap();
            prop_assert!(ttc.is_finite() && (0.0..=TTC_CAP).contains(&ttc));
            prop_assert!(hw.is_finite() && (0.0..=HEADWAY_CAP).contains(&hw));
            prop_assert!(rd.is_finite() && (0.0..=DECEL_CAP).contains(&rd));
        }

        #[test]
        fn ttc_increases_and_decel_decreases_with_gap(
            closing in 0.5..30.0f64,
            gap_low in 1.0..100.0f64,
            extra in 1.0..100.0f64,
        ) {
            let gap_high = gap_low + extra;
            prop_assert!(compute_ttc(gap_high, closing).unwrap() >= compute_ttc(gap_low, closing).unwrap());
            prop_assert!(
                compute_required_decel(gap_high, closing).unwrap()
                    <= compute_required_decel(gap_low, closing).unwrap()
            );
        }

        #[test]
        fn normalizer_round_trips(
            base in -100.0..100.0f64,
            spread in 0.1..50.0f64,
        ) {
            let rows: Vec<FeatureVector> = (0..20)
                .map(|i| FeatureVector::from_array([base + spread * i as f64; FEATURE_COUNT]))
                .collect();
            let stats = fit_normalizer(&rows).unwrap();
            for row in &rows {
                let z = apply_normalizer(&stats, row);
                for (j, x) in row.to_array().iter().enumerate() {
                    let back = z[j] * stats.std[j] + stats.mean[j];
                    let scale = x.abs().max(1.0);
                    prop_assert!((back - x).abs() / scale < 1e-12);
                }
            }
        }
    }
}
