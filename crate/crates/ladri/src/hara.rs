//! Rule-based severity/controllability assessment and the discrete risk
//! stage derived from them. Serves as the ground-truth labeler for training
//! and as the reference in evaluation.
//!
//! Labels are always computed from noise-free kinematics, never from the
//! noisy sensor channel; only the training inputs carry sensor noise.

use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::features::{compute_required_decel, compute_ttc};
use crate::scenario::SimulationTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    S0,
    S1,
    S2,
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Controllability {
    C0,
    C1,
    C2,
    C3,
}

/// Discrete runtime risk stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Safe,
    Warning,
    Hazardous,
    Critical,
}

pub const STAGE_COUNT: usize = 4;

impl Stage {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        match i {
            0 => Some(Stage::Safe),
            1 => Some(Stage::Warning),
            2 => Some(Stage::Hazardous),
            3 => Some(Stage::Critical),
            _ => None,
        }
    }

    pub fn all() -> [Stage; STAGE_COUNT] {
        [Stage::Safe, Stage::Warning, Stage::Hazardous, Stage::Critical]
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Safe => "safe",
            Stage::Warning => "warning",
            Stage::Hazardous => "hazardous",
            Stage::Critical => "critical",
        }
    }
}

impl Severity {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl Controllability {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_index_saturating(i: usize) -> Controllability {
        match i {
            0 => Controllability::C0,
            1 => Controllability::C1,
            2 => Controllability::C2,
            _ => Controllability::C3,
        }
    }
}

/// Severity, controllability and the stage the decision table assigns them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLabel {
    pub severity: Severity,
    pub controllability: Controllability,
    pub stage: Stage,
}

/// All thresholds and the (C, S) -> stage table in one swappable block.
///
/// Severity grades the projected impact speed; controllability grades the
/// braking effort still available, escalated when time-to-collision is short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HaraConfig {
    /// Impact-speed boundaries (m/s) between S0/S1, S1/S2, S2/S3.
    pub dv_s1: f64,
    pub dv_s2: f64,
    pub dv_s3: f64,
    /// Required-deceleration boundaries (m/s²) between C0/C1, C1/C2, C2/C3.
    pub decel_c1: f64,
    pub decel_c2: f64,
    pub decel_c3: f64,
    /// TTC below this forces C3.
    pub ttc_force_c3: f64,
    /// TTC below this raises the controllability level by one.
    pub ttc_escalate: f64,
    /// Rows C0..C3, columns S0..S3, entries are stage indices 0..=3.
    pub stage_table: [[u8; 4]; 4],
}

impl Default for HaraConfig {
    fn default() -> Self {
        Self {
            dv_s1: 2.78,
            dv_s2: 8.33,
            dv_s3: 13.89,
            decel_c1: 1.0,
            decel_c2: 3.0,
            decel_c3: 6.0,
            ttc_force_c3: 1.0,
            ttc_escalate: 2.0,
            stage_table: [[0, 0, 1, 1], [0, 1, 1, 2], [1, 1, 2, 3], [1, 2, 3, 3]],
        }
    }
}

impl HaraConfig {
    pub fn validate(&self) -> Result<()> {
        let dv_ordered = 0.0 < self.dv_s1 && self.dv_s1 < self.dv_s2 && self.dv_s2 < self.dv_s3;
        let decel_ordered =
            0.0 < self.decel_c1 && self.decel_c1 < self.decel_c2 && self.decel_c2 < self.decel_c3;
        if !dv_ordered || !decel_ordered {
            return Err(LadriError::config("hara", "thresholds must be positive and increasing"));
        }
        if !(0.0 < self.ttc_force_c3 && self.ttc_force_c3 <= self.ttc_escalate) {
            return Err(LadriError::config("hara", "need 0 < ttc_force_c3 <= ttc_escalate"));
        }
        if self.stage_table.iter().flatten().any(|&s| s > 3) {
            return Err(LadriError::config("hara", "stage table entries must be 0..=3"));
        }
        Ok(())
    }
}

/// Grades the projected impact speed (m/s, constant-velocity projection).
pub fn severity_level(projected_impact_dv: f64, cfg: &HaraConfig) -> Result<Severity> {
    if !projected_impact_dv.is_finite() || projected_impact_dv < 0.0 {
        return Err(LadriError::InvalidInput(format!(
            "impact dv must be >= 0, got {projected_impact_dv}"
        )));
    }
    Ok(if projected_impact_dv < cfg.dv_s1 {
        Severity::S0
    } else if projected_impact_dv < cfg.dv_s2 {
        Severity::S1
    } else if projected_impact_dv < cfg.dv_s3 {
        Severity::S2
    } else {
        Severity::S3
    })
}

/// Grades the braking effort required, with TTC escalation: a TTC below
/// `ttc_force_c3` forces C3, below `ttc_escalate` raises the level by one.
pub fn controllability_level(required_decel: f64, ttc: f64, cfg: &HaraConfig) -> Controllability {
    if ttc < cfg.ttc_force_c3 {
        return Controllability::C3;
    }
    let base = if required_decel < cfg.decel_c1 {
        0
    } else if required_decel < cfg.decel_c2 {
        1
    } else if required_decel < cfg.decel_c3 {
        2
    } else {
        3
    };
    let level = if ttc < cfg.ttc_escalate { base + 1 } else { base };
    Controllability::from_index_saturating(level)
}

/// Decision-table lookup, rows by controllability, columns by severity.
pub fn risk_stage(s: Severity, c: Controllability, cfg: &HaraConfig) -> Stage {
    let entry = cfg.stage_table[c.index()][s.index()];
    Stage::from_index(entry as usize).expect("stage table validated to 0..=3")
}

/// Labels one situation from ground-truth kinematics. `gap` is the true gap
/// to the vehicle ahead (`None` for a free road), `closing_speed` is positive
/// while closing.
pub fn label_kinematics(gap: Option<f64>, closing_speed: f64, cfg: &HaraConfig) -> RiskLabel {
    let (dv, required_decel, ttc) = match gap {
        Some(g) => {
            // A penetrating record can carry a slightly negative gap; grade
            // it as contact.
            let g = g.max(0.0);
            let dv = closing_speed.max(0.0);
            (
                dv,
                compute_required_decel(g, closing_speed).expect("gap clamped non-negative"),
                compute_ttc(g, closing_speed).expect("gap clamped non-negative"),
            )
        }
        None => (0.0, 0.0, crate::features::TTC_CAP),
    };
    let severity = severity_level(dv, cfg).expect("dv clamped non-negative");
    let controllability = controllability_level(required_decel, ttc, cfg);
    RiskLabel {
        severity,
        controllability,
        stage: risk_stage(severity, controllability, cfg),
    }
}

/// Labels every record of a trace from the subject vehicle's perspective
/// (risk of striking the vehicle directly ahead of it).
pub fn label_trace(trace: &SimulationTrace, subject: usize, cfg: &HaraConfig) -> Result<Vec<RiskLabel>> {
    cfg.validate()?;
    if trace.records.first().is_some_and(|r| subject >= r.vehicles.len()) {
        return Err(LadriError::InvalidScene(format!(
            "subject index {subject} out of range"
        )));
    }
    Ok(trace
        .records
        .iter()
        .map(|rec| {
            let subject_state = &rec.vehicles[subject];
            let (gap, closing) = match rec.vehicles.get(subject + 1) {
                Some(ahead) => (
                    Some(ahead.position - subject_state.position),
                    subject_state.speed - ahead.speed,
                ),
                None => (None, 0.0),
            };
            label_kinematics(gap, closing, cfg)
        })
        .collect())
}

/// First time the labeled stage reaches at least `stage`, if it ever does.
pub fn time_to_stage(trace: &SimulationTrace, labels: &[RiskLabel], stage: Stage) -> Option<f64> {
    trace
        .records
        .iter()
        .zip(labels)
        .find(|(_, label)| label.stage >= stage)
        .map(|(rec, _)| rec.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{
        run_scenario, AccParams, AccelLimits, FaultKind, FaultSpec, Policy, ScenarioConfig,
        VehicleConfig, VehicleRole,
    };
    use crate::sensor::NoiseSpec;

    fn cfg() -> HaraConfig {
        HaraConfig::default()
    }

    #[test]
    fn severity_thresholds() {
        assert_eq!(severity_level(0.0, &cfg()).unwrap(), Severity::S0);
        assert_eq!(severity_level(10.0, &cfg()).unwrap(), Severity::S2);
        // 60 km/h closing grades as the top class.
        assert_eq!(severity_level(16.67, &cfg()).unwrap(), Severity::S3);
        assert_eq!(severity_level(2.78, &cfg()).unwrap(), Severity::S1);
        assert!(severity_level(-0.1, &cfg()).is_err());
    }

    #[test]
    fn controllability_grading_and_escalation() {
        assert_eq!(controllability_level(25.0 / 60.0, 6.0, &cfg()), Controllability::C0);
        assert_eq!(controllability_level(2.0, 1.5, &cfg()), Controllability::C2);
        assert_eq!(controllability_level(0.0, 0.5, &cfg()), Controllability::C3);
        assert_eq!(controllability_level(7.0, 10.0, &cfg()), Controllability::C3);
        // Escalation saturates.
        assert_eq!(controllability_level(7.0, 1.5, &cfg()), Controllability::C3);
    }

    #[test]
    fn stage_table_corners() {
        assert_eq!(risk_stage(Severity::S0, Controllability::C0, &cfg()), Stage::Safe);
        assert_eq!(risk_stage(Severity::S3, Controllability::C3, &cfg()), Stage::Critical);
        assert_eq!(risk_stage(Severity::S2, Controllability::C1, &cfg()), Stage::Warning);
    }

    #[test]
    fn stage_table_is_exhaustive_and_monotone() {
        let severities = [Severity::S0, Severity::S1, Severity::S2, Severity::S3];
        let controllabilities = [
            Controllability::C0,
            Controllability::C1,
            Controllability::C2,
            Controllability::C3,
        ];
        for (ci, c) in controllabilities.iter().enumerate() {
            for (si, s) in severities.iter().enumerate() {
                let stage = risk_stage(*s, *c, &cfg());
                if si + 1 < 4 {
                    assert!(risk_stage(severities[si + 1], *c, &cfg()) >= stage);
                }
                if ci + 1 < 4 {
                    assert!(risk_stage(*s, controllabilities[ci + 1], &cfg()) >= stage);
                }
            }
        }
    }

    #[test]
    fn free_road_is_safe() {
        let label = label_kinematics(None, 0.0, &cfg());
        assert_eq!(label.stage, Stage::Safe);
        assert_eq!(label.severity, Severity::S0);
        assert_eq!(label.controllability, Controllability::C0);
    }

    #[test]
    fn shrinking_gap_never_lowers_the_stage() {
        for closing_tenths in 1..150 {
            let closing = closing_tenths as f64 / 5.0;
            let mut prev = Stage::Safe;
            let mut gap = 200.0;
            while gap > 0.0 {
                let label = label_kinematics(Some(gap), closing, &cfg());
                assert!(
                    label.stage >= prev,
                    "stage dropped from {prev:?} to {:?} at gap {gap}, closing {closing}",
                    label.stage
                );
                prev = label.stage;
                gap -= 0.5;
            }
        }
    }

    fn equilibrium_config() -> ScenarioConfig {
        let params = AccParams::default();
        let v = 16.67;
        ScenarioConfig {
            dt: 0.01,
            duration: 20.0,
            vehicles: vec![
                VehicleConfig {
                    role: VehicleRole::Ego,
                    position: 0.0,
                    speed: v,
                    policy: None,
                },
                VehicleConfig {
                    role: VehicleRole::Lead,
                    position: params.desired_gap(v),
                    speed: v,
                    policy: None,
                },
            ],
            acc_params: params,
            fault: None,
            seed: 0,
            noise: NoiseSpec::default(),
            limits: AccelLimits::default(),
        }
    }

    #[test]
    fn equilibrium_following_labels_all_safe() {
        let trace = run_scenario(&equilibrium_config()).unwrap();
        let labels = label_trace(&trace, 0, &cfg()).unwrap();
        assert_eq!(labels.len(), trace.records.len());
        assert!(labels.iter().all(|l| l.stage == Stage::Safe));
        assert_eq!(time_to_stage(&trace, &labels, Stage::Warning), None);
    }

    fn accel_fault_config(magnitude: f64) -> ScenarioConfig {
        // Steady 60 km/h following at 40 m; the subject holds speed while an
        // unintended acceleration drives it into the lead.
        let v = 16.67;
        ScenarioConfig {
            dt: 0.01,
            duration: 30.0,
            vehicles: vec![
                VehicleConfig {
                    role: VehicleRole::Ego,
                    position: 0.0,
                    speed: v,
                    policy: Some(Policy::ConstantSpeed),
                },
                VehicleConfig {
                    role: VehicleRole::Lead,
                    position: 40.0,
                    speed: v,
                    policy: None,
                },
            ],
            acc_params: AccParams::default(),
            fault: Some(FaultSpec {
                kind: FaultKind::UnintendedAccel,
                magnitude,
                t_start: 5.0,
                t_end: 30.0,
            }),
            seed: 0,
            noise: NoiseSpec::default(),
            limits: AccelLimits::default(),
        }
    }

    #[test]
    fn stronger_unintended_accel_reaches_critical_sooner() {
        let time_to_critical = |magnitude: f64| {
            let trace = run_scenario(&accel_fault_config(magnitude)).unwrap();
            let labels = label_trace(&trace, 0, &cfg()).unwrap();
            time_to_stage(&trace, &labels, Stage::Critical)
        };
        let at_half = time_to_critical(0.5).expect("50% spike reaches critical");
        match time_to_critical(0.2) {
            Some(t) => assert!(t > at_half),
            None => {} // weaker spike may never reach critical before impact
        }
    }

    #[test]
    fn brake_fault_surges_the_follower_stage() {
        // Follower speed-matched at a short highway gap; the vehicle ahead
        // brakes hard with nothing in front of it.
        let v = 25.0;
        let onset = 5.0;
        let config = ScenarioConfig {
            dt: 0.01,
            duration: 12.0,
            vehicles: vec![
                VehicleConfig {
                    role: VehicleRole::Follower,
                    position: 0.0,
                    speed: v,
                    policy: Some(Policy::ConstantSpeed),
                },
                VehicleConfig {
                    role: VehicleRole::Ego,
                    position: 8.0,
                    speed: v,
                    policy: None,
                },
            ],
            acc_params: AccParams {
                v_set: v,
                ..AccParams::default()
            },
            fault: Some(FaultSpec {
                kind: FaultKind::UnintendedBrake,
                magnitude: 0.8,
                t_start: onset,
                t_end: 10.0,
            }),
            seed: 0,
            noise: NoiseSpec::default(),
            limits: AccelLimits::default(),
        };
        let trace = run_scenario(&config).unwrap();
        let labels = label_trace(&trace, 0, &cfg()).unwrap();
        for (rec, label) in trace.records.iter().zip(&labels) {
            if rec.time < onset {
                assert_eq!(label.stage, Stage::Safe, "pre-onset at t={}", rec.time);
            }
        }
        let t_hazard = time_to_stage(&trace, &labels, Stage::Hazardous).expect("stage surges");
        assert!(
            t_hazard - onset <= 1.0,
            "hazardous at {t_hazard}, onset {onset}"
        );
    }

    #[test]
    fn labels_are_noise_independent() {
        // Labels come from ground truth; the config's noise spec plays no role.
        let mut noisy = equilibrium_config();
        noisy.noise = NoiseSpec {
            sigma_range: 5.0,
            sigma_range_rate: 5.0,
            sigma_wheel: 5.0,
            sigma_pedal: 0.5,
            dropout_prob: 0.9,
        };
        let quiet = run_scenario(&equilibrium_config()).unwrap();
        let loud = run_scenario(&noisy).unwrap();
        assert_eq!(
            label_trace(&quiet, 0, &cfg()).unwrap(),
            label_trace(&loud, 0, &cfg()).unwrap()
        );
    }

    #[test]
    fn table_validation_rejects_bad_entries() {
        let mut bad = HaraConfig::default();
        bad.stage_table[2][1] = 7;
        assert!(bad.validate().is_err());
        let mut unordered = HaraConfig::default();
        unordered.dv_s2 = 1.0;
        assert!(unordered.validate().is_err());
    }
}
