//! Deterministic fixed-timestep longitudinal simulation of a small vehicle
//! scene with a linear ACC controller and an actuator fault-injection layer.
//!
//! Units are SI throughout: meters, m/s, m/s², seconds. The lane is a single
//! straight line; vehicles are points ordered by position (rear to front in
//! the config list).

use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::sensor::NoiseSpec;

/// Default integration step, seconds.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleRole {
    Ego,
    Lead,
    Follower,
}

/// Longitudinal kinematic state of one vehicle.
///
/// `accel` is the effective acceleration applied over the step this state
/// belongs to, always within the actuator limits after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub role: VehicleRole,
}

impl VehicleState {
    pub fn new(role: VehicleRole, position: f64, speed: f64) -> Self {
        Self {
            position,
            speed,
            accel: 0.0,
            role,
        }
    }
}

/// Actuator envelope. Commands are clamped into `[a_min, a_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelLimits {
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for AccelLimits {
    fn default() -> Self {
        Self {
            a_min: -8.0,
            a_max: 3.0,
        }
    }
}

/// Gains and geometry of the linear gap/speed-feedback ACC law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccParams {
    /// Cruise set-speed, m/s.
    pub v_set: f64,
    /// Desired time-gap, seconds.
    pub gap_des_time: f64,
    /// Standstill gap, meters.
    pub gap_min: f64,
    /// Gap feedback gain, 1/s².
    pub k_gap: f64,
    /// Speed feedback gain, 1/s.
    pub k_speed: f64,
    /// Forward sensing range, meters.
    pub detection_range: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            v_set: 20.0,
            gap_des_time: 1.5,
            gap_min: 2.0,
            k_gap: 0.5,
            k_speed: 0.8,
            detection_range: 150.0,
        }
    }
}

impl AccParams {
    /// Desired gap at a given ego speed: `gap_min + gap_des_time * v`.
    pub fn desired_gap(&self, ego_speed: f64) -> f64 {
        self.gap_min + self.gap_des_time * ego_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    UnintendedAccel,
    UnintendedBrake,
}

/// Actuator fault active over `[t_start, t_end)`.
///
/// `magnitude` is a fraction of actuator full scale in `(0, 1]`.
/// Unintended acceleration adds `magnitude * a_max` to the commanded
/// acceleration; unintended braking overrides the command with
/// `magnitude * a_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub magnitude: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl FaultSpec {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// Driving policy of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Linear gap/speed feedback toward the nearest vehicle ahead,
    /// plain cruise toward `v_set` when nothing is in range.
    Acc,
    /// Hold the initial speed (zero commanded acceleration).
    ConstantSpeed,
    /// Piecewise-constant acceleration; each segment applies from its start
    /// time until the next one. Zero before the first segment.
    Scripted(Vec<ProfileSegment>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub from: f64,
    pub accel: f64,
}

fn scripted_accel(segments: &[ProfileSegment], t: f64) -> f64 {
    segments
        .iter()
        .take_while(|s| s.from <= t)
        .last()
        .map_or(0.0, |s| s.accel)
}

/// One vehicle in a scenario configuration: initial state plus policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleConfig {
    pub role: VehicleRole,
    pub position: f64,
    pub speed: f64,
    /// Defaults per role: Ego and Follower drive with ACC, Lead holds speed.
    #[serde(default)]
    pub policy: Option<Policy>,
}

impl VehicleConfig {
    pub fn effective_policy(&self) -> Policy {
        self.policy.clone().unwrap_or(match self.role {
            VehicleRole::Lead => Policy::ConstantSpeed,
            VehicleRole::Ego | VehicleRole::Follower => Policy::Acc,
        })
    }

    fn initial_state(&self) -> VehicleState {
        VehicleState::new(self.role, self.position, self.speed)
    }
}

/// Full scenario description. A trace is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    /// Listed rear to front; positions must be strictly increasing.
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default)]
    pub acc_params: AccParams,
    #[serde(default)]
    pub fault: Option<FaultSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub limits: AccelLimits,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl ScenarioConfig {
    /// Index of the first Ego vehicle, the subject of fault injection.
    pub fn ego_index(&self) -> Option<usize> {
        self.vehicles
            .iter()
            .position(|v| v.role == VehicleRole::Ego)
    }

    /// Number of integration steps; the trace holds `steps() + 1` records
    /// unless a collision truncates it.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(LadriError::config("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !self.duration.is_finite() || self.duration < self.dt {
            return Err(LadriError::config(
                "duration",
                format!("must be >= dt ({}), got {}", self.dt, self.duration),
            ));
        }
        if self.vehicles.is_empty() {
            return Err(LadriError::config("vehicles", "at least one vehicle required"));
        }
        if self.ego_index().is_none() {
            return Err(LadriError::config("vehicles", "at least one Ego vehicle required"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if !v.position.is_finite() || !v.speed.is_finite() {
                return Err(LadriError::config("vehicles", format!("vehicle {i} has non-finite state")));
            }
            if v.speed < 0.0 {
                return Err(LadriError::config("vehicles", format!("vehicle {i} has negative speed")));
            }
            if let Some(Policy::Scripted(segments)) = &v.policy {
                let sorted = segments.windows(2).all(|w| w[0].from <= w[1].from);
                if !sorted || segments.iter().any(|s| !s.from.is_finite() || !s.accel.is_finite()) {
                    return Err(LadriError::config(
                        "vehicles",
                        format!("vehicle {i} scripted profile must be finite and time-sorted"),
                    ));
                }
            }
        }
        for w in self.vehicles.windows(2) {
            if w[0].position >= w[1].position {
                return Err(LadriError::config(
                    "vehicles",
                    "initial positions must be strictly increasing (rear to front)",
                ));
            }
        }
        let p = &self.acc_params;
        if !(p.k_gap > 0.0 && p.k_speed > 0.0) {
            return Err(LadriError::config("acc_params", "gains must be > 0"));
        }
        if !(p.gap_min > 0.0) {
            return Err(LadriError::config("acc_params", "gap_min must be > 0"));
        }
        if !(p.gap_des_time > 0.0 && p.detection_range > 0.0 && p.v_set >= 0.0) {
            return Err(LadriError::config("acc_params", "time gap, range and v_set must be positive"));
        }
        if !(self.limits.a_min < 0.0 && self.limits.a_max > 0.0) {
            return Err(LadriError::config("limits", "need a_min < 0 < a_max"));
        }
        if let Some(f) = &self.fault {
            if !(f.magnitude > 0.0 && f.magnitude <= 1.0) {
                return Err(LadriError::config(
                    "fault",
                    format!("magnitude must be in (0, 1], got {}", f.magnitude),
                ));
            }
            if !(f.t_start >= 0.0 && f.t_start < f.t_end && f.t_end <= self.duration) {
                return Err(LadriError::config(
                    "fault",
                    format!("need 0 <= t_start < t_end <= duration, got [{}, {})", f.t_start, f.t_end),
                ));
            }
        }
        self.noise.validate()?;
        Ok(())
    }
}

/// One timestep of the trace: states at `time` and the controls computed
/// from them for the step that starts at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    /// Ego controller command before the fault layer.
    pub accel_cmd: f64,
    /// Ego effective acceleration after the fault layer.
    pub accel_eff: f64,
    pub fault_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEvent {
    Completed,
    Collision { time: f64 },
}

/// Result of a collision check between an ordered vehicle pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    /// Closing speed at impact (rear minus front), m/s.
    pub relative_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
    pub terminal: TerminalEvent,
    /// Index of the fault-injection subject in each record's vehicle list.
    pub ego_index: usize,
    pub dt: f64,
}

/// Semi-implicit Euler step with actuator clamping and a no-reverse clamp.
///
/// The returned state's `accel` is the acceleration actually applied: the
/// clamped command, or `(0 - v) / dt` when the speed clamp at zero engaged.
pub fn step_vehicle(state: &VehicleState, accel_cmd: f64, dt: f64, limits: &AccelLimits) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LadriError::InvalidState(format!("dt must be > 0, got {dt}")));
    }
    if !accel_cmd.is_finite() || !state.position.is_finite() || !state.speed.is_finite() {
        return Err(LadriError::InvalidState("non-finite vehicle state or command".into()));
    }
    let a = accel_cmd.clamp(limits.a_min, limits.a_max);
    let v_raw = state.speed + a * dt;
    let (speed, applied) = if v_raw < 0.0 {
        (0.0, (0.0 - state.speed) / dt)
    } else {
        (v_raw, a)
    };
    Ok(VehicleState {
        position: state.position + speed * dt,
        speed,
        accel: applied,
        role: state.role,
    })
}

/// Linear ACC law: gap/speed feedback toward the vehicle ahead, min-combined
/// with the cruise term so following never exceeds set-speed behavior.
pub fn acc_command(
    ego: &VehicleState,
    lead: Option<&VehicleState>,
    params: &AccParams,
    limits: &AccelLimits,
) -> Result<f64> {
    let cruise = params.k_speed * (params.v_set - ego.speed);
    let raw = match lead {
        Some(l) => {
            let gap = l.position - ego.position;
            if gap <= 0.0 {
                return Err(LadriError::InvalidScene(format!(
                    "lead at {} is not ahead of ego at {}",
                    l.position, ego.position
                )));
            }
            if gap <= params.detection_range {
                let follow = params.k_gap * (gap - params.desired_gap(ego.speed))
                    + params.k_speed * (l.speed - ego.speed);
                follow.min(cruise)
            } else {
                cruise
            }
        }
        None => cruise,
    };
    Ok(raw.clamp(limits.a_min, limits.a_max))
}

/// Fault-injection layer between controller and actuator.
pub fn apply_fault(accel_cmd: f64, fault: Option<&FaultSpec>, t: f64, limits: &AccelLimits) -> f64 {
    match fault {
        Some(f) if f.active_at(t) => match f.kind {
            FaultKind::UnintendedAccel => {
                (accel_cmd + f.magnitude * limits.a_max).clamp(limits.a_min, limits.a_max)
            }
            FaultKind::UnintendedBrake => (f.magnitude * limits.a_min).clamp(limits.a_min, 0.0),
        },
        _ => accel_cmd,
    }
}

/// Collision check for an ordered pair: an event when the gap is <= 0.
pub fn detect_collision(front: &VehicleState, rear: &VehicleState) -> Option<CollisionEvent> {
    if front.position - rear.position <= 0.0 {
        Some(CollisionEvent {
            relative_speed: rear.speed - front.speed,
        })
    } else {
        None
    }
}

/// Runs the closed loop: controller, fault layer, integration, collision
/// check, per step. Stops early on collision; the penetrating state is not
/// recorded. The trace is a pure function of the config.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationTrace> {
    config.validate()?;
    let ego = config.ego_index().expect("validated");
    let policies: Vec<Policy> = config.vehicles.iter().map(|v| v.effective_policy()).collect();
    let mut states: Vec<VehicleState> = config.vehicles.iter().map(|v| v.initial_state()).collect();

    let steps = config.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let mut terminal = TerminalEvent::Completed;

    for k in 0..=steps {
        let t = k as f64 * config.dt;
        let mut effective = vec![0.0; states.len()];
        let mut ego_cmd = 0.0;
        for i in 0..states.len() {
            let ahead = states.get(i + 1);
            let cmd = match &policies[i] {
                Policy::Acc => acc_command(&states[i], ahead, &config.acc_params, &config.limits)?,
                Policy::ConstantSpeed => 0.0,
                Policy::Scripted(segments) => scripted_accel(segments, t),
            };
            let eff = if i == ego {
                ego_cmd = cmd;
                apply_fault(cmd, config.fault.as_ref(), t, &config.limits)
            } else {
                cmd
            };
            effective[i] = eff.clamp(config.limits.a_min, config.limits.a_max);
        }

        records.push(TraceRecord {
            time: t,
            vehicles: states
                .iter()
                .zip(&effective)
                .map(|(s, &a)| VehicleState { accel: a, ..*s })
                .collect(),
            accel_cmd: ego_cmd,
            accel_eff: effective[ego],
            fault_active: config.fault.as_ref().is_some_and(|f| f.active_at(t)),
        });

        if k == steps {
            break;
        }

        for (state, &a) in states.iter_mut().zip(&effective) {
            *state = step_vehicle(state, a, config.dt, &config.limits)?;
        }

        let collided = (0..states.len().saturating_sub(1))
            .any(|i| detect_collision(&states[i + 1], &states[i]).is_some());
        if collided {
            terminal = TerminalEvent::Collision {
                time: (k + 1) as f64 * config.dt,
            };
            break;
        }
    }

    Ok(SimulationTrace {
        records,
        terminal,
        ego_index: ego,
        dt: config.dt,
    })
}
