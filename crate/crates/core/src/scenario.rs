//! Longitudinal kinematics, trajectories, outcome classification and injury severity.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Smallest closing speed used as a TTC denominator.
const CLOSING_EPS: f64 = 1e-9;

/// One vehicle's longitudinal state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Distance along the lane (m).
    pub position: f64,
    /// Speed (m/s), never negative.
    pub speed: f64,
    /// Applied acceleration over the last step (m/s²).
    pub accel: f64,
}

impl VehicleState {
    pub fn new(position: f64, speed: f64) -> Self {
        Self { position, speed, accel: 0.0 }
    }

    fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite() && self.accel.is_finite()
    }
}

/// Classification thresholds for outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyThresholds {
    /// Minimum-TTC threshold at or below which an episode is a conflict (s).
    pub conflict_ttc: f64,
    pub vehicle_length: f64,
    /// Gap at or below which the vehicles are in contact (m).
    pub crash_gap: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self { conflict_ttc: 1.5, vehicle_length: 5.0, crash_gap: 0.0 }
    }
}

impl SafetyThresholds {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.conflict_ttc > 0.0 && self.conflict_ttc.is_finite()) {
            return Err(SimError::Config(format!("conflict_ttc must be > 0, got {}", self.conflict_ttc)));
        }
        if !(self.vehicle_length > 0.0 && self.vehicle_length.is_finite()) {
            return Err(SimError::Config(format!(
                "vehicle_length must be > 0, got {}",
                self.vehicle_length
            )));
        }
        if !self.crash_gap.is_finite() {
            return Err(SimError::Config("crash_gap must be finite".into()));
        }
        Ok(())
    }
}

/// Logistic injury-risk curve over impact delta-v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjuryCurve {
    /// Delta-v at 50% risk (m/s).
    pub midpoint_delta_v: f64,
    /// Logistic slope (1/(m/s)).
    pub slope: f64,
}

impl Default for InjuryCurve {
    fn default() -> Self {
        Self { midpoint_delta_v: 12.0, slope: 0.4 }
    }
}

/// A two-vehicle trajectory sampled at a fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    vehicle_length: f64,
    samples: Vec<(VehicleState, VehicleState)>,
}

impl Trajectory {
    pub fn new(dt: f64, vehicle_length: f64, first: (VehicleState, VehicleState)) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidState(format!("dt must be > 0, got {dt}")));
        }
        if !(vehicle_length > 0.0) {
            return Err(SimError::InvalidState(format!("vehicle length must be > 0, got {vehicle_length}")));
        }
        Ok(Self { dt, vehicle_length, samples: vec![first] })
    }

    pub fn with_capacity(mut self, n: usize) -> Self {
        self.samples.reserve(n);
        self
    }

    pub fn push(&mut self, ego: VehicleState, lead: VehicleState) {
        self.samples.push((ego, lead));
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(VehicleState, VehicleState)] {
        &self.samples
    }

    pub fn last(&self) -> (VehicleState, VehicleState) {
        // never empty: constructed with one sample
        self.samples[self.samples.len() - 1]
    }

    pub fn gap_at(&self, i: usize) -> f64 {
        let (ego, lead) = &self.samples[i];
        bumper_gap(ego, lead, self.vehicle_length)
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|i| self.gap_at(i))
    }

    /// Time to collision at sample `i`, `+inf` while not closing.
    pub fn ttc_at(&self, i: usize) -> f64 {
        let (ego, lead) = &self.samples[i];
        time_to_collision(self.gap_at(i), ego.speed, lead.speed)
    }
}

/// Bumper-to-bumper gap from ego front to lead rear.
pub fn bumper_gap(ego: &VehicleState, lead: &VehicleState, vehicle_length: f64) -> f64 {
    lead.position - ego.position - vehicle_length
}

/// Gap over closing speed; `+inf` unless the ego is faster than the lead.
pub fn time_to_collision(gap: f64, ego_speed: f64, lead_speed: f64) -> f64 {
    let closing = ego_speed - lead_speed;
    if closing > 0.0 {
        gap / closing.max(CLOSING_EPS)
    } else {
        f64::INFINITY
    }
}

/// Episode classification. Crash takes precedence over Conflict over Safe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeEvent {
    Safe {
        #[serde(with = "crate::json::ext_f64")]
        min_ttc: f64,
        min_gap: f64,
    },
    Conflict {
        min_ttc: f64,
        min_gap: f64,
    },
    Crash {
        delta_v: f64,
        time_of_impact: f64,
    },
}

impl OutcomeEvent {
    pub fn is_crash(&self) -> bool {
        matches!(self, OutcomeEvent::Crash { .. })
    }

    pub fn is_conflict(&self) -> bool {
        matches!(self, OutcomeEvent::Conflict { .. })
    }

    /// Minimum gap for non-crash outcomes, `-inf` for crashes.
    pub fn min_gap(&self) -> f64 {
        match *self {
            OutcomeEvent::Safe { min_gap, .. } | OutcomeEvent::Conflict { min_gap, .. } => min_gap,
            OutcomeEvent::Crash { .. } => f64::NEG_INFINITY,
        }
    }

    /// Minimum TTC for non-crash outcomes, `0` for crashes.
    pub fn min_ttc(&self) -> f64 {
        match *self {
            OutcomeEvent::Safe { min_ttc, .. } | OutcomeEvent::Conflict { min_ttc, .. } => min_ttc,
            OutcomeEvent::Crash { .. } => 0.0,
        }
    }
}

/// Semi-implicit Euler step for both vehicles.
///
/// Speeds are clamped at zero; a vehicle held at standstill by the clamp
/// records zero applied acceleration.
pub fn step_longitudinal(
    ego: VehicleState,
    lead: VehicleState,
    ego_accel_cmd: f64,
    lead_accel: f64,
    dt: f64,
) -> Result<(VehicleState, VehicleState), SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidState(format!("dt must be finite and > 0, got {dt}")));
    }
    if !ego.is_finite() || !lead.is_finite() || !ego_accel_cmd.is_finite() || !lead_accel.is_finite() {
        return Err(SimError::InvalidState("non-finite vehicle state or command".into()));
    }
    if ego.speed < 0.0 || lead.speed < 0.0 {
        return Err(SimError::InvalidState("negative speed".into()));
    }
    Ok((advance(ego, ego_accel_cmd, dt), advance(lead, lead_accel, dt)))
}

#[inline]
pub(crate) fn advance(v: VehicleState, accel: f64, dt: f64) -> VehicleState {
    let raw = v.speed + accel * dt;
    let (speed, applied) = if raw < 0.0 { (0.0, 0.0) } else { (raw, accel) };
    VehicleState { position: v.position + speed * dt, speed, accel: applied }
}

/// Classify a trajectory as crash, conflict or safe.
pub fn detect_outcome(traj: &Trajectory, thresholds: &SafetyThresholds) -> OutcomeEvent {
    let mut min_gap = f64::INFINITY;
    let mut min_ttc = f64::INFINITY;
    for (i, (ego, lead)) in traj.samples().iter().enumerate() {
        let gap = traj.gap_at(i);
        if gap <= thresholds.crash_gap {
            return OutcomeEvent::Crash {
                delta_v: (ego.speed - lead.speed).max(0.0),
                time_of_impact: i as f64 * traj.dt(),
            };
        }
        min_gap = min_gap.min(gap);
        min_ttc = min_ttc.min(time_to_collision(gap, ego.speed, lead.speed));
    }
    if min_ttc <= thresholds.conflict_ttc {
        OutcomeEvent::Conflict { min_ttc, min_gap }
    } else {
        OutcomeEvent::Safe { min_ttc, min_gap }
    }
}

/// Probability of moderate-or-worse injury given impact delta-v.
pub fn injury_probability(delta_v: f64, curve: &InjuryCurve) -> Result<f64, SimError> {
    if !(delta_v >= 0.0) {
        return Err(SimError::InvalidState(format!("delta_v must be >= 0, got {delta_v}")));
    }
    if !(curve.slope > 0.0) {
        return Err(SimError::Config(format!("injury slope must be > 0, got {}", curve.slope)));
    }
    Ok(1.0 / (1.0 + (-curve.slope * (delta_v - curve.midpoint_delta_v)).exp()))
}
