//! Episode construction and simulation: the ego ("car behind") against a lead maneuver.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use crate::error::{ModelError, SimError};
use crate::policy::{EgoPolicy, Observation};
use crate::scenario::{
    advance, bumper_gap, detect_outcome, injury_probability, InjuryCurve, OutcomeEvent, SafetyThresholds,
    Trajectory, VehicleState,
};
use crate::threat::{ScenarioTag, ThreatModel};

/// Car-following lead maneuver onset (s).
pub const BRAKE_ONSET: f64 = 1.0;
/// Warm-up used to settle the ego at its equilibrium gap (s).
pub const WARMUP_HORIZON: f64 = 60.0;
const MAX_STEPS: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Car-following start gap; `None` uses the policy's equilibrium gap at v0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_gap: Option<f64>,
    pub max_brake: f64,
    pub max_accel: f64,
    pub thresholds: SafetyThresholds,
    pub injury: InjuryCurve,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 30.0,
            initial_gap: None,
            max_brake: 8.0,
            max_accel: 3.0,
            thresholds: SafetyThresholds::default(),
            injury: InjuryCurve::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        positive("max_brake", self.max_brake)?;
        positive("max_accel", self.max_accel)?;
        if let Some(g) = self.initial_gap {
            positive("initial_gap", g)?;
        }
        self.thresholds.validate()?;
        if !(self.injury.slope > 0.0) {
            return Err(SimError::Config("injury slope must be > 0".into()));
        }
        if self.horizon / self.dt > MAX_STEPS {
            return Err(SimError::StepOverflow { horizon: self.horizon, dt: self.dt });
        }
        Ok(())
    }

    fn steps(&self, horizon: f64) -> usize {
        (horizon / self.dt).round() as usize
    }
}

/// A sampled threat vector together with its densities under both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub scenario: ScenarioTag,
    /// Values in the threat model's variable order.
    pub values: Vec<f64>,
    pub natural_density: f64,
    pub proposal_density: f64,
}

impl EpisodeParams {
    /// Params drawn from the natural model itself.
    pub fn natural(model: &ThreatModel, values: Vec<f64>) -> Self {
        let d = model.joint_pdf(&values);
        Self { scenario: model.scenario(), values, natural_density: d, proposal_density: d }
    }

    pub fn weight(&self) -> f64 {
        self.natural_density / self.proposal_density
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: OutcomeEvent,
    pub injury_prob: f64,
    pub weight: f64,
    pub params: EpisodeParams,
    pub episode_index: u64,
}

/// Outcome of simulating one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub outcome: OutcomeEvent,
    pub injury_prob: f64,
}

/// Anything that maps a threat vector to an outcome.
pub trait EpisodeModel: Sync {
    fn evaluate(&self, params: &EpisodeParams) -> Result<Evaluation, SimError>;

    fn run(&self, params: EpisodeParams, episode_index: u64) -> Result<EpisodeResult, SimError> {
        let ev = self.evaluate(&params)?;
        Ok(EpisodeResult {
            outcome: ev.outcome,
            injury_prob: ev.injury_prob,
            weight: params.weight(),
            params,
            episode_index,
        })
    }
}

/// Draws a threat vector from `proposal` and records both joint densities.
pub fn sample_episode_params<R: Rng + ?Sized>(
    natural: &ThreatModel,
    proposal: &ThreatModel,
    rng: &mut R,
) -> Result<EpisodeParams, ModelError> {
    natural.check_proposal(proposal)?;
    Ok(sample_unchecked(natural, proposal, rng))
}

pub(crate) fn sample_unchecked<R: Rng + ?Sized>(
    natural: &ThreatModel,
    proposal: &ThreatModel,
    rng: &mut R,
) -> EpisodeParams {
    let values: Vec<f64> = proposal.dists().map(|d| d.sample(rng)).collect();
    let proposal_density = proposal.joint_pdf(&values);
    let natural_density = if std::ptr::eq(natural, proposal) || natural == proposal {
        proposal_density
    } else {
        natural.joint_pdf(&values)
    };
    EpisodeParams { scenario: natural.scenario(), values, natural_density, proposal_density }
}

/// Lead-vehicle acceleration schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeadManeuver {
    Constant,
    /// Brake at `decel` (magnitude) over `[onset, onset + duration)`, then hold speed.
    Brake { onset: f64, decel: f64, duration: f64 },
}

impl LeadManeuver {
    /// Mean acceleration over `[t, t + dt)`.
    pub fn accel(&self, t: f64, dt: f64) -> f64 {
        match *self {
            LeadManeuver::Constant => 0.0,
            LeadManeuver::Brake { onset, decel, duration } => {
                let overlap = ((t + dt).min(onset + duration) - t.max(onset)).max(0.0);
                -decel * overlap / dt
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub ego: VehicleState,
    pub lead: VehicleState,
    pub maneuver: LeadManeuver,
}

/// Places both vehicles for an episode.
///
/// `equilibrium_gap` supplies the car-following start gap when the config
/// does not fix one.
pub fn build_initial_scene<G>(params: &EpisodeParams, config: &SimConfig, equilibrium_gap: G) -> Result<Scene, SimError>
where
    G: FnOnce(f64) -> f64,
{
    let len = config.thresholds.vehicle_length;
    let invalid = |m: String| Err(SimError::InvalidScene(m));
    if params.values.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite threat value".into());
    }
    match params.scenario {
        ScenarioTag::CarFollowing => {
            let [v0, decel, duration] = params.values[..] else {
                return invalid(format!("car_following needs 3 values, got {}", params.values.len()));
            };
            if v0 < 0.0 || decel < 0.0 || duration < 0.0 {
                return invalid(format!("negative car-following parameter (v0={v0}, d={decel}, tau={duration})"));
            }
            let gap = config.initial_gap.unwrap_or_else(|| equilibrium_gap(v0));
            if !(gap > config.thresholds.crash_gap && gap.is_finite()) {
                return invalid(format!("initial gap {gap} is not a valid following gap"));
            }
            Ok(Scene {
                ego: VehicleState::new(0.0, v0),
                lead: VehicleState::new(gap + len, v0),
                maneuver: LeadManeuver::Brake { onset: BRAKE_ONSET, decel, duration },
            })
        }
        ScenarioTag::CutIn => {
            let [range, closing, lead_speed] = params.values[..] else {
                return invalid(format!("cut_in needs 3 values, got {}", params.values.len()));
            };
            if !(range > 0.0) {
                return invalid(format!("cut-in range must be > 0, got {range}"));
            }
            if lead_speed < 0.0 {
                return invalid(format!("negative lead speed {lead_speed}"));
            }
            let ego_speed = lead_speed + closing;
            if ego_speed < 0.0 {
                return invalid(format!("implied ego speed {ego_speed} is negative"));
            }
            Ok(Scene {
                ego: VehicleState::new(0.0, ego_speed),
                lead: VehicleState::new(range + len, lead_speed),
                maneuver: LeadManeuver::Constant,
            })
        }
        ScenarioTag::Synthetic => invalid("synthetic scenarios have no vehicle scene".into()),
    }
}

/// Runs the closed loop from `scene` until the horizon or first contact.
pub fn simulate<P: EgoPolicy + ?Sized>(
    policy: &P,
    scene: &Scene,
    config: &SimConfig,
    horizon: f64,
) -> Result<Trajectory, SimError> {
    let dt = config.dt;
    let len = config.thresholds.vehicle_length;
    let steps = config.steps(horizon);
    let mut ego = scene.ego;
    let mut lead = scene.lead;
    let mut traj = Trajectory::new(dt, len, (ego, lead))?.with_capacity(steps + 1);
    for k in 0..steps {
        let gap = bumper_gap(&ego, &lead, len);
        if gap <= config.thresholds.crash_gap {
            break;
        }
        let t = k as f64 * dt;
        let cmd = policy.decide(&Observation { speed: ego.speed, gap, lead_speed: lead.speed });
        if !cmd.is_finite() {
            return Err(SimError::PolicyFault { policy_id: policy.policy_id().to_string(), t });
        }
        let cmd = cmd.clamp(-config.max_brake, config.max_accel);
        ego = advance(ego, cmd, dt);
        lead = advance(lead, scene.maneuver.accel(t, dt), dt);
        traj.push(ego, lead);
    }
    Ok(traj)
}

/// Steady following gap of `policy` behind a lead cruising at `v0`.
pub fn equilibrium_gap<P: EgoPolicy + ?Sized>(policy: &P, v0: f64, config: &SimConfig) -> Result<f64, SimError> {
    let len = config.thresholds.vehicle_length;
    let start = 2.0 + 1.5 * v0;
    let scene = Scene {
        ego: VehicleState::new(0.0, v0),
        lead: VehicleState::new(start + len, v0),
        maneuver: LeadManeuver::Constant,
    };
    let traj = simulate(policy, &scene, config, WARMUP_HORIZON)?;
    Ok(traj.gap_at(traj.len() - 1))
}

/// Classifies a finished trajectory and scores injury risk.
pub fn evaluate_trajectory(traj: &Trajectory, config: &SimConfig) -> Result<Evaluation, SimError> {
    let outcome = detect_outcome(traj, &config.thresholds);
    let injury_prob = match outcome {
        OutcomeEvent::Crash { delta_v, .. } => injury_probability(delta_v, &config.injury)?,
        _ => 0.0,
    };
    Ok(Evaluation { outcome, injury_prob })
}

/// One episode without equilibrium caching.
pub fn run_episode<P: EgoPolicy + ?Sized>(
    policy: &P,
    params: &EpisodeParams,
    config: &SimConfig,
    episode_index: u64,
) -> Result<EpisodeResult, SimError> {
    config.validate()?;
    let mut warmup_err = None;
    let scene = build_initial_scene(params, config, |v0| {
        equilibrium_gap(policy, v0, config).unwrap_or_else(|e| {
            warmup_err = Some(e);
            f64::NAN
        })
    });
    if let Some(e) = warmup_err {
        return Err(e);
    }
    let traj = simulate(policy, &scene?, config, config.horizon)?;
    let ev = evaluate_trajectory(&traj, config)?;
    Ok(EpisodeResult {
        outcome: ev.outcome,
        injury_prob: ev.injury_prob,
        weight: params.weight(),
        params: params.clone(),
        episode_index,
    })
}

/// Simulation engine for one policy, caching equilibrium gaps per v0.
pub struct SimEngine<P> {
    policy: P,
    config: SimConfig,
    equilibrium: Mutex<HashMap<u64, f64>>,
}

impl<P: EgoPolicy> SimEngine<P> {
    pub fn new(policy: P, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self { policy, config, equilibrium: Mutex::new(HashMap::new()) })
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn equilibrium_gap(&self, v0: f64) -> Result<f64, SimError> {
        let key = v0.to_bits();
        if let Some(g) = self.equilibrium.lock().expect("cache lock").get(&key) {
            return Ok(*g);
        }
        let g = equilibrium_gap(&self.policy, v0, &self.config)?;
        self.equilibrium.lock().expect("cache lock").insert(key, g);
        Ok(g)
    }

    pub fn scene(&self, params: &EpisodeParams) -> Result<Scene, SimError> {
        let mut warmup_err = None;
        let scene = build_initial_scene(params, &self.config, |v0| {
            self.equilibrium_gap(v0).unwrap_or_else(|e| {
                warmup_err = Some(e);
                f64::NAN
            })
        });
        match warmup_err {
            Some(e) => Err(e),
            None => scene,
        }
    }

    /// Full trajectory for one parameter vector.
    pub fn trajectory(&self, params: &EpisodeParams) -> Result<Trajectory, SimError> {
        let scene = self.scene(params)?;
        simulate(&self.policy, &scene, &self.config, self.config.horizon)
    }
}

impl<P: EgoPolicy> EpisodeModel for SimEngine<P> {
    fn evaluate(&self, params: &EpisodeParams) -> Result<Evaluation, SimError> {
        let traj = self.trajectory(params)?;
        evaluate_trajectory(&traj, &self.config)
    }
}

/// Analytic fixture: "crash" iff variable `index` exceeds `threshold`.
///
/// Non-events report `threshold − x` as their minimum gap so that severity
/// ranking has a gradient toward the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEvent {
    pub index: usize,
    pub threshold: f64,
}

impl EpisodeModel for ThresholdEvent {
    fn evaluate(&self, params: &EpisodeParams) -> Result<Evaluation, SimError> {
        let x = *params
            .values
            .get(self.index)
            .ok_or_else(|| SimError::InvalidScene(format!("no threat value at index {}", self.index)))?;
        let outcome = if x > self.threshold {
            OutcomeEvent::Crash { delta_v: x - self.threshold, time_of_impact: 0.0 }
        } else {
            OutcomeEvent::Safe { min_ttc: f64::INFINITY, min_gap: self.threshold - x }
        };
        Ok(Evaluation { outcome, injury_prob: 0.0 })
    }
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,ego_pos,ego_v,ego_a,lead_pos,lead_v,lead_a,gap,ttc";

/// Writes one row per sample with header [`TRAJECTORY_CSV_HEADER`]; undefined TTC is `inf`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for (i, (e, l)) in traj.samples().iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            i as f64 * traj.dt(),
            e.position,
            e.speed,
            e.accel,
            l.position,
            l.speed,
            l.accel,
            traj.gap_at(i),
            traj.ttc_at(i)
        )?;
    }
    Ok(())
}
