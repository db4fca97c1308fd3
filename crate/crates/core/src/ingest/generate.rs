use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventSource, ExtractedEvent};
use super::log::{DriveLog, LogMeta, LogSample};
use crate::dist::DistributionSpec;
use crate::policy::{idm_policy, EgoPolicy, Idm, IdmParams, Observation};
use crate::scenario::{step_longitudinal, VehicleState};

/// Acceleration of the lead when returning to cruise speed (m/s²).
const RECOVERY_ACCEL: f64 = 1.0;
/// Steady cruising required before the next event may start (s).
const SETTLE_TIME: f64 = 5.0;
/// Smallest gap the recording driver tolerates (m).
const MIN_LOG_GAP: f64 = 0.5;
/// Gap drop an embedded cut-in must produce (m).
const CUT_IN_MIN_JUMP: f64 = 5.0;
const BRAKE_MIN_DURATION: f64 = 0.5;
/// Lowest speed a brake event may end at (m/s).
const BRAKE_FLOOR_SPEED: f64 = 1.0;

/// Recipe for a synthetic drive log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub duration: f64,
    pub dt: f64,
    pub vehicle_length: f64,
    /// Cruise speed of the vehicle ahead, redrawn after every event.
    pub base_speed: DistributionSpec,
    /// Brake events per second.
    pub brake_rate: f64,
    pub brake_decel: DistributionSpec,
    pub brake_duration: DistributionSpec,
    /// Cut-ins per second.
    pub cut_in_rate: f64,
    pub cut_in_range: DistributionSpec,
    pub cut_in_closing: DistributionSpec,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            dt: 0.1,
            vehicle_length: 5.0,
            base_speed: DistributionSpec::truncated_normal(25.0, 3.0, 15.0, 35.0).expect("valid"),
            brake_rate: 1.0 / 60.0,
            brake_decel: DistributionSpec::truncated_normal(3.5, 1.0, 2.2, 8.0).expect("valid"),
            brake_duration: DistributionSpec::truncated_normal(2.0, 0.8, 0.5, 5.0).expect("valid"),
            cut_in_rate: 1.0 / 120.0,
            cut_in_range: DistributionSpec::truncated_normal(12.0, 4.0, 3.0, 30.0).expect("valid"),
            cut_in_closing: DistributionSpec::truncated_normal(3.0, 1.5, -1.0, 8.0).expect("valid"),
        }
    }
}

/// A generated log with the events embedded in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLog {
    pub log: DriveLog,
    pub ground_truth: Vec<ExtractedEvent>,
}

#[derive(Debug, Clone, Copy)]
enum LeadMode {
    Cruise { target: f64 },
    Brake { steps_left: usize, decel: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Arrival {
    Brake,
    CutIn,
}

fn follower() -> Idm {
    let params = IdmParams {
        desired_speed: 45.0,
        time_headway: 1.5,
        min_gap: 4.0,
        max_accel: 2.0,
        comfortable_decel: 3.0,
        max_decel: 8.0,
    };
    idm_policy(params).expect("valid follower parameters")
}

/// Poisson arrival times of both event kinds, merged in time order.
fn arrivals(profile: &SyntheticProfile, rng: &mut ChaCha8Rng) -> Vec<(f64, Arrival)> {
    let mut out = Vec::new();
    for (rate, kind) in [(profile.brake_rate, Arrival::Brake), (profile.cut_in_rate, Arrival::CutIn)] {
        if !(rate > 0.0) {
            continue;
        }
        let gaps = DistributionSpec::exponential(rate).expect("positive rate");
        let mut t = gaps.sample(rng);
        while t < profile.duration {
            out.push((t, kind));
            t += gaps.sample(rng);
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Generates a piecewise-constant-speed log with embedded brake and cut-in
/// events. Arrivals that fall inside an ongoing event are deferred until the
/// lead has cruised steadily for a few seconds; cut-ins that would not shorten
/// the gap by at least 5 m are dropped.
pub fn generate_synthetic_log(profile: &SyntheticProfile, seed: u64) -> SyntheticLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_id = format!("synthetic-{seed}");
    let dt = profile.dt;
    let n = (profile.duration / dt).round() as usize + 1;
    let settle_steps = (SETTLE_TIME / dt).round() as usize;
    let driver = follower();

    let v_start = profile.base_speed.sample(&mut rng);
    let mut lead = VehicleState::new(0.0, v_start);
    let start_gap = 4.0 + 1.5 * v_start;
    let mut ego = VehicleState::new(-(start_gap + profile.vehicle_length), v_start);
    let mut mode = LeadMode::Cruise { target: v_start };
    let mut steady = settle_steps;
    let queue = arrivals(profile, &mut rng);
    let mut next = 0;
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::new();

    for i in 0..n {
        let t = i as f64 * dt;
        let gap = |ego: &VehicleState, lead: &VehicleState| lead.position - ego.position - profile.vehicle_length;

        if next < queue.len() && queue[next].0 <= t && steady >= settle_steps && i + 2 < n {
            let kind = queue[next].1;
            next += 1;
            match kind {
                Arrival::Brake => {
                    let d = profile.brake_decel.sample(&mut rng);
                    let mut steps = (profile.brake_duration.sample(&mut rng) / dt).round() as usize;
                    let room = ((lead.speed - BRAKE_FLOOR_SPEED) / d / dt).floor().max(0.0) as usize;
                    steps = steps.min(room).min(n - 1 - i);
                    if steps as f64 * dt >= BRAKE_MIN_DURATION - 1e-9 {
                        truth.push(ExtractedEvent {
                            kind: EventKind::Brake { v0: lead.speed, decel: d, duration: steps as f64 * dt },
                            source: EventSource { log_id: log_id.clone(), t_start: t },
                        });
                        mode = LeadMode::Brake { steps_left: steps, decel: d };
                        steady = 0;
                    }
                }
                Arrival::CutIn => {
                    let r = profile.cut_in_range.sample(&mut rng);
                    let closing = profile.cut_in_closing.sample(&mut rng);
                    let g = gap(&ego, &lead);
                    let v_lead = ego.speed - closing;
                    if r + CUT_IN_MIN_JUMP <= g && v_lead >= 0.0 && i >= 2 {
                        lead = VehicleState::new(ego.position + profile.vehicle_length + r, v_lead);
                        truth.push(ExtractedEvent {
                            kind: EventKind::CutIn { range: r, closing_speed: closing, lead_speed: v_lead },
                            source: EventSource { log_id: log_id.clone(), t_start: t },
                        });
                        mode = LeadMode::Cruise { target: profile.base_speed.sample(&mut rng) };
                        steady = 0;
                    }
                }
            }
        }

        samples.push(LogSample { t, lead_speed: lead.speed, gap: gap(&ego, &lead) });
        if i + 1 == n {
            break;
        }

        let lead_accel = match &mut mode {
            LeadMode::Brake { steps_left, decel } => {
                let a = -*decel;
                *steps_left -= 1;
                if *steps_left == 0 {
                    mode = LeadMode::Cruise { target: profile.base_speed.sample(&mut rng) };
                }
                a
            }
            LeadMode::Cruise { target } => {
                let diff = *target - lead.speed;
                if diff.abs() <= RECOVERY_ACCEL * dt {
                    steady += 1;
                    diff / dt
                } else {
                    RECOVERY_ACCEL.copysign(diff)
                }
            }
        };
        let obs = Observation { speed: ego.speed, gap: gap(&ego, &lead), lead_speed: lead.speed };
        let cmd = driver.decide(&obs);
        let (e, l) = step_longitudinal(ego, lead, cmd, lead_accel, dt).expect("generator states stay finite");
        ego = e;
        lead = l;
        if gap(&ego, &lead) < MIN_LOG_GAP {
            // the recording driver never collides
            ego.position = lead.position - profile.vehicle_length - MIN_LOG_GAP;
            ego.speed = ego.speed.min(lead.speed);
        }
    }
    let log = DriveLog::new(samples, LogMeta { log_id, source: format!("generator seed {seed}") })
        .expect("generator produces a valid log");
    SyntheticLog { log, ground_truth: truth }
}
