//! Ego control policies under test.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::scenario::time_to_collision;

/// What the ego controller sees each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Own speed (m/s).
    pub speed: f64,
    /// Bumper gap to the lead (m).
    pub gap: f64,
    pub lead_speed: f64,
}

/// A longitudinal controller. `decide` must be deterministic.
///
/// The engine clamps the command to the vehicle's limits and treats a
/// non-finite command as a policy fault.
pub trait EgoPolicy: Send + Sync {
    fn decide(&self, obs: &Observation) -> f64;
    fn policy_id(&self) -> &str;
}

impl<P: EgoPolicy + ?Sized> EgoPolicy for Arc<P> {
    fn decide(&self, obs: &Observation) -> f64 {
        (**self).decide(obs)
    }

    fn policy_id(&self) -> &str {
        (**self).policy_id()
    }
}

impl<P: EgoPolicy + ?Sized> EgoPolicy for Box<P> {
    fn decide(&self, obs: &Observation) -> f64 {
        (**self).decide(obs)
    }

    fn policy_id(&self) -> &str {
        (**self).policy_id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Free-flow speed (m/s).
    pub desired_speed: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    /// Jam distance (m).
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    /// Braking authority of the controller itself (m/s²).
    pub max_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { desired_speed: 33.3, time_headway: 1.0, min_gap: 2.0, max_accel: 1.5, comfortable_decel: 3.0, max_decel: 5.0 }
    }
}

/// Intelligent Driver Model, with its braking bounded by `max_decel`.
#[derive(Debug, Clone)]
pub struct Idm {
    params: IdmParams,
    sqrt_ab: f64,
    id: String,
}

/// Builds an IDM policy; every parameter must be positive.
pub fn idm_policy(params: IdmParams) -> Result<Idm, String> {
    let IdmParams { desired_speed, time_headway, min_gap, max_accel, comfortable_decel, max_decel } = params;
    for (name, v) in [
        ("desired_speed", desired_speed),
        ("time_headway", time_headway),
        ("min_gap", min_gap),
        ("max_accel", max_accel),
        ("comfortable_decel", comfortable_decel),
        ("max_decel", max_decel),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("idm parameter `{name}` must be > 0, got {v}"));
        }
    }
    let id = format!(
        "idm(v0={desired_speed},T={time_headway},s0={min_gap},a={max_accel},b={comfortable_decel},bmax={max_decel})"
    );
    Ok(Idm { params, sqrt_ab: (max_accel * comfortable_decel).sqrt(), id })
}

impl Idm {
    pub fn params(&self) -> &IdmParams {
        &self.params
    }
}

impl EgoPolicy for Idm {
    fn decide(&self, obs: &Observation) -> f64 {
        let p = &self.params;
        if !(obs.gap > 0.0) {
            return -p.max_decel;
        }
        let v = obs.speed;
        let free = 1.0 - (v / p.desired_speed).powi(4);
        let dv = v - obs.lead_speed;
        let s_star = p.min_gap + v * p.time_headway + v * dv / (2.0 * self.sqrt_ab);
        let interaction = (s_star.max(0.0) / obs.gap).powi(2);
        (p.max_accel * (free - interaction)).max(-p.max_decel)
    }

    fn policy_id(&self) -> &str {
        &self.id
    }
}

/// Automatic emergency braking layered over a base policy.
#[derive(Debug, Clone)]
pub struct AebOverlay<P> {
    base: P,
    trigger_ttc: f64,
    brake: f64,
    id: String,
}

/// Wraps `base` so that it brakes at `brake` whenever TTC ≤ `trigger_ttc` while closing.
pub fn aeb_overlay<P: EgoPolicy>(base: P, trigger_ttc: f64, brake: f64) -> Result<AebOverlay<P>, String> {
    if !(trigger_ttc > 0.0 && trigger_ttc.is_finite()) {
        return Err(format!("aeb trigger_ttc must be > 0, got {trigger_ttc}"));
    }
    if !(brake > 0.0 && brake.is_finite()) {
        return Err(format!("aeb brake must be > 0, got {brake}"));
    }
    let id = format!("aeb({},ttc={trigger_ttc},brake={brake})", base.policy_id());
    Ok(AebOverlay { base, trigger_ttc, brake, id })
}

impl<P: EgoPolicy> EgoPolicy for AebOverlay<P> {
    fn decide(&self, obs: &Observation) -> f64 {
        let base = self.base.decide(obs);
        if time_to_collision(obs.gap, obs.speed, obs.lead_speed) <= self.trigger_ttc {
            base.min(-self.brake)
        } else {
            base
        }
    }

    fn policy_id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ignores the scene and always returns the same command.
    struct Constant(f64);

    impl EgoPolicy for Constant {
        fn decide(&self, _: &Observation) -> f64 {
            self.0
        }
        fn policy_id(&self) -> &str {
            "constant"
        }
    }

    #[test]
    fn free_flow_equilibrium() {
        let idm = idm_policy(IdmParams::default()).unwrap();
        let v0 = idm.params().desired_speed;
        let a = idm.decide(&Observation { speed: v0, gap: f64::INFINITY, lead_speed: v0 });
        assert!(a.abs() <= 1e-9, "a = {a}");
    }

    #[test]
    fn full_accel_from_rest() {
        let idm = idm_policy(IdmParams::default()).unwrap();
        let a = idm.decide(&Observation { speed: 0.0, gap: 1e12, lead_speed: 0.0 });
        assert!((a - idm.params().max_accel).abs() < 1e-12);
    }

    #[test]
    fn non_positive_gap_brakes_hard() {
        let idm = idm_policy(IdmParams::default()).unwrap();
        assert_eq!(idm.decide(&Observation { speed: 10.0, gap: 0.0, lead_speed: 5.0 }), -idm.params().max_decel);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(idm_policy(IdmParams { time_headway: 0.0, ..IdmParams::default() }).is_err());
        assert!(aeb_overlay(Constant(0.0), 0.0, 8.0).is_err());
        assert!(aeb_overlay(Constant(0.0), 1.0, -1.0).is_err());
    }

    #[test]
    fn aeb_overrides_when_ttc_low() {
        let p = aeb_overlay(Constant(1.0), 1.0, 8.0).unwrap();
        // gap 9 at 10 m/s closing: ttc 0.9
        assert_eq!(p.decide(&Observation { speed: 20.0, gap: 9.0, lead_speed: 10.0 }), -8.0);
        // a harder base command wins
        let p = aeb_overlay(Constant(-9.5), 1.0, 8.0).unwrap();
        assert_eq!(p.decide(&Observation { speed: 20.0, gap: 9.0, lead_speed: 10.0 }), -9.5);
    }

    #[test]
    fn aeb_passes_through_when_not_closing() {
        let idm = idm_policy(IdmParams::default()).unwrap();
        let p = aeb_overlay(idm.clone(), 1.5, 8.0).unwrap();
        for obs in [
            Observation { speed: 10.0, gap: 1.0, lead_speed: 12.0 },
            Observation { speed: 10.0, gap: 0.5, lead_speed: 10.0 },
            Observation { speed: 20.0, gap: 50.0, lead_speed: 19.0 },
        ] {
            assert_eq!(p.decide(&obs), idm.decide(&obs));
        }
        assert!(p.policy_id().starts_with("aeb(idm("));
    }
}
