//! Conversion of per-episode probabilities into per-mile rates and the
//! comparison against human-driver baselines.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::estimator::Estimate;
use crate::normal;
use crate::threat::ScenarioTag;

/// Improvement over the human baseline that the verdict has to establish.
pub const DEFAULT_REQUIRED_IMPROVEMENT: f64 = 0.9;

/// Rate at which the scenario's initiating event occurs in ordinary driving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureModel {
    pub events_per_mile: f64,
    pub source_tag: String,
}

impl ExposureModel {
    pub fn new(events_per_mile: f64, source_tag: impl Into<String>) -> Result<Self, String> {
        if !(events_per_mile > 0.0 && events_per_mile.is_finite()) {
            return Err(format!("events_per_mile must be finite and > 0, got {events_per_mile}"));
        }
        Ok(Self { events_per_mile, source_tag: source_tag.into() })
    }

    /// Synthetic default: 1 brake event per mile, 0.2 cut-ins per mile.
    pub fn default_for(scenario: ScenarioTag) -> Self {
        let rate = match scenario {
            ScenarioTag::CarFollowing => 1.0,
            ScenarioTag::CutIn => 0.2,
            ScenarioTag::Synthetic => 1.0,
        };
        Self { events_per_mile: rate, source_tag: "synthetic-default".into() }
    }

    pub fn validate(&self) -> Result<(), String> {
        Self::new(self.events_per_mile, self.source_tag.clone()).map(|_| ())
    }
}

/// Human-driver per-mile rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanBaseline {
    pub police_reported_crash_rate: f64,
    pub fatal_rate: f64,
    pub incident_data_rate: f64,
}

impl Default for HumanBaseline {
    fn default() -> Self {
        Self { police_reported_crash_rate: 1.0 / 530_000.0, fatal_rate: 1.0 / 100_000_000.0, incident_data_rate: 1.0 / 100_000.0 }
    }
}

impl HumanBaseline {
    pub fn validate(&self) -> Result<(), String> {
        let rates = [self.police_reported_crash_rate, self.fatal_rate, self.incident_data_rate];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err("baseline rates must be finite and > 0".into());
        }
        if self.fatal_rate > self.police_reported_crash_rate {
            return Err("fatal rate exceeds police-reported crash rate".into());
        }
        Ok(())
    }

    /// Baseline compared against each metric: crash against police-reported
    /// crashes, injury against fatalities, conflict against incident data.
    pub fn rate_for(&self, metric: crate::estimator::Metric) -> f64 {
        use crate::estimator::Metric;
        match metric {
            Metric::Crash => self.police_reported_crash_rate,
            Metric::Injury => self.fatal_rate,
            Metric::Conflict => self.incident_data_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    SaferAtConfidence,
    NotEstablished,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::SaferAtConfidence => "SAFER_AT_CONFIDENCE",
            Verdict::NotEstablished => "NOT_ESTABLISHED",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A per-mile rate with its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerMileRate {
    pub rate: f64,
    #[serde(with = "crate::json::ext_f64_pair")]
    pub ci: (f64, f64),
    /// `1 / rate`, infinite when the rate is zero.
    #[serde(with = "crate::json::ext_f64")]
    pub miles_per_event: f64,
}

pub fn per_event_to_per_mile(p_event: f64, ci: (f64, f64), exposure: &ExposureModel) -> PerMileRate {
    let k = exposure.events_per_mile;
    let rate = p_event * k;
    PerMileRate { rate, ci: (ci.0 * k, ci.1 * k), miles_per_event: miles_per_event(rate) }
}

fn miles_per_event(rate: f64) -> f64 {
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_rate: f64,
    /// `1 − rate / baseline` at the point estimate.
    pub improvement: f64,
    pub required_improvement: f64,
    pub verdict: Verdict,
}

/// Safer iff the upper CI bound is at most `(1 − required_improvement)·baseline`.
pub fn safety_comparison(av: &PerMileRate, baseline_rate: f64, required_improvement: f64) -> Comparison {
    let limit = (1.0 - required_improvement) * baseline_rate;
    let verdict = if av.ci.1 <= limit { Verdict::SaferAtConfidence } else { Verdict::NotEstablished };
    Comparison { baseline_rate, improvement: 1.0 - av.rate / baseline_rate, required_improvement, verdict }
}

/// Human-readable statement of [`required_naturalistic_miles`].
pub const REQUIRED_MILES_FORMULA: &str =
    "M = z^2 / (improvement^2 * baseline_rate), z the one-sided standard-normal quantile at the confidence: \
     the mileage at which z*sqrt(baseline_rate*M) <= improvement*baseline_rate*M";

/// Naturalistic miles needed for a one-sided normal test at `confidence`
/// to separate an AV at `(1 − improvement)·baseline` from the baseline.
pub fn required_naturalistic_miles(baseline_rate: f64, improvement: f64, confidence: f64) -> f64 {
    let z = normal::quantile(confidence);
    z * z / (improvement * improvement * baseline_rate)
}

/// Episode exposure miles scaled by the measured acceleration factor.
pub fn equivalent_miles(n_episodes: u64, exposure: &ExposureModel, acceleration_factor: f64) -> f64 {
    exposure_miles(n_episodes, exposure) * acceleration_factor
}

/// Miles of ordinary driving that would contain `n_episodes` initiating events.
pub fn exposure_miles(n_episodes: u64, exposure: &ExposureModel) -> f64 {
    n_episodes as f64 / exposure.events_per_mile
}

/// Real-world view of one metric's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    #[serde(flatten)]
    pub estimate: Estimate,
    pub per_mile_rate: f64,
    #[serde(with = "crate::json::ext_f64_pair")]
    pub per_mile_ci: (f64, f64),
    #[serde(with = "crate::json::ext_f64")]
    pub miles_per_event: f64,
    pub baseline_rate: f64,
    pub improvement: f64,
    pub verdict: Verdict,
}

impl RateReport {
    pub fn new(estimate: Estimate, exposure: &ExposureModel, baseline: &HumanBaseline, required_improvement: f64) -> Self {
        let rate = per_event_to_per_mile(estimate.p_hat, estimate.ci, exposure);
        let cmp = safety_comparison(&rate, baseline.rate_for(estimate.metric), required_improvement);
        Self {
            estimate,
            per_mile_rate: rate.rate,
            per_mile_ci: rate.ci,
            miles_per_event: rate.miles_per_event,
            baseline_rate: cmp.baseline_rate,
            improvement: cmp.improvement,
            verdict: cmp.verdict,
        }
    }
}
