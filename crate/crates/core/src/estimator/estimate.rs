use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::EstimateError;
use crate::normal;
use crate::scenario::OutcomeEvent;
use crate::sim::EpisodeResult;

/// Which per-episode quantity is being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Indicator of contact.
    Crash,
    /// Indicator of min-TTC at or below the conflict threshold, crashes included.
    Conflict,
    /// Injury probability given the crash delta-v, zero without a crash.
    Injury,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Crash, Metric::Injury, Metric::Conflict];

    pub fn value(&self, outcome: &OutcomeEvent, injury_prob: f64) -> f64 {
        match self {
            Metric::Crash => outcome.is_crash() as u8 as f64,
            Metric::Conflict => (outcome.is_crash() || outcome.is_conflict()) as u8 as f64,
            Metric::Injury => {
                if outcome.is_crash() {
                    injury_prob
                } else {
                    0.0
                }
            }
        }
    }

    pub fn of(&self, r: &EpisodeResult) -> f64 {
        self.value(&r.outcome, r.injury_prob)
    }

    /// Whether the episode counts as an event for this metric.
    pub fn is_event(&self, outcome: &OutcomeEvent) -> bool {
        match self {
            Metric::Crash | Metric::Injury => outcome.is_crash(),
            Metric::Conflict => outcome.is_crash() || outcome.is_conflict(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Crash => "crash",
            Metric::Conflict => "conflict",
            Metric::Injury => "injury",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crash" => Some(Metric::Crash),
            "conflict" => Some(Metric::Conflict),
            "injury" => Some(Metric::Injury),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Crude,
    Importance,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Crude => "crude",
            Method::Importance => "importance",
        }
    }
}

/// A per-episode probability estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub metric: Metric,
    pub method: Method,
    pub p_hat: f64,
    /// Variance of the estimator (per-sample variance / n).
    pub variance: f64,
    #[serde(with = "crate::json::ext_f64_pair")]
    pub ci: (f64, f64),
    pub confidence: f64,
    pub n: u64,
    pub ess: f64,
    pub invalid_count: u64,
    pub seed: u64,
}

impl Estimate {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Variance of a single weighted observation.
    pub fn per_sample_variance(&self) -> f64 {
        self.variance * self.n as f64
    }

    pub fn half_width(&self) -> f64 {
        z_value(self.confidence) * self.std_error()
    }
}

/// Two-sided standard-normal quantile for `confidence`.
pub fn z_value(confidence: f64) -> f64 {
    normal::quantile(0.5 * (1.0 + confidence))
}

/// Normal-approximation interval clamped to `[0, 1]`.
pub fn confidence_interval(p_hat: f64, variance: f64, confidence: f64) -> (f64, f64) {
    let hw = z_value(confidence) * variance.max(0.0).sqrt();
    ((p_hat - hw).clamp(0.0, 1.0), (p_hat + hw).clamp(0.0, 1.0))
}

/// (Σw)² / Σw².
pub fn effective_sample_size(weights: &[f64]) -> Result<f64, EstimateError> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s2 > 0.0) {
        return Err(EstimateError::ZeroWeights);
    }
    Ok((s * s / s2).min(weights.len() as f64))
}

/// Reference per-sample variance for crude Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrudeVariance {
    /// Measured by a crude run.
    Measured(f64),
    /// `p(1 − p)` for a known event probability.
    Analytic { p: f64 },
}

impl CrudeVariance {
    pub fn of(estimate: &Estimate) -> Self {
        CrudeVariance::Measured(estimate.per_sample_variance())
    }

    pub fn per_sample(&self) -> f64 {
        match *self {
            CrudeVariance::Measured(v) => v,
            CrudeVariance::Analytic { p } => p * (1.0 - p),
        }
    }
}

/// Ratio of crude to accelerated per-sample variance, i.e. how many crude
/// episodes buy one accelerated episode at equal CI width.
pub fn acceleration_factor(crude: CrudeVariance, accelerated: &Estimate) -> f64 {
    let base = crude.per_sample();
    let acc = accelerated.per_sample_variance();
    if acc > 0.0 {
        base / acc
    } else if base == 0.0 || accelerated.p_hat == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Running sums for a weighted-mean estimator, fed in episode order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    invalid: u64,
    sum_y: f64,
    sum_y2: f64,
    sum_w: f64,
    sum_w2: f64,
}

impl Accumulator {
    pub fn add(&mut self, weight: f64, value: f64) {
        let y = weight * value;
        self.n += 1;
        self.sum_y += y;
        self.sum_y2 += y * y;
        self.sum_w += weight;
        self.sum_w2 += weight * weight;
    }

    pub fn add_invalid(&mut self) {
        self.invalid += 1;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn invalid(&self) -> u64 {
        self.invalid
    }

    pub fn ess(&self) -> f64 {
        if self.sum_w2 > 0.0 {
            (self.sum_w * self.sum_w / self.sum_w2).min(self.n as f64)
        } else {
            0.0
        }
    }

    pub fn all_weights_zero(&self) -> bool {
        self.sum_w2 == 0.0
    }

    pub fn estimate(&self, metric: Metric, method: Method, confidence: f64, seed: u64) -> Result<Estimate, EstimateError> {
        if self.n == 0 {
            return Err(EstimateError::AllInvalid(self.invalid as usize));
        }
        let n = self.n as f64;
        let p_hat = self.sum_y / n;
        let variance = if self.n > 1 {
            ((self.sum_y2 - self.sum_y * p_hat) / (n - 1.0)).max(0.0) / n
        } else {
            0.0
        };
        Ok(Estimate {
            metric,
            method,
            p_hat,
            variance,
            ci: confidence_interval(p_hat, variance, confidence),
            confidence,
            n: self.n,
            ess: self.ess(),
            invalid_count: self.invalid,
            seed,
        })
    }
}
