use serde::{Deserialize, Serialize};
use std::ops::Range;

use super::estimate::{z_value, Accumulator, Estimate, Method, Metric};
use super::Episode;
use crate::error::EstimateError;

/// Sequential stopping on relative CI half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    pub confidence: f64,
    /// Stop once half-width ≤ this fraction of the estimate.
    pub max_relative_half_width: f64,
    pub batch_size: u64,
    pub max_episodes: u64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { confidence: 0.80, max_relative_half_width: 0.2, batch_size: 1000, max_episodes: 1_000_000 }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let arg = |m: String| Err(EstimateError::Argument(m));
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return arg(format!("confidence must be in (0, 1), got {}", self.confidence));
        }
        if !(self.max_relative_half_width > 0.0 && self.max_relative_half_width < 1.0) {
            return arg(format!("relative half-width must be in (0, 1), got {}", self.max_relative_half_width));
        }
        if self.batch_size == 0 || self.max_episodes == 0 {
            return arg("batch size and episode cap must be >= 1".into());
        }
        Ok(())
    }
}

/// Estimate after each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Episodes attempted so far, invalid ones included.
    pub n: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl TracePoint {
    pub fn of(e: &Estimate, attempted: u64) -> Self {
        Self { n: attempted, p_hat: e.p_hat, ci_lo: e.ci.0, ci_hi: e.ci.1 }
    }
}

/// (weight, metric value) pairs for one batch, in episode order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub contributions: Vec<(f64, f64)>,
    pub invalid: u64,
}

impl Batch {
    pub fn from_episodes(eps: &[Episode], metric: Metric) -> Self {
        let mut b = Batch::default();
        for ep in eps {
            match ep {
                Episode::Valid(r) => b.contributions.push((r.weight, metric.of(r))),
                Episode::Invalid { .. } => b.invalid += 1,
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergedEstimate {
    pub estimate: Estimate,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
}

/// Grows the sample batch by batch until the relative half-width target is met
/// or the episode cap is reached (returned with `converged = false`).
///
/// `next_batch` receives the episode index range to simulate.
pub fn run_until_converged<F>(
    mut next_batch: F,
    rule: &StoppingRule,
    (metric, method, seed): (Metric, Method, u64),
) -> Result<ConvergedEstimate, EstimateError>
where
    F: FnMut(Range<u64>) -> Result<Batch, EstimateError>,
{
    rule.validate()?;
    let z = z_value(rule.confidence);
    let mut acc = Accumulator::default();
    let mut trace = Vec::new();
    let mut start = 0u64;
    let mut last: Option<Estimate> = None;
    while start < rule.max_episodes {
        let end = (start + rule.batch_size).min(rule.max_episodes);
        let batch = next_batch(start..end)?;
        for (w, v) in batch.contributions {
            acc.add(w, v);
        }
        (0..batch.invalid).for_each(|_| acc.add_invalid());
        start = end;
        if acc.n() == 0 {
            continue;
        }
        let e = acc.estimate(metric, method, rule.confidence, seed)?;
        trace.push(TracePoint::of(&e, end));
        let half_width = z * e.variance.sqrt();
        let done = e.p_hat > 0.0 && half_width <= rule.max_relative_half_width * e.p_hat;
        last = Some(e);
        if done {
            let estimate = last.take().expect("estimate recorded above");
            return Ok(ConvergedEstimate { estimate, converged: true, trace });
        }
    }
    match last {
        Some(estimate) => Ok(ConvergedEstimate { estimate, converged: false, trace }),
        None => Err(EstimateError::AllInvalid(acc.invalid() as usize)),
    }
}
