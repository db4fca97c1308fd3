use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::estimate::Metric;
use super::{Episode, Estimator};
use crate::dist::{fit_mle_weighted, DistributionSpec, FamilyTag};
use crate::error::EstimateError;
use crate::rng::ce_domain;
use crate::sim::{EpisodeModel, EpisodeResult};
use crate::threat::ThreatModel;

/// Mass mixed back in from the natural model when a discrete fit drops a support point.
const DISCRETE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeConfig {
    pub iterations: usize,
    pub samples_per_iter: u64,
    pub elite_fraction: f64,
    pub smoothing: f64,
    /// Per-variable bounds on the tilt coefficient θ of the proposal relative
    /// to the natural distribution (Exponential and TruncatedNormal only).
    pub tilt_bounds: BTreeMap<String, (f64, f64)>,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self { iterations: 5, samples_per_iter: 2000, elite_fraction: 0.1, smoothing: 0.7, tilt_bounds: BTreeMap::new() }
    }
}

impl CeConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let arg = |m: String| Err(EstimateError::Argument(m));
        if self.iterations == 0 {
            return arg("CE iterations must be >= 1".into());
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return arg(format!("elite fraction must be in (0, 1), got {}", self.elite_fraction));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return arg(format!("smoothing must be in (0, 1], got {}", self.smoothing));
        }
        if self.elite_count() < 2 {
            return arg(format!(
                "{} samples at elite fraction {} leave fewer than 2 elite episodes",
                self.samples_per_iter, self.elite_fraction
            ));
        }
        for (name, (lo, hi)) in &self.tilt_bounds {
            if !(lo <= hi) {
                return arg(format!("tilt bounds for `{name}` are reversed: [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    fn elite_count(&self) -> usize {
        (self.elite_fraction * self.samples_per_iter as f64).ceil() as usize
    }
}

/// Summary of one CE iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iteration: usize,
    pub valid: u64,
    pub events: u64,
    pub elite: u64,
    /// Worst min_gap inside the elite set (−∞ once the elite are all crashes).
    #[serde(with = "crate::json::ext_f64")]
    pub elite_min_gap: f64,
    /// Proposal after this iteration's update.
    pub proposal: ThreatModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeOutcome {
    pub proposal: ThreatModel,
    pub diagnostics: Vec<String>,
    pub history: Vec<CeIteration>,
}

/// Severity order: events first, then smaller min_gap, then smaller min_ttc.
fn severity(metric: Metric, a: &EpisodeResult, b: &EpisodeResult) -> Ordering {
    let ea = metric.is_event(&a.outcome);
    let eb = metric.is_event(&b.outcome);
    eb.cmp(&ea)
        .then(a.outcome.min_gap().total_cmp(&b.outcome.min_gap()))
        .then(a.outcome.min_ttc().total_cmp(&b.outcome.min_ttc()))
}

fn same_severity(metric: Metric, a: &EpisodeResult, b: &EpisodeResult) -> bool {
    severity(metric, a, b) == Ordering::Equal
}

/// Cross-entropy search for an importance-sampling proposal.
///
/// Each iteration samples from the current proposal, keeps the most severe
/// episodes (all events once there are enough of them), refits every
/// variable by likelihood-ratio-weighted MLE on the elite and smooths the
/// parameters toward the previous proposal.
pub fn ce_optimize<M: EpisodeModel + ?Sized>(
    estimator: &Estimator<'_, M>,
    natural: &ThreatModel,
    ce: &CeConfig,
    metric: Metric,
    master_seed: u64,
) -> Result<CeOutcome, EstimateError> {
    ce.validate()?;
    for name in ce.tilt_bounds.keys() {
        if natural.get(name).is_none() {
            return Err(EstimateError::Argument(format!("tilt bounds given for unknown variable `{name}`")));
        }
    }
    let k = ce.elite_count();
    let mut current = natural.clone();
    let mut diagnostics = Vec::new();
    let mut history = Vec::new();
    for (name, d) in natural.variables() {
        if matches!(d, DistributionSpec::Uniform { .. }) {
            diagnostics.push(format!("`{name}` is uniform and is left at its natural distribution"));
        }
    }

    for it in 0..ce.iterations {
        let eps = estimator.episodes(natural, &current, master_seed, ce_domain(it), 0..ce.samples_per_iter)?;
        let mut valid: Vec<&EpisodeResult> = eps.iter().filter_map(Episode::valid).collect();
        if valid.is_empty() {
            return Err(EstimateError::AllInvalid(eps.len()));
        }
        let events = valid.iter().filter(|r| metric.is_event(&r.outcome)).count();

        if it == 0 && events as f64 >= ce.elite_fraction * valid.len() as f64 {
            diagnostics.push(format!(
                "event is not rare under the natural model ({events} of {} episodes); proposal left at natural",
                valid.len()
            ));
            return Ok(CeOutcome { proposal: natural.clone(), diagnostics, history });
        }

        valid.sort_by(|a, b| severity(metric, a, b).then(a.episode_index.cmp(&b.episode_index)));
        let elite_n = if events >= k { events } else { k.min(valid.len()) };
        if events < k && same_severity(metric, valid[0], valid[valid.len() - 1]) {
            diagnostics.push(format!("iteration {it}: all episodes have equal severity; no progress possible"));
            return Ok(CeOutcome { proposal: natural.clone(), diagnostics, history });
        }
        let elite = &valid[..elite_n];
        let weights: Vec<f64> = elite.iter().map(|r| r.weight).collect();

        let mut next = current.clone();
        for (j, (name, old)) in current.variables().enumerate() {
            let xs: Vec<f64> = elite.iter().map(|r| r.params.values[j]).collect();
            let nat = natural.get(name).expect("proposal shares natural's variables");
            match update(nat, old, &xs, &weights, ce.smoothing, ce.tilt_bounds.get(name).copied()) {
                Ok(Some(d)) => next = next.with_variable(name, d)?,
                Ok(None) => {}
                Err(msg) => diagnostics.push(format!("iteration {it}: `{name}` kept unchanged ({msg})")),
            }
        }
        if let Err(e) = natural.check_proposal(&next) {
            diagnostics.push(format!("iteration {it}: update rejected ({e})"));
            next = current.clone();
        }
        history.push(CeIteration {
            iteration: it,
            valid: valid.len() as u64,
            events: events as u64,
            elite: elite_n as u64,
            elite_min_gap: elite[elite_n - 1].outcome.min_gap(),
            proposal: next.clone(),
        });
        current = next;
    }
    Ok(CeOutcome { proposal: current, diagnostics, history })
}

/// New proposal for one variable, or `None` when the family is left alone.
fn update(
    natural: &DistributionSpec,
    old: &DistributionSpec,
    xs: &[f64],
    weights: &[f64],
    alpha: f64,
    bounds: Option<(f64, f64)>,
) -> Result<Option<DistributionSpec>, String> {
    match old {
        DistributionSpec::Uniform { .. } => Ok(None),
        DistributionSpec::DiscreteEmpirical { values, .. } if values.len() == 1 => Ok(None),
        DistributionSpec::DiscreteEmpirical { values, .. } => {
            let mut mass = vec![0.0; values.len()];
            for (x, w) in xs.iter().zip(weights) {
                if let Some(i) = values.iter().position(|v| v == x) {
                    mass[i] += w;
                }
            }
            let total: f64 = mass.iter().sum();
            if !(total > 0.0) {
                return Err("elite weights are all zero".into());
            }
            let fit = DistributionSpec::discrete(values.clone(), mass.iter().map(|m| m / total).collect())
                .map_err(|e| e.to_string())?;
            let mut blended = fit.blend(old, alpha).map_err(|e| e.to_string())?;
            if let (DistributionSpec::DiscreteEmpirical { probs, .. }, DistributionSpec::DiscreteEmpirical { probs: nat, .. }) =
                (&blended, natural)
            {
                if probs.iter().zip(nat).any(|(p, q)| *p == 0.0 && *q > 0.0) {
                    blended = natural.blend(&blended, DISCRETE_FLOOR).map_err(|e| e.to_string())?;
                }
            }
            Ok(Some(blended))
        }
        _ => {
            let fit = fit_mle_weighted(&FamilyTag::of(old), xs, weights).map_err(|e| e.to_string())?;
            let blended = fit.blend(old, alpha).map_err(|e| e.to_string())?;
            Ok(Some(match bounds {
                Some(b) => clamp_tilt(natural, blended, b),
                None => blended,
            }))
        }
    }
}

/// Clamps the location of `d` so its tilt coefficient relative to `natural` lies in `[lo, hi]`.
fn clamp_tilt(natural: &DistributionSpec, d: DistributionSpec, (lo, hi): (f64, f64)) -> DistributionSpec {
    match (natural, &d) {
        (DistributionSpec::Exponential { rate: r0 }, DistributionSpec::Exponential { rate }) => {
            let theta = (r0 - rate).clamp(lo, hi);
            DistributionSpec::exponential(r0 - theta).unwrap_or(d)
        }
        (
            DistributionSpec::TruncatedNormal { mean: m0, sd: s0, .. },
            DistributionSpec::TruncatedNormal { mean, sd, lo: a, hi: b },
        ) => {
            let theta = ((mean - m0) / (s0 * s0)).clamp(lo, hi);
            DistributionSpec::truncated_normal(m0 + theta * s0 * s0, *sd, *a, *b).unwrap_or(d)
        }
        _ => d,
    }
}
