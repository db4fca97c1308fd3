//! Crude and importance-sampling estimation, cross-entropy proposal search,
//! sequential stopping and exact enumeration.
//!
//! Episode `i` always draws from the stream addressed by `(master_seed, domain, i)`,
//! and every reduction runs in ascending episode order, so results do not
//! depend on the worker count.

mod ce;
mod estimate;
mod stopping;

pub use ce::{ce_optimize, CeConfig, CeIteration, CeOutcome};
pub use estimate::{
    acceleration_factor, confidence_interval, effective_sample_size, z_value, Accumulator, CrudeVariance, Estimate,
    Method, Metric,
};
pub use stopping::{run_until_converged, Batch, ConvergedEstimate, StoppingRule, TracePoint};

use rayon::prelude::*;
use rayon::ThreadPool;
use std::ops::Range;

use crate::error::{EstimateError, SimError};
use crate::rng::{episode_rng, ESTIMATION_DOMAIN};
use crate::sim::{sample_unchecked, EpisodeModel, EpisodeResult};
use crate::threat::ThreatModel;

/// Default number of episodes between convergence-trace points.
pub const DEFAULT_TRACE_BATCH: u64 = 1000;

/// One simulated episode, or the reason it was excluded.
#[derive(Debug, Clone, PartialEq)]
pub enum Episode {
    Valid(EpisodeResult),
    Invalid { index: u64, reason: String },
}

impl Episode {
    pub fn valid(&self) -> Option<&EpisodeResult> {
        match self {
            Episode::Valid(r) => Some(r),
            Episode::Invalid { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub workers: usize,
    pub confidence: f64,
    /// Episodes per convergence-trace point.
    pub trace_batch: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { workers: 1, confidence: 0.80, trace_batch: DEFAULT_TRACE_BATCH }
    }
}

/// Everything produced by a fixed-size run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// One estimate per requested metric, in request order.
    pub estimates: Vec<Estimate>,
    /// Trace of the first requested metric.
    pub trace: Vec<TracePoint>,
    /// Weights of valid episodes in episode order.
    pub weights: Vec<f64>,
    /// Indices of episodes that were events for the first metric.
    pub event_indices: Vec<u64>,
    pub diagnostics: Vec<String>,
}

/// Runs episodes of one [`EpisodeModel`] on a private worker pool.
pub struct Estimator<'m, M: ?Sized> {
    model: &'m M,
    options: EstimatorOptions,
    pool: ThreadPool,
}

impl<'m, M: EpisodeModel + ?Sized> Estimator<'m, M> {
    pub fn new(model: &'m M, options: EstimatorOptions) -> Result<Self, EstimateError> {
        if !(options.confidence > 0.0 && options.confidence < 1.0) {
            return Err(EstimateError::Argument(format!("confidence must be in (0, 1), got {}", options.confidence)));
        }
        if options.trace_batch == 0 {
            return Err(EstimateError::Argument("trace batch must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers.max(1))
            .build()
            .map_err(|e| EstimateError::Argument(format!("worker pool: {e}")))?;
        Ok(Self { model, options, pool })
    }

    pub fn options(&self) -> &EstimatorOptions {
        &self.options
    }

    pub fn model(&self) -> &M {
        self.model
    }

    /// Simulates episodes `range` drawn from `proposal`, weighted against `natural`.
    pub fn episodes(
        &self,
        natural: &ThreatModel,
        proposal: &ThreatModel,
        master_seed: u64,
        domain: u64,
        range: Range<u64>,
    ) -> Result<Vec<Episode>, EstimateError> {
        natural.check_proposal(proposal)?;
        let model = self.model;
        self.pool.install(|| {
            range
                .into_par_iter()
                .map(|i| {
                    let mut rng = episode_rng(master_seed, domain, i);
                    let params = sample_unchecked(natural, proposal, &mut rng);
                    match model.run(params, i) {
                        Ok(r) => Ok(Episode::Valid(r)),
                        Err(SimError::InvalidScene(reason)) => Ok(Episode::Invalid { index: i, reason }),
                        Err(e) => Err(EstimateError::Sim(e)),
                    }
                })
                .collect()
        })
    }

    /// Crude Monte Carlo from the natural model.
    pub fn crude_mc(&self, natural: &ThreatModel, metric: Metric, n: u64, master_seed: u64) -> Result<Estimate, EstimateError> {
        let mut out = self.run(natural, natural, &[metric], n, master_seed)?;
        Ok(out.estimates.remove(0))
    }

    /// Importance sampling from `proposal`, reweighted to `natural`.
    pub fn importance_sampling(
        &self,
        natural: &ThreatModel,
        proposal: &ThreatModel,
        metric: Metric,
        n: u64,
        master_seed: u64,
    ) -> Result<Estimate, EstimateError> {
        let mut out = self.run(natural, proposal, &[metric], n, master_seed)?;
        let mut e = out.estimates.remove(0);
        e.method = Method::Importance;
        Ok(e)
    }

    /// Fixed-size run estimating several metrics from the same episodes.
    ///
    /// The method tag is `crude` when `proposal == natural`.
    pub fn run(
        &self,
        natural: &ThreatModel,
        proposal: &ThreatModel,
        metrics: &[Metric],
        n: u64,
        master_seed: u64,
    ) -> Result<RunOutput, EstimateError> {
        if n == 0 {
            return Err(EstimateError::Argument("n must be >= 1".into()));
        }
        if metrics.is_empty() {
            return Err(EstimateError::Argument("no metrics requested".into()));
        }
        let method = if natural == proposal { Method::Crude } else { Method::Importance };
        let mut accs = vec![Accumulator::default(); metrics.len()];
        let mut trace = Vec::new();
        let mut sink = Sink::default();
        let mut start = 0;
        while start < n {
            let end = (start + self.options.trace_batch).min(n);
            let eps = self.episodes(natural, proposal, master_seed, ESTIMATION_DOMAIN, start..end)?;
            feed(&eps, metrics, &mut accs, &mut sink);
            if accs[0].n() > 0 {
                let e = accs[0].estimate(metrics[0], method, self.options.confidence, master_seed)?;
                trace.push(TracePoint::of(&e, end));
            }
            start = end;
        }
        finish(accs, metrics, method, self.options.confidence, master_seed, trace, sink)
    }

    /// Batched run that stops once the first metric meets `rule`.
    pub fn run_until_converged(
        &self,
        natural: &ThreatModel,
        proposal: &ThreatModel,
        metrics: &[Metric],
        rule: &StoppingRule,
        master_seed: u64,
    ) -> Result<(ConvergedEstimate, RunOutput), EstimateError> {
        if metrics.is_empty() {
            return Err(EstimateError::Argument("no metrics requested".into()));
        }
        natural.check_proposal(proposal)?;
        let method = if natural == proposal { Method::Crude } else { Method::Importance };
        let mut accs = vec![Accumulator::default(); metrics.len()];
        let mut sink = Sink::default();
        let converged = run_until_converged(
            |range| {
                let eps = self.episodes(natural, proposal, master_seed, ESTIMATION_DOMAIN, range)?;
                feed(&eps, metrics, &mut accs, &mut sink);
                Ok(Batch::from_episodes(&eps, metrics[0]))
            },
            rule,
            (metrics[0], method, master_seed),
        )?;
        let trace = converged.trace.clone();
        let out = finish(accs, metrics, method, rule.confidence, master_seed, trace, sink)?;
        Ok((converged, out))
    }
}

#[derive(Default)]
struct Sink {
    weights: Vec<f64>,
    events: Vec<u64>,
}

fn feed(eps: &[Episode], metrics: &[Metric], accs: &mut [Accumulator], sink: &mut Sink) {
    for ep in eps {
        match ep {
            Episode::Valid(r) => {
                sink.weights.push(r.weight);
                if metrics[0].is_event(&r.outcome) {
                    sink.events.push(r.episode_index);
                }
                for (m, acc) in metrics.iter().zip(accs.iter_mut()) {
                    acc.add(r.weight, m.of(r));
                }
            }
            Episode::Invalid { .. } => accs.iter_mut().for_each(Accumulator::add_invalid),
        }
    }
}

fn finish(
    accs: Vec<Accumulator>,
    metrics: &[Metric],
    method: Method,
    confidence: f64,
    seed: u64,
    trace: Vec<TracePoint>,
    sink: Sink,
) -> Result<RunOutput, EstimateError> {
    let mut diagnostics = Vec::new();
    let first = &accs[0];
    if first.invalid() > 0 {
        diagnostics.push(format!("{} episodes excluded as invalid scenes", first.invalid()));
    }
    if first.n() > 0 && first.all_weights_zero() {
        diagnostics.push("all importance weights are zero; estimate is 0 and ESS is undefined".into());
    }
    let estimates = metrics
        .iter()
        .zip(&accs)
        .map(|(m, acc)| acc.estimate(*m, method, confidence, seed))
        .collect::<Result<Vec<_>, _>>()?;
    for e in &estimates {
        if e.p_hat == 0.0 {
            diagnostics.push(format!("no {} events observed in {} episodes", e.metric, e.n));
        }
    }
    Ok(RunOutput { estimates, trace, weights: sink.weights, event_indices: sink.events, diagnostics })
}

/// Exact expectation of `metric` for an all-discrete model by enumerating the joint support.
///
/// Invalid scenes are excluded and the remaining mass renormalised, matching
/// how the estimators exclude them.
pub fn enumerate_exact<M: EpisodeModel + ?Sized>(
    model: &M,
    natural: &ThreatModel,
    metric: Metric,
) -> Result<f64, EstimateError> {
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(natural.len());
    for (name, d) in natural.variables() {
        match d {
            crate::dist::DistributionSpec::DiscreteEmpirical { values, probs } => {
                axes.push(values.iter().zip(probs).filter(|(_, p)| **p > 0.0).map(|(v, p)| (*v, *p)).collect())
            }
            other => {
                return Err(EstimateError::Enumeration(format!(
                    "variable `{name}` is {}, not discrete",
                    other.family_name()
                )))
            }
        }
    }
    let total: f64 = axes.iter().map(|a| a.len() as f64).product();
    if total > 1e6 {
        return Err(EstimateError::Enumeration(format!("joint support of {total} points exceeds 1e6")));
    }
    let mut idx = vec![0usize; axes.len()];
    let (mut acc, mut valid_mass) = (0.0, 0.0);
    loop {
        let values: Vec<f64> = idx.iter().zip(&axes).map(|(i, a)| a[*i].0).collect();
        let mass: f64 = idx.iter().zip(&axes).map(|(i, a)| a[*i].1).product();
        let params = crate::sim::EpisodeParams {
            scenario: natural.scenario(),
            values,
            natural_density: mass,
            proposal_density: mass,
        };
        match model.evaluate(&params) {
            Ok(ev) => {
                acc += mass * metric.value(&ev.outcome, ev.injury_prob);
                valid_mass += mass;
            }
            Err(SimError::InvalidScene(_)) => {}
            Err(e) => return Err(e.into()),
        }
        // odometer increment
        let mut k = axes.len();
        loop {
            if k == 0 {
                if valid_mass == 0.0 {
                    return Err(EstimateError::AllInvalid(total as usize));
                }
                return Ok(acc / valid_mass);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistributionSpec;
    use crate::policy::{idm_policy, IdmParams};
    use crate::sim::{SimConfig, SimEngine, ThresholdEvent};
    use crate::threat::ScenarioTag;

    fn engine() -> SimEngine<crate::policy::Idm> {
        SimEngine::new(idm_policy(IdmParams::default()).unwrap(), SimConfig::default()).unwrap()
    }

    fn point_cf(v0: f64, d: f64, tau: f64) -> ThreatModel {
        ThreatModel::from_pairs(
            ScenarioTag::CarFollowing,
            [("v0", DistributionSpec::point(v0)), ("decel", DistributionSpec::point(d)), ("duration", DistributionSpec::point(tau))],
        )
        .unwrap()
    }

    fn always_crash_cut_in() -> ThreatModel {
        ThreatModel::from_pairs(
            ScenarioTag::CutIn,
            [
                ("range", DistributionSpec::point(1.0)),
                ("closing_speed", DistributionSpec::point(10.0)),
                ("lead_speed", DistributionSpec::point(15.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn always_crash_is_exact() {
        let eng = engine();
        let est = Estimator::new(&eng, EstimatorOptions::default()).unwrap();
        let e = est.crude_mc(&always_crash_cut_in(), Metric::Crash, 50, 1).unwrap();
        assert_eq!((e.p_hat, e.variance, e.n), (1.0, 0.0, 50));
        assert_eq!(e.method, Method::Crude);
    }

    #[test]
    fn no_brake_never_crashes() {
        let eng = engine();
        let est = Estimator::new(&eng, EstimatorOptions::default()).unwrap();
        let out = est.run(&point_cf(25.0, 6.0, 0.0), &point_cf(25.0, 6.0, 0.0), &[Metric::Crash], 20, 1).unwrap();
        assert_eq!(out.estimates[0].p_hat, 0.0);
        assert!(out.diagnostics.iter().any(|d| d.contains("no crash events")));
    }

    #[test]
    fn invalid_scenes_are_counted() {
        let eng = engine();
        let m = ThreatModel::from_pairs(
            ScenarioTag::CutIn,
            [
                ("range", DistributionSpec::point(20.0)),
                ("closing_speed", DistributionSpec::discrete(vec![-30.0, 2.0], vec![0.5, 0.5]).unwrap()),
                ("lead_speed", DistributionSpec::point(15.0)),
            ],
        )
        .unwrap();
        let est = Estimator::new(&eng, EstimatorOptions::default()).unwrap();
        let e = est.crude_mc(&m, Metric::Crash, 200, 4).unwrap();
        assert!(e.invalid_count > 50 && e.invalid_count < 150, "{}", e.invalid_count);
        assert_eq!(e.n + e.invalid_count, 200);

        let all_bad = m.with_variable("closing_speed", DistributionSpec::point(-30.0)).unwrap();
        assert_eq!(est.crude_mc(&all_bad, Metric::Crash, 10, 4), Err(EstimateError::AllInvalid(10)));
    }

    #[test]
    fn enumeration_examples() {
        let eng = engine();
        // single variable: crash at closing 10 with range 1, safe at closing 0
        let m = ThreatModel::from_pairs(
            ScenarioTag::CutIn,
            [
                ("range", DistributionSpec::point(1.0)),
                ("closing_speed", DistributionSpec::discrete(vec![10.0, 0.0], vec![0.3, 0.7]).unwrap()),
                ("lead_speed", DistributionSpec::point(15.0)),
            ],
        )
        .unwrap();
        assert!((enumerate_exact(&eng, &m, Metric::Crash).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(enumerate_exact(&eng, &point_cf(25.0, 6.0, 0.0), Metric::Crash).unwrap(), 0.0);
        let continuous = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(1.0).unwrap())]).unwrap();
        assert!(matches!(
            enumerate_exact(&ThresholdEvent { index: 0, threshold: 1.0 }, &continuous, Metric::Crash),
            Err(EstimateError::Enumeration(_))
        ));
    }

    #[test]
    fn enumerable_grid_regression() {
        let eng = engine();
        let m = crate::fixtures::enumerable_car_following();
        assert!((enumerate_exact(&eng, &m, Metric::Crash).unwrap() - 0.032).abs() < 1e-12);
        assert!((enumerate_exact(&eng, &m, Metric::Conflict).unwrap() - 0.1235).abs() < 1e-12);
        assert!((enumerate_exact(&eng, &m, Metric::Injury).unwrap() - 0.00270341448787674).abs() < 1e-12);
    }

    #[test]
    fn proposal_equal_to_natural_reproduces_crude() {
        let model = ThresholdEvent { index: 0, threshold: 2.0 };
        let nat = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(1.0).unwrap())]).unwrap();
        let est = Estimator::new(&model, EstimatorOptions::default()).unwrap();
        let crude = est.crude_mc(&nat, Metric::Crash, 3000, 9).unwrap();
        let is = est.importance_sampling(&nat, &nat, Metric::Crash, 3000, 9).unwrap();
        assert_eq!(is.ess, 3000.0);
        assert_eq!((crude.p_hat, crude.variance, crude.ci), (is.p_hat, is.variance, is.ci));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let model = ThresholdEvent { index: 0, threshold: 6.0 };
        let nat = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(1.0).unwrap())]).unwrap();
        let prop = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(0.2).unwrap())]).unwrap();
        let results: Vec<RunOutput> = [1, 2, 8]
            .iter()
            .map(|&w| {
                let est = Estimator::new(&model, EstimatorOptions { workers: w, ..Default::default() }).unwrap();
                est.run(&nat, &prop, &Metric::ALL, 5000, 77).unwrap()
            })
            .collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
    }

    #[test]
    fn trace_has_one_point_per_batch() {
        let model = ThresholdEvent { index: 0, threshold: 1.0 };
        let nat = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(1.0).unwrap())]).unwrap();
        let est = Estimator::new(&model, EstimatorOptions { trace_batch: 300, ..Default::default() }).unwrap();
        let out = est.run(&nat, &nat, &[Metric::Crash], 1000, 1).unwrap();
        assert_eq!(out.trace.iter().map(|t| t.n).collect::<Vec<_>>(), [300, 600, 900, 1000]);
        assert_eq!(out.weights.len(), 1000);
    }
}
