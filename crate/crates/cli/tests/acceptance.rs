//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits nonzero on any failure not listed in `EXPECTED_FAILURES`, or if a
//! listed criterion unexpectedly passes.

use accel_eval::estimator::{
    acceleration_factor, ce_optimize, enumerate_exact, CeConfig, CrudeVariance, Estimate, Estimator, EstimatorOptions,
    Metric, StoppingRule,
};
use accel_eval::fixtures;
use accel_eval::ingest::{
    build_threat_model, extract_events, generate_synthetic_log, ExtractedEvent, ExtractionCriteria, SyntheticProfile,
};
use accel_eval::reversal::{equivalent_miles, per_event_to_per_mile, required_naturalistic_miles, ExposureModel};
use accel_eval::sim::{run_episode, EpisodeParams, SimConfig, SimEngine};
use accel_eval::{aeb_overlay, idm_policy, DistributionSpec, IdmParams, ScenarioTag, ThreatModel};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_accel-eval");

/// Criterion 6: the closed-form mileage is ~8.7e7, two orders below the cited figure.
const EXPECTED_FAILURES: &[u32] = &[6];

const C1_THRESHOLD: f64 = 13.8;
const C1_N: u64 = 20_000;
const C1_MAX_REL_ERR: f64 = 0.10;
const C1_MIN_FACTOR: f64 = 300.0;
const C1_MAX_SECONDS: f64 = 10.0;

const C2_CRUDE_N: u64 = 200_000;
const C2_IS_N: u64 = 20_000;
const C2_WORKERS: usize = 8;
const C2_MAX_Z: f64 = 3.0;
const C2_MAX_SECONDS: f64 = 60.0;

const C3_N: u64 = 1000;
const C3_AGREE_REPS: u64 = 100;
const C3_MIN_AGREE: usize = 99;
const C3_AGREE_SE: f64 = 3.0;
const C3_COVERAGE_REPS: u64 = 200;
const C3_COVERAGE: (f64, f64) = (0.70, 0.90);
/// Exact crash probability of the enumerable fixture under the default IDM.
const C3_FROZEN_EXACT: f64 = 0.032;

const C4_MIN_REDUCTION: f64 = 10.0;
const C4_RATE_BRACKET: (f64, f64) = (0.05, 0.3);

const C6_CITED_MILES: f64 = 11e9;
const C6_MAX_RATIO: f64 = 10.0;

const C8_EVENTS: usize = 10_000;
const C8_MIN_PR: f64 = 0.9;
const C8_MEAN_TOL: f64 = 0.10;

const C9_MAX_REL_HALF_WIDTH: f64 = 0.2;
const C9_CONFIDENCE: f64 = 0.80;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn exp_model(rate: f64) -> ThreatModel {
    ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(rate).unwrap())]).unwrap()
}

fn idm_engine() -> SimEngine<accel_eval::Idm> {
    SimEngine::new(idm_policy(IdmParams::default()).unwrap(), SimConfig::default()).unwrap()
}

fn rel_half_width(e: &Estimate) -> f64 {
    (e.ci.1 - e.ci.0) / 2.0 / e.p_hat
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (natural, event) = fixtures::exponential_threshold(C1_THRESHOLD);
    let est = Estimator::new(&event, EstimatorOptions { workers: 1, ..Default::default() }).unwrap();
    let ce = ce_optimize(&est, &natural, &CeConfig::default(), Metric::Crash, 1).unwrap();
    let e = est.importance_sampling(&natural, &ce.proposal, Metric::Crash, C1_N, 2).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let truth = (-C1_THRESHOLD).exp();
    let rel = (e.p_hat - truth).abs() / truth;
    let factor = acceleration_factor(CrudeVariance::Analytic { p: truth }, &e);
    outcome(
        rel <= C1_MAX_REL_ERR && factor >= C1_MIN_FACTOR && secs <= C1_MAX_SECONDS,
        format!("p_hat {:.4e} vs {truth:.4e}, rel err {rel:.4}, factor {factor:.3e}, {secs:.2} s", e.p_hat),
    )
}

/// Crude and CE-driven IS estimates on the inflated fixture, shared by criteria 2 and 4.
struct Inflated {
    crude: Estimate,
    is: Estimate,
    secs: f64,
}

fn inflated_runs() -> Inflated {
    let start = Instant::now();
    let engine = idm_engine();
    let natural = fixtures::inflated_car_following();
    let est = Estimator::new(&engine, EstimatorOptions { workers: C2_WORKERS, ..Default::default() }).unwrap();
    let crude = est.crude_mc(&natural, Metric::Crash, C2_CRUDE_N, 21).unwrap();
    let ce = ce_optimize(&est, &natural, &CeConfig::default(), Metric::Crash, 22).unwrap();
    let is = est.importance_sampling(&natural, &ce.proposal, Metric::Crash, C2_IS_N, 23).unwrap();
    Inflated { crude, is, secs: start.elapsed().as_secs_f64() }
}

fn criterion_2(r: &Inflated) -> Outcome {
    let se = (r.crude.variance + r.is.variance).sqrt();
    let z = (r.crude.p_hat - r.is.p_hat) / se;
    outcome(
        z.abs() <= C2_MAX_Z && r.secs <= C2_MAX_SECONDS,
        format!(
            "crude {:.4e} (n {}), IS {:.4e} (n {}), z {z:.3}, {:.1} s at {C2_WORKERS} workers",
            r.crude.p_hat, r.crude.n, r.is.p_hat, r.is.n, r.secs
        ),
    )
}

fn criterion_3() -> Outcome {
    let engine = idm_engine();
    let natural = fixtures::enumerable_car_following();
    let exact = enumerate_exact(&engine, &natural, Metric::Crash).unwrap();
    let est = Estimator::new(&engine, EstimatorOptions::default()).unwrap();
    let proposal = ce_optimize(&est, &natural, &CeConfig::default(), Metric::Crash, 31).unwrap().proposal;
    let mut agree = [0usize; 2];
    let mut covered = [0usize; 2];
    for rep in 0..C3_COVERAGE_REPS {
        let runs = [
            est.crude_mc(&natural, Metric::Crash, C3_N, 10_000 + rep).unwrap(),
            est.importance_sampling(&natural, &proposal, Metric::Crash, C3_N, 20_000 + rep).unwrap(),
        ];
        for (k, e) in runs.iter().enumerate() {
            if rep < C3_AGREE_REPS && (e.p_hat - exact).abs() <= C3_AGREE_SE * e.std_error() {
                agree[k] += 1;
            }
            if e.ci.0 <= exact && exact <= e.ci.1 {
                covered[k] += 1;
            }
        }
    }
    let cov = covered.map(|c| c as f64 / C3_COVERAGE_REPS as f64);
    let cov_ok = cov.iter().all(|c| (C3_COVERAGE.0..=C3_COVERAGE.1).contains(c));
    outcome(
        (exact - C3_FROZEN_EXACT).abs() < 1e-12 && agree.iter().all(|a| *a >= C3_MIN_AGREE) && cov_ok,
        format!(
            "exact {exact:.6}, within 3 SE crude {}/{C3_AGREE_REPS} IS {}/{C3_AGREE_REPS}, coverage crude {:.3} IS {:.3}",
            agree[0], agree[1], cov[0], cov[1]
        ),
    )
}

fn criterion_4(r: &Inflated) -> Outcome {
    let reduction = acceleration_factor(CrudeVariance::of(&r.crude), &r.is);
    let (_, event) = fixtures::exponential_threshold(10.0);
    let est = Estimator::new(&event, EstimatorOptions::default()).unwrap();
    let ce = ce_optimize(&est, &exp_model(1.0), &CeConfig::default(), Metric::Crash, 41).unwrap();
    let rate = match ce.proposal.get("x") {
        Some(DistributionSpec::Exponential { rate }) => *rate,
        other => panic!("unexpected proposal {other:?}"),
    };
    // grid search of the IS second moment ∫_c^∞ e^{-2x}/(r e^{-rx}) dx
    let second_moment = |r: f64| (-(2.0 - r) * 10.0).exp() / (r * (2.0 - r));
    let oracle = (1..2000).map(|i| i as f64 * 1e-3).min_by(|a, b| second_moment(*a).total_cmp(&second_moment(*b))).unwrap();
    let bracket = C4_RATE_BRACKET.0..=C4_RATE_BRACKET.1;
    outcome(
        reduction >= C4_MIN_REDUCTION && bracket.contains(&rate) && bracket.contains(&oracle),
        format!("variance reduction {reduction:.2}x, CE rate {rate:.4} (grid optimum {oracle:.3})"),
    )
}

fn criterion_5() -> Outcome {
    let half = ExposureModel::new(0.5, "acceptance").unwrap();
    let per_mile = per_event_to_per_mile(1e-4, (1e-4, 1e-4), &half);
    let unit = ExposureModel::new(1.0, "acceptance").unwrap();
    let low = equivalent_miles(1000, &unit, 300.0);
    let high = equivalent_miles(1000, &unit, 100_000.0);
    outcome(
        per_mile.rate == 5e-5 && per_mile.miles_per_event == 20_000.0 && low == 3e5 && high == 1e8,
        format!(
            "rate {:e}/mile, one per {} miles, equivalent miles {low:e} .. {high:e}",
            per_mile.rate, per_mile.miles_per_event
        ),
    )
}

fn criterion_6() -> Outcome {
    let miles = required_naturalistic_miles(1e-8, 0.9, 0.80);
    let ratio = miles / C6_CITED_MILES;
    outcome(
        (1.0 / C6_MAX_RATIO..=C6_MAX_RATIO).contains(&ratio),
        format!("required {miles:.4e} miles, cited {C6_CITED_MILES:e}, ratio {ratio:.4e}"),
    )
}

fn stable_report(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn run_cli(config: &Value, dir: &Path, name: &str, workers: &str) -> Option<i32> {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(BIN)
        .args(["run", "--config", path.to_str().unwrap(), "--workers", workers])
        .env_remove("ACCEL_EVAL_OUT")
        .env_remove("ACCEL_EVAL_WORKERS")
        .output()
        .ok()?
        .status
        .code()
}

fn inflated_config(method: &str, out: &str) -> Value {
    let model: Value = serde_json::from_str(&fixtures::inflated_car_following().to_json_string()).unwrap();
    json!({
        "scenario": "car_following",
        "policy": { "kind": "idm" },
        "threat_model": { "inline": model },
        "method": method,
        "n": 2000,
        "master_seed": 77,
        "ce": { "iterations": 3, "samples_per_iter": 1000 },
        "output_dir": out,
    })
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(&str, &str)> = vec![("w1", "1"), ("w2", "2"), ("w8", "8"), ("w8again", "8")];
    let mut reports = Vec::new();
    for (name, workers) in &runs {
        let code = run_cli(&inflated_config("is_ce", name), tmp.path(), name, workers);
        if code != Some(0) {
            return outcome(false, format!("run {name} exited {code:?}"));
        }
        reports.push(stable_report(&tmp.path().join(name)));
    }
    let identical = reports.iter().all(|r| r == &reports[0]);
    outcome(identical, format!("{} runs (workers 1, 2, 8, 8), run_id {}", runs.len(), reports[0]["run_id"]))
}

fn matched_fraction(a: &[ExtractedEvent], b: &[ExtractedEvent], dt: f64) -> f64 {
    let hit = |x: &ExtractedEvent| {
        b.iter().any(|y| {
            x.kind.name() == y.kind.name()
                && x.source.log_id == y.source.log_id
                && (x.source.t_start - y.source.t_start).abs() <= dt + 1e-9
        })
    };
    a.iter().filter(|x| hit(x)).count() as f64 / a.len() as f64
}

fn criterion_8() -> Outcome {
    let profile = SyntheticProfile { duration: 36_000.0, brake_rate: 1.0 / 30.0, cut_in_rate: 1.0 / 30.0, ..Default::default() };
    let criteria = ExtractionCriteria::default();
    let (mut events, mut truth) = (Vec::new(), Vec::new());
    let count = |ev: &[ExtractedEvent], kind: &str| ev.iter().filter(|e| e.kind.name() == kind).count();
    let mut seed = 0;
    while count(&events, "brake_event") < C8_EVENTS || count(&events, "cut_in_event") < C8_EVENTS {
        let g = generate_synthetic_log(&profile, seed);
        events.extend(extract_events(&g.log, &criteria));
        truth.extend(g.ground_truth);
        seed += 1;
    }
    let precision = matched_fraction(&events, &truth, profile.dt);
    let recall = matched_fraction(&truth, &events, profile.dt);
    let none = BTreeMap::new();
    let cf = build_threat_model(&events, ScenarioTag::CarFollowing, &none).unwrap();
    let ci = build_threat_model(&events, ScenarioTag::CutIn, &none).unwrap();
    let closing = profile.cut_in_closing.mean();
    let expected = [
        (&cf, "v0", profile.base_speed.mean()),
        (&cf, "decel", profile.brake_decel.mean()),
        (&cf, "duration", profile.brake_duration.mean()),
        (&ci, "range", profile.cut_in_range.mean()),
        (&ci, "closing_speed", closing),
        (&ci, "lead_speed", profile.base_speed.mean() - closing),
    ];
    let worst = expected
        .iter()
        .map(|(m, var, want)| (m.get(var).unwrap().mean() - want).abs() / want.abs())
        .fold(0.0, f64::max);
    outcome(
        precision >= C8_MIN_PR && recall >= C8_MIN_PR && worst <= C8_MEAN_TOL,
        format!(
            "{} logs, {} events, precision {precision:.4}, recall {recall:.4}, worst mean deviation {:.2}%",
            seed,
            events.len(),
            100.0 * worst
        ),
    )
}

fn criterion_9() -> Outcome {
    let engine = idm_engine();
    let natural = fixtures::inflated_car_following();
    let rule = StoppingRule { confidence: C9_CONFIDENCE, max_relative_half_width: C9_MAX_REL_HALF_WIDTH, ..Default::default() };
    let est = Estimator::new(&engine, EstimatorOptions { confidence: C9_CONFIDENCE, ..Default::default() }).unwrap();
    let (conv, _) = est.run_until_converged(&natural, &natural, &[Metric::Crash], &rule, 91).unwrap();
    let rhw = rel_half_width(&conv.estimate);

    let tmp = tempfile::tempdir().unwrap();
    let mut tiny = inflated_config("crude", "tiny");
    let obj = tiny.as_object_mut().unwrap();
    obj.remove("n");
    obj.insert("stopping".into(), json!({ "batch_size": 50, "max_episodes": 100 }));
    let code = run_cli(&tiny, tmp.path(), "tiny", "1");
    outcome(
        conv.converged && rhw <= C9_MAX_REL_HALF_WIDTH && code == Some(4),
        format!(
            "converged after {} episodes, relative half-width {rhw:.4}; tiny cap exit {code:?}",
            conv.estimate.n
        ),
    )
}

fn criterion_10() -> Outcome {
    let params = EpisodeParams {
        scenario: ScenarioTag::CarFollowing,
        values: vec![30.0, 8.0, 5.0],
        natural_density: 1.0,
        proposal_density: 1.0,
    };
    let config = SimConfig::default();
    let idm = idm_policy(IdmParams::default()).unwrap();
    let alone = run_episode(&idm, &params, &config, 0).unwrap();
    let aeb = run_episode(&aeb_overlay(idm, 1.5, 8.0).unwrap(), &params, &config, 0).unwrap();
    outcome(
        alone.outcome.is_crash() && !aeb.outcome.is_crash(),
        format!("IDM {:?}; IDM+AEB {:?}", alone.outcome, aeb.outcome),
    )
}

fn main() {
    let inflated = inflated_runs();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "analytic rare-event oracle", criterion_1()),
        (2, "crude and IS agree on the inflated fixture", criterion_2(&inflated)),
        (3, "enumeration oracle and CI coverage", criterion_3()),
        (4, "cross-entropy effectiveness", criterion_4(&inflated)),
        (5, "reversal arithmetic", criterion_5()),
        (6, "required naturalistic miles vs cited figure", criterion_6()),
        (7, "CLI determinism across workers and reruns", criterion_7()),
        (8, "pipeline closure", criterion_8()),
        (9, "stopping rule", criterion_9()),
        (10, "policy differentiation", criterion_10()),
    ];
    let mut unexpected = 0;
    for (id, name, o) in &results {
        let expected_fail = EXPECTED_FAILURES.contains(id);
        let tag = match (o.pass, expected_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if o.pass == expected_fail {
            unexpected += 1;
        }
        println!("{tag} [{id}] {name}: {}", o.detail);
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} passed, {unexpected} unexpected", results.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
