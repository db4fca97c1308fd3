use accel_eval::estimator::{
    acceleration_factor, ce_optimize, CrudeVariance, Estimator, EstimatorOptions, Metric, RunOutput, DEFAULT_TRACE_BATCH,
};
use accel_eval::ingest::{
    build_threat_model, extract_events, generate_synthetic_log, parse_families, DriveLog, ExtractedEvent,
    ExtractionCriteria, SyntheticProfile,
};
use accel_eval::policy::{aeb_overlay, idm_policy, EgoPolicy, IdmParams};
use accel_eval::report::{
    render_report, rerender, text_summary, weight_histogram, Report, Timing, EQUIVALENT_MILES_DEFINITION,
};
use accel_eval::reversal::{
    equivalent_miles, exposure_miles, required_naturalistic_miles, RateReport, REQUIRED_MILES_FORMULA,
};
use accel_eval::rng::{episode_rng, ESTIMATION_DOMAIN};
use accel_eval::sim::{sample_episode_params, write_trajectory_csv, SimEngine};
use accel_eval::threat::ScenarioTag;
use accel_eval::{EstimateError, IngestError, SimError};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::config::{MethodChoice, PolicyConfig, ResolvedRun, RunConfig};
use crate::plugin::{serve, ExternalPolicy};
use crate::{Failure, EXIT_DISAGREE, EXIT_NOT_CONVERGED, EXIT_OK};

/// Event trajectories written by `run --dump-trajectories`.
pub const MAX_DUMPED_TRAJECTORIES: usize = 100;

/// |z| at or below which two reports agree.
pub const AGREEMENT_Z: f64 = 3.0;

/// ESS below this fraction of n triggers a weight-degeneracy diagnostic.
pub const LOW_ESS_FRACTION: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "accel-eval", version, about = "Accelerated evaluation of automated-vehicle safety")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit a threat model from drive logs (CSV `t,lead_speed,gap`).
    Fit {
        /// Directory of log CSV files.
        #[arg(long)]
        logs: PathBuf,
        /// Scenario to fit: car_following or cut_in.
        #[arg(long)]
        scenario: String,
        /// Families per variable, e.g. `v0=truncated_normal[5:40],decel=exponential`.
        #[arg(long, default_value = "")]
        families: String,
        /// Output threat model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the extracted events as JSON.
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
    /// Run an estimation described by a config file and write the report.
    Run {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (overrides ACCEL_EVAL_WORKERS and the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Write trajectory CSVs for up to 100 event episodes.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Compare two reports of the same scenario and metric.
    Compare {
        /// Reference report, usually crude Monte Carlo.
        #[arg(long)]
        report_a: PathBuf,
        /// Report under test.
        #[arg(long)]
        report_b: PathBuf,
        /// Where to write the comparison JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the text summary and plot CSVs from a report JSON.
    Report {
        /// Existing report JSON.
        #[arg(long)]
        report: PathBuf,
        /// Output directory (defaults to the report's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic drive logs with known embedded events.
    Generate {
        /// Output directory for log CSVs and ground-truth JSON.
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of logs.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Seed of the first log; log k uses seed + k.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator profile JSON (defaults built in).
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Serve the built-in IDM over the stdio plugin protocol.
    #[command(hide = true)]
    ServeIdm {
        #[arg(long)]
        aeb: bool,
        /// Delay before every reply, for timeout testing.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

impl Cmd {
    pub fn execute(self) -> Result<i32, Failure> {
        match self {
            Cmd::Fit { logs, scenario, families, out, events_out } => {
                cmd_fit(&logs, &scenario, &families, &out, events_out.as_deref())
            }
            Cmd::Run { config, workers, dump_trajectories } => cmd_run(&config, workers, dump_trajectories),
            Cmd::Compare { report_a, report_b, out } => cmd_compare(&report_a, &report_b, out.as_deref()),
            Cmd::Report { report, out } => cmd_report(&report, out.as_deref()),
            Cmd::Generate { out_dir, count, seed, profile } => cmd_generate(&out_dir, count, seed, profile.as_deref()),
            Cmd::ServeIdm { aeb, delay_ms } => {
                let idm = idm_policy(IdmParams::default()).map_err(Failure::config)?;
                let delay = Duration::from_millis(delay_ms);
                let served = if aeb {
                    serve(&aeb_overlay(idm, 1.5, 8.0).map_err(Failure::config)?, delay)
                } else {
                    serve(&idm, delay)
                };
                served.map_err(|e| Failure::data(format!("plugin server: {e}")))?;
                Ok(EXIT_OK)
            }
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn ingest_failure(e: IngestError) -> Failure {
    match e {
        IngestError::Argument(m) => Failure::config(m),
        other => Failure::data(other.to_string()),
    }
}

pub fn cmd_fit(
    logs: &Path,
    scenario: &str,
    families: &str,
    out: &Path,
    events_out: Option<&Path>,
) -> Result<i32, Failure> {
    let tag = ScenarioTag::parse(scenario)
        .filter(|t| *t != ScenarioTag::Synthetic)
        .ok_or_else(|| Failure::config(format!("unknown scenario `{scenario}` (car_following or cut_in)")))?;
    let families = parse_families(families, tag).map_err(ingest_failure)?;
    let entries = std::fs::read_dir(logs).map_err(|e| Failure::data(format!("{}: {e}", logs.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let criteria = ExtractionCriteria::default();
    let mut events: Vec<ExtractedEvent> = Vec::new();
    for p in &paths {
        let log = DriveLog::read(p).map_err(ingest_failure)?;
        events.extend(extract_events(&log, &criteria));
    }
    let matching = events.iter().filter(|e| e.kind.scenario() == tag).count();
    if matching == 0 {
        return Err(Failure::data(format!("no events extracted for {tag} from {} log(s) in {}", paths.len(), logs.display())));
    }
    if let Some(path) = events_out {
        write_file(path, &(serde_json::to_string_pretty(&events).expect("events serialise") + "\n"))?;
    }
    let model = build_threat_model(&events, tag, &families).map_err(ingest_failure)?;
    write_file(out, &(model.to_json_string() + "\n"))?;
    println!("{} log(s), {} events, {matching} {tag} events", paths.len(), events.len());
    if let Some(meta) = model.meta() {
        for (var, count) in model.names().map(|n| (n, meta.sample_counts.get(n).copied().unwrap_or(0))) {
            println!("  {var}: {count} events -> {}", model.get(var).map(|d| d.family_name()).unwrap_or("?"));
        }
    }
    Ok(EXIT_OK)
}

fn build_policy(config: &PolicyConfig) -> Result<(Box<dyn EgoPolicy>, bool), Failure> {
    Ok(match config {
        PolicyConfig::Idm { params } => (Box::new(idm_policy(*params).map_err(Failure::config)?), false),
        PolicyConfig::IdmAeb { params, aeb } => {
            let idm = idm_policy(*params).map_err(Failure::config)?;
            (Box::new(aeb_overlay(idm, aeb.trigger_ttc, aeb.brake).map_err(Failure::config)?), false)
        }
        PolicyConfig::External { command, id, timeout_ms } => {
            let p = ExternalPolicy::spawn(command, id.clone(), Duration::from_millis(*timeout_ms))
                .map_err(|e| Failure::config(format!("starting external policy `{}`: {e}", command.join(" "))))?;
            (Box::new(p), true)
        }
    })
}

fn estimate_failure(e: EstimateError) -> Failure {
    match e {
        EstimateError::Sim(SimError::PolicyFault { policy_id, t }) => {
            Failure::policy_fault(format!("policy `{policy_id}` faulted at t = {t} s"))
        }
        EstimateError::Argument(m) => Failure::config(m),
        EstimateError::Model(m) => Failure::config(m.to_string()),
        EstimateError::Sim(SimError::Config(m)) => Failure::config(m),
        other => Failure::data(other.to_string()),
    }
}

/// Metrics with `primary` first.
fn metric_order(primary: Metric) -> Vec<Metric> {
    let mut v = vec![primary];
    v.extend(Metric::ALL.iter().copied().filter(|m| *m != primary));
    v
}

/// Runs the configured estimation and returns the sealed report.
pub fn execute_run(run: &ResolvedRun, dump_trajectories: bool) -> Result<Report, Failure> {
    let started = Instant::now();
    let cfg = &run.config;
    let (policy, external) = build_policy(&cfg.policy)?;
    let policy_id = policy.policy_id().to_string();
    let engine = SimEngine::new(policy, cfg.sim).map_err(|e| Failure::config(e.to_string()))?;
    let confidence = cfg.stopping.map_or(cfg.confidence, |r| r.confidence);
    let trace_batch = cfg.stopping.map_or(DEFAULT_TRACE_BATCH, |r| r.batch_size);
    let estimator = Estimator::new(&engine, EstimatorOptions { workers: run.workers, confidence, trace_batch })
        .map_err(estimate_failure)?;
    let with_plugin_reason = |f: Failure| {
        if f.code == crate::EXIT_POLICY_FAULT && external {
            Failure::policy_fault(format!("{f} (external policy stopped answering within protocol)"))
        } else {
            f
        }
    };

    let mut diagnostics = Vec::new();
    let natural = &run.natural;
    let proposal = match cfg.method {
        MethodChoice::Crude => natural.clone(),
        MethodChoice::Is => run.proposal.clone().expect("validated"),
        MethodChoice::IsCe => {
            let ce = ce_optimize(&estimator, natural, &cfg.ce, cfg.metric, cfg.master_seed)
                .map_err(|e| with_plugin_reason(estimate_failure(e)))?;
            diagnostics.extend(ce.diagnostics);
            diagnostics.push(format!(
                "cross-entropy search used {} episodes in addition to the estimation episodes",
                cfg.ce.iterations as u64 * cfg.ce.samples_per_iter
            ));
            ce.proposal
        }
    };

    let metrics = metric_order(cfg.metric);
    let (out, non_converged): (RunOutput, bool) = match (cfg.n, &cfg.stopping) {
        (Some(n), _) => (
            estimator
                .run(natural, &proposal, &metrics, n, cfg.master_seed)
                .map_err(|e| with_plugin_reason(estimate_failure(e)))?,
            false,
        ),
        (None, Some(rule)) => {
            let (conv, out) = estimator
                .run_until_converged(natural, &proposal, &metrics, rule, cfg.master_seed)
                .map_err(|e| with_plugin_reason(estimate_failure(e)))?;
            (out, !conv.converged)
        }
        (None, None) => unreachable!("validated"),
    };
    diagnostics.extend(out.diagnostics.iter().cloned());
    let primary = &out.estimates[0];
    if cfg.method != MethodChoice::Crude && primary.ess < LOW_ESS_FRACTION * primary.n as f64 {
        diagnostics.push(format!(
            "effective sample size {:.1} of {} episodes: weights are concentrated, so estimates for metrics other than {} may be unreliable",
            primary.ess, primary.n, cfg.metric
        ));
    }

    let (factor, reference) = match (cfg.method, cfg.reference_p) {
        (MethodChoice::Crude, _) => (1.0, "crude run: factor 1 by definition".to_string()),
        (_, Some(p)) => (acceleration_factor(CrudeVariance::Analytic { p }, primary), format!("analytic p(1-p) at reference p = {p}")),
        (_, None) => (
            acceleration_factor(CrudeVariance::Analytic { p: primary.p_hat }, primary),
            "plug-in p_hat(1-p_hat) of this run as the crude per-sample variance".to_string(),
        ),
    };
    let estimates: Vec<RateReport> = out
        .estimates
        .iter()
        .map(|e| RateReport::new(e.clone(), &run.exposure, &cfg.baseline, cfg.required_improvement))
        .collect();
    let verdict = estimates[0].verdict;
    let baseline_rate = cfg.baseline.rate_for(cfg.metric);

    if dump_trajectories {
        dump(&engine, run, &proposal, &out.event_indices)?;
    }

    let report = Report {
        run_id: String::new(),
        seed: cfg.master_seed,
        scenario: cfg.scenario,
        policy_id,
        method: cfg.method.as_str().to_string(),
        metric: cfg.metric,
        estimates,
        exposure: run.exposure.clone(),
        baseline: cfg.baseline,
        acceleration_factor: factor,
        acceleration_reference: reference,
        exposure_miles: exposure_miles(primary.n, &run.exposure),
        equivalent_miles: equivalent_miles(primary.n, &run.exposure, factor),
        equivalent_miles_definition: EQUIVALENT_MILES_DEFINITION.to_string(),
        required_naturalistic_miles: required_naturalistic_miles(baseline_rate, cfg.required_improvement, confidence),
        required_miles_formula: REQUIRED_MILES_FORMULA.to_string(),
        verdict,
        non_converged,
        external_policy: external,
        diagnostics,
        proposal: (cfg.method != MethodChoice::Crude).then_some(proposal),
        trace: out.trace.clone(),
        weight_histogram: weight_histogram(&out.weights),
        timing: Timing { wall_s: 0.0 },
    }
    .seal();
    Ok(Report { timing: Timing { wall_s: started.elapsed().as_secs_f64() }, ..report })
}

fn dump(
    engine: &SimEngine<Box<dyn EgoPolicy>>,
    run: &ResolvedRun,
    proposal: &accel_eval::ThreatModel,
    indices: &[u64],
) -> Result<(), Failure> {
    let dir = run.output_dir.join("trajectories");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    for &i in indices.iter().take(MAX_DUMPED_TRAJECTORIES) {
        let mut rng = episode_rng(run.config.master_seed, ESTIMATION_DOMAIN, i);
        let params = sample_episode_params(&run.natural, proposal, &mut rng).map_err(|e| Failure::config(e.to_string()))?;
        let traj = engine.trajectory(&params).map_err(|e| Failure::data(e.to_string()))?;
        let path = dir.join(format!("episode_{i}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        write_trajectory_csv(&traj, std::io::BufWriter::new(file)).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn cmd_run(config: &Path, workers: Option<usize>, dump_trajectories: bool) -> Result<i32, Failure> {
    let run = RunConfig::load(config, workers)?;
    let report = execute_run(&run, dump_trajectories)?;
    render_report(&report, &run.output_dir).map_err(|e| Failure::data(e.to_string()))?;
    print!("{}", text_summary(&report));
    Ok(if report.non_converged { EXIT_NOT_CONVERGED } else { EXIT_OK })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Side {
    pub run_id: String,
    pub method: String,
    pub p_hat: f64,
    pub std_error: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: ScenarioTag,
    pub metric: Metric,
    pub report_a: Side,
    pub report_b: Side,
    pub combined_se: f64,
    pub z: f64,
    pub agree: bool,
    /// Per-sample variance of A over that of B.
    pub acceleration_factor: f64,
}

pub fn compare_reports(a: &Report, b: &Report) -> Result<Comparison, Failure> {
    if a.scenario != b.scenario {
        return Err(Failure::config(format!("scenarios differ: {} vs {}", a.scenario, b.scenario)));
    }
    if a.metric != b.metric {
        return Err(Failure::config(format!("metrics differ: {} vs {}", a.metric, b.metric)));
    }
    let (ea, eb) = match (a.primary(), b.primary()) {
        (Some(x), Some(y)) => (&x.estimate, &y.estimate),
        _ => return Err(Failure::data("report lacks an estimate for its own metric")),
    };
    let combined_se = (ea.variance + eb.variance).sqrt();
    let diff = ea.p_hat - eb.p_hat;
    let z = if diff == 0.0 {
        0.0
    } else if combined_se > 0.0 {
        diff / combined_se
    } else {
        f64::INFINITY.copysign(diff)
    };
    let side = |r: &Report, e: &accel_eval::estimator::Estimate| Side {
        run_id: r.run_id.clone(),
        method: r.method.clone(),
        p_hat: e.p_hat,
        std_error: e.std_error(),
        n: e.n,
    };
    Ok(Comparison {
        scenario: a.scenario,
        metric: a.metric,
        report_a: side(a, ea),
        report_b: side(b, eb),
        combined_se,
        z,
        agree: z.abs() <= AGREEMENT_Z,
        acceleration_factor: acceleration_factor(CrudeVariance::of(ea), eb),
    })
}

pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<i32, Failure> {
    let ra = Report::load(a).map_err(|e| Failure::data(e.to_string()))?;
    let rb = Report::load(b).map_err(|e| Failure::data(e.to_string()))?;
    let c = compare_reports(&ra, &rb)?;
    println!("{} / {}", c.scenario, c.metric);
    println!("  A {:<6} p {:.6e} se {:.3e} n {}", c.report_a.method, c.report_a.p_hat, c.report_a.std_error, c.report_a.n);
    println!("  B {:<6} p {:.6e} se {:.3e} n {}", c.report_b.method, c.report_b.p_hat, c.report_b.std_error, c.report_b.n);
    println!("  z = {:.3}  {}", c.z, if c.agree { "AGREE" } else { "DISAGREE" });
    println!("  acceleration factor (A/B per-sample variance) {:.4e}", c.acceleration_factor);
    if let Some(path) = out {
        let mut v = serde_json::to_value(&c).expect("comparison serialises");
        // non-finite values serialise as null; write them as strings instead
        v["z"] = accel_eval::json::encode(c.z);
        v["acceleration_factor"] = accel_eval::json::encode(c.acceleration_factor);
        write_file(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    }
    Ok(if c.agree { EXIT_OK } else { EXIT_DISAGREE })
}

pub fn cmd_report(report: &Path, out: Option<&Path>) -> Result<i32, Failure> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => report.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    let r = rerender(report, &dir).map_err(|e| Failure::data(e.to_string()))?;
    print!("{}", text_summary(&r));
    Ok(EXIT_OK)
}

pub fn cmd_generate(out_dir: &Path, count: u64, seed: u64, profile: Option<&Path>) -> Result<i32, Failure> {
    let profile: SyntheticProfile = match profile {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticProfile::default(),
    };
    if !(profile.duration > 0.0 && profile.dt > 0.0 && profile.brake_rate >= 0.0 && profile.cut_in_rate >= 0.0) {
        return Err(Failure::config("profile needs positive duration and dt and non-negative rates"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::data(format!("{}: {e}", out_dir.display())))?;
    for k in 0..count {
        let g = generate_synthetic_log(&profile, seed + k);
        let stem = &g.log.meta.log_id;
        g.log.write(&out_dir.join(format!("{stem}.csv"))).map_err(ingest_failure)?;
        let truth = serde_json::to_string_pretty(&g.ground_truth).expect("events serialise") + "\n";
        write_file(&out_dir.join(format!("{stem}.truth.json")), &truth)?;
        println!("{stem}: {} samples, {} embedded events", g.log.len(), g.ground_truth.len());
    }
    Ok(EXIT_OK)
}
