//! Run reports: JSON document, text summary and plot-data CSVs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::ReportError;
use crate::estimator::{Metric, TracePoint};
use crate::reversal::{ExposureModel, HumanBaseline, RateReport, Verdict};
use crate::threat::{ScenarioTag, ThreatModel};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

/// Width of a weight-histogram bin in decades.
pub const WEIGHT_BIN_DECADES: f64 = 0.25;

pub const EQUIVALENT_MILES_DEFINITION: &str = "episode exposure miles (episodes / events_per_mile) times the measured acceleration factor";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBin {
    #[serde(with = "crate::json::ext_f64")]
    pub log10_lo: f64,
    pub log10_hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub seed: u64,
    pub scenario: ScenarioTag,
    pub policy_id: String,
    /// `crude`, `is` or `is_ce`.
    pub method: String,
    /// Metric that drives the stopping rule, the factor and the verdict.
    pub metric: Metric,
    pub estimates: Vec<RateReport>,
    pub exposure: ExposureModel,
    pub baseline: HumanBaseline,
    #[serde(with = "crate::json::ext_f64")]
    pub acceleration_factor: f64,
    pub acceleration_reference: String,
    pub exposure_miles: f64,
    #[serde(with = "crate::json::ext_f64")]
    pub equivalent_miles: f64,
    pub equivalent_miles_definition: String,
    pub required_naturalistic_miles: f64,
    pub required_miles_formula: String,
    pub verdict: Verdict,
    pub non_converged: bool,
    /// Set when the policy ran out of process; such runs carry no bit-determinism guarantee.
    pub external_policy: bool,
    pub diagnostics: Vec<String>,
    pub proposal: Option<ThreatModel>,
    pub trace: Vec<TracePoint>,
    pub weight_histogram: Vec<WeightBin>,
    pub timing: Timing,
}

impl Report {
    pub fn primary(&self) -> Option<&RateReport> {
        self.estimates.iter().find(|e| e.estimate.metric == self.metric)
    }

    /// Fills `run_id` with a digest of every field except `run_id` and `timing`.
    pub fn seal(mut self) -> Self {
        self.run_id = self.content_digest();
        self
    }

    pub fn content_digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("run_id");
            obj.remove("timing");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text).map_err(|source| ReportError::Json { path: path.display().to_string(), source })
    }
}

/// Histogram of log10 weights in [`WEIGHT_BIN_DECADES`] bins; zero weights
/// get a bin with an infinite lower edge.
pub fn weight_histogram(weights: &[f64]) -> Vec<WeightBin> {
    let positive: Vec<i64> = weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| (w.log10() / WEIGHT_BIN_DECADES).floor() as i64)
        .collect();
    let zeros = weights.iter().filter(|w| **w == 0.0).count() as u64;
    let mut bins = Vec::new();
    let (Some(lo), Some(hi)) = (positive.iter().min(), positive.iter().max()) else {
        if zeros > 0 {
            bins.push(WeightBin { log10_lo: f64::NEG_INFINITY, log10_hi: 0.0, count: zeros });
        }
        return bins;
    };
    let edge = |k: i64| k as f64 * WEIGHT_BIN_DECADES;
    if zeros > 0 {
        bins.push(WeightBin { log10_lo: f64::NEG_INFINITY, log10_hi: edge(*lo), count: zeros });
    }
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for k in &positive {
        counts[(k - lo) as usize] += 1;
    }
    bins.extend(counts.iter().enumerate().map(|(i, c)| {
        let k = lo + i as i64;
        WeightBin { log10_lo: edge(k), log10_hi: edge(k + 1), count: *c }
    }));
    bins
}

pub fn convergence_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("n,p_hat,ci_lo,ci_hi\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{},{}", t.n, t.p_hat, t.ci_lo, t.ci_hi);
    }
    s
}

pub fn weights_csv(bins: &[WeightBin]) -> String {
    let mut s = String::from("log10_bin_lo,log10_bin_hi,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.log10_lo, b.log10_hi, b.count);
    }
    s
}

fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4e}")
    } else {
        "inf".into()
    }
}

pub fn text_summary(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run {}  seed {}  scenario {}  method {}", r.run_id, r.seed, r.scenario, r.method);
    let _ = writeln!(s, "policy {}", r.policy_id);
    if r.external_policy {
        let _ = writeln!(s, "external policy: results are not covered by the determinism guarantee");
    }
    let _ = writeln!(s, "exposure {} events/mile ({})", r.exposure.events_per_mile, r.exposure.source_tag);
    let _ = writeln!(s);
    for e in &r.estimates {
        let est = &e.estimate;
        let _ = writeln!(
            s,
            "{:<9} p/event {} CI [{}, {}] @{}  n {}  ess {:.1}  invalid {}",
            est.metric.as_str(),
            sci(est.p_hat),
            sci(est.ci.0),
            sci(est.ci.1),
            est.confidence,
            est.n,
            est.ess,
            est.invalid_count
        );
        let _ = writeln!(
            s,
            "          per mile {} CI [{}, {}]  one per {} miles  baseline {}  improvement {:.3}  {}",
            sci(e.per_mile_rate),
            sci(e.per_mile_ci.0),
            sci(e.per_mile_ci.1),
            sci(e.miles_per_event),
            sci(e.baseline_rate),
            e.improvement,
            e.verdict
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "acceleration factor {} ({})", sci(r.acceleration_factor), r.acceleration_reference);
    let _ = writeln!(s, "exposure miles {}  equivalent miles {}", sci(r.exposure_miles), sci(r.equivalent_miles));
    let _ = writeln!(s, "  equivalent miles = {}", r.equivalent_miles_definition);
    let _ = writeln!(s, "naturalistic miles needed for the verdict {}", sci(r.required_naturalistic_miles));
    let _ = writeln!(s, "  {}", r.required_miles_formula);
    let _ = writeln!(s, "verdict ({}): {}", r.metric, r.verdict);
    if r.non_converged {
        let _ = writeln!(s, "NOT CONVERGED: episode cap reached before the stopping rule was met");
    }
    for d in &r.diagnostics {
        let _ = writeln!(s, "note: {d}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFiles {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub convergence: PathBuf,
    pub weights: PathBuf,
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ReportError> {
    fs::write(&path, contents).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

/// Writes the JSON report, text summary and both CSVs into `dir`.
pub fn render_report(report: &Report, dir: &Path) -> Result<RenderedFiles, ReportError> {
    if report.estimates.is_empty() {
        return Err(ReportError::Argument("report has no estimates".into()));
    }
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.display().to_string(), source })?;
    Ok(RenderedFiles {
        report: write(dir.join(REPORT_FILE), &report.to_json_string())?,
        summary: write(dir.join(SUMMARY_FILE), &text_summary(report))?,
        convergence: write(dir.join(CONVERGENCE_FILE), &convergence_csv(&report.trace))?,
        weights: write(dir.join(WEIGHTS_FILE), &weights_csv(&report.weight_histogram))?,
    })
}

/// Rewrites the summary and CSVs from an existing report without touching the JSON.
pub fn rerender(report_path: &Path, dir: &Path) -> Result<Report, ReportError> {
    let report = Report::load(report_path)?;
    if report.estimates.is_empty() {
        return Err(ReportError::Argument("report has no estimates".into()));
    }
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.display().to_string(), source })?;
    write(dir.join(SUMMARY_FILE), &text_summary(&report))?;
    write(dir.join(CONVERGENCE_FILE), &convergence_csv(&report.trace))?;
    write(dir.join(WEIGHTS_FILE), &weights_csv(&report.weight_histogram))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Estimate, Method};
    use crate::reversal::{required_naturalistic_miles, REQUIRED_MILES_FORMULA};

    pub(crate) fn sample_report() -> Report {
        let exposure = ExposureModel::default_for(ScenarioTag::CarFollowing);
        let baseline = HumanBaseline::default();
        let est = Estimate {
            metric: Metric::Crash,
            method: Method::Importance,
            p_hat: 0.012345678901234567,
            variance: 1.0e-7 / 3.0,
            ci: (0.0121, 0.0126),
            confidence: 0.8,
            n: 20_000,
            ess: 1234.5678,
            invalid_count: 0,
            seed: 42,
        };
        Report {
            run_id: String::new(),
            seed: 42,
            scenario: ScenarioTag::CarFollowing,
            policy_id: "idm".into(),
            method: "is_ce".into(),
            metric: Metric::Crash,
            estimates: vec![RateReport::new(est, &exposure, &baseline, 0.9)],
            exposure,
            baseline,
            acceleration_factor: 38.25,
            acceleration_reference: "analytic".into(),
            exposure_miles: 20_000.0,
            equivalent_miles: 765_000.0,
            equivalent_miles_definition: EQUIVALENT_MILES_DEFINITION.into(),
            required_naturalistic_miles: required_naturalistic_miles(baseline.police_reported_crash_rate, 0.9, 0.8),
            required_miles_formula: REQUIRED_MILES_FORMULA.into(),
            verdict: Verdict::NotEstablished,
            non_converged: false,
            external_policy: false,
            diagnostics: vec![],
            proposal: None,
            trace: vec![
                TracePoint { n: 1000, p_hat: 0.011, ci_lo: 0.01, ci_hi: 0.012 },
                TracePoint { n: 2000, p_hat: 0.0123, ci_lo: 0.0118, ci_hi: 0.0128 },
            ],
            weight_histogram: weight_histogram(&[0.0, 0.5, 1.0, 30.0]),
            timing: Timing { wall_s: 1.5 },
        }
        .seal()
    }

    #[test]
    fn json_has_schema_keys_and_round_trips() {
        let r = sample_report();
        let v: serde_json::Value = serde_json::from_str(&r.to_json_string()).unwrap();
        for key in ["run_id", "seed", "scenario", "policy_id", "method", "estimates", "exposure", "baseline",
            "acceleration_factor", "equivalent_miles", "verdict", "non_converged", "timing"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let e = &v["estimates"][0];
        for key in ["metric", "p_hat", "per_mile_rate", "miles_per_event", "ci", "verdict"] {
            assert!(e.get(key).is_some(), "missing estimates.{key}");
        }
        assert_eq!(Report::from_json_str(&r.to_json_string()).unwrap(), r);
    }

    #[test]
    fn run_id_ignores_timing() {
        let a = sample_report();
        let b = Report { timing: Timing { wall_s: 99.0 }, ..a.clone() }.seal();
        assert_eq!(a.run_id, b.run_id);
        let c = Report { seed: 43, ..a.clone() }.seal();
        assert_ne!(a.run_id, c.run_id);
    }

    #[test]
    fn histogram_bins() {
        let bins = weight_histogram(&[1.0, 1.0, 1.0]);
        assert_eq!(bins, vec![WeightBin { log10_lo: 0.0, log10_hi: 0.25, count: 3 }]);
        let bins = weight_histogram(&[0.0, 0.1, 10.0]);
        assert_eq!(bins[0].count, 1);
        assert_eq!(bins[0].log10_lo, f64::NEG_INFINITY);
        assert_eq!(bins.len(), 1 + 9);
        assert_eq!(bins.iter().map(|b| b.count).sum::<u64>(), 3);
        assert!(weight_histogram(&[]).is_empty());
    }

    #[test]
    fn render_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        let files = render_report(&r, dir.path()).unwrap();
        let conv = fs::read_to_string(&files.convergence).unwrap();
        assert_eq!(conv.lines().count(), 1 + r.trace.len());
        assert!(conv.starts_with("n,p_hat,ci_lo,ci_hi\n"));
        let w = fs::read_to_string(&files.weights).unwrap();
        assert!(w.starts_with("log10_bin_lo,log10_bin_hi,count\n"));
        assert!(w.contains("-inf,"));
        let summary = fs::read_to_string(&files.summary).unwrap();
        assert!(summary.contains("NOT_ESTABLISHED"));
        assert_eq!(Report::load(&files.report).unwrap(), r);

        let other = tempfile::tempdir().unwrap();
        rerender(&files.report, other.path()).unwrap();
        assert_eq!(fs::read_to_string(other.path().join(CONVERGENCE_FILE)).unwrap(), conv);
    }

    #[test]
    fn empty_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = Report { estimates: vec![], ..sample_report() };
        assert!(matches!(render_report(&r, dir.path()), Err(ReportError::Argument(_))));
    }

    #[test]
    fn io_errors_name_the_path() {
        let file = tempfile::NamedTempFile::new().unwrap();
        let err = render_report(&sample_report(), &file.path().join("sub")).unwrap_err();
        assert!(err.to_string().contains(&file.path().display().to_string()));
    }
}
