//! Run configuration file.

use accel_eval::estimator::{CeConfig, Metric, StoppingRule};
use accel_eval::policy::IdmParams;
use accel_eval::reversal::{ExposureModel, HumanBaseline, DEFAULT_REQUIRED_IMPROVEMENT};
use accel_eval::sim::SimConfig;
use accel_eval::threat::{ScenarioTag, ThreatModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::Failure;

pub const ENV_WORKERS: &str = "ACCEL_EVAL_WORKERS";
pub const ENV_OUT: &str = "ACCEL_EVAL_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Crude,
    Is,
    IsCe,
}

impl MethodChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodChoice::Crude => "crude",
            MethodChoice::Is => "is",
            MethodChoice::IsCe => "is_ce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AebParams {
    pub trigger_ttc: f64,
    pub brake: f64,
}

impl Default for AebParams {
    fn default() -> Self {
        Self { trigger_ttc: 1.5, brake: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Idm {
        #[serde(default)]
        params: IdmParams,
    },
    IdmAeb {
        #[serde(default)]
        params: IdmParams,
        #[serde(default)]
        aeb: AebParams,
    },
    /// Out-of-process controller speaking the line-delimited JSON protocol.
    External {
        command: Vec<String>,
        #[serde(default)]
        id: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Inline(ThreatModel),
    File(PathBuf),
}

impl ModelSource {
    pub fn load(&self, base: &Path) -> Result<ThreatModel, Failure> {
        match self {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                ThreatModel::from_json_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioTag,
    pub policy: PolicyConfig,
    pub threat_model: ModelSource,
    pub method: MethodChoice,
    /// Explicit proposal; required for `is`, ignored otherwise.
    #[serde(default)]
    pub proposal: Option<ModelSource>,
    /// Metric driving the stopping rule, acceleration factor and verdict.
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub stopping: Option<StoppingRule>,
    pub master_seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub ce: CeConfig,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub exposure: Option<ExposureModel>,
    #[serde(default)]
    pub baseline: HumanBaseline,
    #[serde(default = "default_improvement")]
    pub required_improvement: f64,
    /// Known event probability used as the crude reference for the acceleration factor.
    #[serde(default)]
    pub reference_p: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_metric() -> Metric {
    Metric::Crash
}

fn default_confidence() -> f64 {
    0.80
}

fn default_improvement() -> f64 {
    DEFAULT_REQUIRED_IMPROVEMENT
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A validated configuration with everything it references loaded.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub natural: ThreatModel,
    pub proposal: Option<ThreatModel>,
    pub exposure: ExposureModel,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::config(format!("run config: {e}")))
    }

    /// Loads and validates; relative paths resolve against the config file's directory.
    pub fn load(path: &Path, workers_flag: Option<usize>) -> Result<ResolvedRun, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let config = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base, workers_flag)
    }

    pub fn resolve(self, base: &Path, workers_flag: Option<usize>) -> Result<ResolvedRun, Failure> {
        if self.scenario == ScenarioTag::Synthetic {
            return Err(Failure::config("the synthetic scenario has no simulator; use car_following or cut_in"));
        }
        match (self.n, &self.stopping) {
            (Some(0), None) => return Err(Failure::config("n must be >= 1")),
            (Some(_), None) => {}
            (None, Some(rule)) => rule.validate().map_err(|e| Failure::config(e.to_string()))?,
            _ => return Err(Failure::config("give exactly one of `n` and `stopping`")),
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Failure::config(format!("confidence must be in (0, 1), got {}", self.confidence)));
        }
        if !(self.required_improvement > 0.0 && self.required_improvement < 1.0) {
            return Err(Failure::config("required_improvement must be in (0, 1)"));
        }
        if let Some(p) = self.reference_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Failure::config("reference_p must be in [0, 1]"));
            }
        }
        self.sim.validate().map_err(|e| Failure::config(format!("sim: {e}")))?;
        self.baseline.validate().map_err(|e| Failure::config(format!("baseline: {e}")))?;
        if self.method == MethodChoice::IsCe {
            self.ce.validate().map_err(|e| Failure::config(format!("ce: {e}")))?;
        }
        if let PolicyConfig::External { command, timeout_ms, .. } = &self.policy {
            if command.is_empty() {
                return Err(Failure::config("external policy needs a command"));
            }
            if *timeout_ms == 0 {
                return Err(Failure::config("external policy timeout must be >= 1 ms"));
            }
        }

        let natural = self.threat_model.load(base)?;
        if natural.scenario() != self.scenario {
            return Err(Failure::config(format!(
                "threat model is for {}, config says {}",
                natural.scenario(),
                self.scenario
            )));
        }
        let proposal = match (self.method, &self.proposal) {
            (MethodChoice::Is, Some(src)) => {
                let p = src.load(base)?;
                natural.check_proposal(&p).map_err(|e| Failure::config(format!("proposal: {e}")))?;
                Some(p)
            }
            (MethodChoice::Is, None) => return Err(Failure::config("method `is` needs a `proposal`")),
            _ => None,
        };
        let exposure = match &self.exposure {
            Some(e) => {
                e.validate().map_err(|m| Failure::config(format!("exposure: {m}")))?;
                e.clone()
            }
            None => ExposureModel::default_for(self.scenario),
        };
        let output_dir = match std::env::var_os(ENV_OUT) {
            Some(dir) => PathBuf::from(dir),
            None => base.join(&self.output_dir),
        };
        let workers = match workers_flag {
            Some(w) => w,
            None => match std::env::var(ENV_WORKERS) {
                Ok(v) => v.parse().map_err(|_| Failure::config(format!("{ENV_WORKERS}: not a number: `{v}`")))?,
                Err(_) => self.workers.unwrap_or(1),
            },
        };
        if workers == 0 {
            return Err(Failure::config("workers must be >= 1"));
        }
        Ok(ResolvedRun { config: self, natural, proposal, exposure, output_dir, workers })
    }
}
