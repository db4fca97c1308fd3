//! Threat models: named, independent threat variables for one scenario.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::dist::{DistributionSpec, Support};
use crate::error::ModelError;

/// Which maneuver a threat model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    /// Lead vehicle brakes in front of the ego: `v0`, `decel`, `duration`.
    CarFollowing,
    /// A vehicle cuts in ahead of the ego: `range`, `closing_speed`, `lead_speed`.
    CutIn,
    /// Free-form variables, used for analytic fixtures.
    Synthetic,
}

impl ScenarioTag {
    /// Ordered variable names, `None` for free-form scenarios.
    pub fn schema(&self) -> Option<&'static [&'static str]> {
        match self {
            ScenarioTag::CarFollowing => Some(&["v0", "decel", "duration"]),
            ScenarioTag::CutIn => Some(&["range", "closing_speed", "lead_speed"]),
            ScenarioTag::Synthetic => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioTag::CarFollowing => "car_following",
            ScenarioTag::CutIn => "cut_in",
            ScenarioTag::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "car_following" => Some(Self::CarFollowing),
            "cut_in" => Some(Self::CutIn),
            "synthetic" => Some(Self::Synthetic),
            _ => None,
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Number of observations behind each fitted variable.
    #[serde(default)]
    pub sample_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThreatModel")]
pub struct ThreatModel {
    scenario: ScenarioTag,
    variables: IndexMap<String, DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<ModelMeta>,
}

#[derive(Deserialize)]
struct RawThreatModel {
    scenario: ScenarioTag,
    variables: IndexMap<String, DistributionSpec>,
    #[serde(default)]
    meta: Option<ModelMeta>,
}

impl TryFrom<RawThreatModel> for ThreatModel {
    type Error = ModelError;

    fn try_from(raw: RawThreatModel) -> Result<Self, ModelError> {
        let mut m = ThreatModel::new(raw.scenario, raw.variables)?;
        m.meta = raw.meta;
        Ok(m)
    }
}

impl ThreatModel {
    /// Builds a model, reordering variables into the scenario's schema order.
    pub fn new(scenario: ScenarioTag, variables: IndexMap<String, DistributionSpec>) -> Result<Self, ModelError> {
        let variables = match scenario.schema() {
            Some(schema) => {
                let mut names: Vec<&str> = variables.keys().map(String::as_str).collect();
                names.sort_unstable();
                let mut expected = schema.to_vec();
                expected.sort_unstable();
                if names != expected {
                    return Err(ModelError::Schema(format!(
                        "{scenario} expects variables {schema:?}, got {:?}",
                        variables.keys().collect::<Vec<_>>()
                    )));
                }
                schema.iter().map(|k| (k.to_string(), variables[*k].clone())).collect()
            }
            None => {
                if variables.is_empty() {
                    return Err(ModelError::Schema("threat model needs at least one variable".into()));
                }
                variables
            }
        };
        for d in variables.values() {
            d.validate()?;
        }
        Ok(Self { scenario, variables, meta: None })
    }

    pub fn from_pairs<I, S>(scenario: ScenarioTag, pairs: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S, DistributionSpec)>,
        S: Into<String>,
    {
        Self::new(scenario, pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn with_meta(mut self, meta: ModelMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn scenario(&self) -> ScenarioTag {
        self.scenario
    }

    pub fn meta(&self) -> Option<&ModelMeta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.variables.keys().map(String::as_str)
    }

    pub fn variables(&self) -> impl Iterator<Item = (&str, &DistributionSpec)> {
        self.variables.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn dists(&self) -> impl Iterator<Item = &DistributionSpec> {
        self.variables.values()
    }

    pub fn get(&self, name: &str) -> Option<&DistributionSpec> {
        self.variables.get(name)
    }

    /// Replaces one variable's distribution, keeping order.
    pub fn with_variable(&self, name: &str, dist: DistributionSpec) -> Result<Self, ModelError> {
        if !self.variables.contains_key(name) {
            return Err(ModelError::Schema(format!("no variable `{name}` in {} model", self.scenario)));
        }
        dist.validate()?;
        let mut next = self.clone();
        next.variables[name] = dist;
        Ok(next)
    }

    /// Joint density: product of per-variable densities.
    pub fn joint_pdf(&self, x: &[f64]) -> f64 {
        self.variables.values().zip(x).map(|(d, xi)| d.pdf(*xi)).product()
    }

    pub fn all_discrete(&self) -> bool {
        self.variables.values().all(DistributionSpec::is_discrete)
    }

    /// Checks that `proposal` can stand in for `self` as an importance-sampling proposal.
    pub fn check_proposal(&self, proposal: &ThreatModel) -> Result<(), ModelError> {
        if self.scenario != proposal.scenario {
            return Err(ModelError::ScenarioMismatch(format!(
                "natural is {}, proposal is {}",
                self.scenario, proposal.scenario
            )));
        }
        if !self.names().eq(proposal.names()) {
            return Err(ModelError::Schema(format!(
                "variable names differ: {:?} vs {:?}",
                self.names().collect::<Vec<_>>(),
                proposal.names().collect::<Vec<_>>()
            )));
        }
        for ((name, nat), prop) in self.variables().zip(proposal.dists()) {
            let fail = |detail: String| ModelError::AbsoluteContinuity { variable: name.to_string(), detail };
            match (nat.support(), prop.support()) {
                (Support::Interval { lo: nl, hi: nh }, Support::Interval { lo: pl, hi: ph }) => {
                    if pl > nl || ph < nh {
                        return Err(fail(format!("proposal support [{pl}, {ph}] does not cover [{nl}, {nh}]")));
                    }
                }
                (Support::Finite(nv), Support::Finite(pv)) => {
                    if let Some(v) = nv.iter().find(|v| !pv.contains(v)) {
                        return Err(fail(format!("proposal gives zero mass to natural support point {v}")));
                    }
                }
                _ => {
                    return Err(fail(format!(
                        "cannot pair {} with {} (mixed discrete/continuous)",
                        nat.family_name(),
                        prop.family_name()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("threat model serialises")
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Json(e.to_string()))
    }
}

/// ∏ f_natural(xᵢ) / f_proposal(xᵢ) after validating the pairing.
pub fn likelihood_ratio(x: &[f64], natural: &ThreatModel, proposal: &ThreatModel) -> Result<f64, ModelError> {
    natural.check_proposal(proposal)?;
    if x.len() != natural.len() {
        return Err(ModelError::Schema(format!("expected {} values, got {}", natural.len(), x.len())));
    }
    Ok(ratio_unchecked(x, natural, proposal))
}

pub(crate) fn ratio_unchecked(x: &[f64], natural: &ThreatModel, proposal: &ThreatModel) -> f64 {
    natural
        .dists()
        .zip(proposal.dists())
        .zip(x)
        .map(|((n, p), xi)| {
            if n == p {
                1.0
            } else {
                let den = p.pdf(*xi);
                if den > 0.0 {
                    n.pdf(*xi) / den
                } else {
                    0.0
                }
            }
        })
        .product()
}
