use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::log::DriveLog;
use crate::dist::{fit_mle, FamilyTag};
use crate::error::IngestError;
use crate::threat::{ModelMeta, ScenarioTag, ThreatModel};

/// Minimum number of events of the matching kind needed to fit a model.
pub const MIN_EVENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Brake { v0: f64, decel: f64, duration: f64 },
    CutIn { range: f64, closing_speed: f64, lead_speed: f64 },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Brake { .. } => "brake_event",
            EventKind::CutIn { .. } => "cut_in_event",
        }
    }

    pub fn scenario(&self) -> ScenarioTag {
        match self {
            EventKind::Brake { .. } => ScenarioTag::CarFollowing,
            EventKind::CutIn { .. } => ScenarioTag::CutIn,
        }
    }

    /// Values in the scenario's schema order.
    pub fn values(&self) -> [f64; 3] {
        match *self {
            EventKind::Brake { v0, decel, duration } => [v0, decel, duration],
            EventKind::CutIn { range, closing_speed, lead_speed } => [range, closing_speed, lead_speed],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSource {
    pub log_id: String,
    pub t_start: f64,
}

/// A candidate threat event distilled from a drive log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawEvent", try_from = "RawEvent")]
pub struct ExtractedEvent {
    pub kind: EventKind,
    pub source: EventSource,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    kind: String,
    params: BTreeMap<String, f64>,
    source: EventSource,
}

impl From<ExtractedEvent> for RawEvent {
    fn from(e: ExtractedEvent) -> Self {
        let names = e.kind.scenario().schema().expect("event scenarios have schemas");
        let params = names.iter().map(|n| n.to_string()).zip(e.kind.values()).collect();
        RawEvent { kind: e.kind.name().to_string(), params, source: e.source }
    }
}

impl TryFrom<RawEvent> for ExtractedEvent {
    type Error = String;

    fn try_from(raw: RawEvent) -> Result<Self, String> {
        let get = |k: &str| raw.params.get(k).copied().ok_or_else(|| format!("{}: missing param `{k}`", raw.kind));
        let kind = match raw.kind.as_str() {
            "brake_event" => EventKind::Brake { v0: get("v0")?, decel: get("decel")?, duration: get("duration")? },
            "cut_in_event" => EventKind::CutIn {
                range: get("range")?,
                closing_speed: get("closing_speed")?,
                lead_speed: get("lead_speed")?,
            },
            other => return Err(format!("unknown event kind `{other}`")),
        };
        Ok(ExtractedEvent { kind, source: raw.source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionCriteria {
    pub min_decel: f64,
    pub min_duration: f64,
    pub cut_in_gap_jump: f64,
}

impl Default for ExtractionCriteria {
    fn default() -> Self {
        Self { min_decel: 2.0, min_duration: 0.5, cut_in_gap_jump: 5.0 }
    }
}

/// Brake events (lead deceleration at or above `min_decel` held for at least
/// `min_duration`) and cut-ins (gap shrinking by `cut_in_gap_jump` in one
/// step), in time order.
pub fn extract_events(log: &DriveLog, criteria: &ExtractionCriteria) -> Vec<ExtractedEvent> {
    let s = log.samples();
    let dt = log.dt();
    let source = |i: usize| EventSource { log_id: log.meta.log_id.clone(), t_start: s[i].t };
    let mut events = Vec::new();

    let mut i = 0;
    while i + 1 < s.len() {
        let braking = |j: usize| (s[j].lead_speed - s[j + 1].lead_speed) / dt >= criteria.min_decel;
        if !braking(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < s.len() && braking(i) {
            i += 1;
        }
        let duration = (i - start) as f64 * dt;
        // a one-step speed drop is a lead change, not a manoeuvre
        if duration >= criteria.min_duration - 1e-9 && s[start].gap - s[start + 1].gap < criteria.cut_in_gap_jump {
            let v0 = s[start].lead_speed;
            events.push(ExtractedEvent {
                kind: EventKind::Brake { v0, decel: (v0 - s[i].lead_speed) / duration, duration },
                source: source(start),
            });
        }
    }

    for i in 2..s.len() {
        if s[i - 1].gap - s[i].gap >= criteria.cut_in_gap_jump {
            // own speed just before the jump, from the gap rate over the previous step
            let ego_speed = s[i - 1].lead_speed - (s[i - 1].gap - s[i - 2].gap) / dt;
            events.push(ExtractedEvent {
                kind: EventKind::CutIn {
                    range: s[i].gap,
                    closing_speed: ego_speed - s[i].lead_speed,
                    lead_speed: s[i].lead_speed,
                },
                source: source(i),
            });
        }
    }
    events.sort_by(|a, b| a.source.t_start.total_cmp(&b.source.t_start));
    events
}

/// Family per schema variable; unnamed variables default to a truncated
/// normal bounded below at zero (unbounded for the closing speed).
pub fn default_family(variable: &str) -> FamilyTag {
    match variable {
        "closing_speed" => FamilyTag::TruncatedNormal { lo: f64::NEG_INFINITY, hi: f64::INFINITY },
        _ => FamilyTag::TruncatedNormal { lo: 0.0, hi: f64::INFINITY },
    }
}

/// Parses `name=family[,name=family...]`. Truncated normals take optional
/// bounds `truncated_normal[lo:hi]` and Pareto an optional fixed scale `pareto[xm]`.
pub fn parse_families(spec: &str, scenario: ScenarioTag) -> Result<BTreeMap<String, FamilyTag>, IngestError> {
    let schema = scenario
        .schema()
        .ok_or_else(|| IngestError::Argument(format!("scenario `{scenario}` has no fixed variable schema")))?;
    let arg = |m: String| IngestError::Argument(m);
    let mut out = BTreeMap::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, fam) = item.split_once('=').ok_or_else(|| arg(format!("expected `variable=family`, got `{item}`")))?;
        let name = name.trim();
        if !schema.contains(&name) {
            return Err(arg(format!("`{name}` is not a {scenario} variable (expected one of {schema:?})")));
        }
        let fam = fam.trim();
        let (base, bracket) = match fam.split_once('[') {
            Some((b, rest)) => (b, Some(rest.strip_suffix(']').ok_or_else(|| arg(format!("unclosed `[` in `{fam}`")))?)),
            None => (fam, None),
        };
        let num = |s: &str| -> Result<f64, IngestError> {
            match s.trim() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                t => t.parse().map_err(|_| arg(format!("bad number `{t}` in `{fam}`"))),
            }
        };
        let tag = match (FamilyTag::parse(base), bracket) {
            (None, _) => return Err(arg(format!("unknown family `{base}`"))),
            (Some(FamilyTag::TruncatedNormal { .. }), None) => default_family(name),
            (Some(FamilyTag::TruncatedNormal { .. }), Some(b)) => {
                let (lo, hi) = b.split_once(':').ok_or_else(|| arg(format!("expected `[lo:hi]` in `{fam}`")))?;
                FamilyTag::TruncatedNormal { lo: num(lo)?, hi: num(hi)? }
            }
            (Some(FamilyTag::Pareto { .. }), Some(b)) => FamilyTag::Pareto { scale: Some(num(b)?) },
            (Some(t), None) => t,
            (Some(_), Some(_)) => return Err(arg(format!("family `{base}` takes no parameters"))),
        };
        out.insert(name.to_string(), tag);
    }
    Ok(out)
}

/// Fits every schema variable of `scenario` from the events of the matching kind.
pub fn build_threat_model(
    events: &[ExtractedEvent],
    scenario: ScenarioTag,
    families: &BTreeMap<String, FamilyTag>,
) -> Result<ThreatModel, IngestError> {
    let schema = scenario
        .schema()
        .ok_or_else(|| IngestError::Argument(format!("cannot fit a `{scenario}` model from drive logs")))?;
    let matching: Vec<[f64; 3]> =
        events.iter().filter(|e| e.kind.scenario() == scenario).map(|e| e.kind.values()).collect();
    if matching.is_empty() && !events.is_empty() {
        return Err(IngestError::Argument(format!(
            "no events match scenario {scenario} ({} events of other kinds)",
            events.len()
        )));
    }
    let kind = match scenario {
        ScenarioTag::CutIn => "cut_in_event",
        _ => "brake_event",
    };
    if matching.len() < MIN_EVENTS {
        return Err(IngestError::TooFewEvents { kind, needed: MIN_EVENTS, got: matching.len() });
    }
    let mut vars = Vec::with_capacity(schema.len());
    let mut meta = ModelMeta::default();
    for (j, name) in schema.iter().enumerate() {
        let xs: Vec<f64> = matching.iter().map(|v| v[j]).collect();
        let family = families.get(*name).cloned().unwrap_or_else(|| default_family(name));
        let dist = fit_mle(&family, &xs).map_err(|source| IngestError::Fit { variable: name.to_string(), source })?;
        vars.push((name.to_string(), dist));
        meta.sample_counts.insert(name.to_string(), xs.len());
    }
    ThreatModel::from_pairs(scenario, vars)
        .map(|m| m.with_meta(meta))
        .map_err(|e| IngestError::Argument(e.to_string()))
}
