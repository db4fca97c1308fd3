//! Parametric threat-variable distributions: sampling, densities, tilting and MLE fitting.

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::error::DistError;
use crate::json::{decode, encode};
use crate::normal;
use crate::optim::nelder_mead;

/// Tolerance on the probability simplex for discrete distributions.
const PROB_SUM_TOL: f64 = 1e-12;

/// A univariate distribution over a threat variable.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Exponential { rate: f64 },
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    Pareto { scale: f64, shape: f64 },
    Uniform { lo: f64, hi: f64 },
    DiscreteEmpirical { values: Vec<f64>, probs: Vec<f64> },
}

/// Family selector for fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyTag {
    Exponential,
    /// Truncation bounds are fixed inputs, not fitted.
    TruncatedNormal { lo: f64, hi: f64 },
    /// `None` fixes the scale at the sample minimum.
    Pareto { scale: Option<f64> },
    Uniform,
    DiscreteEmpirical,
}

/// Where a distribution puts its mass.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Interval { lo: f64, hi: f64 },
    Finite(Vec<f64>),
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Support::Interval { lo, hi } => x >= *lo && x <= *hi,
            Support::Finite(vals) => vals.contains(&x),
        }
    }
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Result<Self, DistError> {
        Self::Exponential { rate }.validated()
    }

    pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::TruncatedNormal { mean, sd, lo, hi }.validated()
    }

    pub fn pareto(scale: f64, shape: f64) -> Result<Self, DistError> {
        Self::Pareto { scale, shape }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::Uniform { lo, hi }.validated()
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self, DistError> {
        Self::DiscreteEmpirical { values, probs }.validated()
    }

    /// A point mass at `v`.
    pub fn point(v: f64) -> Self {
        Self::DiscreteEmpirical { values: vec![v], probs: vec![1.0] }
    }

    fn validated(self) -> Result<Self, DistError> {
        self.validate()?;
        Ok(self)
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::TruncatedNormal { .. } => "truncated_normal",
            Self::Pareto { .. } => "pareto",
            Self::Uniform { .. } => "uniform",
            Self::DiscreteEmpirical { .. } => "discrete_empirical",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::DiscreteEmpirical { .. })
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let bad = |msg: String| Err(DistError::InvalidParams(msg));
        match self {
            Self::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return bad(format!("exponential rate must be > 0, got {rate}"));
                }
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                if !(mean.is_finite() && *sd > 0.0 && sd.is_finite()) {
                    return bad(format!("truncated normal needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
                if lo.is_nan() || hi.is_nan() || lo >= hi {
                    return bad(format!("truncated normal needs lo < hi, got [{lo}, {hi}]"));
                }
                if normal::ln_mass((lo - mean) / sd, (hi - mean) / sd) == f64::NEG_INFINITY {
                    return bad(format!("truncated normal ({mean}, {sd}) has no mass on [{lo}, {hi}]"));
                }
            }
            Self::Pareto { scale, shape } => {
                if !(*scale > 0.0 && scale.is_finite() && *shape > 0.0 && shape.is_finite()) {
                    return bad(format!("pareto needs scale > 0 and shape > 0, got ({scale}, {shape})"));
                }
            }
            Self::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("uniform needs finite lo < hi, got [{lo}, {hi}]"));
                }
            }
            Self::DiscreteEmpirical { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad(format!(
                        "discrete needs matching non-empty values/probs, got {}/{}",
                        values.len(),
                        probs.len()
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("discrete values must be finite".into());
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return bad(format!("discrete value {v} appears twice"));
                    }
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return bad("discrete probabilities must be >= 0".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return bad(format!("discrete probabilities sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        match self {
            Self::Exponential { .. } => Support::Interval { lo: 0.0, hi: f64::INFINITY },
            Self::TruncatedNormal { lo, hi, .. } | Self::Uniform { lo, hi } => Support::Interval { lo: *lo, hi: *hi },
            Self::Pareto { scale, .. } => Support::Interval { lo: *scale, hi: f64::INFINITY },
            Self::DiscreteEmpirical { values, probs } => Support::Finite(
                values.iter().zip(probs).filter(|(_, p)| **p > 0.0).map(|(v, _)| *v).collect(),
            ),
        }
    }

    /// Draws one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                let z = normal::truncated_quantile((lo - mean) / sd, (hi - mean) / sd, u);
                (mean + sd * z).clamp(*lo, *hi)
            }
            Self::Pareto { scale, shape } => scale * (1.0 - u).powf(-1.0 / shape),
            Self::Uniform { lo, hi } => (lo + u * (hi - lo)).min(*hi),
            Self::DiscreteEmpirical { values, probs } => {
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                // rounding left u above the last partial sum
                values.iter().zip(probs).rev().find(|(_, p)| **p > 0.0).map_or(values[0], |(v, _)| *v)
            }
        }
    }

    /// Density (mass for the discrete family); zero outside the support.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::DiscreteEmpirical { values, probs } => {
                values.iter().position(|v| *v == x).map_or(0.0, |i| probs[i])
            }
            _ => self.ln_pdf(x).exp(),
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NEG_INFINITY;
        }
        match self {
            Self::Exponential { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                if x < *lo || x > *hi {
                    return f64::NEG_INFINITY;
                }
                let z = (x - mean) / sd;
                normal::ln_pdf(z) - sd.ln() - normal::ln_mass((lo - mean) / sd, (hi - mean) / sd)
            }
            Self::Pareto { scale, shape } => {
                if x < *scale {
                    f64::NEG_INFINITY
                } else {
                    shape.ln() + shape * scale.ln() - (shape + 1.0) * x.ln()
                }
            }
            Self::Uniform { lo, hi } => {
                if x < *lo || x > *hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Self::DiscreteEmpirical { .. } => self.pdf(x).ln(),
        }
    }

    /// Exponential tilt g(x) ∝ e^{θx} f(x), kept within the family.
    pub fn tilt(&self, theta: f64) -> Result<Self, DistError> {
        if theta == 0.0 {
            return Ok(self.clone());
        }
        if !theta.is_finite() {
            return Err(DistError::InvalidTilt { family: self.family_name(), theta });
        }
        let invalid = || DistError::InvalidTilt { family: self.family_name(), theta };
        match self {
            Self::Exponential { rate } => {
                let r = rate - theta;
                if r > 0.0 {
                    Ok(Self::Exponential { rate: r })
                } else {
                    Err(invalid())
                }
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                Self::truncated_normal(mean + theta * sd * sd, *sd, *lo, *hi).map_err(|_| invalid())
            }
            Self::DiscreteEmpirical { values, probs } => {
                let logs: Vec<f64> = values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| if *p > 0.0 { p.ln() + theta * v } else { f64::NEG_INFINITY })
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
                let total: f64 = raw.iter().sum();
                let probs = raw.iter().map(|r| r / total).collect();
                Self::discrete(values.clone(), probs).map_err(|_| invalid())
            }
            Self::Uniform { .. } | Self::Pareto { .. } => {
                Err(DistError::UnsupportedTilt { family: self.family_name() })
            }
        }
    }

    /// Mean of the distribution (may be infinite for heavy-tailed Pareto).
    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                let ln_z = normal::ln_mass(a, b);
                let pa = if a.is_finite() { (normal::ln_pdf(a) - ln_z).exp() } else { 0.0 };
                let pb = if b.is_finite() { (normal::ln_pdf(b) - ln_z).exp() } else { 0.0 };
                mean + sd * (pa - pb)
            }
            Self::Pareto { scale, shape } => {
                if *shape > 1.0 {
                    shape * scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::DiscreteEmpirical { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Parameter-space convex combination `alpha·self + (1−alpha)·other` within one family.
    pub fn blend(&self, other: &Self, alpha: f64) -> Result<Self, DistError> {
        let mix = |a: f64, b: f64| alpha * a + (1.0 - alpha) * b;
        match (self, other) {
            (Self::Exponential { rate: a }, Self::Exponential { rate: b }) => Self::exponential(mix(*a, *b)),
            (
                Self::TruncatedNormal { mean: m1, sd: s1, lo, hi },
                Self::TruncatedNormal { mean: m2, sd: s2, lo: lo2, hi: hi2 },
            ) if lo == lo2 && hi == hi2 => Self::truncated_normal(mix(*m1, *m2), mix(*s1, *s2), *lo, *hi),
            (Self::Pareto { scale, shape: a }, Self::Pareto { scale: s2, shape: b }) if scale == s2 => {
                Self::pareto(*scale, mix(*a, *b))
            }
            (Self::Uniform { lo, hi }, Self::Uniform { lo: l2, hi: h2 }) => {
                Self::uniform(mix(*lo, *l2), mix(*hi, *h2))
            }
            (Self::DiscreteEmpirical { values, probs: p1 }, Self::DiscreteEmpirical { values: v2, probs: p2 })
                if values == v2 =>
            {
                let mut probs: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| mix(*a, *b)).collect();
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                Self::discrete(values.clone(), probs)
            }
            _ => Err(DistError::InvalidParams(format!(
                "cannot blend {} with {}",
                self.family_name(),
                other.family_name()
            ))),
        }
    }

    /// Encodes as `{family, params, support}`.
    pub fn to_json(&self) -> Value {
        let (params, support) = match self {
            Self::Exponential { rate } => (json!({ "rate": rate }), json!([0.0, "inf"])),
            Self::TruncatedNormal { mean, sd, lo, hi } => (
                json!({ "mean": mean, "sd": sd, "lo": encode(*lo), "hi": encode(*hi) }),
                json!([encode(*lo), encode(*hi)]),
            ),
            Self::Pareto { scale, shape } => (json!({ "scale": scale, "shape": shape }), json!([scale, "inf"])),
            Self::Uniform { lo, hi } => (json!({ "lo": lo, "hi": hi }), json!([lo, hi])),
            Self::DiscreteEmpirical { values, probs } => {
                (json!({ "values": values, "probs": probs }), json!(values))
            }
        };
        json!({ "family": self.family_name(), "params": params, "support": support })
    }

    pub fn from_json(v: &Value) -> Result<Self, DistError> {
        let bad = |m: String| DistError::InvalidParams(m);
        let family = v.get("family").and_then(Value::as_str).ok_or_else(|| bad("missing `family`".into()))?;
        let params = v.get("params").ok_or_else(|| bad("missing `params`".into()))?;
        let num = |k: &str| -> Result<f64, DistError> {
            params.get(k).and_then(decode).ok_or_else(|| bad(format!("{family}: missing numeric param `{k}`")))
        };
        let list = |k: &str| -> Result<Vec<f64>, DistError> {
            params
                .get(k)
                .and_then(Value::as_array)
                .ok_or_else(|| bad(format!("{family}: missing array param `{k}`")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(format!("{family}: non-numeric entry in `{k}`"))))
                .collect()
        };
        let spec = match family {
            "exponential" => Self::exponential(num("rate")?)?,
            "truncated_normal" => Self::truncated_normal(num("mean")?, num("sd")?, num("lo")?, num("hi")?)?,
            "pareto" => Self::pareto(num("scale")?, num("shape")?)?,
            "uniform" => Self::uniform(num("lo")?, num("hi")?)?,
            "discrete_empirical" => Self::discrete(list("values")?, list("probs")?)?,
            other => return Err(bad(format!("unknown family `{other}`"))),
        };
        if let Some(s) = v.get("support") {
            if *s != spec.to_json()["support"] {
                return Err(bad(format!("{family}: declared support {s} does not match parameters")));
            }
        }
        Ok(spec)
    }
}

impl Serialize for DistributionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DistributionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_json(&v).map_err(D::Error::custom)
    }
}

impl FamilyTag {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "exponential" => Self::Exponential,
            "truncated_normal" => Self::TruncatedNormal { lo: f64::NEG_INFINITY, hi: f64::INFINITY },
            "pareto" => Self::Pareto { scale: None },
            "uniform" => Self::Uniform,
            "discrete_empirical" | "discrete" => Self::DiscreteEmpirical,
            _ => return None,
        })
    }

    /// The tag that refits `spec` within its family, keeping fixed parameters.
    pub fn of(spec: &DistributionSpec) -> Self {
        match spec {
            DistributionSpec::Exponential { .. } => Self::Exponential,
            DistributionSpec::TruncatedNormal { lo, hi, .. } => Self::TruncatedNormal { lo: *lo, hi: *hi },
            DistributionSpec::Pareto { scale, .. } => Self::Pareto { scale: Some(*scale) },
            DistributionSpec::Uniform { .. } => Self::Uniform,
            DistributionSpec::DiscreteEmpirical { .. } => Self::DiscreteEmpirical,
        }
    }
}

/// Maximum-likelihood fit within `family`.
pub fn fit_mle(family: &FamilyTag, samples: &[f64]) -> Result<DistributionSpec, DistError> {
    let w = vec![1.0; samples.len()];
    fit_mle_weighted(family, samples, &w)
}

/// Weighted maximum-likelihood fit; weights need not be normalised.
pub fn fit_mle_weighted(family: &FamilyTag, samples: &[f64], weights: &[f64]) -> Result<DistributionSpec, DistError> {
    let fit_err = |m: String| DistError::Fit(m);
    if samples.len() < 2 {
        return Err(fit_err(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.len() != weights.len() {
        return Err(fit_err("samples and weights differ in length".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(fit_err("non-finite sample".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(fit_err("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(fit_err("all weights are zero".into()));
    }
    let wmean = samples.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let wvar = samples.iter().zip(weights).map(|(x, w)| w * (x - wmean).powi(2)).sum::<f64>() / total;
    let support: Vec<f64> = samples.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(x, _)| *x).collect();
    let min = support.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    match family {
        FamilyTag::Exponential => {
            if min < 0.0 {
                return Err(fit_err("exponential samples must be >= 0".into()));
            }
            if !(wmean > 0.0) {
                return Err(fit_err("exponential fit of all-zero samples is degenerate".into()));
            }
            DistributionSpec::exponential(1.0 / wmean)
        }
        FamilyTag::Uniform => {
            if !(min < max) {
                return Err(fit_err("uniform fit needs two distinct samples".into()));
            }
            DistributionSpec::uniform(min, max)
        }
        FamilyTag::DiscreteEmpirical => {
            let mut values: Vec<f64> = Vec::new();
            let mut mass: Vec<f64> = Vec::new();
            for (x, w) in samples.iter().zip(weights) {
                match values.iter().position(|v| v == x) {
                    Some(i) => mass[i] += w,
                    None => {
                        values.push(*x);
                        mass.push(*w);
                    }
                }
            }
            let mut pairs: Vec<(f64, f64)> = values.into_iter().zip(mass).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let values = pairs.iter().map(|p| p.0).collect();
            let probs = pairs.iter().map(|p| p.1 / total).collect();
            DistributionSpec::discrete(values, probs)
        }
        FamilyTag::Pareto { scale } => {
            let scale = scale.unwrap_or(min);
            if !(scale > 0.0) {
                return Err(fit_err(format!("pareto scale must be > 0, got {scale}")));
            }
            if min < scale {
                return Err(fit_err(format!("pareto sample {min} below fixed scale {scale}")));
            }
            let log_sum: f64 = samples.iter().zip(weights).map(|(x, w)| w * (x / scale).ln()).sum();
            if !(log_sum > 0.0) {
                return Err(fit_err("pareto fit of samples all at the scale is degenerate".into()));
            }
            DistributionSpec::pareto(scale, total / log_sum)
        }
        FamilyTag::TruncatedNormal { lo, hi } => {
            if min < *lo || max > *hi {
                return Err(fit_err(format!("samples outside truncation bounds [{lo}, {hi}]")));
            }
            if !(wvar > 0.0) {
                return Err(fit_err("truncated normal fit of zero-variance samples is degenerate".into()));
            }
            fit_truncated_normal(samples, weights, total, wmean, wvar.sqrt(), *lo, *hi)
        }
    }
}

fn fit_truncated_normal(
    samples: &[f64],
    weights: &[f64],
    total: f64,
    mean0: f64,
    sd0: f64,
    lo: f64,
    hi: f64,
) -> Result<DistributionSpec, DistError> {
    // sufficient statistics
    let s1 = samples.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let s2 = samples.iter().zip(weights).map(|(x, w)| w * x * x).sum::<f64>() / total;
    let neg_ll = |p: &[f64]| -> f64 {
        let (mu, sd) = (p[0], p[1].exp());
        let ln_z = normal::ln_mass((lo - mu) / sd, (hi - mu) / sd);
        if !ln_z.is_finite() {
            return f64::INFINITY;
        }
        let quad = (s2 - 2.0 * mu * s1 + mu * mu) / (2.0 * sd * sd);
        quad + sd.ln() + ln_z
    };
    let mut best = vec![mean0, sd0.ln()];
    // restart to polish the simplex
    for _ in 0..3 {
        let (x, _) = nelder_mead(neg_ll, &best, &[0.1 * sd0, 0.1], 1e-15, 4000);
        best = x;
    }
    DistributionSpec::truncated_normal(best[0], best[1].exp(), lo, hi)
        .map_err(|e| DistError::Fit(format!("truncated normal optimiser left the valid region: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson integration; infinite upper limits via x = a + t/(1-t).
    fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let run = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let (fa, fm, fb) = (g(a), g(0.5 * (a + b)), g(b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&g, a, b, fa, fm, fb, whole, 1e-12, 50)
        };
        if b.is_infinite() {
            let g = |t: f64| if t >= 1.0 { 0.0 } else { f(a + t / (1.0 - t)) / ((1.0 - t) * (1.0 - t)) };
            // split to resolve mass concentrated near t = 0
            let cuts = [0.0, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 0.9, 0.99, 1.0];
            cuts.windows(2).map(|w| run(&g, w[0], w[1])).sum()
        } else {
            let n = 64;
            (0..n).map(|i| run(&f, a + (b - a) * i as f64 / n as f64, a + (b - a) * (i + 1) as f64 / n as f64)).sum()
        }
    }

    fn total_mass(d: &DistributionSpec) -> f64 {
        match d {
            DistributionSpec::DiscreteEmpirical { probs, .. } => probs.iter().sum(),
            _ => match d.support() {
                Support::Interval { lo, hi } => integrate(|x| d.pdf(x), lo, hi),
                Support::Finite(_) => unreachable!(),
            },
        }
    }

    /// M(θ) = ∫ e^{θx} f(x) dx by quadrature.
    fn mgf(d: &DistributionSpec, theta: f64) -> f64 {
        match d {
            DistributionSpec::DiscreteEmpirical { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| p * (theta * v).exp()).sum()
            }
            _ => match d.support() {
                Support::Interval { lo, hi } => integrate(|x| (theta * x).exp() * d.pdf(x), lo, hi),
                Support::Finite(_) => unreachable!(),
            },
        }
    }

    #[test]
    fn support_containment_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let p = DistributionSpec::point(5.0);
        for _ in 0..1000 {
            let x = u.sample(&mut rng);
            assert!((0.0..=1.0).contains(&x));
            assert_eq!(p.sample(&mut rng), 5.0);
        }
    }

    #[test]
    fn exponential_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = DistributionSpec::exponential(2.0).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn pdf_examples() {
        assert_eq!(DistributionSpec::exponential(1.0).unwrap().pdf(0.0), 1.0);
        assert_eq!(DistributionSpec::uniform(2.0, 4.0).unwrap().pdf(5.0), 0.0);
        // φ(0) / (Φ(1) − Φ(−1)) with both pieces from quadrature of the gaussian kernel
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mass = integrate(|x| (-0.5 * x * x).exp() * phi0, -1.0, 1.0);
        let expected = phi0 / mass;
        let tn = DistributionSpec::truncated_normal(0.0, 1.0, -1.0, 1.0).unwrap();
        assert!((tn.pdf(0.0) - expected).abs() < 1e-10);
        assert!((expected - 0.58445).abs() < 1e-4);
    }

    #[test]
    fn tilt_examples() {
        let e = DistributionSpec::exponential(1.0).unwrap();
        assert_eq!(e.tilt(0.5).unwrap(), DistributionSpec::Exponential { rate: 0.5 });
        assert!(matches!(e.tilt(1.0), Err(DistError::InvalidTilt { .. })));
        let d = DistributionSpec::discrete(vec![0.0, 1.0], vec![0.9, 0.1]).unwrap();
        match d.tilt(9f64.ln()).unwrap() {
            DistributionSpec::DiscreteEmpirical { probs, .. } => {
                assert!((probs[0] - 0.5).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15)
            }
            _ => unreachable!(),
        }
        for d in [
            e.clone(),
            DistributionSpec::uniform(0.0, 1.0).unwrap(),
            DistributionSpec::pareto(1.0, 2.0).unwrap(),
            DistributionSpec::truncated_normal(1.0, 2.0, 0.0, 5.0).unwrap(),
        ] {
            assert_eq!(d.tilt(0.0).unwrap(), d);
        }
        assert!(matches!(
            DistributionSpec::uniform(0.0, 1.0).unwrap().tilt(0.3),
            Err(DistError::UnsupportedTilt { .. })
        ));
        assert!(matches!(
            DistributionSpec::pareto(1.0, 2.0).unwrap().tilt(-0.3),
            Err(DistError::UnsupportedTilt { .. })
        ));
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(DistributionSpec::exponential(0.0).is_err());
        assert!(DistributionSpec::truncated_normal(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(DistributionSpec::discrete(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(DistributionSpec::discrete(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(DistributionSpec::discrete(vec![1.0, 2.0], vec![-0.1, 1.1]).is_err());
        assert!(DistributionSpec::pareto(0.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_fits() {
        assert_eq!(
            fit_mle(&FamilyTag::Exponential, &[1.0, 2.0, 3.0]).unwrap(),
            DistributionSpec::Exponential { rate: 0.5 }
        );
        assert_eq!(
            fit_mle(&FamilyTag::DiscreteEmpirical, &[1.0, 2.0, 2.0, 1.0]).unwrap(),
            DistributionSpec::DiscreteEmpirical { values: vec![1.0, 2.0], probs: vec![0.5, 0.5] }
        );
        assert_eq!(
            fit_mle(&FamilyTag::Uniform, &[3.0, 1.0, 2.5]).unwrap(),
            DistributionSpec::Uniform { lo: 1.0, hi: 3.0 }
        );
        match fit_mle(&FamilyTag::Pareto { scale: None }, &[1.0, 2.0, 4.0]).unwrap() {
            DistributionSpec::Pareto { scale, shape } => {
                assert_eq!(scale, 1.0);
                assert!((shape - 3.0 / (2f64.ln() + 4f64.ln())).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn fit_errors() {
        assert!(fit_mle(&FamilyTag::Exponential, &[1.0]).is_err());
        assert!(fit_mle(&FamilyTag::Uniform, &[2.0, 2.0]).is_err());
        let tn = FamilyTag::TruncatedNormal { lo: 0.0, hi: 10.0 };
        assert!(fit_mle(&tn, &[3.0, 3.0, 3.0]).is_err());
        assert!(fit_mle(&tn, &[3.0, 11.0]).is_err());
        assert!(fit_mle(&FamilyTag::Pareto { scale: None }, &[2.0, 2.0]).is_err());
        // degenerate is fine for the empirical family
        assert_eq!(fit_mle(&FamilyTag::DiscreteEmpirical, &[4.0, 4.0]).unwrap(), DistributionSpec::point(4.0));
    }

    #[test]
    fn truncated_normal_recovery() {
        let truth = DistributionSpec::truncated_normal(4.0, 2.0, 0.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> = (0..10_000).map(|_| truth.sample(&mut rng)).collect();
        match fit_mle(&FamilyTag::TruncatedNormal { lo: 0.0, hi: 10.0 }, &xs).unwrap() {
            DistributionSpec::TruncatedNormal { mean, sd, .. } => {
                assert!((mean - 4.0).abs() < 0.1, "mean {mean}");
                assert!((sd - 2.0).abs() < 0.1, "sd {sd}");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn consistency_for_closed_form_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e = DistributionSpec::exponential(0.7).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
        let DistributionSpec::Exponential { rate } = fit_mle(&FamilyTag::Exponential, &xs).unwrap() else { panic!() };
        assert!((rate - 0.7).abs() < 0.03, "rate {rate}");

        let p = DistributionSpec::pareto(2.0, 3.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| p.sample(&mut rng)).collect();
        let DistributionSpec::Pareto { scale, shape } = fit_mle(&FamilyTag::Pareto { scale: None }, &xs).unwrap() else {
            panic!()
        };
        assert!((scale - 2.0).abs() < 0.01 && (shape - 3.0).abs() < 0.15, "({scale}, {shape})");
    }

    #[test]
    fn weighted_fit_matches_replicated_samples() {
        let xs = [1.0, 2.0, 5.0];
        let ws = [2.0, 1.0, 3.0];
        let rep = [1.0, 1.0, 2.0, 5.0, 5.0, 5.0];
        let tag = FamilyTag::TruncatedNormal { lo: 0.0, hi: 8.0 };
        let a = fit_mle_weighted(&tag, &xs, &ws).unwrap();
        let b = fit_mle(&tag, &rep).unwrap();
        let (DistributionSpec::TruncatedNormal { mean: m1, sd: s1, .. }, DistributionSpec::TruncatedNormal { mean: m2, sd: s2, .. }) = (a, b) else {
            panic!()
        };
        assert!((m1 - m2).abs() < 1e-6 && (s1 - s2).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let specs = [
            DistributionSpec::exponential(0.1 + 0.2).unwrap(),
            DistributionSpec::truncated_normal(1.0 / 3.0, 2.0f64.sqrt(), 0.0, 45.0).unwrap(),
            DistributionSpec::pareto(std::f64::consts::PI, 1.5).unwrap(),
            DistributionSpec::uniform(-1e-300, 7.0).unwrap(),
            DistributionSpec::discrete(vec![0.1, 0.7], vec![0.3, 0.7]).unwrap(),
        ];
        for s in specs {
            let text = serde_json::to_string(&s).unwrap();
            let back: DistributionSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, s, "{text}");
        }
    }

    #[test]
    fn json_rejects_inconsistent_support() {
        let v = json!({"family": "uniform", "params": {"lo": 0.0, "hi": 1.0}, "support": [0.0, 2.0]});
        assert!(DistributionSpec::from_json(&v).is_err());
        let v = json!({"family": "gamma", "params": {}});
        assert!(DistributionSpec::from_json(&v).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = DistributionSpec> {
        prop_oneof![
            (0.05f64..5.0).prop_map(|r| DistributionSpec::exponential(r).unwrap()),
            (-5.0f64..5.0, 0.2f64..3.0, -4.0f64..0.0, 0.5f64..6.0)
                .prop_map(|(m, s, lo, w)| DistributionSpec::truncated_normal(m, s, lo, lo + w).unwrap()),
            (0.5f64..3.0, 1.5f64..5.0).prop_map(|(sc, sh)| DistributionSpec::pareto(sc, sh).unwrap()),
            (-3.0f64..3.0, 0.1f64..4.0).prop_map(|(lo, w)| DistributionSpec::uniform(lo, lo + w).unwrap()),
            proptest::collection::vec(0.01f64..1.0, 1..6).prop_map(|raw| {
                let t: f64 = raw.iter().sum();
                let values = (0..raw.len()).map(|i| i as f64 * 0.5).collect();
                DistributionSpec::discrete(values, raw.iter().map(|r| r / t).collect()).unwrap()
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn densities_normalise(d in arb_spec()) {
            let m = total_mass(&d);
            prop_assert!((m - 1.0).abs() < 1e-6, "{:?} mass {}", d, m);
        }

        #[test]
        fn tilt_matches_mgf(d in arb_spec(), theta in -0.4f64..0.4, xf in 0.0f64..1.0) {
            let tilted = match d.tilt(theta) {
                Ok(t) => t,
                Err(DistError::UnsupportedTilt { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let x = match d.support() {
                Support::Interval { lo, hi } => if hi.is_finite() { lo + xf * (hi - lo) } else { lo + 5.0 * xf },
                Support::Finite(v) => v[((xf * v.len() as f64) as usize).min(v.len() - 1)],
            };
            let lhs = tilted.pdf(x) * mgf(&d, theta);
            let rhs = (theta * x).exp() * d.pdf(x);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn tilt_composes(rate in 0.5f64..3.0, m in -2.0f64..2.0, s in 0.3f64..2.0, t1 in -0.2f64..0.2, t2 in -0.2f64..0.2) {
            let e = DistributionSpec::exponential(rate).unwrap();
            let (DistributionSpec::Exponential { rate: r1 }, DistributionSpec::Exponential { rate: r2 }) =
                (e.tilt(t1).unwrap().tilt(t2).unwrap(), e.tilt(t1 + t2).unwrap()) else { unreachable!() };
            prop_assert!((r1 - r2).abs() <= 1e-14 * r1);
            let tn = DistributionSpec::truncated_normal(m, s, -3.0, 3.0).unwrap();
            let (DistributionSpec::TruncatedNormal { mean: a, .. }, DistributionSpec::TruncatedNormal { mean: b, .. }) =
                (tn.tilt(t1).unwrap().tilt(t2).unwrap(), tn.tilt(t1 + t2).unwrap()) else { unreachable!() };
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }

        #[test]
        fn samples_stay_in_support(d in arb_spec(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sup = d.support();
            for _ in 0..64 {
                let x = d.sample(&mut rng);
                prop_assert!(sup.contains(x), "{} outside {:?}", x, sup);
                prop_assert!(d.pdf(x) > 0.0);
            }
        }
    }
}
