//! Float encoding for JSON artifacts.
//!
//! Finite values use the shortest decimal that round-trips to the same bits.
//! JSON has no infinity, so non-finite values are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`.

use serde::de::{self, Deserializer, Visitor};
use serde::Serializer;
use std::fmt;

pub fn encode(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::Value::from(v)
    } else {
        serde_json::Value::String(non_finite_str(v).to_string())
    }
}

pub fn decode(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => parse_non_finite(s),
        _ => None,
    }
}

fn non_finite_str(v: f64) -> &'static str {
    if v.is_nan() {
        "nan"
    } else if v > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

fn parse_non_finite(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ => None,
    }
}

/// `#[serde(with = "crate::json::ext_f64")]`
pub mod ext_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(non_finite_str(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtF64Visitor)
    }

    struct ExtF64Visitor;

    impl<'de> Visitor<'de> for ExtF64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            parse_non_finite(v).ok_or_else(|| E::custom(format!("unexpected float string `{v}`")))
        }
    }
}

/// Same as [`ext_f64`] for a `[lo, hi]` pair.
pub mod ext_f64_pair {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::ext_f64")] f64);

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        [Wrap(v.0), Wrap(v.1)].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let [a, b] = <[Wrap; 2]>::deserialize(d)?;
        Ok((a.0, b.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Probe {
        #[serde(with = "ext_f64")]
        x: f64,
        #[serde(with = "ext_f64_pair")]
        ci: (f64, f64),
    }

    #[test]
    fn non_finite_values_survive() {
        let p = Probe { x: f64::INFINITY, ci: (f64::NEG_INFINITY, 0.1 + 0.2) };
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"x":"inf","ci":["-inf",0.30000000000000004]}"#);
        let back: Probe = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn value_helpers() {
        assert_eq!(decode(&encode(f64::INFINITY)), Some(f64::INFINITY));
        assert_eq!(decode(&encode(1e-300)), Some(1e-300));
        assert!(decode(&serde_json::Value::Null).is_none());
    }
}
