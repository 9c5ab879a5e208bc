//! Serde helpers for values that JSON cannot carry natively.
//!
//! Log-probabilities of impossible tokens are `-inf` and an unbounded MED
//! threshold is `+inf`. JSON numbers cannot encode either, so non-finite
//! floats are written as the strings `"inf"`, `"-inf"` and `"nan"` and
//! accepted back in the same form.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use std::fmt;

/// `f64` that round-trips non-finite values through JSON.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Float(pub f64);

impl Serialize for Float {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            serializer.serialize_f64(v)
        } else if v.is_nan() {
            serializer.serialize_str("nan")
        } else if v > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }
}

struct FloatVisitor;

impl Visitor<'_> for FloatVisitor {
    type Value = Float;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Float, E> {
        Ok(Float(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Float, E> {
        Ok(Float(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Float, E> {
        Ok(Float(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Float, E> {
        match v {
            "inf" | "+inf" | "Infinity" => Ok(Float(f64::INFINITY)),
            "-inf" | "-Infinity" => Ok(Float(f64::NEG_INFINITY)),
            "nan" | "NaN" => Ok(Float(f64::NAN)),
            other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for Float {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(FloatVisitor)
    }
}

/// `#[serde(with = "float")]` for plain `f64` fields.
pub mod float {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Float(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Float::deserialize(d).map(|f| f.0)
    }
}

/// `#[serde(with = "float_opt")]` for `Option<f64>` fields.
pub mod float_opt {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Float).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Float>::deserialize(d).map(|o| o.map(|f| f.0))
    }
}

/// `#[serde(with = "float_vec")]` for `Vec<f64>` fields.
pub mod float_vec {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let wrapped: Vec<Float> = v.iter().copied().map(Float).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Float>::deserialize(d).map(|v| v.into_iter().map(|f| f.0).collect())
    }
}

/// `#[serde(with = "float_map")]` for `BTreeMap<K, f64>` fields.
pub mod float_map {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<K, S>(v: &BTreeMap<K, f64>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize + Ord,
        S: Serializer,
    {
        let wrapped: BTreeMap<&K, Float> = v.iter().map(|(k, x)| (k, Float(*x))).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, K, D>(d: D) -> Result<BTreeMap<K, f64>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        D: Deserializer<'de>,
    {
        BTreeMap::<K, Float>::deserialize(d).map(|m| m.into_iter().map(|(k, f)| (k, f.0)).collect())
    }
}

/// `#[serde(with = "token_logprobs")]` for `Vec<(u32, f64)>` pairs.
pub mod token_logprobs {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[(u32, f64)], s: S) -> Result<S::Ok, S::Error> {
        let wrapped: Vec<(u32, Float)> = v.iter().map(|&(t, x)| (t, Float(x))).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(u32, f64)>, D::Error> {
        Vec::<(u32, Float)>::deserialize(d).map(|v| v.into_iter().map(|(t, f)| (t, f.0)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_values_round_trip() {
        for v in [0.5, -1.25, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&Float(v)).unwrap();
            let back: Float = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0, v, "{s}");
        }
        assert_eq!(serde_json::to_string(&Float(f64::NEG_INFINITY)).unwrap(), "\"-inf\"");
        let back: Float = serde_json::from_str("3").unwrap();
        assert_eq!(back.0, 3.0);
        assert!(serde_json::from_str::<Float>("\"bogus\"").is_err());
    }
}
