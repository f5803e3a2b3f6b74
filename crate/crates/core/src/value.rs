//! Scalar values carried by broker properties and SCADA commands.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A property value. Nested objects, arrays and `null` are not representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

#[derive(Debug, Error, PartialEq)]
#[error("value is not a scalar: {0}")]
pub struct NotScalar(pub String);

impl Scalar {
    /// Numeric view used by the historian: booleans map to 0/1, text is rejected.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => Some(*n),
            Scalar::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Scalar::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(*b),
            Scalar::Number(n) => Some(*n != 0.0),
            Scalar::Text(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Scalar::Bool(b) => serde_json::Value::Bool(*b),
            // integral values keep an integer spelling on the wire
            Scalar::Number(n) if n.fract() == 0.0 && n.abs() < 9.0e15 => serde_json::Value::from(*n as i64),
            Scalar::Number(n) => {
                serde_json::Number::from_f64(*n).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
            }
            Scalar::Text(s) => serde_json::Value::String(s.clone()),
        }
    }
}

impl TryFrom<serde_json::Value> for Scalar {
    type Error = NotScalar;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        match v {
            serde_json::Value::Bool(b) => Ok(Scalar::Bool(b)),
            serde_json::Value::Number(n) => n.as_f64().map(Scalar::Number).ok_or_else(|| NotScalar(n.to_string())),
            serde_json::Value::String(s) => Ok(Scalar::Text(s)),
            other => Err(NotScalar(other.to_string())),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_string())
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rejects_nested_values() {
        assert!(Scalar::try_from(json!({"a": 1})).is_err());
        assert!(Scalar::try_from(json!([1, 2])).is_err());
        assert!(Scalar::try_from(json!(null)).is_err());
        assert_eq!(Scalar::try_from(json!(42000)).unwrap(), Scalar::Number(42000.0));
        assert_eq!(Scalar::try_from(json!("charge")).unwrap(), Scalar::from("charge"));
    }
}
