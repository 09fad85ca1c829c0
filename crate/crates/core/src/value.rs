//! Dynamic values shared by graphs, policy expressions and verdicts, plus the
//! canonical JSON encoding used for every machine-readable output.
//!
//! Canonical JSON: object keys sorted lexicographically (byte order), arrays
//! in stored order, no insignificant whitespace, numbers as their shortest
//! exact decimal, non-terminating rationals as the string `"n/d"`.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::number::{Number, NumberError, Rendered};

pub type Map = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Number(Number),
    String(String),
    List(Vec<Value>),
    Map(Map),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::String(_) => "string",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<&Number> {
        match self {
            Value::Number(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&Map> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    /// Converts a parsed JSON tree. Strings that are exactly a canonical
    /// non-terminating fraction (`"1/3"`) become numbers, which makes the
    /// canonical encoding round-trip.
    pub fn from_json(json: &serde_json::Value) -> Result<Value, NumberError> {
        Ok(match json {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => Value::Number(Number::parse_decimal(&n.to_string())?),
            serde_json::Value::String(s) => match Number::from_canonical_fraction(s) {
                Some(n) => Value::Number(n),
                None => Value::String(s.clone()),
            },
            serde_json::Value::Array(items) => {
                Value::List(items.iter().map(Value::from_json).collect::<Result<_, _>>()?)
            }
            serde_json::Value::Object(map) => Value::Map(
                map.iter().map(|(k, v)| Ok((k.clone(), Value::from_json(v)?))).collect::<Result<_, NumberError>>()?,
            ),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Number(n) => number_to_json(n),
            Value::String(s) => serde_json::Value::String(s.clone()),
            Value::List(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(map) => serde_json::Value::Object(map.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("serializing a JSON tree cannot fail")
    }

    /// Follows a JSON pointer (`/tool_calls/0/arguments/value`).
    pub fn pointer(&self, pointer: &str) -> Option<&Value> {
        let mut current = self;
        for token in pointer_tokens(pointer) {
            current = match current {
                Value::Map(m) => m.get(&token)?,
                Value::List(items) => items.get(token.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(current)
    }

    pub fn pointer_mut(&mut self, pointer: &str) -> Option<&mut Value> {
        let mut current = self;
        for token in pointer_tokens(pointer) {
            current = match current {
                Value::Map(m) => m.get_mut(&token)?,
                Value::List(items) => items.get_mut(token.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(current)
    }
}

fn pointer_tokens(pointer: &str) -> impl Iterator<Item = String> + '_ {
    pointer.split('/').skip(1).map(|t| t.replace("~1", "/").replace("~0", "~"))
}

/// Escapes one JSON pointer token.
pub fn pointer_escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn number_to_json(n: &Number) -> serde_json::Value {
    match n.render() {
        Rendered::Decimal(text) => {
            serde_json::Value::Number(text.parse().expect("rendered decimals are valid JSON numbers"))
        }
        Rendered::Fraction(text) => serde_json::Value::String(text),
    }
}

/// Canonical rendering, as used in violation messages (`7.1 != 7.095`).
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_json())
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(deserializer)?;
        Value::from_json(&json).map_err(serde::de::Error::custom)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<Number> for Value {
    fn from(n: Number) -> Self {
        Value::Number(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::String(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::String(s)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Number(Number::from(v))
    }
}

/// Canonical JSON for any serializable record. Relies on `serde_json::Map`
/// being key-ordered (the `preserve_order` feature must stay off).
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("records serialize to JSON");
    serde_json::to_string(&tree).expect("serializing a JSON tree cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sorts_keys_and_keeps_list_order() {
        let json: serde_json::Value = serde_json::from_str(r#"{"b":[3,1,2],"a":{"z":1,"y":47.30}}"#).unwrap();
        let value = Value::from_json(&json).unwrap();
        assert_eq!(value.to_canonical_json(), r#"{"a":{"y":47.3,"z":1},"b":[3,1,2]}"#);
    }

    #[test]
    fn fraction_strings_round_trip_as_numbers() {
        let v = Value::Number(Number::from_ratio(1, 3));
        let text = v.to_canonical_json();
        assert_eq!(text, "\"1/3\"");
        let back = Value::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, v);
        let plain = Value::from_json(&serde_json::json!("3/4")).unwrap();
        assert_eq!(plain, Value::String("3/4".into()));
    }

    #[test]
    fn pointers() {
        let json: serde_json::Value = serde_json::from_str(r#"{"a":[{"b/c":1}]}"#).unwrap();
        let value = Value::from_json(&json).unwrap();
        assert_eq!(value.pointer("/a/0/b~1c"), Some(&Value::from(1)));
        assert_eq!(value.pointer("/a/1"), None);
        assert_eq!(value.pointer(""), Some(&value));
    }
}
