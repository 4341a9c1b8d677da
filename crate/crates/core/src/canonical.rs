//! Canonical JSON: sorted object keys, no insignificant whitespace.
//!
//! Everything that is hashed or compared byte-for-byte goes through here, so
//! the output must not depend on the map implementation `serde_json` was
//! compiled with.

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Rebuild `value` with every object's keys in ascending order.
pub fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sort_keys(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

pub fn to_value<T: Serialize>(value: &T) -> Value {
    // Serializing our own types into a Value cannot fail: all map keys are strings.
    serde_json::to_value(value).expect("serializable to JSON value")
}

pub fn to_bytes_value(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(value, &mut out);
    out
}

pub fn to_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    to_bytes_value(&to_value(value))
}

pub fn to_string<T: Serialize>(value: &T) -> String {
    String::from_utf8(to_bytes(value)).expect("JSON is UTF-8")
}

/// Hex SHA-256 of the canonical encoding.
pub fn hash_value(value: &Value) -> String {
    hex_digest(&to_bytes_value(value))
}

pub fn hash<T: Serialize>(value: &T) -> String {
    hash_value(&to_value(value))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_string(k).expect("string key").as_bytes());
                out.push(b':');
                write_value(&map[k], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        scalar => out.extend(serde_json::to_string(scalar).expect("scalar").as_bytes()),
    }
}
