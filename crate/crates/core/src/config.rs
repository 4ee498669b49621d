//! Run configuration as flat dotted-key JSON.
//!
//! ```json
//! { "data": "bundles/acm", "out": "runs/acm", "d": 128, "weights.mu_c": 1.0, "k.PSP": 30 }
//! ```
//!
//! Precedence is defaults < file < flags. Keys under `k.` name layers verbatim,
//! so layer names may themselves contain dots.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data: Option<String>,
    pub out: Option<String>,
    pub train: TrainConfig,
}

const MAP_KEYS: &[&str] = &["k"];

/// Nested object to flat dotted keys. Map-valued fields listed in `MAP_KEYS`
/// keep their entries under `<field>.<key>`; an empty map is dropped.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) if !prefix.is_empty() && MAP_KEYS.contains(&prefix) => {
                for (k, v) in map {
                    out.insert(format!("{prefix}.{k}"), v.clone());
                }
            }
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, v, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: &BTreeMap<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = match MAP_KEYS.iter().find(|m| key.starts_with(&format!("{m}."))) {
            Some(m) => vec![m, &key[m.len() + 1..]],
            None => key.split('.').collect(),
        };
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed config key {key:?}")));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("config key {key:?} conflicts with a scalar")))?;
        }
        let last = parts[parts.len() - 1];
        if node.contains_key(last) {
            return Err(Error::Config(format!("config key {key:?} conflicts with a nested key")));
        }
        node.insert(last.to_string(), v.clone());
    }
    Ok(Value::Object(root))
}

impl RunConfig {
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut flat = flatten(&serde_json::to_value(&self.train).expect("config serializes"));
        if let Some(d) = &self.data {
            flat.insert("data".into(), Value::String(d.clone()));
        }
        if let Some(o) = &self.out {
            flat.insert("out".into(), Value::String(o.clone()));
        }
        flat
    }

    pub fn from_flat(mut flat: BTreeMap<String, Value>) -> Result<Self> {
        let take_str = |flat: &mut BTreeMap<String, Value>, key: &str| -> Result<Option<String>> {
            match flat.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(other) => Err(Error::Config(format!("{key} must be a string, got {other}"))),
            }
        };
        let data = take_str(&mut flat, "data")?;
        let out = take_str(&mut flat, "out")?;
        let train: TrainConfig = serde_json::from_value(unflatten(&flat)?).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { data, out, train })
    }

    pub fn to_json(&self) -> String {
        let obj: Map<String, Value> = self.to_flat().into_iter().collect();
        serde_json::to_string_pretty(&Value::Object(obj)).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(Error::Config("config file must hold a JSON object".into()));
        };
        if let Some((k, _)) = obj.iter().find(|(_, v)| v.is_object()) {
            return Err(Error::Config(format!("config keys are flat; {k:?} holds an object")));
        }
        Self::from_flat(obj.into_iter().collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Sets one dotted key, re-validating the whole configuration.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut flat = self.to_flat();
        flat.insert(key.to_string(), value);
        *self = Self::from_flat(flat)?;
        Ok(())
    }
}
