//! Flag and config-file resolution. Every command has an `Args` struct of
//! optional flags and a resolved config struct with identical kebab-case
//! keys; flags override the file, the file overrides defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Reads a TOML or JSON config. A run manifest is accepted too, in which
/// case its config snapshot is used.
pub fn load_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            let t: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        }
        _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    match value {
        Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => Ok(map.remove("config").unwrap()),
        v @ Value::Object(_) => Ok(v),
        _ => bail!("config {} must be a table", path.display()),
    }
}

pub fn resolve<A: Serialize, C: DeserializeOwned>(file: Option<&Path>, args: &A) -> Result<C> {
    let mut merged = match file {
        Some(p) => load_file(p)?,
        None => Value::Object(Default::default()),
    };
    let Value::Object(flags) = serde_json::to_value(args)? else {
        unreachable!("argument structs serialize to maps")
    };
    let map = merged.as_object_mut().unwrap();
    for (k, v) in flags {
        map.insert(k, v);
    }
    serde_json::from_value(merged).context("invalid configuration")
}

/// A noise level in `[0, 1]` units. Accepts plain numbers or fractions such
/// as `25/255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level(pub f64);

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
        let v = match s.split_once('/') {
            Some((a, b)) => parse(a)? / parse(b)?,
            None => parse(s)?,
        };
        if !v.is_finite() || v < 0.0 {
            return Err(format!("noise level must be finite and non-negative, got {s}"));
        }
        Ok(Level(v))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Level(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Burst sizes for a sweep: `2..16` (inclusive) or `2,4,8,16`.
pub fn parse_frames(spec: &str) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
        (a..=b).collect()
    } else {
        spec.split(',').map(|t| t.trim().parse()).collect::<std::result::Result<_, _>>()?
    };
    if sizes.is_empty() || sizes.contains(&0) {
        bail!("frame sweep {spec:?} must list positive burst sizes");
    }
    Ok(sizes)
}
