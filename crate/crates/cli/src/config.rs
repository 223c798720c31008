//! JSON configuration: documented defaults, then the config file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::exit::Failure;

pub const SEED_ENV: &str = "NMOR_SEED";

/// Recursively overlays `top` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !v.is_object() {
        return Err(Failure::validation(format!("config {} is not a JSON object", path.display())).into());
    }
    Ok(v)
}

/// Seed given through the environment, if any.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::validation(format!("{SEED_ENV}={s} is not an unsigned integer")).into()),
        Err(_) => Ok(None),
    }
}

/// Flag values that were actually given, as a JSON object.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("plain values serialize"));
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// `defaults`, overlaid with the seed fallback (when `env_fallback`), the
/// config file and the flags, in that order, then parsed into `T`.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: Overrides,
    env_fallback: bool,
) -> Result<(T, Value)> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(seed) = env_seed()?.filter(|_| env_fallback) {
        if v.get("seed").is_some() {
            v["seed"] = seed.into();
        }
    }
    if let Some(p) = file {
        merge(&mut v, read_json(p)?);
    }
    merge(&mut v, flags.into_value());
    let parsed: T = serde_json::from_value(v.clone()).context("invalid configuration")?;
    Ok((parsed, v))
}
