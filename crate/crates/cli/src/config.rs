use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use pwnl_core::harness::{MpcProblem, Scenario, SearchParams, StationaryDetector, StirlingParams};
use pwnl_core::pipeline::IdentifyConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub sigmas: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            sigmas: vec![0.03, 0.01],
        }
    }
}

/// Everything a command may need, in one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub identify: IdentifyConfig,
    pub plant: StirlingParams,
    pub mpc: MpcProblem,
    pub search: SearchParams,
    pub scenario: Scenario,
    pub detector: StationaryDetector,
    pub report: ReportConfig,
}

impl RunConfig {
    /// Defaults, overlaid with the config file (if any), then with each
    /// `key.path=value` override in order.
    pub fn resolve(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let file: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            merge(&mut doc, file);
        }
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        if let Some(seed) = seed {
            doc["scenario"]["seed"] = Value::from(seed);
        }
        let cfg: RunConfig = serde_json::from_value(doc).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.identify.validate()?;
        self.mpc.validate()?;
        self.search.validate()?;
        self.scenario.validate()?;
        if self.report.sigmas.iter().any(|s| !(*s > 0.0)) {
            bail!("report.sigmas must be positive");
        }
        Ok(())
    }
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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

/// `a.b.c=v`. The value is parsed as JSON, falling back to a plain string.
fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got {assignment:?}"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for part in key.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| anyhow!("--set {key}: {part:?} is not inside an object"))?;
        if !obj.contains_key(part) {
            bail!("unknown configuration key {key:?}");
        }
        slot = obj.get_mut(part).expect("checked above");
    }
    *slot = value;
    Ok(())
}
