use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "fluidlogic-metrics-1";

/// Named scalar metrics and boolean flags of one model variant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: String,
    pub metrics: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
}

impl MetricsRecord {
    pub fn new(variant: impl Into<String>) -> Self {
        Self { variant: variant.into(), ..Default::default() }
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn flag(&mut self, name: &str, value: bool) -> &mut Self {
        self.flags.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Every metric is finite and every fraction or rate lies in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.metrics {
            if !v.is_finite() {
                return Err(Error::Numeric { context: format!("metric `{k}` of `{}`", self.variant) });
            }
            let is_fraction = ["_frac", "_fraction", "_rate"].iter().any(|s| k.ends_with(s));
            if is_fraction && !(0.0..=1.0).contains(v) {
                return Err(Error::Contract(format!("fraction `{k}` = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The metrics file written by `run`. Wall-clock timings are kept out of it
/// so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema: String,
    pub experiment: String,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

impl MetricsFile {
    pub fn new(experiment: impl Into<String>, seed: u64, records: Vec<MetricsRecord>) -> Self {
        Self { schema: METRICS_SCHEMA.into(), experiment: experiment.into(), seed, records }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != METRICS_SCHEMA {
            return Err(Error::Config(format!("unknown metrics schema `{}`", self.schema)));
        }
        self.records.iter().try_for_each(MetricsRecord::validate)
    }

    pub fn record(&self, variant: &str) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
