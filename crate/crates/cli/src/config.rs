//! Run configuration: one TOML file with a section per config type, plus
//! `--section.key=value` overrides from the command line.

use std::path::Path;

use pansharp_core::adapt::AdaptConfig;
use pansharp_core::coreg::CoregConfig;
use pansharp_core::loss::LossConfig;
use pansharp_core::metrics::MetricConfig;
use pansharp_core::model::ModelConfig;
use pansharp_core::raster::SensorSpec;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

/// Sensor description; per-band gains default to a common value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub name: String,
    pub ratio: usize,
    pub ms_mtf_gain: f64,
    /// Overrides `ms_mtf_gain` band by band when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms_mtf_gains: Option<Vec<f64>>,
    pub pan_mtf_gain: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        let g = SensorSpec::generic(1);
        SensorSection {
            name: g.name,
            ratio: g.ratio,
            ms_mtf_gain: g.ms_mtf_gains[0],
            ms_mtf_gains: None,
            pan_mtf_gain: g.pan_mtf_gain,
        }
    }
}

impl SensorSection {
    pub fn spec(&self, bands: usize) -> Result<SensorSpec, CliError> {
        let gains = match &self.ms_mtf_gains {
            Some(g) if g.len() != bands => {
                return Err(CliError::Config(format!("sensor.ms_mtf_gains has {} entries for {bands} bands", g.len())))
            }
            Some(g) => g.clone(),
            None => vec![self.ms_mtf_gain; bands],
        };
        let spec = SensorSpec {
            name: self.name.clone(),
            ratio: self.ratio,
            ms_mtf_gains: gains,
            pan_mtf_gain: self.pan_mtf_gain,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Network hyper-parameters except the band count, which comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub kernel: usize,
    pub attention_kernel: usize,
    pub reduction: usize,
    pub input_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        ModelSection {
            width: m.width,
            kernel: m.kernel,
            attention_kernel: m.attention_kernel,
            reduction: m.reduction,
            input_scale: m.input_scale,
        }
    }
}

impl ModelSection {
    pub fn config(&self, bands: usize) -> ModelConfig {
        ModelConfig {
            bands,
            width: self.width,
            kernel: self.kernel,
            attention_kernel: self.attention_kernel,
            reduction: self.reduction,
            input_scale: self.input_scale,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for weight initialisation and any other randomness.
    pub seed: u64,
    pub sensor: SensorSection,
    pub metrics: MetricConfig,
    pub coreg: CoregConfig,
    pub loss: LossConfig,
    pub model: ModelSection,
    pub adapt: AdaptConfig,
}

/// Splits `--section.key=value` overrides from the remaining arguments.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, value)) if key.contains('.') => overrides.push((key.to_string(), value.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// A flag value as TOML: numbers, booleans and arrays parse as such,
/// anything else is a string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Reads the optional file, applies overrides in order and validates.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
        let mut root = match file {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().unwrap_or_default();
            let mut table = &mut root;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| CliError::Config(format!("--{key}: '{p}' is not a section")))?;
            }
            table.insert(leaf.to_string(), parse_value(raw));
        }
        let cfg: RunConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        let invalid = |e: pansharp_core::Error| CliError::Config(e.to_string());
        cfg.metrics.validate().map_err(invalid)?;
        cfg.loss.validate().map_err(invalid)?;
        cfg.adapt.validate().map_err(invalid)?;
        cfg.model.config(1).validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}
