use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventional MTF Nyquist gains; sensor files may override them.
pub const DEFAULT_MS_GAIN: f64 = 0.29;
pub const DEFAULT_PAN_GAIN: f64 = 0.15;

/// Sensor description: resolution ratio and MTF gains at Nyquist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub ratio: usize,
    pub ms_mtf_gains: Vec<f64>,
    pub pan_mtf_gain: f64,
}

impl SensorSpec {
    /// Generic sensor with `bands` MS bands, ratio 4 and default gains.
    pub fn generic(bands: usize) -> Self {
        SensorSpec {
            name: "generic".into(),
            ratio: 4,
            ms_mtf_gains: vec![DEFAULT_MS_GAIN; bands],
            pan_mtf_gain: DEFAULT_PAN_GAIN,
        }
    }

    pub fn bands(&self) -> usize {
        self.ms_mtf_gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio < 2 {
            return Err(Error::contract(format!("resolution ratio must be >= 2, got {}", self.ratio)));
        }
        if self.ms_mtf_gains.is_empty() {
            return Err(Error::contract("sensor has no MS bands"));
        }
        let in_unit = |g: f64| g > 0.0 && g < 1.0;
        if !self.ms_mtf_gains.iter().all(|&g| in_unit(g)) || !in_unit(self.pan_mtf_gain) {
            return Err(Error::contract("MTF gains must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Checks that the spec describes `bands` MS bands.
    pub fn check_bands(&self, bands: usize) -> Result<()> {
        if self.bands() != bands {
            return Err(Error::contract(format!(
                "sensor '{}' has {} MS gains but the raster has {bands} bands",
                self.name,
                self.bands()
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SensorSpec = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
