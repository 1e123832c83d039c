//! The single TOML configuration file shared by every command. Unknown keys
//! are rejected; missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthbench::{Averaging, GeneratorConfig};
use crate::tracking::train::MotionTrainConfig;
use crate::tracking::{ConfidenceTrainConfig, TrackerConfig};

/// Dataset sizes for `generate` and the confidence phase of `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub pairs: usize,
    /// Freshly generated pairs labeled for the confidence head.
    pub confidence_pairs: usize,
    /// Perturbation of the easy half of the confidence set; the hard half
    /// uses the generator settings unchanged.
    pub confidence_easy_perturbation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            pairs: 20_000,
            confidence_pairs: 2_000,
            confidence_easy_perturbation: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ae_averaging: Averaging,
    pub hd_averaging: Averaging,
    /// Curve thresholds run `0, step, .., max` pixels.
    pub max_threshold: f64,
    pub threshold_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ae_averaging: Averaging::Rms,
            hd_averaging: Averaging::Mean,
            max_threshold: 50.0,
            threshold_step: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn thresholds(&self) -> Vec<f64> {
        let n = (self.max_threshold / self.threshold_step).round() as usize;
        (0..=n).map(|i| i as f64 * self.threshold_step).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    pub tracker: TrackerConfig,
    pub train: MotionTrainConfig,
    pub confidence: ConfidenceTrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        if self.generator.template_size != self.tracker.template_size {
            return Err(Error::Config(format!(
                "generator.template_size {} differs from tracker.template_size {}",
                self.generator.template_size, self.tracker.template_size
            )));
        }
        if self.generator.levels != self.tracker.levels {
            return Err(Error::Config("generator.levels must equal tracker.levels".into()));
        }
        if !(self.eval.threshold_step > 0.0) || !(self.eval.max_threshold >= 0.0) {
            return Err(Error::Config("eval thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Spreads `seed` over the per-component seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.confidence.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(Config::from_toml("").unwrap(), c);
        assert_eq!(c.tracker.template_size, 120);
        assert_eq!(c.tracker.d_max, 4);
        assert_eq!(c.train.batch, 32);
        assert_eq!(c.train.adam.lr, 1e-4);
        assert_eq!((c.train.adam.decay_every, c.train.adam.decay_factor), (5, 0.1));
        assert_eq!(c.tracker.confidence_threshold, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[tracker]\nd_maxx = 3"), Err(Error::Config(_))));
        let c = Config::from_toml("seed = 7\n[tracker]\nhead = \"learned\"\nd_max = 3").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.tracker.d_max, 3);
    }

    #[test]
    fn inconsistent_sizes_rejected() {
        assert!(Config::from_toml("[generator]\ntemplate_size = 64").is_err());
    }
}
