//! The run configuration: one TOML file driving every pipeline stage.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! configuration; unknown keys are rejected with the offending name. The
//! root `seed` is the master: each stage's RNG seed is derived from it, so
//! one number reproduces an entire run. Command-line flags override file
//! values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use solarmend::baselines::{LrtcSpec, MidaSpec};
use solarmend::data::{
    AugmentImputer, AugmentOptions, CorruptionConfig, IngestOptions, SynthConfig, ValidatorOptions,
};
use solarmend::eval::EvalOptions;
use solarmend::model::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    /// Run the augmentation stage at all (`--no-augmentation` clears it).
    pub enabled: bool,
    pub imputer: AugmentImputer,
    pub knn_k: usize,
    pub mice_iterations: usize,
    pub validator: ValidatorOptions,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        let options = AugmentOptions::default();
        AugmentationSection {
            enabled: true,
            imputer: options.imputer,
            knn_k: options.knn_k,
            mice_iterations: options.mice_iterations,
            validator: options.validator,
        }
    }
}

impl AugmentationSection {
    pub fn options(&self) -> AugmentOptions {
        AugmentOptions {
            imputer: self.imputer,
            knn_k: self.knn_k,
            mice_iterations: self.mice_iterations,
            validator: self.validator,
        }
    }
}

/// Parameters for the reference imputers selected with `--method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerParams {
    pub knn_k: usize,
    pub mice_iterations: usize,
    pub mida: MidaSpec,
    pub lrtc: LrtcSpec,
}

impl Default for ImputerParams {
    fn default() -> Self {
        ImputerParams {
            knn_k: 5,
            mice_iterations: 3,
            mida: MidaSpec::default(),
            lrtc: LrtcSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestOptions,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Corruption used to make denoising training pairs, and the default
    /// evaluation scenario outside `experiment`'s grid.
    pub corruption: CorruptionConfig,
    pub augmentation: AugmentationSection,
    pub imputers: ImputerParams,
    pub evaluation: EvalOptions,
}

/// SplitMix64, used to derive per-stage seeds from the root seed. The top
/// bit is cleared so seeds stay representable as TOML integers.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & (i64::MAX as u64)
}

/// Seed for one named scenario of an experiment.
pub fn scenario_seed(root: u64, scenario_id: &str) -> u64 {
    // FNV-1a over the id, mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scenario_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    derive_seed(root, h)
}

impl RunConfig {
    /// Loads a TOML config; absent path or empty file means all defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Rewrites every per-stage seed as a function of the root seed, so one
    /// number determines the whole pipeline.
    pub fn derive_stage_seeds(&mut self) {
        self.train.seed = derive_seed(self.seed, 1);
        self.corruption.seed = derive_seed(self.seed, 2);
        self.synth.seed = derive_seed(self.seed, 3);
        self.imputers.mida.seed = derive_seed(self.seed, 4);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_documented_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.train.cheb_terms, 3);
        assert_eq!(config.train.batch_size, 2);
        assert_eq!(config.train.epochs, 50);
        assert_eq!(config.train.learning_rate, 0.001);
        assert_eq!(config.train.decay, 0.02);
        assert_eq!(config.train.epsilon_graph, 1.0);
        assert_eq!(config.train.window, 288);
        assert_eq!(config.evaluation.period, 288);
        assert_eq!(config.augmentation.validator.band, 0.25);
        assert!(config.augmentation.enabled);
    }

    #[test]
    fn malformed_value_errors_name_the_key() {
        let err = toml::from_str::<RunConfig>("[train]\nepochs = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nepchos = 3\n").unwrap_err();
        assert!(err.to_string().contains("epchos"), "{err}");
        assert!(toml::from_str::<RunConfig>("nonsense = 1\n").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut config = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        config.train.epochs = 7;
        config.derive_stage_seeds();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn derived_seeds_differ_per_stage_and_root() {
        let mut a = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        a.derive_stage_seeds();
        assert_ne!(a.train.seed, a.corruption.seed);
        assert_ne!(a.train.seed, a.synth.seed);
        let mut b = RunConfig {
            seed: 2,
            ..RunConfig::default()
        };
        b.derive_stage_seeds();
        assert_ne!(a.train.seed, b.train.seed);

        assert_ne!(scenario_seed(1, "mcar_10"), scenario_seed(1, "mcar_20"));
        assert_ne!(scenario_seed(1, "mcar_10"), scenario_seed(2, "mcar_10"));
    }
}
