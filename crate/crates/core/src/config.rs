//! Experiment configuration files.
//!
//! A TOML document selects a `profile` (default `desk`) and overrides any
//! field of the profile's preset, section by section:
//!
//! ```toml
//! profile = "compact"
//!
//! [train]
//! steps = 500
//! learning_rate = 1e-3
//!
//! [data]
//! splits = [{ split = "easy", count = 10 }]
//! ```
//!
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::decode::SelectConfig;
use crate::error::{Error, Result};
use crate::geometry::CropGeometry;
use crate::model::BackboneConfig;
use crate::perturb::SweepConfig;
use crate::synthdata::{DatasetConfig, SamplerConfig, SceneConfig, Split, SplitCount};
use crate::trackeval::EvalConfig;
use crate::train::{RunSetup, TrainConfig};

/// Crop sizes with matching heatmap disc and decoding window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 127 / 255 crops.
    Full,
    /// 64 / 128 crops.
    #[default]
    Desk,
    /// 32 / 64 crops.
    Compact,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            "compact" => Ok(Profile::Compact),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub data: DatasetConfig,
    pub geometry: CropGeometry,
    pub backbone: BackboneConfig,
    pub sampler: SamplerConfig,
    pub select: SelectConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn preset(profile: Profile) -> Self {
        let (geometry, disc_radius, window) = match profile {
            Profile::Full => (CropGeometry::full(), 10.0, 6),
            Profile::Desk => (CropGeometry::desk(), 12.0, 6),
            Profile::Compact => (CropGeometry::compact(), 6.0, 3),
        };
        let train = match profile {
            Profile::Full => TrainConfig {
                steps: 10_000_000,
                eval_every: 20_000,
                ..TrainConfig::default()
            },
            Profile::Desk | Profile::Compact => TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
        };
        Self {
            profile,
            data: DatasetConfig {
                scene: SceneConfig::default(),
                splits: [Split::Easy, Split::Hard, Split::Drift]
                    .into_iter()
                    .map(|split| SplitCount { split, count: 10 })
                    .collect(),
            },
            geometry,
            backbone: BackboneConfig::default(),
            sampler: SamplerConfig {
                disc_radius,
                ..SamplerConfig::default()
            },
            select: SelectConfig {
                window,
                ..SelectConfig::default()
            },
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            train,
        }
    }

    /// Parses a document, merges it over its profile's preset and validates
    /// the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match user.get("profile") {
            None => Profile::default(),
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, found {other}"))),
        };
        let mut merged = toml::Table::try_from(Self::preset(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        self.sweep.validate()?;
        self.run_setup().validate()
    }

    pub fn run_setup(&self) -> RunSetup {
        RunSetup {
            train: self.train.clone(),
            backbone: self.backbone.clone(),
            geometry: self.geometry,
            sampler: self.sampler.clone(),
            select: self.select,
            eval: self.eval,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Profile::default())
    }
}

/// Recursively overlays `over` onto `base`; tables merge, anything else
/// replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Variant;

    #[test]
    fn empty_document_is_the_desk_preset() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_merge_into_the_profile() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            profile = "compact"
            [train]
            steps = 7
            variant = "no_detector"
            [data]
            splits = [{ split = "hard", count = 3 }]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.geometry, CropGeometry::compact());
        assert_eq!(cfg.select.window, 3);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.variant, Variant::NoDetector);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.data.splits, vec![SplitCount { split: Split::Hard, count: 3 }]);
    }

    #[test]
    fn unknown_keys_and_invalid_values_are_rejected() {
        for doc in [
            "stepz = 3",
            "[train]\nstepz = 3",
            "profile = \"huge\"",
            "[train]\nbatch_size = 0",
            "[geometry]\nstride = 0",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(doc), Err(Error::Config(_))),
                "{doc}"
            );
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        for p in [Profile::Full, Profile::Desk, Profile::Compact] {
            let cfg = ExperimentConfig::preset(p);
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }
}
