use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wgimage::fields::{Aperture, Reflector};
use wgimage::imaging::GridSpec;
use wgimage::medium::MediumSpec;
use wgimage::montecarlo::{DistanceUnit, EnsembleConfig, MomentsConfig, Scenario};
use wgimage::propagator::SourceSpec;
use wgimage::report::config_hash;
use wgimage::validate::ValidationConfig;
use wgimage::waveguide::WaveguideSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub realizations: u64,
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    /// Length of the random section, in units set by `distance_unit`.
    pub distance: f64,
    #[serde(default)]
    pub distance_unit: DistanceUnit,
    #[serde(default = "one")]
    pub step_factor: f64,
    #[serde(default)]
    pub waive: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    /// Distances for the coupled-power curves, in multiples of `L_equip`.
    pub curve_multiples: Vec<f64>,
    /// Monte Carlo realizations; zero skips the ensemble.
    #[serde(default)]
    pub realizations: u64,
    /// Distances for the Monte Carlo moments, in multiples of `L_equip`.
    #[serde(default)]
    pub multiples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfSection {
    pub max: f64,
    pub points: usize,
}

impl Default for PsfSection {
    fn default() -> Self {
        PsfSection {
            max: 12.0,
            points: 481,
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub output_dir: PathBuf,
    pub waveguide: WaveguideSpec,
    pub medium: MediumSpec,
    pub source: SourceSpec,
    pub reflector: Reflector,
    #[serde(default)]
    pub apertures: Vec<Aperture>,
    pub grid: GridSpec,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub moments: Option<MomentsSection>,
    #[serde(default)]
    pub psf: Option<PsfSection>,
    /// Acceptance parameters; the desk-scale defaults when absent.
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
}

#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Schema { path: String, reason: String },
    Version { found: u32 },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Schema { path, reason } => write!(f, "config error at `{path}`: {reason}"),
            ConfigError::Version { found } => {
                write!(
                    f,
                    "config error at `format_version`: expected {FORMAT_VERSION}, found {found}"
                )
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
                path: e.path().to_string(),
                reason: e.inner().to_string(),
            })?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(ConfigError::Version {
                found: cfg.format_version,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Hash of the effective configuration. Worker count and output
    /// location do not affect results and are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.ensemble.workers = 0;
        c.output_dir = PathBuf::new();
        if let Some(v) = c.validation.as_mut() {
            for w in [
                &mut v.moments.workers,
                &mut v.imaging.workers,
                &mut v.broadband.workers,
                &mut v.coherence.workers,
                &mut v.determinism.workers,
            ] {
                *w = 0;
            }
        }
        config_hash(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            waveguide: self.waveguide,
            medium: MediumSpec {
                seed: self.ensemble.seed,
                ..self.medium
            },
            source: self.source,
            reflector: self.reflector,
            apertures: self.apertures.clone(),
            grid: self.grid.clone(),
            distance: self.ensemble.distance,
            distance_unit: self.ensemble.distance_unit,
            step_factor: self.ensemble.step_factor,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            realizations: self.ensemble.realizations,
            seed: self.ensemble.seed,
            workers: self.ensemble.workers,
            scenario: self.scenario(),
            waive: self.ensemble.waive.clone(),
        }
    }

    pub fn moments_config(&self, section: &MomentsSection) -> MomentsConfig {
        MomentsConfig {
            waveguide: self.waveguide,
            medium: self.medium,
            multiples: section.multiples.clone(),
            realizations: section.realizations,
            seed: self.ensemble.seed,
            workers: self.ensemble.workers,
            step_factor: self.ensemble.step_factor,
        }
    }

    pub fn validation_config(&self) -> ValidationConfig {
        let mut v = self
            .validation
            .clone()
            .unwrap_or_else(|| ValidationConfig::desk_scale(self.ensemble.seed));
        let w = self.ensemble.workers;
        v.moments.workers = w;
        v.imaging.workers = w;
        v.broadband.workers = w;
        v.coherence.workers = w;
        v.determinism.workers = w;
        v
    }
}
