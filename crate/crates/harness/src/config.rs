//! Run configuration, read from and written as TOML.

use std::path::Path;

use flashdiff_core::autoencoder::AutoencoderConfig;
use flashdiff_core::data::ToyImageSpec;
use flashdiff_core::degradations::DegradationFamily;
use flashdiff_core::latent_diffusion::{ScheduleConfig, ScoreTrainConfig};
use flashdiff_core::samplers::GuidanceConfig;
use flashdiff_core::severity::SeverityTrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub measurement: MeasurementConfig,
    pub families: FamiliesConfig,
    pub schedule: ScheduleConfig,
    pub autoencoder: AutoencoderConfig,
    pub score: ScoreTrainConfig,
    pub severity: SeverityTrainConfig,
    pub guidance: GuidanceSettings,
    pub experiments: ExperimentSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image: ToyImageSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamiliesConfig {
    pub gaussian: DegradationFamily,
    pub nonlinear: DegradationFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSettings {
    pub eta: f64,
    pub through_score: bool,
    pub c_gaussian: f64,
    pub c_nonlinear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Blur levels for the severity curve, as fractions of the family maximum.
    pub severity_levels: Vec<f64>,
    /// Fixed step counts for the CCDF-L baseline.
    pub fixed_steps: Vec<usize>,
    pub permutations: usize,
    /// Optional cap on the number of test samples the solvers visit.
    pub max_solve_samples: Option<usize>,
    /// Guidance strengths tried by `tune-eta` on the validation split.
    pub eta_grid: Vec<f64>,
    /// Validation samples visited by `tune-eta`.
    pub tune_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240917,
            corpus: CorpusConfig::default(),
            measurement: MeasurementConfig::default(),
            families: FamiliesConfig::default(),
            schedule: ScheduleConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            score: ScoreTrainConfig::default(),
            severity: SeverityTrainConfig::default(),
            guidance: GuidanceSettings::default(),
            experiments: ExperimentSettings::default(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            image: ToyImageSpec::default(),
        }
    }
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            noise_std: flashdiff_core::degradations::DEFAULT_NOISE_STD,
        }
    }
}

impl Default for FamiliesConfig {
    fn default() -> Self {
        Self {
            gaussian: DegradationFamily::default_gaussian(),
            nonlinear: DegradationFamily::default_nonlinear(),
        }
    }
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self {
            eta: 0.3,
            through_score: true,
            c_gaussian: 1.2,
            c_nonlinear: 1.1,
        }
    }
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            severity_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            fixed_steps: vec![10, 25, 50, 100, 200],
            permutations: 1000,
            max_solve_samples: None,
            eta_grid: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.5],
            tune_samples: 100,
        }
    }
}

/// The two degradation families every experiment iterates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FamilyKind {
    Gaussian,
    Nonlinear,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 2] = [FamilyKind::Gaussian, FamilyKind::Nonlinear];

    pub fn tag(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Nonlinear => "nonlinear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(FamilyKind::Gaussian),
            "nonlinear" => Ok(FamilyKind::Nonlinear),
            other => Err(HarnessError::Invalid(format!(
                "unknown family `{other}` (expected gaussian or nonlinear)"
            ))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn family(&self, kind: FamilyKind) -> &DegradationFamily {
        match kind {
            FamilyKind::Gaussian => &self.families.gaussian,
            FamilyKind::Nonlinear => &self.families.nonlinear,
        }
    }

    pub fn guidance(&self, kind: FamilyKind) -> GuidanceConfig {
        GuidanceConfig {
            eta: self.guidance.eta,
            noise_correction: match kind {
                FamilyKind::Gaussian => self.guidance.c_gaussian,
                FamilyKind::Nonlinear => self.guidance.c_nonlinear,
            },
            through_score: self.guidance.through_score,
        }
    }

    pub fn image_shape(&self) -> [usize; 2] {
        [self.corpus.image.size, self.corpus.image.size]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !matches!(self.families.gaussian, DegradationFamily::GaussianBlur { .. }) {
            return bad("families.gaussian must have kind = \"gaussian_blur\"".into());
        }
        if !matches!(self.families.nonlinear, DegradationFamily::NonlinearBlur { .. }) {
            return bad("families.nonlinear must have kind = \"nonlinear_blur\"".into());
        }
        if self.severity.noise_std != self.measurement.noise_std {
            return bad(format!(
                "severity.noise_std ({}) must equal measurement.noise_std ({})",
                self.severity.noise_std, self.measurement.noise_std
            ));
        }
        if !(self.measurement.noise_std >= 0.0) {
            return bad("measurement.noise_std must be >= 0".into());
        }
        self.schedule.build()?;
        for kind in FamilyKind::ALL {
            self.guidance(kind).validate()?;
        }
        for &k in &self.experiments.fixed_steps {
            if k == 0 || k > self.schedule.steps {
                return bad(format!("fixed step count {k} outside 1..={}", self.schedule.steps));
            }
        }
        if self.experiments.fixed_steps.is_empty() {
            return bad("experiments.fixed_steps must not be empty".into());
        }
        if self.experiments.severity_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("experiments.severity_levels must lie in [0, 1]".into());
        }
        if self.corpus.n_test < 3 || self.corpus.n_val == 0 || self.corpus.n_train == 0 {
            return bad("corpus splits too small (need n_train, n_val >= 1 and n_test >= 3)".into());
        }
        if self.autoencoder.latent_dim < 2 {
            return bad("autoencoder.latent_dim must be >= 2".into());
        }
        if !self.score.embedding_dim.is_multiple_of(2) {
            return bad("score.embedding_dim must be even".into());
        }
        Ok(())
    }
}
