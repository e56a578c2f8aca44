use std::fs;
use std::path::Path;

use metsynth::experiment::{CohortConfig, DenoiserConfig, Mode, SegmenterConfig, Stage};
use metsynth::rng;
use metsynth::stats::{PairedTest, Role};
use metsynth::synthesis::SynthesisConfig;
use metsynth::tinynet::{Loss, TrainConfig};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a pipeline run depends on besides its inputs.
///
/// The `seed` fields inside the sections are offsets: each stage runs with
/// its section seed XOR a seed derived from the master `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cohort: CohortConfig,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub synthesis: SynthesisConfig,
    pub denoiser: DenoiserConfig,
    pub refine: RefineConfig,
    pub segmenter: SegmenterConfig,
    pub metrics: MetricsConfig,
    pub variability: VariabilityConfig,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cohort: CohortConfig::default(),
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            synthesis: SynthesisConfig::default(),
            denoiser: DenoiserConfig::default(),
            refine: RefineConfig::default(),
            segmenter: SegmenterConfig::default(),
            metrics: MetricsConfig::default(),
            variability: VariabilityConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

/// Cohort sizes of the phantom study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Lesioned cases used for real-data training and as lesion donors.
    pub real_cases: usize,
    /// Held-out lesioned cases used only for evaluation.
    pub test_cases: usize,
    /// Healthy volumes that receive transplanted lesions.
    pub hosts: usize,
    /// Synthesis attempts per (donor, host) pair.
    pub per_pair: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            real_cases: 5,
            test_cases: 10,
            hosts: 10,
            per_pair: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Resample to this isotropic spacing before standardization.
    pub target_spacing_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub lambda: usize,
    pub n_ddim: Option<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lambda: metsynth::diffusion::DEFAULT_LAMBDA,
            n_ddim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Closing plus removal of components of at most this volume before
    /// scoring; `null` scores the raw segmentation.
    pub postprocess_min_mm3: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            postprocess_min_mm3: Some(metsynth::metrics::DEFAULT_MIN_LESION_MM3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub name: String,
    pub role: Role,
    pub skill: f64,
    /// Annotate every case a second time for intra-operator agreement.
    pub repeat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariabilityConfig {
    pub operators: Vec<OperatorConfig>,
    /// Trained model whose segmentations join the table as `auto`.
    pub auto_mode: Option<Mode>,
}

impl Default for VariabilityConfig {
    fn default() -> Self {
        let op = |name: &str, role, skill, repeat| OperatorConfig {
            name: name.into(),
            role,
            skill,
            repeat,
        };
        VariabilityConfig {
            operators: vec![
                op("A", Role::Novice, 0.6, true),
                op("B", Role::Novice, 0.6, false),
                op("C", Role::Expert, 0.9, true),
            ],
            auto_mode: Some(Mode::Synthetic),
        }
    }
}

pub const METRIC_NAMES: [&str; 4] = ["dice", "hd_mm", "hd95_mm", "assd_mm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub test: PairedTest,
    pub metrics: Vec<String>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            test: PairedTest::Wilcoxon,
            metrics: METRIC_NAMES.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// Stage tags for seed derivation.
#[derive(Debug, Clone, Copy)]
pub enum SeedTag {
    Real = 1,
    Test = 2,
    Hosts = 3,
    Synthesis = 4,
    Denoiser = 5,
    Refine = 6,
    Segmenter = 7,
    Operators = 8,
    Subset = 9,
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Seed of one stage: the first draw of stream `tag` of the master seed.
    pub fn stage_seed(&self, tag: SeedTag) -> u64 {
        rng::stream(self.seed, tag as u64).next_u64()
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            seed: self.synthesis.seed ^ self.stage_seed(SeedTag::Synthesis),
            ..self.synthesis.clone()
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            seed: self.denoiser.seed ^ self.stage_seed(SeedTag::Denoiser),
            ..self.denoiser.clone()
        }
    }

    pub fn segmenter(&self) -> SegmenterConfig {
        SegmenterConfig {
            seed: self.segmenter.seed ^ self.stage_seed(SeedTag::Segmenter),
            ..self.segmenter.clone()
        }
    }

    /// Rejects inconsistent settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.real_cases == 0 || d.test_cases == 0 || d.hosts == 0 || d.per_pair == 0 {
            return Err(CliError::Config("data counts must all be >= 1".into()));
        }
        if self.cohort.lesions_per_case == 0 {
            return Err(CliError::Config("cohort.lesions_per_case must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.cohort.jitter) {
            return Err(CliError::Config(format!(
                "cohort.jitter {} must be in [0, 1)",
                self.cohort.jitter
            )));
        }
        if let Some(s) = self.preprocess.target_spacing_mm {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!(
                    "preprocess.target_spacing_mm {s} must be > 0"
                )));
            }
        }
        self.synthesis.validate().map_err(config_error)?;
        let schedule = self.denoiser.schedule.build().map_err(config_error)?;
        let dn = &self.denoiser;
        TrainConfig {
            optimizer: dn.optimizer,
            loss: Loss::MseEps,
            epochs: dn.epochs,
            patience: dn.patience,
            batch: dn.batch,
            seed: dn.seed,
        }
        .validate()
        .map_err(config_error)?;
        if dn.plan.first() != Some(&2) || dn.plan.last() != Some(&1) {
            return Err(CliError::Config(format!(
                "denoiser.plan {:?} must start with 2 and end with 1 channel",
                dn.plan
            )));
        }
        if dn.examples == 0 || dn.patch == 0 {
            return Err(CliError::Config(
                "denoiser.examples and denoiser.patch must be >= 1".into(),
            ));
        }
        let lambda = self.refine.lambda;
        if lambda == 0 || lambda > schedule.steps() {
            return Err(CliError::Config(format!(
                "refine.lambda {lambda} must be in 1..={}",
                schedule.steps()
            )));
        }
        if let Some(n) = self.refine.n_ddim {
            metsynth::diffusion::refine_steps(lambda, Some(n)).map_err(config_error)?;
        }
        let seg = &self.segmenter;
        for stage in [Stage::Real, Stage::Synthetic, Stage::FineTune] {
            seg.train_config(stage).validate().map_err(config_error)?;
        }
        seg.initial_net().map_err(config_error)?;
        if seg.plan.first() != Some(&1) || seg.plan.last() != Some(&1) {
            return Err(CliError::Config(format!(
                "segmenter.plan {:?} must start and end with 1 channel",
                seg.plan
            )));
        }
        if seg.patch == 0 || seg.patches_per_sample == 0 {
            return Err(CliError::Config(
                "segmenter.patch and patches_per_sample must be >= 1".into(),
            ));
        }
        if let Some(m) = self.metrics.postprocess_min_mm3 {
            if !(m >= 0.0) {
                return Err(CliError::Config(format!(
                    "metrics.postprocess_min_mm3 {m} must be >= 0"
                )));
            }
        }
        let ops = &self.variability.operators;
        for (i, op) in ops.iter().enumerate() {
            if !(op.skill > 0.0 && op.skill <= 1.0) {
                return Err(CliError::Config(format!(
                    "operator {} skill {} must be in (0, 1]",
                    op.name, op.skill
                )));
            }
            if ops[..i].iter().any(|o| o.name == op.name) {
                return Err(CliError::Config(format!("operator name {} is repeated", op.name)));
            }
        }
        if self.stats.metrics.is_empty() {
            return Err(CliError::Config("stats.metrics is empty".into()));
        }
        for m in &self.stats.metrics {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown metric {m:?}; expected one of {METRIC_NAMES:?}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"data": {"hosts": 2, "extra": 1}}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 3, "data": {"hosts": 2}}"#).unwrap();
        assert_eq!(partial.data.hosts, 2);
        assert_eq!(partial.data.real_cases, 5);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        cfg.refine.lambda = 500;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.segmenter.momentum = 1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.stats.metrics = vec!["jaccard".into()];
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stage_seeds_differ_and_follow_master() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.stage_seed(SeedTag::Real), a.stage_seed(SeedTag::Test));
        assert_ne!(a.stage_seed(SeedTag::Real), b.stage_seed(SeedTag::Real));
        assert_eq!(a.synthesis().seed, a.stage_seed(SeedTag::Synthesis));
    }
}
