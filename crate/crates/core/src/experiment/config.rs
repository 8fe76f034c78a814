//! Project and experiment configuration, including the seven system presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::{DecodeConfig, ModelConfig, TrainConfig};
use crate::segmentation::{SegmentationConfig, SegmentationMode};
use crate::selection::Strategy;
use crate::synth::{dense_preset, rare_preset, AnnotationMode, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationUnit {
    Segment,
    Recording,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingInput {
    /// Full recordings, loss restricted to annotated regions.
    RecordingContext,
    /// Each annotated segment is cut out and used on its own.
    SegmentsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub classes: Vec<String>,
    pub features: FeatureConfig,
    pub embedding: EmbeddingConfig,
    pub segmentation: SegmentationConfig,
    pub strategy: Strategy,
    pub annotation_unit: AnnotationUnit,
    pub label_type: AnnotationMode,
    pub training_input: TrainingInput,
    /// Batch duration as a fraction of the training-pool duration.
    pub batch_fraction: f64,
    /// Fixed number of segments per batch instead of a duration quota.
    pub batch_count: Option<usize>,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub decode: DecodeConfig,
}

pub fn default_checkpoints() -> Vec<f64> {
    let mut v: Vec<f64> = (1..=10).map(|k| k as f64 / 100.0).collect();
    v.extend([0.2, 1.0]);
    v
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            name: "project".into(),
            classes: Vec::new(),
            features: FeatureConfig::default(),
            embedding: EmbeddingConfig::default(),
            segmentation: SegmentationConfig::default(),
            strategy: Strategy::Mfft,
            annotation_unit: AnnotationUnit::Segment,
            label_type: AnnotationMode::Weak,
            training_input: TrainingInput::RecordingContext,
            batch_fraction: 0.005,
            batch_count: None,
            checkpoints: default_checkpoints(),
            seed: 0,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.checkpoints.is_empty() {
            return bad("at least one checkpoint is required");
        }
        for w in self.checkpoints.windows(2) {
            if w[0] >= w[1] {
                return bad("checkpoints must be strictly ascending");
            }
        }
        if self.checkpoints.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return bad("checkpoints must lie in (0, 1]");
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return bad("batch_fraction must lie in (0, 1]");
        }
        if self.batch_count == Some(0) {
            return bad("batch_count must be positive");
        }
        if self.annotation_unit == AnnotationUnit::Recording && self.segmentation.mode != SegmentationMode::Recording {
            return bad("annotation_unit = recording requires segmentation mode = recording");
        }
        if let SegmentationMode::Fixed { len_s } = self.segmentation.mode {
            if !(len_s > 0.0) {
                return bad("fixed segment length must be positive");
            }
        }
        Ok(())
    }

    /// Applies the row of the systems table for `system` (1..=7).
    pub fn for_system(&self, system: u8) -> Result<Self> {
        let mut c = self.clone();
        c.segmentation.mode = SegmentationMode::Variable;
        c.annotation_unit = AnnotationUnit::Segment;
        c.label_type = AnnotationMode::Weak;
        c.training_input = TrainingInput::RecordingContext;
        c.strategy = Strategy::Random;
        match system {
            1 => {}
            2 => c.training_input = TrainingInput::SegmentsOnly,
            3 => c.label_type = AnnotationMode::Strong,
            4 => {
                c.segmentation.mode = SegmentationMode::Recording;
                c.annotation_unit = AnnotationUnit::Recording;
                c.label_type = AnnotationMode::Strong;
            }
            5 => c.strategy = Strategy::Mfft,
            6 => c.strategy = Strategy::Uncertainty,
            7 => {
                c.strategy = Strategy::Mfft;
                c.segmentation.mode = SegmentationMode::Fixed { len_s: 2.0 };
            }
            other => return Err(Error::Config(format!("unknown system {other}; expected 1-7"))),
        }
        c.name = format!("system{system}");
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusPreset {
    Rare,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Generated in memory; the test split uses a disjoint seed.
    Preset {
        preset: CorpusPreset,
        n_train: usize,
        n_test: usize,
        seed: u64,
    },
    Generator {
        train: GeneratorSpec,
        test: GeneratorSpec,
    },
    /// Corpus manifests written by `generate`.
    Manifests { train: PathBuf, test: PathBuf },
}

/// Seed stream reserved for test corpora.
pub const TEST_CORPUS_STREAM: u64 = 0x7E57;

impl CorpusSource {
    pub fn generator_specs(&self) -> Option<(GeneratorSpec, GeneratorSpec)> {
        match self {
            CorpusSource::Preset {
                preset,
                n_train,
                n_test,
                seed,
            } => {
                let make = |s, n| match preset {
                    CorpusPreset::Rare => rare_preset(s, n),
                    CorpusPreset::Dense => dense_preset(s, n),
                };
                let mut train = make(*seed, *n_train);
                train.id_prefix = "train".into();
                let mut test = make(crate::derive_seed(*seed, TEST_CORPUS_STREAM), *n_test);
                test.id_prefix = "test".into();
                Some((train, test))
            }
            CorpusSource::Generator { train, test } => Some((train.clone(), test.clone())),
            CorpusSource::Manifests { .. } => None,
        }
    }

    /// The same source drawn from corpus seed `seed`; `None` for manifests.
    pub fn reseeded(&self, seed: u64) -> Option<Self> {
        let mut out = self.clone();
        match &mut out {
            CorpusSource::Preset { seed: s, .. } => *s = seed,
            CorpusSource::Generator { train, test } => {
                train.seed = seed;
                test.seed = crate::derive_seed(seed, TEST_CORPUS_STREAM);
            }
            CorpusSource::Manifests { .. } => return None,
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub systems: Vec<u8>,
    pub seeds: Vec<u64>,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub project: ProjectConfig,
}

impl ExperimentConfig {
    /// Named presets for the four experiments.
    pub fn preset(name: &str) -> Option<Self> {
        let systems = match name {
            "exp_a1" => vec![1, 2],
            "exp_a2" => vec![3, 4],
            "exp_b" => vec![1, 5, 6],
            "exp_c" => vec![5, 7],
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            systems,
            seeds: vec![1, 2, 3, 4, 5],
            corpus: CorpusSource::Preset {
                preset: CorpusPreset::Rare,
                n_train: 60,
                n_test: 60,
                seed: 0,
            },
            project: ProjectConfig {
                embedding: EmbeddingConfig::RandomProjection {
                    seed: 0,
                    dim: 64,
                    context: 2,
                },
                ..ProjectConfig::default()
            },
        })
    }

    pub const PRESETS: [&'static str; 4] = ["exp_a1", "exp_a2", "exp_b", "exp_c"];

    /// A preset name or a path to a TOML document.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::preset(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let CorpusSource::Manifests { train, test } = &mut cfg.corpus {
            let base = path.parent().unwrap_or(Path::new("."));
            *train = base.join(&*train);
            *test = base.join(&*test);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("systems and seeds must not be empty".into()));
        }
        for &s in &self.systems {
            self.project.for_system(s)?.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
