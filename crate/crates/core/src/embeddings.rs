//! Frame embedding providers.
//!
//! Every provider maps a T x B log-mel matrix to a T x D embedding matrix with
//! the same frame count. The random-projection provider stacks a window of
//! neighbouring frames, projects it with a seeded Gaussian matrix, then
//! standardizes each output dimension with statistics frozen at fit time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::features::LogMelSpectrogram;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub recording_id: String,
    /// T x D.
    pub values: Array2<f32>,
    pub hop_ms: f64,
}

impl EmbeddingSequence {
    pub fn new(recording_id: impl Into<String>, values: Array2<f32>, hop_ms: f64) -> Self {
        Self {
            recording_id: recording_id.into(),
            values,
            hop_ms,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_ms / 1000.0
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 * self.hop_s()
    }

    /// Mean of rows in `[start, end)`, in f64.
    pub fn mean_rows(&self, start: usize, end: usize) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim()];
        for row in self.values.slice(ndarray::s![start..end, ..]).rows() {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += *v as f64;
            }
        }
        let n = (end - start).max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_matrix(EMB_MAGIC, path.as_ref(), &self.values)
    }

    pub fn load(path: impl AsRef<Path>, recording_id: impl Into<String>, hop_ms: f64) -> Result<Self> {
        let path = path.as_ref();
        let values = binio::read_matrix(EMB_MAGIC, path)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(path.display().to_string()));
        }
        Ok(Self::new(recording_id, values, hop_ms))
    }
}

/// Serializable provider choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingConfig {
    LogmelPassthrough,
    RandomProjection {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_context")]
        context: usize,
    },
    PrecomputedFile {
        manifest: PathBuf,
        dim: usize,
    },
}

fn default_dim() -> usize {
    256
}

fn default_context() -> usize {
    2
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::RandomProjection {
            seed: 0,
            dim: default_dim(),
            context: default_context(),
        }
    }
}

/// Per-dimension affine normalization fitted on training recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Precomputed embedding manifest: recording id to EMB1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub dim: usize,
    pub recordings: BTreeMap<String, PathBuf>,
}

impl EmbeddingManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in manifest.recordings.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Passthrough,
    Projection {
        context: usize,
        /// ((2c+1) * B) x D.
        matrix: Array2<f32>,
    },
    Precomputed(EmbeddingManifest),
}

/// Immutable once fitted; `embed` is pure.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    kind: Kind,
    dim: usize,
    standardizer: Option<Standardizer>,
}

impl EmbeddingProvider {
    pub fn from_config(config: &EmbeddingConfig, n_bands: usize) -> Result<Self> {
        Ok(match config {
            EmbeddingConfig::LogmelPassthrough => Self {
                kind: Kind::Passthrough,
                dim: n_bands,
                standardizer: None,
            },
            EmbeddingConfig::RandomProjection { seed, dim, context } => {
                if *dim == 0 {
                    return Err(Error::Config("embedding dimension must be positive".into()));
                }
                let rows = (2 * context + 1) * n_bands;
                let scale = 1.0 / (rows as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let matrix = Array2::from_shape_simple_fn((rows, *dim), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                });
                Self {
                    kind: Kind::Projection {
                        context: *context,
                        matrix,
                    },
                    dim: *dim,
                    standardizer: None,
                }
            }
            EmbeddingConfig::PrecomputedFile { manifest, dim } => {
                let m = EmbeddingManifest::load(manifest)?;
                if m.dim != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: m.dim,
                    });
                }
                Self {
                    kind: Kind::Precomputed(m),
                    dim: *dim,
                    standardizer: None,
                }
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn with_standardizer(mut self, standardizer: Standardizer) -> Result<Self> {
        if standardizer.mean.len() != self.dim || standardizer.std.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: standardizer.mean.len(),
            });
        }
        self.standardizer = Some(standardizer);
        Ok(self)
    }

    pub fn projection_matrix(&self) -> Option<&Array2<f32>> {
        match &self.kind {
            Kind::Projection { matrix, .. } => Some(matrix),
            _ => None,
        }
    }

    /// Fits standardization statistics over the given training spectrograms.
    /// Only the random-projection provider standardizes; others are untouched.
    pub fn fit(&mut self, training: &[&LogMelSpectrogram]) -> Result<()> {
        if !matches!(self.kind, Kind::Projection { .. }) {
            return Ok(());
        }
        let mut order: Vec<&&LogMelSpectrogram> = training.iter().collect();
        order.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        let mut sum = vec![0.0f64; self.dim];
        let mut sum_sq = vec![0.0f64; self.dim];
        let mut count = 0usize;
        for spec in order {
            let raw = self.project(spec)?;
            for row in raw.rows() {
                for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row.iter()) {
                    let v = *v as f64;
                    *s += v;
                    *q += v * v;
                }
            }
            count += raw.nrows();
        }
        if count == 0 {
            return Err(Error::Config("cannot fit standardization on zero frames".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        self.standardizer = Some(Standardizer { mean, std });
        Ok(())
    }

    fn project(&self, spec: &LogMelSpectrogram) -> Result<Array2<f32>> {
        let Kind::Projection { context, matrix } = &self.kind else {
            unreachable!("project called on non-projection provider")
        };
        let bands = spec.n_bands();
        let width = 2 * context + 1;
        if width * bands != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows() / width,
                found: bands,
            });
        }
        let stacked = stack_context(&spec.values, *context);
        Ok(stacked.dot(matrix))
    }

    pub fn embed(&self, spec: &LogMelSpectrogram) -> Result<EmbeddingSequence> {
        let values = match &self.kind {
            Kind::Passthrough => {
                if spec.n_bands() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: spec.n_bands(),
                    });
                }
                spec.values.clone()
            }
            Kind::Projection { .. } => {
                let mut raw = self.project(spec)?;
                if let Some(st) = &self.standardizer {
                    for mut row in raw.rows_mut() {
                        for ((v, m), s) in row.iter_mut().zip(&st.mean).zip(&st.std) {
                            *v = ((*v as f64 - m) / s) as f32;
                        }
                    }
                }
                raw
            }
            Kind::Precomputed(manifest) => {
                let path = manifest
                    .recordings
                    .get(&spec.recording_id)
                    .ok_or_else(|| Error::MissingEmbedding(spec.recording_id.clone()))?;
                if !path.exists() {
                    return Err(Error::MissingEmbedding(spec.recording_id.clone()));
                }
                let seq = EmbeddingSequence::load(path, &spec.recording_id, spec.hop_ms)?;
                if seq.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: seq.dim(),
                    });
                }
                if seq.n_frames() != spec.n_frames() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} has {} embedding frames but {} feature frames",
                        spec.recording_id,
                        seq.n_frames(),
                        spec.n_frames()
                    )));
                }
                return Ok(seq);
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(spec.recording_id.clone()));
        }
        Ok(EmbeddingSequence::new(spec.recording_id.clone(), values, spec.hop_ms))
    }
}

/// Concatenates rows `t-c ..= t+c` (edge-clamped) into one row per frame.
pub fn stack_context(values: &Array2<f32>, context: usize) -> Array2<f32> {
    let (t_len, width) = values.dim();
    let span = 2 * context + 1;
    let mut out = Array2::<f32>::zeros((t_len, span * width));
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for k in 0..span {
            let src = (t + k).saturating_sub(context).min(t_len - 1);
            row.slice_mut(ndarray::s![k * width..(k + 1) * width])
                .assign(&values.row(src));
        }
    }
    out
}

/// Column means across all rows of several matrices.
pub fn column_means<'a>(mats: impl IntoIterator<Item = &'a Array2<f32>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for m in mats {
        if sum.is_empty() {
            sum = vec![0.0; m.ncols()];
        }
        for (s, c) in sum.iter_mut().zip(m.axis_iter(Axis(1))) {
            *s += c.iter().map(|v| *v as f64).sum::<f64>();
        }
        n += m.nrows();
    }
    sum.iter().map(|s| s / n.max(1) as f64).collect()
}
