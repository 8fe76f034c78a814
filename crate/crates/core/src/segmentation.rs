//! Change-point segmentation of embedding sequences.
//!
//! The change likelihood at frame `t` is the cosine distance between the mean
//! of the `M` frames before `t` and the mean of the `M` frames from `t` on.
//! Peaks above a threshold become boundaries, subject to a minimum segment
//! length enforced greedily against the last accepted boundary and against
//! both recording ends. Segments are half-open frame intervals that tile
//! `[0, T)` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl std::fmt::Display for SegmentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SegmentationMode {
    Variable,
    Fixed { len_s: f64 },
    /// The whole recording is one candidate.
    Recording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub mode: SegmentationMode,
    /// Half-window M in frames.
    pub half_window: usize,
    pub threshold: f64,
    pub min_len_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            mode: SegmentationMode::Variable,
            half_window: 24,
            threshold: 0.1,
            min_len_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSegment {
    pub id: SegmentId,
    pub recording_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub mean_embedding: Vec<f64>,
}

impl CandidateSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn n_frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// `δ(t)` for `t` in `[M, T-M]`; positions without a full window are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeLikelihoodSeries {
    pub half_window: usize,
    /// `values[i]` is `δ(half_window + i)`.
    pub values: Vec<f64>,
    pub n_frames: usize,
}

impl ChangeLikelihoodSeries {
    pub fn first_frame(&self) -> usize {
        self.half_window
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.half_window).and_then(|i| self.values.get(i).copied())
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `1 - u·v / (|u||v|)`, or 1 when either vector is (numerically) zero.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < 1e-12 || nv < 1e-12 {
        return 1.0;
    }
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// Returns `None` when the sequence is shorter than `2M` frames.
pub fn change_likelihood(emb: &EmbeddingSequence, half_window: usize) -> Option<ChangeLikelihoodSeries> {
    let t_len = emb.n_frames();
    let m = half_window;
    if m == 0 || t_len < 2 * m {
        return None;
    }
    let d = emb.dim();
    let mut prefix = vec![0.0f64; (t_len + 1) * d];
    for (t, row) in emb.values.rows().into_iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            prefix[(t + 1) * d + k] = prefix[t * d + k] + *v as f64;
        }
    }
    let inv = 1.0 / m as f64;
    let mut past = vec![0.0; d];
    let mut future = vec![0.0; d];
    let values = (m..=t_len - m)
        .map(|t| {
            for k in 0..d {
                past[k] = (prefix[t * d + k] - prefix[(t - m) * d + k]) * inv;
                future[k] = (prefix[(t + m) * d + k] - prefix[t * d + k]) * inv;
            }
            mean_distance(&past, &future)
        })
        .collect();
    Some(ChangeLikelihoodSeries {
        half_window: m,
        values,
        n_frames: t_len,
    })
}

fn mean_distance(past: &[f64], future: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(past) < 1e-12 || norm(future) < 1e-12 {
        0.0
    } else {
        cosine_distance(past, future)
    }
}

/// Accepted change points in ascending frame order.
///
/// A frame is a peak when its value beats every earlier frame and is not
/// exceeded by any later frame within `±M`; equal plateaus resolve to their
/// first frame.
pub fn detect_change_points(
    series: &ChangeLikelihoodSeries,
    min_gap_s: f64,
    threshold: f64,
    hop_s: f64,
) -> Vec<usize> {
    let m = series.half_window;
    let first = series.first_frame();
    let gap = (min_gap_s / hop_s - 1e-9).ceil().max(0.0) as usize;
    let mut accepted: Vec<usize> = Vec::new();
    for (i, &v) in series.values.iter().enumerate() {
        let t = first + i;
        if v < threshold {
            continue;
        }
        let lo = i.saturating_sub(m);
        let hi = (i + m).min(series.values.len() - 1);
        let left_ok = series.values[lo..i].iter().all(|&u| v > u);
        let right_ok = series.values[i + 1..=hi].iter().all(|&u| v >= u);
        if !(left_ok && right_ok) {
            continue;
        }
        if t < gap || series.n_frames - t < gap {
            continue;
        }
        if accepted.last().is_some_and(|&last| t - last < gap) {
            continue;
        }
        accepted.push(t);
    }
    accepted
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<CandidateSegment>,
    pub change_points: Vec<usize>,
    /// Set when the recording was too short for change detection.
    pub too_short: bool,
}

/// Splits one recording into candidates with ids starting at `first_id`.
pub fn segment_recording(emb: &EmbeddingSequence, config: &SegmentationConfig, first_id: u32) -> Segmentation {
    let t_len = emb.n_frames();
    let hop_s = emb.hop_s();
    let mut too_short = false;
    let boundaries: Vec<usize> = match config.mode {
        SegmentationMode::Recording => Vec::new(),
        SegmentationMode::Variable => match change_likelihood(emb, config.half_window) {
            Some(series) => detect_change_points(&series, config.min_len_s, config.threshold, hop_s),
            None => {
                too_short = true;
                Vec::new()
            }
        },
        SegmentationMode::Fixed { len_s } => {
            let len = ((len_s / hop_s).round() as usize).max(1);
            let min_tail = (config.min_len_s / hop_s - 1e-9).ceil() as usize;
            let mut cuts: Vec<usize> = (1..).map(|k| k * len).take_while(|&c| c < t_len).collect();
            if let Some(&last) = cuts.last() {
                if t_len - last < min_tail {
                    cuts.pop();
                }
            }
            cuts
        }
    };
    let change_points = if matches!(config.mode, SegmentationMode::Variable) {
        boundaries.clone()
    } else {
        Vec::new()
    };
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    edges.extend(boundaries);
    edges.push(t_len);
    let segments = edges
        .windows(2)
        .enumerate()
        .map(|(k, w)| CandidateSegment {
            id: SegmentId(first_id + k as u32),
            recording_id: emb.recording_id.clone(),
            start_frame: w[0],
            end_frame: w[1],
            start_s: w[0] as f64 * hop_s,
            end_s: w[1] as f64 * hop_s,
            mean_embedding: emb.mean_rows(w[0], w[1]),
        })
        .collect();
    Segmentation {
        segments,
        change_points,
        too_short,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment_id: u32,
    pub recording_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

pub fn write_segment_table(path: &Path, segments: &[CandidateSegment]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in segments {
        w.serialize(SegmentRow {
            segment_id: s.id.0,
            recording_id: s.recording_id.clone(),
            start_s: s.start_s,
            end_s: s.end_s,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::io(path, e.into_error()))?;
    crate::binio::write_atomic(path, &bytes)
}

pub fn read_segment_table(path: &Path) -> Result<Vec<SegmentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
