//! WebAssembly bindings for the browser demo.
//!
//! One synthetic recording at a time: view its log-mel spectrogram and true
//! events, split it at embedding change points, then pick an annotation batch
//! by farthest traversal over the segments.

use alsed_core::embeddings::{EmbeddingConfig, EmbeddingProvider, EmbeddingSequence};
use alsed_core::features::{compute_logmel, FeatureConfig, LogMelSpectrogram};
use alsed_core::segmentation::{change_likelihood, segment_recording, CandidateSegment, SegmentationConfig};
use alsed_core::selection::{farthest_traversal, BatchQuota, MeanEmbeddingDistance};
use alsed_core::synth::{dense_preset, generate, rare_preset, weak_labels, RecordingTruth};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct EventView<'a> {
    class: &'a str,
    onset_s: f64,
    offset_s: f64,
}

#[derive(Serialize)]
struct SegmentView {
    id: u32,
    start_s: f64,
    end_s: f64,
    /// Position in the selection order, when picked.
    pick: Option<usize>,
    labels: Vec<String>,
}

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Demo {
    classes: Vec<String>,
    truth: RecordingTruth,
    mel: LogMelSpectrogram,
    emb: EmbeddingSequence,
    segments: Vec<CandidateSegment>,
    picks: Vec<u32>,
}

impl Demo {
    pub fn build(preset: &str, seed: u32, seconds: f64, events_per_minute: f64) -> Result<Demo, String> {
        let mut spec = match preset {
            "rare" => rare_preset(seed as u64, 1),
            "dense" => dense_preset(seed as u64, 1),
            other => return Err(format!("unknown preset {other:?}")),
        };
        spec.recording_len_s = seconds;
        spec.events_per_minute = events_per_minute;
        spec.sample_rate = 16000;
        let corpus = generate(&spec).map_err(text)?;
        let clip = &corpus.clips[0];
        let truth = corpus.truth.recordings[&clip.recording_id].clone();
        let features = FeatureConfig::default();
        let mel = compute_logmel(clip, &features).map_err(text)?;
        let mut provider = EmbeddingProvider::from_config(
            &EmbeddingConfig::RandomProjection {
                seed: 0,
                dim: 64,
                context: 2,
            },
            features.n_bands,
        )
        .map_err(text)?;
        provider.fit(&[&mel]).map_err(text)?;
        let emb = provider.embed(&mel).map_err(text)?;
        let mut demo = Demo {
            classes: corpus.truth.classes.names().to_vec(),
            truth,
            mel,
            emb,
            segments: Vec::new(),
            picks: Vec::new(),
        };
        demo.segment(SegmentationConfig::default().threshold, SegmentationConfig::default().min_len_s);
        Ok(demo)
    }
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes one recording of `seconds` length from the `rare` or
    /// `dense` preset.
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, seed: u32, seconds: f64, events_per_minute: f64) -> Result<Demo, JsError> {
        Self::build(preset, seed, seconds, events_per_minute).map_err(|e| JsError::new(&e))
    }

    pub fn duration_s(&self) -> f64 {
        self.truth.duration_s
    }

    pub fn n_frames(&self) -> usize {
        self.mel.values.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.mel.values.ncols()
    }

    /// Frame-major log-mel values scaled to `[0, 1]`.
    pub fn spectrogram(&self) -> Vec<f32> {
        let v = &self.mel.values;
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(1e-6);
        v.iter().map(|x| (x - lo) / span).collect()
    }

    /// JSON array of `{class, onset_s, offset_s}`.
    pub fn events(&self) -> String {
        let events: Vec<EventView> = self
            .truth
            .events
            .iter()
            .map(|e| EventView {
                class: &self.classes[e.class],
                onset_s: e.onset_s,
                offset_s: e.offset_s,
            })
            .collect();
        serde_json::to_string(&events).unwrap_or_default()
    }

    /// Change likelihood per embedding frame; frames without a full window are 0.
    pub fn change_curve(&self, half_window: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.emb.n_frames()];
        if let Some(series) = change_likelihood(&self.emb, half_window) {
            for (i, v) in series.values.iter().enumerate() {
                out[series.first_frame() + i] = *v;
            }
        }
        out
    }

    pub fn hop_s(&self) -> f64 {
        self.emb.hop_s()
    }

    /// Re-segments the recording and clears any selection. Returns the
    /// number of segments.
    pub fn segment(&mut self, threshold: f64, min_len_s: f64) -> usize {
        let config = SegmentationConfig {
            threshold,
            min_len_s,
            ..SegmentationConfig::default()
        };
        self.segments = segment_recording(&self.emb, &config, 0).segments;
        self.picks.clear();
        self.segments.len()
    }

    /// Picks `count` segments by farthest traversal, starting from a seeded
    /// random segment.
    pub fn select(&mut self, count: usize, seed: u32) -> Vec<u32> {
        let pool: Vec<usize> = (0..self.segments.len()).collect();
        let durations: Vec<f64> = self.segments.iter().map(|s| s.duration_s()).collect();
        let distance = MeanEmbeddingDistance::new(&self.segments);
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        self.picks = farthest_traversal(&pool, &[], None, &durations, BatchQuota::Count(count), &distance, &mut rng)
            .iter()
            .map(|p| p.segment_id.0)
            .collect();
        self.picks.clone()
    }

    /// JSON array of segments with their pick order and true weak labels.
    pub fn segments(&self) -> String {
        let views: Vec<SegmentView> = self
            .segments
            .iter()
            .map(|s| SegmentView {
                id: s.id.0,
                start_s: s.start_s,
                end_s: s.end_s,
                pick: self.picks.iter().position(|&p| p == s.id.0),
                labels: weak_labels(&self.truth.events, s.start_s, s.end_s)
                    .iter()
                    .map(|c| self.classes[c].clone())
                    .collect(),
            })
            .collect();
        serde_json::to_string(&views).unwrap_or_default()
    }
}
