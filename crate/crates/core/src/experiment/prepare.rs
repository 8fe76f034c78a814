//! Features, embeddings and candidate segments for a train/test corpus pair.

use std::sync::Arc;

use crate::audio::AudioClip;
use crate::embeddings::{EmbeddingConfig, EmbeddingProvider, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::features::{compute_logmel, FeatureConfig, LogMelSpectrogram};
use crate::labels::ClassList;
use crate::segmentation::{segment_recording, CandidateSegment, SegmentationConfig};
use crate::synth::{generate, load_corpus, GeneratedCorpus, GroundTruth};

use super::config::CorpusSource;

#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub id: String,
    pub duration_s: f64,
    pub embedding: Arc<EmbeddingSequence>,
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub classes: ClassList,
    pub train: Vec<PreparedRecording>,
    pub test: Vec<PreparedRecording>,
    pub train_truth: GroundTruth,
    pub test_truth: GroundTruth,
}

/// Materialises the train and test corpora of `source`.
pub fn load_source(source: &CorpusSource) -> Result<(GeneratedCorpus, GeneratedCorpus)> {
    match source {
        CorpusSource::Manifests { train, test } => Ok((load_corpus(train)?, load_corpus(test)?)),
        other => {
            let (train, test) = other.generator_specs().expect("generator-backed source");
            Ok((generate(&train)?, generate(&test)?))
        }
    }
}

pub fn logmels(clips: &[AudioClip], features: &FeatureConfig) -> Result<Vec<LogMelSpectrogram>> {
    crate::par_map(clips, |c| compute_logmel(c, features)).into_iter().collect()
}

/// Fits the provider on the training recordings and embeds both splits.
pub fn embed_splits(
    train: &[LogMelSpectrogram],
    test: &[LogMelSpectrogram],
    features: &FeatureConfig,
    embedding: &EmbeddingConfig,
) -> Result<(EmbeddingProvider, Vec<EmbeddingSequence>, Vec<EmbeddingSequence>)> {
    let mut provider = EmbeddingProvider::from_config(embedding, features.n_bands)?;
    provider.fit(&train.iter().collect::<Vec<_>>())?;
    let embed = |specs: &[LogMelSpectrogram]| -> Result<Vec<EmbeddingSequence>> {
        crate::par_map(specs, |s| provider.embed(s)).into_iter().collect()
    };
    let (a, b) = (embed(train)?, embed(test)?);
    Ok((provider, a, b))
}

fn prepared(clips: &[AudioClip], embs: Vec<EmbeddingSequence>) -> Vec<PreparedRecording> {
    clips
        .iter()
        .zip(embs)
        .map(|(c, e)| PreparedRecording {
            id: c.recording_id.clone(),
            duration_s: c.duration_s(),
            embedding: Arc::new(e),
        })
        .collect()
}

pub fn prepare_corpus(
    train: &GeneratedCorpus,
    test: &GeneratedCorpus,
    features: &FeatureConfig,
    embedding: &EmbeddingConfig,
) -> Result<PreparedCorpus> {
    if train.truth.classes != test.truth.classes {
        return Err(Error::Config("train and test corpora declare different classes".into()));
    }
    let sorted = |clips: &[AudioClip]| {
        let mut v = clips.to_vec();
        v.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        v
    };
    let (train_clips, test_clips) = (sorted(&train.clips), sorted(&test.clips));
    let train_mels = logmels(&train_clips, features)?;
    let test_mels = logmels(&test_clips, features)?;
    let (_, train_emb, test_emb) = embed_splits(&train_mels, &test_mels, features, embedding)?;
    Ok(PreparedCorpus {
        classes: train.truth.classes.clone(),
        train: prepared(&train_clips, train_emb),
        test: prepared(&test_clips, test_emb),
        train_truth: train.truth.clone(),
        test_truth: test.truth.clone(),
    })
}

/// Candidate segments of all recordings, ids assigned in recording order.
pub fn segment_corpus(recordings: &[PreparedRecording], config: &SegmentationConfig) -> Vec<CandidateSegment> {
    let mut segments = Vec::new();
    for r in recordings {
        let out = segment_recording(&r.embedding, config, segments.len() as u32);
        segments.extend(out.segments);
    }
    segments
}
