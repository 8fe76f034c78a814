//! Corpus manifest (JSON) with WAV files alongside.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GeneratedCorpus, GeneratorSpec, GroundTruth, RecordingTruth, TruthEvent};
use crate::audio::{load_audio, write_wav, AudioClip};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::labels::ClassList;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub class: String,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecording {
    pub id: String,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub duration_s: f64,
    pub events: Vec<ManifestEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub classes: Vec<String>,
    pub sample_rate: u32,
    pub recordings: Vec<ManifestRecording>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        let classes = ClassList::new(self.classes.clone())?;
        let mut recordings = BTreeMap::new();
        for r in &self.recordings {
            let events = r
                .events
                .iter()
                .map(|e| {
                    Ok(TruthEvent {
                        class: classes.index_of(&e.class)?,
                        onset_s: e.onset_s,
                        offset_s: e.offset_s,
                    })
                })
                .collect::<Result<_>>()?;
            recordings.insert(
                r.id.clone(),
                RecordingTruth {
                    duration_s: r.duration_s,
                    events,
                },
            );
        }
        Ok(GroundTruth { classes, recordings })
    }
}

/// Writes `<dir>/<id>.wav` for every clip and `<dir>/manifest.json`.
pub fn write_corpus(dir: &Path, corpus: &GeneratedCorpus, spec: Option<&GeneratorSpec>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = &corpus.truth.classes;
    let mut recordings = Vec::with_capacity(corpus.clips.len());
    for clip in &corpus.clips {
        let file = PathBuf::from(format!("{}.wav", clip.recording_id));
        write_wav(dir.join(&file), clip)?;
        let truth = corpus.truth.recording(&clip.recording_id)?;
        recordings.push(ManifestRecording {
            id: clip.recording_id.clone(),
            file,
            duration_s: truth.duration_s,
            events: truth
                .events
                .iter()
                .map(|e| ManifestEvent {
                    class: classes.name(e.class).to_string(),
                    onset_s: e.onset_s,
                    offset_s: e.offset_s,
                })
                .collect(),
        });
    }
    let manifest = CorpusManifest {
        classes: classes.names().to_vec(),
        sample_rate: corpus.clips.first().map_or(16000, |c| c.sample_rate),
        recordings,
        generator: spec.cloned(),
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Reads a manifest and decodes every listed recording.
pub fn load_corpus(manifest_path: &Path) -> Result<GeneratedCorpus> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let clips: Vec<AudioClip> = manifest
        .recordings
        .iter()
        .map(|r| load_audio(base.join(&r.file), r.id.clone()))
        .collect::<Result<_>>()?;
    Ok(GeneratedCorpus {
        clips,
        truth: manifest.truth()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, rare_preset};

    #[test]
    fn corpus_roundtrip_is_lossless() {
        let spec = GeneratorSpec {
            recording_len_s: 5.0,
            events_per_minute: 24.0,
            ..rare_preset(1, 3)
        };
        let corpus = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), &corpus, Some(&spec)).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back.truth, corpus.truth);
        for (a, b) in back.clips.iter().zip(&corpus.clips) {
            assert_eq!(a.samples, b.samples);
        }
        assert_eq!(CorpusManifest::load(&path).unwrap().generator, Some(spec));
    }
}
