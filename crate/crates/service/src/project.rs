//! One annotation project: on-disk layout, recovery and the state machine
//! driven by the HTTP handlers.
//!
//! Layout of a project directory:
//!
//! ```text
//! config.toml        project configuration
//! recordings.json    registry of train and test recordings
//! audio/<id>.wav     copies of the registered audio
//! mel/<id>.lmel      cached log-mel matrices
//! emb/<id>.emb       cached embeddings
//! segments.csv       candidate segment table
//! prepared.json      written last by prepare; marks the caches as valid
//! annotations.jsonl  append-only annotation log
//! state.json         selection state, trace, training rounds, metrics
//! model.sedm         latest model checkpoint
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use alsed_core::audio::{load_audio, wav_bytes};
use alsed_core::binio::write_atomic;
use alsed_core::embeddings::EmbeddingSequence;
use alsed_core::experiment::{
    embed_splits, evaluate_model, logmels, segment_corpus, Annotation, PreparedRecording, ProjectConfig, Session,
    TraceRow,
};
use alsed_core::features::LogMelSpectrogram;
use alsed_core::labels::ClassList;
use alsed_core::metrics::ErCounts;
use alsed_core::model::{train, LossMode, ModelConfig, SedModel, TrainConfig, TrainOutcome, TrainingExample};
use alsed_core::segmentation::{write_segment_table, CandidateSegment, SegmentId};
use alsed_core::synth::{GroundTruth, ManifestEvent, RecordingTruth, TruthEvent};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub id: String,
    pub split: Split,
    /// Relative to the project directory.
    pub file: PathBuf,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<ManifestEvent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Queued,
    Running,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub round: u64,
    pub labeled_duration_s: f64,
    pub labeled_fraction: f64,
    pub n_annotated: usize,
    pub counts: ErCounts,
    pub er: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct PersistedState {
    batches_drawn: u64,
    open_batch: Vec<u32>,
    trace: Vec<TraceRow>,
    training_rounds: u64,
    pending_training: bool,
    metrics: Vec<MetricsEntry>,
    last_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PreparedMarker {
    registry: Vec<RecordingEntry>,
    n_segments: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: f64,
    pub segment_id: u32,
    pub labels: Vec<String>,
    pub annotation: Annotation,
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSegment {
    pub sid: String,
    pub segment_id: u32,
    pub recording_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub duration_s: f64,
    pub annotated: bool,
    pub audio: String,
    pub mel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchDescriptor {
    pub iteration: usize,
    pub exhausted: bool,
    pub segments: Vec<BatchSegment>,
    pub labeled_duration_s: f64,
    pub total_duration_s: f64,
    pub labeled_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub segment_id: u32,
    pub remaining_in_batch: usize,
    pub batch_complete: bool,
    pub training: JobState,
    pub labeled_duration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectStatus {
    pub id: String,
    pub name: String,
    pub prepared: bool,
    pub n_recordings: usize,
    pub n_segments: usize,
    pub n_annotated: usize,
    pub open_batch: Vec<u32>,
    pub iteration: usize,
    pub labeled_duration_s: f64,
    pub total_duration_s: f64,
    pub labeled_fraction: f64,
    pub training: JobState,
    pub training_rounds: u64,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ground_truth: bool,
    pub history: Vec<MetricsEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MelPayload {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub hop_s: f64,
    pub start_s: f64,
    pub values: Vec<f32>,
}

/// Everything a background worker needs to train without holding the project.
pub struct TrainJob {
    pub round: u64,
    examples: Vec<TrainingExample>,
    classes: ClassList,
    model: ModelConfig,
    training: TrainConfig,
    mode: LossMode,
    seed: u64,
}

impl TrainJob {
    pub fn run(self) -> alsed_core::Result<TrainOutcome> {
        train(&self.examples, &self.classes, &self.model, &self.training, self.mode, self.seed)
    }
}

pub struct Project {
    id: String,
    dir: PathBuf,
    config: ProjectConfig,
    classes: ClassList,
    registry: Vec<RecordingEntry>,
    session: Option<Session>,
    test: Vec<PreparedRecording>,
    test_truth: Option<GroundTruth>,
    job: JobState,
    pending_training: bool,
    metrics: Vec<MetricsEntry>,
    last_error: Option<String>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))
}

fn corrupt(path: &Path, reason: impl ToString) -> ServiceError {
    ServiceError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| corrupt(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).expect("project files serialize");
    Ok(write_atomic(path, &bytes)?)
}

fn valid_recording_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Global segment identifier used by the segment resource endpoints.
pub fn sid(project: &str, segment: u32) -> String {
    format!("{project}.{segment}")
}

pub fn parse_sid(sid: &str) -> Option<(&str, u32)> {
    let (p, s) = sid.rsplit_once('.')?;
    Some((p, s.parse().ok()?))
}

impl Project {
    /// Initialises a new project directory.
    pub fn create(dir: PathBuf, id: String, config: ProjectConfig) -> Result<Self> {
        config.validate()?;
        let classes = ClassList::new(config.classes.clone())?;
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let text = toml::to_string(&config).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        write_atomic(&dir.join("config.toml"), text.as_bytes())?;
        write_json(&dir.join("recordings.json"), &Vec::<RecordingEntry>::new())?;
        write_json(&dir.join("state.json"), &PersistedState::default())?;
        let log = dir.join("annotations.jsonl");
        File::create(&log).map_err(|e| ServiceError::io(&log, e))?;
        Ok(Self {
            id,
            dir,
            config,
            classes,
            registry: Vec::new(),
            session: None,
            test: Vec::new(),
            test_truth: None,
            job: JobState::Idle,
            pending_training: false,
            metrics: Vec::new(),
            last_error: None,
        })
    }

    /// Reconstructs a project from its directory.
    pub fn open(dir: PathBuf, id: String) -> Result<Self> {
        let config_path = dir.join("config.toml");
        let config = ProjectConfig::from_toml(&read_text(&config_path)?).map_err(|e| corrupt(&config_path, e))?;
        let classes = ClassList::new(config.classes.clone())?;
        let registry: Vec<RecordingEntry> = read_json(&dir.join("recordings.json"))?;
        let state: PersistedState = read_json(&dir.join("state.json"))?;
        let mut project = Self {
            id,
            dir,
            config,
            classes,
            registry,
            session: None,
            test: Vec::new(),
            test_truth: None,
            job: JobState::Idle,
            pending_training: state.pending_training,
            metrics: state.metrics.clone(),
            last_error: state.last_error.clone(),
        };
        let marker_path = project.dir.join("prepared.json");
        if marker_path.exists() {
            let marker: PreparedMarker = read_json(&marker_path)?;
            if marker.registry == project.registry {
                project.load_prepared()?;
                project.replay(&state)?;
            }
        }
        if project.pending_training {
            project.job = JobState::Queued;
        }
        Ok(project)
    }

    fn replay(&mut self, state: &PersistedState) -> Result<()> {
        let session = self.session.as_mut().expect("prepared");
        for entry in read_log(&self.dir.join("annotations.jsonl"))? {
            session.restore_annotation(SegmentId(entry.segment_id), entry.annotation)?;
        }
        session.restore_trace(state.trace.clone());
        let open: Vec<SegmentId> = state.open_batch.iter().map(|&i| SegmentId(i)).collect();
        session.restore_open_batch(&open, state.batches_drawn)?;
        session.set_training_rounds(state.training_rounds);
        let model_path = self.dir.join("model.sedm");
        if state.training_rounds > 0 && model_path.exists() {
            session.set_model(Some(SedModel::load(&model_path)?));
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn registry(&self) -> &[RecordingEntry] {
        &self.registry
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn job(&self) -> JobState {
        self.job
    }

    fn session_mut(&mut self) -> Result<&mut Session> {
        self.session
            .as_mut()
            .ok_or_else(|| ServiceError::Conflict("project is not prepared".into()))
    }

    fn persist_state(&self) -> Result<()> {
        let state = match &self.session {
            Some(s) => PersistedState {
                batches_drawn: s.state().batches_drawn(),
                open_batch: s.open_batch().iter().map(|i| i.0).collect(),
                trace: s.trace().to_vec(),
                training_rounds: s.training_rounds(),
                pending_training: self.pending_training,
                metrics: self.metrics.clone(),
                last_error: self.last_error.clone(),
            },
            None => PersistedState {
                metrics: self.metrics.clone(),
                last_error: self.last_error.clone(),
                ..PersistedState::default()
            },
        };
        write_json(&self.dir.join("state.json"), &state)
    }

    /// Registers a recording, copying its WAV bytes into the project.
    pub fn add_recording(
        &mut self,
        id: &str,
        split: Split,
        wav: &[u8],
        events: Option<Vec<ManifestEvent>>,
    ) -> Result<RecordingEntry> {
        if !valid_recording_id(id) {
            return Err(ServiceError::BadRequest(format!("invalid recording id {id:?}")));
        }
        if self.registry.iter().any(|r| r.id == id) {
            return Err(ServiceError::Conflict(format!("recording {id:?} already registered")));
        }
        if self.session.as_ref().is_some_and(|s| !s.annotations().is_empty()) {
            return Err(ServiceError::Conflict("cannot add recordings after annotation has started".into()));
        }
        let clip = alsed_core::audio::decode_wav_bytes(wav, id)
            .map_err(|e| ServiceError::BadRequest(format!("recording {id}: {e}")))?;
        if let Some(events) = &events {
            for e in events {
                self.classes.index_of(&e.class)?;
                if !(e.onset_s >= 0.0 && e.offset_s > e.onset_s && e.offset_s <= clip.duration_s() + 1e-6) {
                    return Err(ServiceError::BadRequest(format!(
                        "recording {id}: event [{}, {}] outside the recording",
                        e.onset_s, e.offset_s
                    )));
                }
            }
        }
        let file = PathBuf::from("audio").join(format!("{id}.wav"));
        write_atomic(&self.dir.join(&file), wav)?;
        let entry = RecordingEntry {
            id: id.to_string(),
            split,
            file,
            duration_s: clip.duration_s(),
            sample_rate: clip.sample_rate,
            events,
        };
        self.registry.push(entry.clone());
        write_json(&self.dir.join("recordings.json"), &self.registry)?;
        Ok(entry)
    }

    fn sorted_entries(&self, split: Split) -> Vec<&RecordingEntry> {
        let mut v: Vec<&RecordingEntry> = self.registry.iter().filter(|r| r.split == split).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    fn truth_of(&self, entries: &[&RecordingEntry]) -> Result<Option<GroundTruth>> {
        if entries.is_empty() || entries.iter().any(|r| r.events.is_none()) {
            return Ok(None);
        }
        let mut recordings = BTreeMap::new();
        for r in entries {
            let events = r
                .events
                .iter()
                .flatten()
                .map(|e| {
                    Ok(TruthEvent {
                        class: self.classes.index_of(&e.class)?,
                        onset_s: e.onset_s,
                        offset_s: e.offset_s,
                    })
                })
                .collect::<alsed_core::Result<Vec<_>>>()?;
            recordings.insert(
                r.id.clone(),
                RecordingTruth {
                    duration_s: r.duration_s,
                    events,
                },
            );
        }
        Ok(Some(GroundTruth {
            classes: self.classes.clone(),
            recordings,
        }))
    }

    /// Ground truth of the training recordings, when every one has it.
    pub fn train_truth(&self) -> Result<Option<GroundTruth>> {
        self.truth_of(&self.sorted_entries(Split::Train))
    }

    fn emb_path(&self, id: &str) -> PathBuf {
        self.dir.join("emb").join(format!("{id}.emb"))
    }

    fn mel_path(&self, id: &str) -> PathBuf {
        self.dir.join("mel").join(format!("{id}.lmel"))
    }

    /// Computes features, embeddings and segments. Re-running on an unchanged
    /// registry returns the existing segment count.
    pub fn prepare(&mut self) -> Result<usize> {
        if let Some(s) = &self.session {
            let marker: PreparedMarker = read_json(&self.dir.join("prepared.json"))?;
            if marker.registry == self.registry {
                return Ok(s.segments().len());
            }
            if !s.annotations().is_empty() {
                return Err(ServiceError::Conflict("project already has annotations".into()));
            }
        }
        let train_entries = self.sorted_entries(Split::Train);
        let test_entries = self.sorted_entries(Split::Test);
        if train_entries.is_empty() {
            return Err(ServiceError::BadRequest("no training recordings registered".into()));
        }
        let load = |entries: &[&RecordingEntry]| -> Result<Vec<_>> {
            entries
                .iter()
                .map(|r| {
                    load_audio(self.dir.join(&r.file), &r.id)
                        .map_err(|e| ServiceError::BadRequest(format!("recording {}: {e}", r.id)))
                })
                .collect()
        };
        let train_clips = load(&train_entries)?;
        let test_clips = load(&test_entries)?;
        let features = &self.config.features;
        let train_mels = logmels(&train_clips, features)?;
        let test_mels = logmels(&test_clips, features)?;
        let (_, train_emb, test_emb) = embed_splits(&train_mels, &test_mels, features, &self.config.embedding)?;
        for dir in ["mel", "emb"] {
            let d = self.dir.join(dir);
            std::fs::create_dir_all(&d).map_err(|e| ServiceError::io(&d, e))?;
        }
        for (m, e) in train_mels.iter().zip(&train_emb).chain(test_mels.iter().zip(&test_emb)) {
            m.save(self.mel_path(&m.recording_id))?;
            e.save(self.emb_path(&e.recording_id))?;
        }
        let wrap = |clips: &[alsed_core::audio::AudioClip], embs: Vec<EmbeddingSequence>| {
            clips
                .iter()
                .zip(embs)
                .map(|(c, e)| PreparedRecording {
                    id: c.recording_id.clone(),
                    duration_s: c.duration_s(),
                    embedding: Arc::new(e),
                })
                .collect::<Vec<_>>()
        };
        let train_recs = wrap(&train_clips, train_emb);
        self.test = wrap(&test_clips, test_emb);
        self.install_session(train_recs)?;
        let n = self.session.as_ref().map_or(0, |s| s.segments().len());
        write_json(
            &self.dir.join("prepared.json"),
            &PreparedMarker {
                registry: self.registry.clone(),
                n_segments: n,
            },
        )?;
        self.persist_state()?;
        tracing::info!(project = %self.id, segments = n, "prepared");
        Ok(n)
    }

    fn install_session(&mut self, train_recs: Vec<PreparedRecording>) -> Result<()> {
        let segments: Vec<CandidateSegment> = segment_corpus(&train_recs, &self.config.segmentation);
        write_segment_table(&self.dir.join("segments.csv"), &segments)?;
        let session = Session::new(self.config.clone(), self.classes.clone(), train_recs, segments)?;
        self.test_truth = self.truth_of(&self.sorted_entries(Split::Test))?;
        self.session = Some(session);
        Ok(())
    }

    fn load_prepared(&mut self) -> Result<()> {
        let hop_ms = self.config.features.hop_ms;
        let load = |entries: Vec<&RecordingEntry>| -> Result<Vec<PreparedRecording>> {
            entries
                .into_iter()
                .map(|r| {
                    let e = EmbeddingSequence::load(self.emb_path(&r.id), &r.id, hop_ms)?;
                    Ok(PreparedRecording {
                        id: r.id.clone(),
                        duration_s: r.duration_s,
                        embedding: Arc::new(e),
                    })
                })
                .collect()
        };
        let train_recs = load(self.sorted_entries(Split::Train))?;
        self.test = load(self.sorted_entries(Split::Test))?;
        self.install_session(train_recs)
    }

    fn descriptor(&self, exhausted: bool) -> Result<BatchDescriptor> {
        let s = self.session.as_ref().expect("prepared");
        let segments = s
            .current_batch()
            .into_iter()
            .map(|id| {
                let seg = s.segment(id)?;
                let g = sid(&self.id, id.0);
                Ok(BatchSegment {
                    segment_id: id.0,
                    recording_id: seg.recording_id.clone(),
                    start_s: seg.start_s,
                    end_s: seg.end_s,
                    duration_s: seg.duration_s(),
                    annotated: s.annotations().contains_key(&id),
                    audio: format!("/segments/{g}/audio"),
                    mel: format!("/segments/{g}/mel"),
                    sid: g,
                })
            })
            .collect::<alsed_core::Result<Vec<_>>>()?;
        Ok(BatchDescriptor {
            iteration: s.iteration(),
            exhausted,
            segments,
            labeled_duration_s: s.labeled_duration(),
            total_duration_s: s.total_duration(),
            labeled_fraction: s.labeled_fraction(),
        })
    }

    /// Returns the open batch, or selects a new one when none is open.
    /// With `fresh`, an open batch is a conflict instead.
    pub fn batch(&mut self, fresh: bool) -> Result<BatchDescriptor> {
        let busy = matches!(self.job, JobState::Queued | JobState::Running);
        let session = self.session_mut()?;
        if !session.open_batch().is_empty() {
            if fresh {
                return Err(alsed_core::Error::BatchOpen(session.open_batch().len()).into());
            }
            return self.descriptor(false);
        }
        if busy {
            return Err(ServiceError::Conflict("training in progress".into()));
        }
        let batch = session.next_batch()?;
        self.persist_state()?;
        tracing::info!(project = %self.id, picks = batch.picks.len(), "batch selected");
        self.descriptor(batch.exhausted)
    }

    pub fn abandon_batch(&mut self) -> Result<usize> {
        let session = self.session_mut()?;
        let n = session.open_batch().len();
        session.abandon_batch();
        self.persist_state()?;
        Ok(n)
    }

    /// Validates, logs (durably) and applies one annotation.
    pub fn annotate(&mut self, segment_id: u32, annotation: Annotation, annotator: Option<String>) -> Result<AnnotationAck> {
        let id = SegmentId(segment_id);
        let log_path = self.dir.join("annotations.jsonl");
        let session = self.session_mut()?;
        session.validate_annotation(id, &annotation)?;
        let entry = LogEntry {
            timestamp: now(),
            segment_id,
            labels: session.classes().names_of(&annotation.label_set()),
            annotation: annotation.clone(),
            annotator,
        };
        append_log(&log_path, &entry)?;
        session.annotate(id, annotation)?;
        let remaining = session.open_batch().len();
        let labeled = session.labeled_duration();
        if remaining == 0 {
            self.pending_training = true;
            self.job = JobState::Queued;
        }
        self.persist_state()?;
        Ok(AnnotationAck {
            segment_id,
            remaining_in_batch: remaining,
            batch_complete: remaining == 0,
            training: self.job,
            labeled_duration_s: labeled,
        })
    }

    /// Converts request labels (class names) into an annotation.
    pub fn weak_annotation(&self, labels: &[String]) -> Result<Annotation> {
        Ok(Annotation::Weak {
            labels: self.classes.label_set(labels)?,
        })
    }

    pub fn strong_annotation(&self, events: &[ManifestEvent]) -> Result<Annotation> {
        let events = events
            .iter()
            .map(|e| {
                Ok(TruthEvent {
                    class: self.classes.index_of(&e.class)?,
                    onset_s: e.onset_s,
                    offset_s: e.offset_s,
                })
            })
            .collect::<alsed_core::Result<Vec<_>>>()?;
        Ok(Annotation::Strong { events })
    }

    /// Queues a training round on request.
    pub fn request_training(&mut self) -> Result<JobState> {
        let session = self.session_mut()?;
        if session.annotations().is_empty() {
            return Err(alsed_core::Error::NoAnnotations.into());
        }
        if matches!(self.job, JobState::Queued | JobState::Running) {
            return Err(ServiceError::Conflict("training already queued".into()));
        }
        self.pending_training = true;
        self.job = JobState::Queued;
        self.persist_state()?;
        Ok(self.job)
    }

    /// Moves a queued job to running and hands out its inputs.
    pub fn begin_training(&mut self) -> Option<TrainJob> {
        if self.job != JobState::Queued {
            return None;
        }
        let session = self.session.as_ref()?;
        self.job = JobState::Running;
        let round = session.training_rounds();
        Some(TrainJob {
            round,
            examples: session.training_examples(),
            classes: session.classes().clone(),
            model: self.config.model.clone(),
            training: self.config.training.clone(),
            mode: session.loss_mode(),
            seed: session.training_seed(round),
        })
    }

    /// Installs the outcome of `begin_training`, saves the checkpoint and
    /// appends a metrics entry when test ground truth is registered.
    pub fn finish_training(&mut self, round: u64, outcome: alsed_core::Result<TrainOutcome>) -> Result<()> {
        let model_path = self.dir.join("model.sedm");
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| ServiceError::Conflict("project is not prepared".into()))?;
        debug_assert_eq!(session.training_rounds(), round);
        match outcome {
            Ok(outcome) => {
                session.install_model(outcome.model);
                let model = session.model().expect("installed");
                model.save(&model_path)?;
                let entry = MetricsEntry {
                    round: session.training_rounds(),
                    labeled_duration_s: session.labeled_duration(),
                    labeled_fraction: session.labeled_fraction(),
                    n_annotated: session.annotations().len(),
                    counts: ErCounts::default(),
                    er: None,
                };
                if let Some(truth) = &self.test_truth {
                    let counts = evaluate_model(model, &self.test, truth, &self.config.decode)?;
                    self.metrics.push(MetricsEntry {
                        counts,
                        er: counts.error_rate(),
                        ..entry
                    });
                }
                self.last_error = None;
                self.job = JobState::Idle;
                tracing::info!(project = %self.id, round = round + 1, "training finished");
            }
            Err(e) => {
                tracing::warn!(project = %self.id, error = %e, "training failed");
                self.last_error = Some(e.to_string());
                self.job = JobState::Failed;
            }
        }
        self.pending_training = false;
        self.persist_state()
    }

    pub fn status(&self) -> ProjectStatus {
        let s = self.session.as_ref();
        ProjectStatus {
            id: self.id.clone(),
            name: self.config.name.clone(),
            prepared: s.is_some(),
            n_recordings: self.registry.len(),
            n_segments: s.map_or(0, |s| s.segments().len()),
            n_annotated: s.map_or(0, |s| s.annotations().len()),
            open_batch: s.map_or(Vec::new(), |s| s.open_batch().iter().map(|i| i.0).collect()),
            iteration: s.map_or(0, |s| s.iteration()),
            labeled_duration_s: s.map_or(0.0, |s| s.labeled_duration()),
            total_duration_s: s.map_or(0.0, |s| s.total_duration()),
            labeled_fraction: s.map_or(0.0, |s| s.labeled_fraction()),
            training: self.job,
            training_rounds: s.map_or(0, |s| s.training_rounds()),
            last_error: self.last_error.clone(),
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        MetricsReport {
            ground_truth: self.test_truth.is_some(),
            history: self.metrics.clone(),
        }
    }

    fn segment(&self, segment_id: u32) -> Result<(&CandidateSegment, &RecordingEntry)> {
        let s = self.session.as_ref().ok_or_else(|| ServiceError::NotFound("project is not prepared".into()))?;
        let seg = s.segment(SegmentId(segment_id))?;
        let entry = self
            .registry
            .iter()
            .find(|r| r.id == seg.recording_id)
            .ok_or_else(|| alsed_core::Error::UnknownRecording(seg.recording_id.clone()))?;
        Ok((seg, entry))
    }

    /// 16-bit WAV of the segment padded by `context_s` on both sides,
    /// clamped to the recording.
    pub fn segment_audio(&self, segment_id: u32, context_s: f64) -> Result<Vec<u8>> {
        if !(context_s >= 0.0 && context_s.is_finite()) {
            return Err(ServiceError::BadRequest("context must be a non-negative number".into()));
        }
        let (seg, entry) = self.segment(segment_id)?;
        let clip = load_audio(self.dir.join(&entry.file), &entry.id)?;
        let samples = clip.slice_seconds(seg.start_s - context_s, seg.end_s + context_s);
        Ok(wav_bytes(samples, clip.sample_rate))
    }

    pub fn segment_mel(&self, segment_id: u32) -> Result<MelPayload> {
        let (seg, entry) = self.segment(segment_id)?;
        let mel = LogMelSpectrogram::load(self.mel_path(&entry.id), &entry.id)?;
        let end = seg.end_frame.min(mel.n_frames());
        let rows = mel.values.slice(s![seg.start_frame.min(end)..end, ..]);
        Ok(MelPayload {
            t: rows.nrows(),
            b: rows.ncols(),
            hop_s: self.config.features.hop_s(),
            start_s: seg.start_s,
            values: rows.iter().copied().collect(),
        })
    }
}

fn append_log(path: &Path, entry: &LogEntry) -> Result<()> {
    let mut line = serde_json::to_vec(entry).expect("log entries serialize");
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| ServiceError::io(path, e))?;
    f.write_all(&line).map_err(|e| ServiceError::io(path, e))?;
    f.sync_data().map_err(|e| ServiceError::io(path, e))
}

/// Reads the annotation log. A torn final line (a write interrupted before
/// it was acknowledged) is ignored.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = read_text(path)?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<LogEntry>(line.trim_end()) {
            Ok(e) => out.push(e),
            Err(_) if i + 1 == lines.len() && !line.ends_with('\n') => {
                tracing::warn!(path = %path.display(), "ignoring torn final log line");
            }
            Err(e) => return Err(corrupt(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sid_round_trip() {
        assert_eq!(parse_sid(&sid("p1.x", 42)), Some(("p1.x", 42)));
        assert_eq!(parse_sid("p1"), None);
        assert_eq!(parse_sid("p1.-3"), None);
    }

    fn entry(segment_id: u32) -> LogEntry {
        LogEntry {
            timestamp: 1.0,
            segment_id,
            labels: vec!["dog".into()],
            annotation: Annotation::Weak {
                labels: [0].into_iter().collect(),
            },
            annotator: None,
        }
    }

    #[test]
    fn torn_last_line_is_dropped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        append_log(&path, &entry(3)).unwrap();
        append_log(&path, &entry(7)).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"timestamp\":2.0,\"segm");
        std::fs::write(&path, &text).unwrap();
        let ids: Vec<u32> = read_log(&path).unwrap().iter().map(|e| e.segment_id).collect();
        assert_eq!(ids, vec![3, 7]);

        let broken = text.replacen("\"segment_id\":3", "\"segment_id\":", 1);
        std::fs::write(&path, broken).unwrap();
        assert!(read_log(&path).is_err());
    }
}
