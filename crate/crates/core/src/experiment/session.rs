//! The active-learning state machine shared by the simulator and the
//! annotation service: select a batch, collect labels, train, repeat.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ProjectConfig, TrainingInput};
use super::prepare::PreparedRecording;
use crate::derive_seed;
use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::labels::{ClassList, LabelSet};
use crate::metrics::{build_roll, error_rate, ErCounts};
use crate::model::{
    attention_pool, frame_targets, train, AnnotatedRegion, DetectedEvent, LossMode, RegionTarget, SedModel,
    TrainOutcome, TrainingExample,
};
use crate::segmentation::{CandidateSegment, SegmentId};
use crate::selection::{
    derive_model_labels, prediction_pairs, propagate_labels, select_batch, BatchQuota, BatchSelection,
    MeanEmbeddingDistance, ModelOutputs, Pick, SelectionState, Strategy,
};
use crate::synth::{AnnotationMode, GroundTruth, TruthEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Annotation {
    Weak { labels: LabelSet },
    /// Events in recording time, inside the annotated unit.
    Strong { events: Vec<TruthEvent> },
}

impl Annotation {
    pub fn label_set(&self) -> LabelSet {
        match self {
            Annotation::Weak { labels } => labels.clone(),
            Annotation::Strong { events } => events.iter().map(|e| e.class).collect(),
        }
    }
}

/// One row of the selection trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub pick_index: usize,
    pub segment_id: u32,
    pub strategy: String,
    pub j_value: Option<f64>,
    pub distance_to_s: Option<f64>,
}

/// Strategy label used in traces when the remaining pool is taken whole.
pub const EXHAUST: &str = "exhaust";

pub struct Session {
    config: ProjectConfig,
    classes: ClassList,
    recordings: Vec<PreparedRecording>,
    by_id: BTreeMap<String, usize>,
    segments: Vec<CandidateSegment>,
    state: SelectionState,
    annotations: BTreeMap<SegmentId, Annotation>,
    model: Option<SedModel>,
    training_rounds: u64,
    trace: Vec<TraceRow>,
}

impl Session {
    pub fn new(
        config: ProjectConfig,
        classes: ClassList,
        recordings: Vec<PreparedRecording>,
        segments: Vec<CandidateSegment>,
    ) -> Result<Self> {
        config.validate()?;
        if segments.is_empty() {
            return Err(Error::EmptyPool);
        }
        let by_id = recordings.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect::<BTreeMap<_, _>>();
        for s in &segments {
            if !by_id.contains_key(&s.recording_id) {
                return Err(Error::UnknownRecording(s.recording_id.clone()));
            }
        }
        let state = SelectionState::new(&segments, derive_seed(config.seed, 0x5E1))?;
        Ok(Self {
            config,
            classes,
            recordings,
            by_id,
            segments,
            state,
            annotations: BTreeMap::new(),
            model: None,
            training_rounds: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn classes(&self) -> &ClassList {
        &self.classes
    }

    pub fn segments(&self) -> &[CandidateSegment] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> Result<&CandidateSegment> {
        self.segments.get(id.0 as usize).ok_or(Error::UnknownSegment(id.0))
    }

    pub fn recordings(&self) -> &[PreparedRecording] {
        &self.recordings
    }

    pub fn recording(&self, id: &str) -> Result<&PreparedRecording> {
        self.by_id
            .get(id)
            .map(|&i| &self.recordings[i])
            .ok_or_else(|| Error::UnknownRecording(id.to_string()))
    }

    pub fn state(&self) -> &SelectionState {
        &self.state
    }

    pub fn annotations(&self) -> &BTreeMap<SegmentId, Annotation> {
        &self.annotations
    }

    pub fn model(&self) -> Option<&SedModel> {
        self.model.as_ref()
    }

    pub fn set_model(&mut self, model: Option<SedModel>) {
        self.model = model;
    }

    pub fn training_rounds(&self) -> u64 {
        self.training_rounds
    }

    pub fn set_training_rounds(&mut self, n: u64) {
        self.training_rounds = n;
    }

    /// Number of batches drawn so far (including whole-pool takes).
    pub fn iteration(&self) -> usize {
        self.state.batches_drawn() as usize
    }

    /// Every segment of the open batch in pick order, annotated or not.
    /// Empty when no batch is open.
    pub fn current_batch(&self) -> Vec<SegmentId> {
        if self.open_batch().is_empty() {
            return Vec::new();
        }
        let it = self.iteration();
        self.trace
            .iter()
            .filter(|r| r.iteration == it)
            .map(|r| SegmentId(r.segment_id))
            .collect()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn total_duration(&self) -> f64 {
        self.state.total_duration()
    }

    pub fn labeled_duration(&self) -> f64 {
        self.state.labeled_duration()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_duration() / self.total_duration()
    }

    pub fn open_batch(&self) -> &[SegmentId] {
        self.state.selected_in_batch()
    }

    pub fn batch_quota(&self) -> BatchQuota {
        match self.config.batch_count {
            Some(n) => BatchQuota::Count(n),
            None => BatchQuota::Seconds(self.config.batch_fraction * self.total_duration()),
        }
    }

    fn embedding(&self, recording_id: &str) -> &Arc<EmbeddingSequence> {
        &self.recordings[self.by_id[recording_id]].embedding
    }

    /// Predictions frozen for the next batch; empty when the strategy needs
    /// none or no model exists yet.
    pub fn model_outputs(&self) -> Result<ModelOutputs> {
        let strategy = self.config.strategy;
        let Some(model) = self.model.as_ref().filter(|_| strategy.needs_model()) else {
            return Ok(ModelOutputs::default());
        };
        if self.state.annotated().is_empty() {
            return Ok(ModelOutputs::default());
        }
        let pending: Vec<&CandidateSegment> =
            self.state.unlabeled().iter().map(|id| &self.segments[id.0 as usize]).collect();
        let recs: Vec<&str> = pending
            .iter()
            .map(|s| s.recording_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match strategy {
            Strategy::Mfft => {
                let events = crate::par_map(&recs, |r| model.detect_events(self.embedding(r), &self.config.decode));
                let mut by_rec: BTreeMap<&str, Vec<DetectedEvent>> = BTreeMap::new();
                for (r, ev) in recs.iter().zip(events) {
                    by_rec.insert(r, ev?);
                }
                let model_labels = pending
                    .iter()
                    .map(|s| {
                        let hop = self.embedding(&s.recording_id).hop_s();
                        (s.id, derive_model_labels(&by_rec[s.recording_id.as_str()], s, hop))
                    })
                    .collect();
                let dist = MeanEmbeddingDistance::new(&self.segments);
                let propagated = propagate_labels(&self.state, &dist)?;
                Ok(ModelOutputs {
                    predictions: Some(prediction_pairs(&model_labels, &propagated)),
                    pooled: None,
                })
            }
            Strategy::Uncertainty => {
                let outputs = crate::par_map(&recs, |r| model.forward(self.embedding(r)));
                let mut by_rec = BTreeMap::new();
                for (r, o) in recs.iter().zip(outputs) {
                    by_rec.insert(*r, o?);
                }
                let mut pooled = BTreeMap::new();
                for s in pending {
                    let (p, w) = &by_rec[s.recording_id.as_str()];
                    let o = attention_pool(p.view(), w.view(), s.start_frame..s.end_frame)?;
                    pooled.insert(s.id, o.to_vec());
                }
                Ok(ModelOutputs {
                    predictions: None,
                    pooled: Some(pooled),
                })
            }
            Strategy::Random => Ok(ModelOutputs::default()),
        }
    }

    fn record(&mut self, picks: &[Pick], strategy: &str) {
        let iteration = self.iteration();
        self.trace.extend(picks.iter().enumerate().map(|(i, p)| TraceRow {
            iteration,
            pick_index: i,
            segment_id: p.segment_id.0,
            strategy: strategy.to_string(),
            j_value: p.j_value,
            distance_to_s: p.distance_to_selected,
        }));
    }

    /// Selects the next batch with the configured strategy.
    pub fn next_batch(&mut self) -> Result<BatchSelection> {
        if !self.open_batch().is_empty() {
            return Err(Error::BatchOpen(self.open_batch().len()));
        }
        if self.state.unlabeled().is_empty() {
            return Ok(BatchSelection {
                picks: Vec::new(),
                exhausted: true,
            });
        }
        let outputs = self.model_outputs()?;
        let dist = MeanEmbeddingDistance::new(&self.segments);
        let quota = self.batch_quota();
        let batch = select_batch(self.config.strategy, &mut self.state, &outputs, quota, &dist)?;
        self.record(&batch.picks, self.config.strategy.as_str());
        Ok(batch)
    }

    /// Opens a batch holding every remaining segment in id order.
    pub fn take_remaining(&mut self) -> Result<BatchSelection> {
        if !self.open_batch().is_empty() {
            return Err(Error::BatchOpen(self.open_batch().len()));
        }
        let ids: Vec<SegmentId> = self.state.unlabeled().iter().copied().collect();
        self.state.take(&ids)?;
        self.state.set_batches_drawn(self.state.batches_drawn() + 1);
        let picks: Vec<Pick> = ids
            .iter()
            .map(|&segment_id| Pick {
                segment_id,
                j_value: None,
                distance_to_selected: None,
            })
            .collect();
        self.record(&picks, EXHAUST);
        Ok(BatchSelection { picks, exhausted: true })
    }

    pub fn abandon_batch(&mut self) {
        self.state.abandon_batch();
    }

    fn check_annotation(&self, id: SegmentId, annotation: &Annotation) -> Result<()> {
        let n = self.classes.len();
        let labels = annotation.label_set();
        if let Some(bad) = labels.iter().find(|&c| c >= n) {
            return Err(Error::UnknownClass(format!("class index {bad}")));
        }
        let seg = self.segment(id)?;
        if let Annotation::Strong { events } = annotation {
            for e in events {
                if e.onset_s < seg.start_s - 1e-9 || e.offset_s > seg.end_s + 1e-9 || e.offset_s <= e.onset_s {
                    return Err(Error::EventOutOfBounds {
                        onset: e.onset_s,
                        offset: e.offset_s,
                        duration: seg.end_s,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks everything `annotate` checks, without applying anything.
    pub fn validate_annotation(&self, id: SegmentId, annotation: &Annotation) -> Result<()> {
        self.segment(id)?;
        if self.annotations.contains_key(&id) {
            return Err(Error::AlreadyAnnotated(id.0));
        }
        if !self.open_batch().contains(&id) {
            return Err(Error::NotInBatch(id.0));
        }
        self.check_annotation(id, annotation)
    }

    /// Records the annotator's answer for a segment of the open batch.
    pub fn annotate(&mut self, id: SegmentId, annotation: Annotation) -> Result<()> {
        self.validate_annotation(id, &annotation)?;
        self.state.annotate(id, annotation.label_set())?;
        self.annotations.insert(id, annotation);
        Ok(())
    }

    /// Re-applies a persisted annotation regardless of batch membership.
    pub fn restore_annotation(&mut self, id: SegmentId, annotation: Annotation) -> Result<()> {
        self.check_annotation(id, &annotation)?;
        self.state.annotate(id, annotation.label_set())?;
        self.annotations.insert(id, annotation);
        Ok(())
    }

    /// Re-opens a persisted batch after a restart.
    pub fn restore_open_batch(&mut self, ids: &[SegmentId], batches_drawn: u64) -> Result<()> {
        let pending: Vec<SegmentId> = ids.iter().copied().filter(|id| !self.annotations.contains_key(id)).collect();
        self.state.take(&pending)?;
        self.state.set_batches_drawn(batches_drawn);
        Ok(())
    }

    pub fn restore_trace(&mut self, trace: Vec<TraceRow>) {
        self.trace = trace;
    }

    /// Training examples from all annotations, in segment order.
    pub fn training_examples(&self) -> Vec<TrainingExample> {
        let c = self.classes.len();
        let mut by_rec: BTreeMap<&str, Vec<(SegmentId, &Annotation)>> = BTreeMap::new();
        for (id, a) in &self.annotations {
            by_rec.entry(self.segments[id.0 as usize].recording_id.as_str()).or_default().push((*id, a));
        }
        let target = |seg: &CandidateSegment, a: &Annotation, hop_s: f64| match a {
            Annotation::Weak { labels } => RegionTarget::Weak(labels.to_target(c)),
            Annotation::Strong { events } => {
                let ev: Vec<(usize, f64, f64)> = events.iter().map(|e| (e.class, e.onset_s, e.offset_s)).collect();
                RegionTarget::Frames(frame_targets(&ev, seg.start_frame, seg.end_frame, hop_s, c))
            }
        };
        let mut out = Vec::new();
        for (rec, items) in by_rec {
            let emb = self.embedding(rec);
            match self.config.training_input {
                TrainingInput::RecordingContext => out.push(TrainingExample {
                    recording_id: rec.to_string(),
                    embedding: emb.clone(),
                    regions: items
                        .iter()
                        .map(|(id, a)| {
                            let seg = &self.segments[id.0 as usize];
                            AnnotatedRegion {
                                start_frame: seg.start_frame,
                                end_frame: seg.end_frame,
                                target: target(seg, a, emb.hop_s()),
                            }
                        })
                        .collect(),
                }),
                TrainingInput::SegmentsOnly => {
                    for (id, a) in items {
                        let seg = &self.segments[id.0 as usize];
                        let values = emb.values.slice(ndarray::s![seg.start_frame..seg.end_frame, ..]).to_owned();
                        out.push(TrainingExample {
                            recording_id: format!("{rec}#{}", id.0),
                            embedding: Arc::new(EmbeddingSequence::new(rec, values, emb.hop_ms)),
                            regions: vec![AnnotatedRegion {
                                start_frame: 0,
                                end_frame: seg.n_frames(),
                                target: target(seg, a, emb.hop_s()),
                            }],
                        });
                    }
                }
            }
        }
        out
    }

    /// Seed of training round `round`.
    pub fn training_seed(&self, round: u64) -> u64 {
        derive_seed(self.config.seed, 0x7A1_0000 + round)
    }

    pub fn loss_mode(&self) -> LossMode {
        match self.config.label_type {
            AnnotationMode::Weak => LossMode::Weak,
            AnnotationMode::Strong => LossMode::Strong,
        }
    }

    /// Trains a fresh model on all annotations and installs it.
    pub fn train(&mut self) -> Result<TrainOutcome> {
        let outcome = self.train_detached()?;
        self.install_model(outcome.model.clone());
        Ok(outcome)
    }

    /// Trains without mutating the session (for background workers).
    pub fn train_detached(&self) -> Result<TrainOutcome> {
        let examples = self.training_examples();
        train(
            &examples,
            &self.classes,
            &self.config.model,
            &self.config.training,
            self.loss_mode(),
            self.training_seed(self.training_rounds),
        )
    }

    /// Installs `model` at checkpoint precision, so that a model reloaded
    /// from disk behaves identically.
    pub fn install_model(&mut self, mut model: SedModel) {
        model.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
        self.model = Some(model);
        self.training_rounds += 1;
    }

    /// Share of annotated duration whose segments overlap a target event
    /// according to `truth`.
    pub fn labeled_positive_fraction(&self, truth: &GroundTruth) -> Result<f64> {
        let mut pos = 0.0;
        let mut total = 0.0;
        for id in self.annotations.keys() {
            let seg = &self.segments[id.0 as usize];
            let events = &truth.recording(&seg.recording_id)?.events;
            total += seg.duration_s();
            if events.iter().any(|e| e.onset_s < seg.end_s && e.offset_s > seg.start_s) {
                pos += seg.duration_s();
            }
        }
        Ok(if total > 0.0 { pos / total } else { 0.0 })
    }
}

/// Segment-based error counts of `model` over `recordings`.
pub fn evaluate_model(
    model: &SedModel,
    recordings: &[PreparedRecording],
    truth: &GroundTruth,
    decode: &crate::model::DecodeConfig,
) -> Result<ErCounts> {
    let c = model.n_classes();
    let per = crate::par_map(recordings, |r| -> Result<ErCounts> {
        let t = truth.recording(&r.id)?;
        let hyp = model.detect_events(&r.embedding, decode)?;
        let duration = t.duration_s;
        let reference = build_roll(t.events.iter().map(|e| (e.class, e.onset_s, e.offset_s)), duration, c)?;
        let hyp_roll = build_roll(
            hyp.iter().map(|e| (e.class, e.onset_s, e.offset_s.min(duration))),
            duration,
            c,
        )?;
        error_rate(&reference, &hyp_roll)
    });
    per.into_iter().sum::<Result<ErCounts>>()
}
