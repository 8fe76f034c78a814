//! Deterministic synthetic corpora with ground truth, and the simulated
//! annotator.
//!
//! Every recording draws from its own sub-seed `(seed, index)`, so output
//! does not depend on how many recordings are generated or in what order.

mod annotate;
mod corpus;
mod signals;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::audio::{quantize_i16, AudioClip};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::labels::ClassList;

pub use annotate::{positive_fraction, simulate_annotation, strong_events, weak_labels, AnnotationMode, SimulatedAnnotation};
pub use corpus::{load_corpus, write_corpus, CorpusManifest, ManifestEvent, ManifestRecording};
pub use signals::{render_background, render_clutter, render_event, rms, shaped_noise, EventTemplate, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub class: usize,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingTruth {
    pub duration_s: f64,
    pub events: Vec<TruthEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub classes: ClassList,
    pub recordings: BTreeMap<String, RecordingTruth>,
}

impl GroundTruth {
    pub fn recording(&self, id: &str) -> Result<&RecordingTruth> {
        self.recordings
            .get(id)
            .ok_or_else(|| Error::UnknownRecording(id.to_string()))
    }

    pub fn total_duration_s(&self) -> f64 {
        self.recordings.values().map(|r| r.duration_s).sum()
    }

    pub fn n_events(&self) -> usize {
        self.recordings.values().map(|r| r.events.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_recordings: usize,
    pub recording_len_s: f64,
    pub sample_rate: u32,
    pub classes: Vec<EventTemplate>,
    pub events_per_minute: f64,
    pub ebr_db: Vec<f64>,
    pub n_scenes: usize,
    pub background_rms: f64,
    /// Non-target bursts per minute.
    pub clutter_per_minute: f64,
    /// Clutter level range in dB relative to the background.
    pub clutter_db: [f64; 2],
    pub clutter_duration_s: [f64; 2],
    pub id_prefix: String,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        rare_preset(0, 60)
    }
}

fn template(name: &str, kind: TemplateKind, min: f64, max: f64) -> EventTemplate {
    EventTemplate {
        name: name.into(),
        kind,
        min_duration_s: min,
        max_duration_s: max,
    }
}

/// Three classes, one event per minute, EBR in {-6, 0, 6} dB.
pub fn rare_preset(seed: u64, n_recordings: usize) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n_recordings,
        recording_len_s: 30.0,
        sample_rate: 16000,
        classes: vec![
            template("tone", TemplateKind::ToneBurst { freq_hz: 1500.0 }, 0.6, 1.6),
            template("chirp", TemplateKind::Chirp { start_hz: 600.0, end_hz: 3000.0 }, 0.6, 1.6),
            template("hiss", TemplateKind::NoiseBurst { low_hz: 3500.0, high_hz: 6000.0 }, 0.6, 1.6),
        ],
        events_per_minute: 1.0,
        ebr_db: vec![-6.0, 0.0, 6.0],
        n_scenes: 3,
        background_rms: 0.05,
        clutter_per_minute: 4.0,
        clutter_db: [-3.0, 6.0],
        clutter_duration_s: [1.0, 4.0],
        id_prefix: "rec".into(),
    }
}

/// Eleven classes, 55 events per minute, EBR +30 dB.
pub fn dense_preset(seed: u64, n_recordings: usize) -> GeneratorSpec {
    use TemplateKind::*;
    GeneratorSpec {
        seed,
        n_recordings,
        recording_len_s: 60.0,
        sample_rate: 16000,
        classes: vec![
            template("tone_low", ToneBurst { freq_hz: 400.0 }, 0.3, 2.0),
            template("tone_mid", ToneBurst { freq_hz: 1200.0 }, 0.3, 2.0),
            template("tone_high", ToneBurst { freq_hz: 3200.0 }, 0.3, 2.0),
            template("chirp_up", Chirp { start_hz: 500.0, end_hz: 2500.0 }, 0.3, 2.0),
            template("chirp_down", Chirp { start_hz: 5000.0, end_hz: 2000.0 }, 0.3, 2.0),
            template("hiss_low", NoiseBurst { low_hz: 200.0, high_hz: 800.0 }, 0.3, 2.0),
            template("hiss_high", NoiseBurst { low_hz: 4500.0, high_hz: 7000.0 }, 0.3, 2.0),
            template("warble_low", AmTone { carrier_hz: 700.0, mod_hz: 6.0 }, 0.3, 2.0),
            template("warble_high", AmTone { carrier_hz: 2200.0, mod_hz: 11.0 }, 0.3, 2.0),
            template("clicks_slow", ClickTrain { rate_hz: 8.0, click_hz: 3000.0 }, 0.3, 2.0),
            template("clicks_fast", ClickTrain { rate_hz: 30.0, click_hz: 1500.0 }, 0.3, 2.0),
        ],
        events_per_minute: 55.0,
        ebr_db: vec![30.0],
        n_scenes: 3,
        background_rms: 0.003,
        clutter_per_minute: 0.0,
        clutter_db: [0.0, 0.0],
        clutter_duration_s: [1.0, 2.0],
        id_prefix: "rec".into(),
    }
}

/// The rare and dense regimes at desk scale.
pub fn rare_and_dense_presets() -> (GeneratorSpec, GeneratorSpec) {
    (rare_preset(0, 60), dense_preset(0, 20))
}

impl GeneratorSpec {
    pub fn class_list(&self) -> Result<ClassList> {
        ClassList::new(self.classes.iter().map(|c| c.name.clone()))
    }

    pub fn recording_id(&self, index: usize) -> String {
        format!("{}{:04}", self.id_prefix, index)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.events_per_minute >= 0.0 && self.events_per_minute.is_finite()) {
            return bad(format!("events_per_minute must be >= 0, got {}", self.events_per_minute));
        }
        if self.sample_rate == 0 || !(self.recording_len_s > 0.0) {
            return bad("sample rate and recording length must be positive".into());
        }
        if self.n_scenes == 0 {
            return bad("at least one background scene is required".into());
        }
        self.class_list()?;
        for c in &self.classes {
            if c.min_duration_s < 0.2 || c.max_duration_s < c.min_duration_s {
                return bad(format!("class {} needs 0.2 <= min <= max duration", c.name));
            }
            if c.max_duration_s > self.recording_len_s {
                return Err(Error::InfeasiblePlacement {
                    event_s: c.max_duration_s,
                    recording_s: self.recording_len_s,
                });
            }
        }
        if self.events_per_minute > 0.0 && self.ebr_db.is_empty() {
            return bad("ebr_db must not be empty".into());
        }
        if self.clutter_per_minute > 0.0 && self.clutter_duration_s[1] > self.recording_len_s {
            return Err(Error::InfeasiblePlacement {
                event_s: self.clutter_duration_s[1],
                recording_s: self.recording_len_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlacedEvent {
    pub truth: TruthEvent,
    pub start_sample: usize,
    /// Already scaled to the drawn EBR.
    pub samples: Vec<f64>,
    pub ebr_db: f64,
}

/// Unmixed components of one recording.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub recording_id: String,
    pub sample_rate: u32,
    pub background: Vec<f64>,
    pub clutter: Vec<(usize, Vec<f64>)>,
    pub events: Vec<PlacedEvent>,
}

fn poisson_count(rate: f64, rng: &mut impl Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

/// Draws the components of recording `index`.
pub fn synthesize(spec: &GeneratorSpec, index: usize) -> Result<Mixture> {
    spec.validate()?;
    let rec_seed = derive_seed(spec.seed, index as u64);
    let sr = spec.sample_rate as f64;
    let n = (spec.recording_len_s * sr).round() as usize;
    let minutes = spec.recording_len_s / 60.0;

    let mut bg_rng = ChaCha8Rng::seed_from_u64(derive_seed(rec_seed, 1));
    let scene = bg_rng.random_range(0..spec.n_scenes);
    let background = render_background(scene, n, sr, spec.background_rms, &mut bg_rng);

    let mut ev_rng = ChaCha8Rng::seed_from_u64(derive_seed(rec_seed, 2));
    let count = poisson_count(spec.events_per_minute * minutes, &mut ev_rng);
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        let class = ev_rng.random_range(0..spec.classes.len());
        let tpl = &spec.classes[class];
        let dur = ev_rng.random_range(tpl.min_duration_s..=tpl.max_duration_s);
        let len = ((dur * sr).round() as usize).min(n);
        let start = ev_rng.random_range(0..=n - len);
        let ebr_db = spec.ebr_db[ev_rng.random_range(0..spec.ebr_db.len())];
        let mut samples = render_event(&tpl.kind, len, sr, &mut ev_rng);
        let gain = 10f64.powf(ebr_db / 20.0) * rms(&background[start..start + len]) / rms(&samples).max(1e-300);
        samples.iter_mut().for_each(|v| *v *= gain);
        events.push(PlacedEvent {
            truth: TruthEvent {
                class,
                onset_s: start as f64 / sr,
                offset_s: (start + len) as f64 / sr,
            },
            start_sample: start,
            samples,
            ebr_db,
        });
    }

    let mut cl_rng = ChaCha8Rng::seed_from_u64(derive_seed(rec_seed, 3));
    let n_clutter = poisson_count(spec.clutter_per_minute * minutes, &mut cl_rng);
    let mut clutter = Vec::with_capacity(n_clutter);
    for _ in 0..n_clutter {
        let [lo, hi] = spec.clutter_duration_s;
        let len = ((cl_rng.random_range(lo..=hi) * sr).round() as usize).min(n);
        let start = cl_rng.random_range(0..=n - len);
        let level = cl_rng.random_range(spec.clutter_db[0]..=spec.clutter_db[1]);
        let mut x = render_clutter(len, sr, &mut cl_rng);
        let gain = 10f64.powf(level / 20.0) * spec.background_rms / rms(&x).max(1e-300);
        x.iter_mut().for_each(|v| *v *= gain);
        clutter.push((start, x));
    }

    Ok(Mixture {
        recording_id: spec.recording_id(index),
        sample_rate: spec.sample_rate,
        background,
        clutter,
        events,
    })
}

impl Mixture {
    /// Sum of all components, clipped and rounded to 16-bit levels so a WAV
    /// round trip is lossless.
    pub fn mix(&self) -> Result<AudioClip> {
        let mut x = self.background.clone();
        for (start, c) in &self.clutter {
            for (o, v) in x[*start..].iter_mut().zip(c) {
                *o += v;
            }
        }
        for e in &self.events {
            for (o, v) in x[e.start_sample..].iter_mut().zip(&e.samples) {
                *o += v;
            }
        }
        let samples = x
            .iter()
            .map(|&v| quantize_i16(v as f32) as f32 / 32768.0)
            .collect();
        AudioClip::new(self.recording_id.clone(), self.sample_rate, samples)
    }

    pub fn truth(&self) -> RecordingTruth {
        let mut events: Vec<TruthEvent> = self.events.iter().map(|e| e.truth).collect();
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.class.cmp(&b.class)));
        RecordingTruth {
            duration_s: self.background.len() as f64 / self.sample_rate as f64,
            events,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub clips: Vec<AudioClip>,
    pub truth: GroundTruth,
}

pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let indices: Vec<usize> = (0..spec.n_recordings).collect();
    let parts = crate::par_map(&indices, |&i| -> Result<(AudioClip, RecordingTruth)> {
        let m = synthesize(spec, i)?;
        Ok((m.mix()?, m.truth()))
    });
    let mut clips = Vec::with_capacity(parts.len());
    let mut recordings = BTreeMap::new();
    for part in parts {
        let (clip, truth): (AudioClip, RecordingTruth) = part?;
        recordings.insert(clip.recording_id.clone(), truth);
        clips.push(clip);
    }
    Ok(GeneratedCorpus {
        clips,
        truth: GroundTruth {
            classes: spec.class_list()?,
            recordings,
        },
    })
}
