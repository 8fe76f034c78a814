//! Threshold decoding of frame probabilities into events.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedEvent {
    pub class: usize,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub threshold: f64,
    /// Inactive gaps shorter than this are filled.
    pub min_gap_s: f64,
    /// Active runs shorter than this (after gap filling) are dropped.
    pub min_duration_s: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_gap_s: 0.1,
            min_duration_s: 0.1,
        }
    }
}

fn runs(active: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &a) in active.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, active.len()));
    }
    out
}

/// Events ordered by onset, then class. Frame `t` spans `[t*hop, (t+1)*hop)`.
pub fn decode_events(probs: ArrayView2<f64>, hop_s: f64, config: &DecodeConfig) -> Vec<DetectedEvent> {
    let mut events = Vec::new();
    for (class, column) in probs.columns().into_iter().enumerate() {
        let active: Vec<bool> = column.iter().map(|&p| p > config.threshold).collect();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for (s, e) in runs(&active) {
            match merged.last_mut() {
                Some(last) if ((s - last.1) as f64) * hop_s < config.min_gap_s - 1e-9 => last.1 = e,
                _ => merged.push((s, e)),
            }
        }
        events.extend(
            merged
                .into_iter()
                .filter(|&(s, e)| ((e - s) as f64) * hop_s >= config.min_duration_s - 1e-9)
                .map(|(s, e)| DetectedEvent {
                    class,
                    onset_s: s as f64 * hop_s,
                    offset_s: e as f64 * hop_s,
                }),
        );
    }
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.class.cmp(&b.class)));
    events
}
