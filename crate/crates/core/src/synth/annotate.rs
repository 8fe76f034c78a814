//! Simulated annotator answering queries from ground truth.

use serde::{Deserialize, Serialize};

use super::{GroundTruth, TruthEvent};
use crate::error::Result;
use crate::labels::LabelSet;

/// Minimum overlap for a weak label; shorter overlaps are treated as
/// imperceptible.
pub const WEAK_MIN_OVERLAP_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationMode {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulatedAnnotation {
    Weak(LabelSet),
    Strong(Vec<TruthEvent>),
}

fn overlap(e: &TruthEvent, start_s: f64, end_s: f64) -> f64 {
    e.offset_s.min(end_s) - e.onset_s.max(start_s)
}

/// Classes overlapping `[start_s, end_s)` by strictly more than 0.1 s.
pub fn weak_labels(events: &[TruthEvent], start_s: f64, end_s: f64) -> LabelSet {
    events
        .iter()
        .filter(|e| overlap(e, start_s, end_s) > WEAK_MIN_OVERLAP_S + 1e-9)
        .map(|e| e.class)
        .collect()
}

/// Events intersecting `[start_s, end_s)`, clipped to it.
pub fn strong_events(events: &[TruthEvent], start_s: f64, end_s: f64) -> Vec<TruthEvent> {
    events
        .iter()
        .filter(|e| overlap(e, start_s, end_s) > 0.0)
        .map(|e| TruthEvent {
            class: e.class,
            onset_s: e.onset_s.max(start_s),
            offset_s: e.offset_s.min(end_s),
        })
        .collect()
}

pub fn simulate_annotation(
    truth: &GroundTruth,
    recording_id: &str,
    start_s: f64,
    end_s: f64,
    mode: AnnotationMode,
) -> Result<SimulatedAnnotation> {
    let events = &truth.recording(recording_id)?.events;
    Ok(match mode {
        AnnotationMode::Weak => SimulatedAnnotation::Weak(weak_labels(events, start_s, end_s)),
        AnnotationMode::Strong => SimulatedAnnotation::Strong(strong_events(events, start_s, end_s)),
    })
}

/// Share of the total duration covered by at least one event.
pub fn positive_fraction(truth: &GroundTruth) -> f64 {
    let mut covered = 0.0;
    for r in truth.recordings.values() {
        let mut spans: Vec<(f64, f64)> = r.events.iter().map(|e| (e.onset_s, e.offset_s)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut current: Option<(f64, f64)> = None;
        for (a, b) in spans {
            match current {
                Some((s, e)) if a <= e => current = Some((s, e.max(b))),
                Some((s, e)) => {
                    covered += e - s;
                    current = Some((a, b));
                }
                None => current = Some((a, b)),
            }
        }
        if let Some((s, e)) = current {
            covered += e - s;
        }
    }
    let total = truth.total_duration_s();
    if total > 0.0 {
        covered / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::labels::ClassList;
    use std::collections::BTreeMap;

    fn ev(class: usize, onset_s: f64, offset_s: f64) -> TruthEvent {
        TruthEvent { class, onset_s, offset_s }
    }

    #[test]
    fn weak_overlap_rule() {
        assert!(weak_labels(&[ev(0, 1.2, 1.7)], 1.0, 3.0).contains(0));
        assert!(weak_labels(&[ev(0, 0.5, 1.1)], 1.0, 3.0).is_empty());
        assert!(weak_labels(&[ev(0, 2.0, 2.05)], 1.0, 3.0).is_empty());
        assert!(weak_labels(&[ev(1, 0.5, 1.10001)], 1.0, 3.0).contains(1));
    }

    #[test]
    fn strong_events_are_clipped() {
        let got = strong_events(&[ev(0, 0.5, 1.5), ev(1, 3.0, 4.0), ev(2, 2.0, 2.5)], 1.0, 3.0);
        assert_eq!(got, vec![ev(0, 1.0, 1.5), ev(2, 2.0, 2.5)]);
    }

    #[test]
    fn simulated_annotator_and_fraction() {
        let mut recordings = BTreeMap::new();
        recordings.insert(
            "a".to_string(),
            super::super::RecordingTruth {
                duration_s: 10.0,
                events: vec![ev(0, 1.0, 3.0), ev(1, 2.0, 4.0)],
            },
        );
        let truth = GroundTruth {
            classes: ClassList::new(["x", "y"]).unwrap(),
            recordings,
        };
        assert!((positive_fraction(&truth) - 0.3).abs() < 1e-12);
        assert!(matches!(
            simulate_annotation(&truth, "b", 0.0, 1.0, AnnotationMode::Weak),
            Err(Error::UnknownRecording(_))
        ));
        let SimulatedAnnotation::Weak(l) = simulate_annotation(&truth, "a", 0.0, 2.5, AnnotationMode::Weak).unwrap() else {
            panic!()
        };
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0, 1]);
    }
}
