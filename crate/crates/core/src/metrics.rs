//! Segment-based error rate over one-second evaluation segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVAL_SEGMENT_S: f64 = 1.0;

/// Per-class activity of each one-second segment, segment-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRoll {
    n_segments: usize,
    n_classes: usize,
    active: Vec<bool>,
}

impl EventRoll {
    pub fn empty(n_segments: usize, n_classes: usize) -> Self {
        Self {
            n_segments,
            n_classes,
            active: vec![false; n_segments * n_classes],
        }
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, segment: usize, class: usize) -> bool {
        self.active[segment * self.n_classes + class]
    }

    pub fn set(&mut self, segment: usize, class: usize, value: bool) {
        self.active[segment * self.n_classes + class] = value;
    }
}

/// Number of evaluation segments; a trailing partial second counts fully.
pub fn segment_count(duration_s: f64) -> usize {
    ((duration_s - 1e-9) / EVAL_SEGMENT_S).ceil().max(0.0) as usize
}

/// Marks segment `k` active for a class when an event of that class
/// intersects `[k, k+1)` with positive length.
pub fn build_roll(
    events: impl IntoIterator<Item = (usize, f64, f64)>,
    duration_s: f64,
    n_classes: usize,
) -> Result<EventRoll> {
    let mut roll = EventRoll::empty(segment_count(duration_s), n_classes);
    for (class, onset, offset) in events {
        if onset < -1e-9 || offset > duration_s + 1e-9 || offset < onset {
            return Err(Error::EventOutOfBounds {
                onset,
                offset,
                duration: duration_s,
            });
        }
        if class >= n_classes {
            return Err(Error::UnknownClass(format!("class index {class}")));
        }
        if offset <= onset {
            continue;
        }
        let first = (onset / EVAL_SEGMENT_S).floor().max(0.0) as usize;
        let last = ((offset / EVAL_SEGMENT_S).ceil() as usize).min(roll.n_segments);
        for k in first..last {
            roll.set(k, class, true);
        }
    }
    Ok(roll)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErCounts {
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub n_ref: u64,
}

impl ErCounts {
    /// `None` when the reference has no active pairs.
    pub fn error_rate(&self) -> Option<f64> {
        (self.n_ref > 0)
            .then(|| (self.substitutions + self.deletions + self.insertions) as f64 / self.n_ref as f64)
    }

    pub fn add(&mut self, other: &ErCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.n_ref += other.n_ref;
    }
}

impl std::iter::Sum for ErCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ErCounts::default(), |mut acc, c| {
            acc.add(&c);
            acc
        })
    }
}

pub fn error_rate(reference: &EventRoll, hypothesis: &EventRoll) -> Result<ErCounts> {
    if reference.n_segments != hypothesis.n_segments || reference.n_classes != hypothesis.n_classes {
        return Err(Error::ShapeMismatch(format!(
            "reference roll {}x{} vs hypothesis {}x{}",
            reference.n_segments, reference.n_classes, hypothesis.n_segments, hypothesis.n_classes
        )));
    }
    let mut counts = ErCounts::default();
    for k in 0..reference.n_segments {
        let (mut fn_, mut fp) = (0u64, 0u64);
        for c in 0..reference.n_classes {
            match (reference.get(k, c), hypothesis.get(k, c)) {
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                _ => {}
            }
            counts.n_ref += reference.get(k, c) as u64;
        }
        counts.substitutions += fn_.min(fp);
        counts.deletions += fn_.saturating_sub(fp);
        counts.insertions += fp.saturating_sub(fn_);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn active_segments(roll: &EventRoll, class: usize) -> Vec<usize> {
        (0..roll.n_segments()).filter(|&k| roll.get(k, class)).collect()
    }

    #[test]
    fn roll_examples() {
        let r = build_roll([], 3.0, 2).unwrap();
        assert_eq!(r.n_segments(), 3);
        assert!((0..3).all(|k| !r.get(k, 0) && !r.get(k, 1)));
        let r = build_roll([(0, 0.2, 0.8)], 3.0, 1).unwrap();
        assert_eq!(active_segments(&r, 0), vec![0]);
        let r = build_roll([(0, 0.9, 2.1)], 3.0, 1).unwrap();
        assert_eq!(active_segments(&r, 0), vec![0, 1, 2]);
        let r = build_roll([(0, 1.0, 2.0)], 3.0, 1).unwrap();
        assert_eq!(active_segments(&r, 0), vec![1]);
        assert_eq!(build_roll([], 2.5, 1).unwrap().n_segments(), 3);
        assert!(matches!(build_roll([(0, 2.0, 3.5)], 3.0, 1), Err(Error::EventOutOfBounds { .. })));
    }

    #[test]
    fn error_rate_examples() {
        let r = build_roll([(0, 0.0, 2.0), (1, 4.0, 5.0)], 5.0, 2).unwrap();
        assert_eq!(error_rate(&r, &r).unwrap().error_rate(), Some(0.0));

        let r10 = build_roll([(0, 0.0, 5.0), (1, 0.0, 5.0)], 5.0, 2).unwrap();
        let empty = EventRoll::empty(5, 2);
        let c = error_rate(&r10, &empty).unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions, c.n_ref), (0, 10, 0, 10));
        assert_eq!(c.error_rate(), Some(1.0));

        // Reference {A},{A},{} against {A},{B},{B}.
        let reference = build_roll([(0, 0.0, 2.0)], 3.0, 2).unwrap();
        let hyp = build_roll([(0, 0.0, 1.0), (1, 1.0, 3.0)], 3.0, 2).unwrap();
        let c = error_rate(&reference, &hyp).unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions, c.n_ref), (1, 0, 1, 2));
        assert_eq!(c.error_rate(), Some(1.0));

        assert_eq!(ErCounts::default().error_rate(), None);
        assert!(error_rate(&EventRoll::empty(3, 2), &EventRoll::empty(4, 2)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn insertions_never_lower_er(
            bits in proptest::collection::vec(proptest::bool::ANY, 24),
            hyp_bits in proptest::collection::vec(proptest::bool::ANY, 24),
            cell in 0usize..24,
        ) {
            let mut reference = EventRoll::empty(8, 3);
            let mut hyp = EventRoll::empty(8, 3);
            reference.set(0, 0, true);
            for i in 0..24 {
                if bits[i] { reference.set(i / 3, i % 3, true); }
                if hyp_bits[i] { hyp.set(i / 3, i % 3, true); }
            }
            let base = error_rate(&reference, &hyp).unwrap().error_rate().unwrap();
            proptest::prop_assert_eq!(error_rate(&reference, &reference).unwrap().error_rate(), Some(0.0));
            let (k, c) = (cell / 3, cell % 3);
            if !reference.get(k, c) {
                hyp.set(k, c, true);
                let after = error_rate(&reference, &hyp).unwrap().error_rate().unwrap();
                proptest::prop_assert!(after >= base);
            }
        }
    }
}
