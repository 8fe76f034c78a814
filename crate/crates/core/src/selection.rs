//! Batch selection: mismatch-first farthest traversal, random sampling and
//! uncertainty sampling.
//!
//! Segment ids double as indices (`segments[i].id == i`), so "lowest id"
//! tie-breaking is "lowest index". Predictions for a batch are computed once
//! and frozen; only the distance-to-selected term evolves while the batch is
//! assembled.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{jaccard_similarity, LabelSet};
use crate::model::DetectedEvent;
use crate::segmentation::{cosine_distance, CandidateSegment, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Mfft,
    Random,
    Uncertainty,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Mfft => "mfft",
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
        }
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, Strategy::Random)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "value", rename_all = "kebab-case")]
pub enum BatchQuota {
    /// Total seconds of audio per batch.
    Seconds(f64),
    /// Number of segments per batch.
    Count(usize),
}

impl BatchQuota {
    fn reached(&self, picked: usize, seconds: f64) -> bool {
        match *self {
            BatchQuota::Seconds(q) => seconds >= q - 1e-9,
            BatchQuota::Count(n) => picked >= n,
        }
    }
}

/// Pairwise distance between segments addressed by index.
pub trait SegmentDistance {
    fn distance(&self, a: usize, b: usize) -> f64;
}

/// Cosine distance of segment mean embeddings.
pub struct MeanEmbeddingDistance<'a> {
    means: Vec<&'a [f64]>,
}

impl<'a> MeanEmbeddingDistance<'a> {
    pub fn new(segments: &'a [CandidateSegment]) -> Self {
        Self {
            means: segments.iter().map(|s| s.mean_embedding.as_slice()).collect(),
        }
    }
}

impl SegmentDistance for MeanEmbeddingDistance<'_> {
    fn distance(&self, a: usize, b: usize) -> f64 {
        cosine_distance(self.means[a], self.means[b])
    }
}

/// Dense symmetric matrix, mostly for tests and small pools.
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        Self { n, values }
    }
}

impl SegmentDistance for DistanceMatrix {
    fn distance(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub segment_id: SegmentId,
    /// Prediction similarity of the pick (mfft after the first batch only).
    pub j_value: Option<f64>,
    /// `d(x, S)` at pick time; absent for the random seed of a traversal and
    /// for strategies that do not use distances.
    pub distance_to_selected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    pub picks: Vec<Pick>,
    /// True when the pool ran out before the quota was met.
    pub exhausted: bool,
}

impl BatchSelection {
    pub fn ids(&self) -> Vec<SegmentId> {
        self.picks.iter().map(|p| p.segment_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub segment_id: SegmentId,
    pub model_labels: LabelSet,
    pub propagated_labels: LabelSet,
    pub similarity: f64,
}

/// Partition of all candidates into annotated, picked-in-open-batch, and
/// unlabeled segments.
#[derive(Debug, Clone)]
pub struct SelectionState {
    durations: Vec<f64>,
    annotated: BTreeMap<SegmentId, LabelSet>,
    selected_in_batch: Vec<SegmentId>,
    unlabeled: BTreeSet<SegmentId>,
    seed: u64,
    batches_drawn: u64,
}

impl SelectionState {
    pub fn new(segments: &[CandidateSegment], seed: u64) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if s.id.0 as usize != i {
                return Err(Error::Config(format!("segment ids must be 0..N in order; found {} at {i}", s.id)));
            }
        }
        Ok(Self {
            durations: segments.iter().map(|s| s.duration_s()).collect(),
            annotated: BTreeMap::new(),
            selected_in_batch: Vec::new(),
            unlabeled: (0..segments.len() as u32).map(SegmentId).collect(),
            seed,
            batches_drawn: 0,
        })
    }

    /// Builds a state directly from per-segment durations.
    pub fn from_durations(durations: Vec<f64>, seed: u64) -> Self {
        let n = durations.len() as u32;
        Self {
            durations,
            annotated: BTreeMap::new(),
            selected_in_batch: Vec::new(),
            unlabeled: (0..n).map(SegmentId).collect(),
            seed,
            batches_drawn: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn duration(&self, id: SegmentId) -> f64 {
        self.durations[id.0 as usize]
    }

    pub fn annotated(&self) -> &BTreeMap<SegmentId, LabelSet> {
        &self.annotated
    }

    pub fn selected_in_batch(&self) -> &[SegmentId] {
        &self.selected_in_batch
    }

    pub fn unlabeled(&self) -> &BTreeSet<SegmentId> {
        &self.unlabeled
    }

    pub fn batches_drawn(&self) -> u64 {
        self.batches_drawn
    }

    /// Restores the batch counter that drives the per-batch rng streams.
    pub fn set_batches_drawn(&mut self, n: u64) {
        self.batches_drawn = n;
    }

    pub fn labeled_duration(&self) -> f64 {
        self.annotated.keys().map(|&id| self.duration(id)).sum()
    }

    pub fn unlabeled_duration(&self) -> f64 {
        self.unlabeled.iter().map(|&id| self.duration(id)).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Records labels for a segment of the open batch (or, for replay, any
    /// unlabeled segment).
    pub fn annotate(&mut self, id: SegmentId, labels: LabelSet) -> Result<()> {
        if id.0 as usize >= self.durations.len() {
            return Err(Error::UnknownSegment(id.0));
        }
        if self.annotated.contains_key(&id) {
            return Err(Error::AlreadyAnnotated(id.0));
        }
        if let Some(pos) = self.selected_in_batch.iter().position(|&s| s == id) {
            self.selected_in_batch.remove(pos);
        } else if !self.unlabeled.remove(&id) {
            return Err(Error::UnknownSegment(id.0));
        }
        self.annotated.insert(id, labels);
        Ok(())
    }

    /// Returns un-annotated picks of the open batch to the pool.
    pub fn abandon_batch(&mut self) {
        for id in self.selected_in_batch.drain(..) {
            self.unlabeled.insert(id);
        }
    }

    /// Moves segments into the open batch without running a strategy.
    pub fn take(&mut self, ids: &[SegmentId]) -> Result<()> {
        for &id in ids {
            if !self.unlabeled.remove(&id) {
                return Err(Error::UnknownSegment(id.0));
            }
            self.selected_in_batch.push(id);
        }
        Ok(())
    }

    fn next_rng(&mut self) -> ChaCha8Rng {
        let stream = self.seed ^ self.batches_drawn.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.batches_drawn += 1;
        ChaCha8Rng::seed_from_u64(stream)
    }

    fn commit(&mut self, picks: &[Pick]) {
        for p in picks {
            self.unlabeled.remove(&p.segment_id);
            self.selected_in_batch.push(p.segment_id);
        }
    }
}

/// Labels of the nearest annotated segment for every unlabeled segment.
pub fn propagate_labels(
    state: &SelectionState,
    distance: &dyn SegmentDistance,
) -> Result<BTreeMap<SegmentId, LabelSet>> {
    if state.annotated.is_empty() {
        return Err(Error::NoAnnotations);
    }
    Ok(state
        .unlabeled
        .iter()
        .map(|&x| {
            let mut best: Option<(f64, &LabelSet)> = None;
            for (y, labels) in &state.annotated {
                let d = distance.distance(x.0 as usize, y.0 as usize);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, labels));
                }
            }
            (x, best.expect("annotated is non-empty").1.clone())
        })
        .collect())
}

/// Classes of detected events overlapping the segment by at least `min_overlap_s`.
pub fn derive_model_labels(events: &[DetectedEvent], segment: &CandidateSegment, min_overlap_s: f64) -> LabelSet {
    events
        .iter()
        .filter(|e| e.offset_s.min(segment.end_s) - e.onset_s.max(segment.start_s) >= min_overlap_s - 1e-9)
        .map(|e| e.class)
        .collect()
}

/// Pairs model-predicted and propagated labels with their Jaccard similarity.
pub fn prediction_pairs(
    model_labels: &BTreeMap<SegmentId, LabelSet>,
    propagated: &BTreeMap<SegmentId, LabelSet>,
) -> Vec<PredictionPair> {
    propagated
        .iter()
        .map(|(&id, b)| {
            let a = model_labels.get(&id).cloned().unwrap_or_default();
            PredictionPair {
                segment_id: id,
                similarity: jaccard_similarity(&a, b),
                model_labels: a,
                propagated_labels: b.clone(),
            }
        })
        .collect()
}

/// `min_c 2|o_c - 0.5|`.
pub fn certainty(pooled: &[f64]) -> f64 {
    pooled
        .iter()
        .map(|o| 2.0 * (o - 0.5).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Greedy farthest traversal, optionally tiered by ascending prediction
/// similarity. `pool` must be sorted ascending; `selected` seeds `S`.
pub fn farthest_traversal(
    pool: &[usize],
    selected: &[usize],
    tiers: Option<&BTreeMap<usize, f64>>,
    durations: &[f64],
    quota: BatchQuota,
    distance: &dyn SegmentDistance,
    rng: &mut impl Rng,
) -> Vec<Pick> {
    let mut min_d: Vec<f64> = pool
        .iter()
        .map(|&x| {
            selected
                .iter()
                .map(|&y| distance.distance(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut picks = Vec::new();
    let mut seconds = 0.0;
    let j_of = |x: usize| tiers.map(|t| t.get(&x).copied().unwrap_or(1.0));

    let mut push = |slot: usize, dist: Option<f64>, taken: &mut Vec<bool>, min_d: &mut Vec<f64>| {
        let x = pool[slot];
        taken[slot] = true;
        picks.push(Pick {
            segment_id: SegmentId(x as u32),
            j_value: j_of(x),
            distance_to_selected: dist,
        });
        seconds += durations[x];
        for (k, &other) in pool.iter().enumerate() {
            if !taken[k] {
                let d = distance.distance(other, x);
                if d < min_d[k] {
                    min_d[k] = d;
                }
            }
        }
        (picks.len(), seconds)
    };

    let mut state = (0usize, 0.0f64);
    if selected.is_empty() && !pool.is_empty() {
        let slot = rng.random_range(0..pool.len());
        state = push(slot, None, &mut taken, &mut min_d);
    }
    while !quota.reached(state.0, state.1) {
        let tier = (0..pool.len())
            .filter(|&k| !taken[k])
            .map(|k| j_of(pool[k]).unwrap_or(0.0))
            .fold(None, |acc: Option<f64>, j| Some(acc.map_or(j, |a| a.min(j))));
        let Some(tier) = tier else { break };
        let mut best: Option<usize> = None;
        for k in 0..pool.len() {
            if taken[k] || j_of(pool[k]).unwrap_or(0.0) != tier {
                continue;
            }
            if best.is_none_or(|b| min_d[k] > min_d[b]) {
                best = Some(k);
            }
        }
        let slot = best.expect("tier is non-empty");
        let d = min_d[slot];
        state = push(slot, Some(d), &mut taken, &mut min_d);
    }
    picks
}

/// Fills the quota from `order`, which is already ranked.
fn take_until(order: impl IntoIterator<Item = usize>, durations: &[f64], quota: BatchQuota) -> Vec<Pick> {
    let mut picks = Vec::new();
    let mut seconds = 0.0;
    for x in order {
        if quota.reached(picks.len(), seconds) {
            break;
        }
        seconds += durations[x];
        picks.push(Pick {
            segment_id: SegmentId(x as u32),
            j_value: None,
            distance_to_selected: None,
        });
    }
    picks
}

/// Per-segment model outputs used by the model-driven strategies.
#[derive(Debug, Clone, Default)]
pub struct ModelOutputs {
    pub predictions: Option<Vec<PredictionPair>>,
    pub pooled: Option<BTreeMap<SegmentId, Vec<f64>>>,
}

/// Chooses the next batch and moves it into the open batch of `state`.
///
/// Without predictions, mfft falls back to pure farthest traversal and
/// uncertainty falls back to random sampling.
pub fn select_batch(
    strategy: Strategy,
    state: &mut SelectionState,
    outputs: &ModelOutputs,
    quota: BatchQuota,
    distance: &dyn SegmentDistance,
) -> Result<BatchSelection> {
    if state.unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = state.next_rng();
    let pool: Vec<usize> = state.unlabeled.iter().map(|s| s.0 as usize).collect();
    let picks = match strategy {
        Strategy::Mfft => {
            let tiers: Option<BTreeMap<usize, f64>> = outputs.predictions.as_ref().map(|preds| {
                preds
                    .iter()
                    .map(|p| (p.segment_id.0 as usize, p.similarity))
                    .collect()
            });
            if tiers.is_none() && !state.annotated.is_empty() {
                return Err(Error::MissingPredictions("mfft"));
            }
            let mut selected: Vec<usize> = state.annotated.keys().map(|s| s.0 as usize).collect();
            selected.extend(state.selected_in_batch.iter().map(|s| s.0 as usize));
            farthest_traversal(&pool, &selected, tiers.as_ref(), &state.durations, quota, distance, &mut rng)
        }
        Strategy::Random => random_order(&pool, &state.durations, quota, &mut rng),
        Strategy::Uncertainty => match &outputs.pooled {
            None if state.annotated.is_empty() => random_order(&pool, &state.durations, quota, &mut rng),
            None => return Err(Error::MissingPredictions("uncertainty")),
            Some(pooled) => {
                let mut ranked: Vec<(f64, usize)> = pool
                    .iter()
                    .map(|&x| {
                        let c = pooled
                            .get(&SegmentId(x as u32))
                            .map(|o| certainty(o))
                            .unwrap_or(f64::INFINITY);
                        (c, x)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                take_until(ranked.into_iter().map(|(_, x)| x), &state.durations, quota)
            }
        },
    };
    let picked_seconds: f64 = picks.iter().map(|p| state.durations[p.segment_id.0 as usize]).sum();
    let exhausted = picks.len() == pool.len() && !quota.reached(picks.len(), picked_seconds);
    state.commit(&picks);
    Ok(BatchSelection { picks, exhausted })
}

fn random_order(pool: &[usize], durations: &[f64], quota: BatchQuota, rng: &mut ChaCha8Rng) -> Vec<Pick> {
    let mut order = pool.to_vec();
    order.shuffle(rng);
    take_until(order, durations, quota)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: u32, start: f64, end: f64, mean: Vec<f64>) -> CandidateSegment {
        CandidateSegment {
            id: SegmentId(id),
            recording_id: "r".into(),
            start_frame: (start * 50.0) as usize,
            end_frame: (end * 50.0) as usize,
            start_s: start,
            end_s: end,
            mean_embedding: mean,
        }
    }

    fn labels(v: &[usize]) -> LabelSet {
        v.iter().copied().collect()
    }

    #[test]
    fn propagation_single_source_and_ties() {
        let segs: Vec<CandidateSegment> = (0..4).map(|i| seg(i, i as f64, i as f64 + 1.0, vec![1.0, i as f64])).collect();
        let mut st = SelectionState::new(&segs, 0).unwrap();
        let dist = MeanEmbeddingDistance::new(&segs);
        assert!(matches!(propagate_labels(&st, &dist), Err(Error::NoAnnotations)));
        st.annotate(SegmentId(2), labels(&[0])).unwrap();
        let prop = propagate_labels(&st, &dist).unwrap();
        assert_eq!(prop.len(), 3);
        assert!(prop.values().all(|l| *l == labels(&[0])));

        // Exact tie between a1 (id 0) and a2 (id 2) resolves to the lower id.
        let m = DistanceMatrix::new(3, vec![0.0, 0.5, 0.3, 0.5, 0.0, 0.5, 0.3, 0.5, 0.0]);
        let mut st = SelectionState::from_durations(vec![1.0; 3], 0);
        st.annotate(SegmentId(0), labels(&[1])).unwrap();
        st.annotate(SegmentId(2), labels(&[2])).unwrap();
        assert_eq!(propagate_labels(&st, &m).unwrap()[&SegmentId(1)], labels(&[1]));
    }

    #[test]
    fn propagation_matches_nearest_neighbour_on_a_line() {
        let segs: Vec<CandidateSegment> = (0..5)
            .map(|i| {
                let angle = i as f64 * 0.3;
                seg(i, 0.0, 1.0, vec![angle.cos(), angle.sin()])
            })
            .collect();
        let dist = MeanEmbeddingDistance::new(&segs);
        let mut st = SelectionState::new(&segs, 0).unwrap();
        st.annotate(SegmentId(0), labels(&[0])).unwrap();
        st.annotate(SegmentId(4), labels(&[1])).unwrap();
        let prop = propagate_labels(&st, &dist).unwrap();
        for x in 1..4u32 {
            let d0 = cosine_distance(&segs[x as usize].mean_embedding, &segs[0].mean_embedding);
            let d4 = cosine_distance(&segs[x as usize].mean_embedding, &segs[4].mean_embedding);
            let expected = if d0 <= d4 { labels(&[0]) } else { labels(&[1]) };
            assert_eq!(prop[&SegmentId(x)], expected, "x={x}");
        }
    }

    #[test]
    fn model_labels_from_overlap() {
        let s = seg(0, 5.0, 8.0, vec![1.0]);
        assert!(derive_model_labels(&[], &s, 0.02).is_empty());
        let spanning = DetectedEvent { class: 2, onset_s: 5.0, offset_s: 8.0 };
        assert_eq!(derive_model_labels(&[spanning], &s, 0.02), labels(&[2]));
        let early = DetectedEvent { class: 1, onset_s: 4.99, offset_s: 5.5 };
        assert_eq!(derive_model_labels(&[early], &s, 0.02), labels(&[1]));
        let touching = DetectedEvent { class: 1, onset_s: 4.0, offset_s: 5.01 };
        assert!(derive_model_labels(&[touching], &s, 0.02).is_empty());
    }

    #[test]
    fn farthest_traversal_single_comparison() {
        // s = 0, a = 1 (d=0.2), b = 2 (d=0.7).
        let m = DistanceMatrix::new(3, vec![0.0, 0.2, 0.7, 0.2, 0.0, 0.6, 0.7, 0.6, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picks = farthest_traversal(&[1, 2], &[0], None, &[1.0; 3], BatchQuota::Count(1), &m, &mut rng);
        assert_eq!(picks[0].segment_id, SegmentId(2));
        assert_eq!(picks[0].distance_to_selected, Some(0.7));
    }

    #[test]
    fn mismatch_tier_comes_first() {
        // Segment 4 is annotated; J = (0, 0, 0.5, 1) over segments 0..4.
        let pts: [f64; 5] = [0.1, 0.9, 0.5, 0.7, 0.0];
        let n = 5;
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = (pts[i] - pts[j]).abs();
            }
        }
        let m = DistanceMatrix::new(n, v);
        let mut st = SelectionState::from_durations(vec![2.0; 5], 3);
        st.annotate(SegmentId(4), labels(&[])).unwrap();
        let preds: Vec<PredictionPair> = [0.0, 0.0, 0.5, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &j)| PredictionPair {
                segment_id: SegmentId(i as u32),
                model_labels: LabelSet::empty(),
                propagated_labels: LabelSet::empty(),
                similarity: j,
            })
            .collect();
        let out = ModelOutputs {
            predictions: Some(preds),
            pooled: None,
        };
        let batch = select_batch(Strategy::Mfft, &mut st, &out, BatchQuota::Seconds(4.0), &m).unwrap();
        assert_eq!(batch.ids(), vec![SegmentId(1), SegmentId(0)]);
        assert_eq!(batch.picks[0].j_value, Some(0.0));
        assert!(!batch.exhausted);
        assert_eq!(st.selected_in_batch(), &[SegmentId(1), SegmentId(0)]);
        assert_eq!(st.unlabeled().len(), 2);
    }

    #[test]
    fn uncertainty_prefers_least_certain() {
        assert_eq!(certainty(&[0.5, 0.9]), 0.0);
        assert!((certainty(&[0.3, 0.9]) - 0.4).abs() < 1e-12);
        let m = DistanceMatrix::new(2, vec![0.0; 4]);
        let mut st = SelectionState::from_durations(vec![1.0; 2], 0);
        st.annotate(SegmentId(1), labels(&[])).unwrap();
        st.abandon_batch();
        let mut st = SelectionState::from_durations(vec![1.0; 3], 0);
        st.annotate(SegmentId(2), labels(&[])).unwrap();
        let pooled: BTreeMap<SegmentId, Vec<f64>> =
            [(SegmentId(0), vec![0.3, 0.9]), (SegmentId(1), vec![0.5, 0.9])].into_iter().collect();
        let out = ModelOutputs {
            predictions: None,
            pooled: Some(pooled),
        };
        let m3 = DistanceMatrix::new(3, vec![0.0; 9]);
        let batch = select_batch(Strategy::Uncertainty, &mut st, &out, BatchQuota::Count(1), &m3).unwrap();
        assert_eq!(batch.ids(), vec![SegmentId(1)]);
        drop(m);
    }

    #[test]
    fn exhaustion_and_empty_pool() {
        let m = DistanceMatrix::new(3, vec![0.5; 9]);
        let mut st = SelectionState::from_durations(vec![1.0; 3], 9);
        let batch = select_batch(Strategy::Random, &mut st, &ModelOutputs::default(), BatchQuota::Seconds(10.0), &m).unwrap();
        assert_eq!(batch.picks.len(), 3);
        assert!(batch.exhausted);
        assert!(matches!(
            select_batch(Strategy::Random, &mut st, &ModelOutputs::default(), BatchQuota::Seconds(1.0), &m),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn strategies_are_deterministic() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let v: Vec<f64> = (0..n * n).map(|k| (pts[k / n] - pts[k % n]).abs()).collect();
        let m = DistanceMatrix::new(n, v);
        for strategy in [Strategy::Mfft, Strategy::Random, Strategy::Uncertainty] {
            let run = || {
                let mut st = SelectionState::from_durations(vec![1.5; n], 42);
                let a = select_batch(strategy, &mut st, &ModelOutputs::default(), BatchQuota::Seconds(6.0), &m).unwrap();
                let b = select_batch(strategy, &mut st, &ModelOutputs::default(), BatchQuota::Seconds(6.0), &m);
                (a.ids(), b.map(|b| b.ids()).ok())
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn abandon_returns_picks_to_pool() {
        let m = DistanceMatrix::new(4, vec![0.5; 16]);
        let mut st = SelectionState::from_durations(vec![1.0; 4], 1);
        let batch = select_batch(Strategy::Random, &mut st, &ModelOutputs::default(), BatchQuota::Count(2), &m).unwrap();
        st.annotate(batch.picks[0].segment_id, labels(&[0])).unwrap();
        st.abandon_batch();
        assert_eq!(st.unlabeled().len(), 3);
        assert!(st.selected_in_batch().is_empty());
        assert_eq!(st.labeled_duration(), 1.0);
    }
}
