//! Partial-sequence losses, manual backpropagation and the training loop.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{input_rows, ModelConfig, SedModel, ATTENTION_CLIP, PROB_CLIP};
use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::labels::ClassList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Pooled BCE per region against a clip-level target.
    Weak,
    /// Frame-wise BCE; the attention head is unused.
    Strong,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionTarget {
    Weak(Vec<f64>),
    /// One row per region frame.
    Frames(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRegion {
    pub start_frame: usize,
    pub end_frame: usize,
    pub target: RegionTarget,
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub recording_id: String,
    pub embedding: Arc<EmbeddingSequence>,
    pub regions: Vec<AnnotatedRegion>,
}

/// Frame targets for `[start, end)`: a frame is active for a class when its
/// centre lies inside an event of that class.
pub fn frame_targets(
    events: &[(usize, f64, f64)],
    start_frame: usize,
    end_frame: usize,
    hop_s: f64,
    n_classes: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros((end_frame - start_frame, n_classes));
    for (row, t) in (start_frame..end_frame).enumerate() {
        let centre = (t as f64 + 0.5) * hop_s;
        for &(class, onset, offset) in events {
            if onset <= centre && centre < offset {
                out[[row, class]] = 1.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Decoupled decay on weight matrices, applied per step.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            max_epochs: 200,
            min_epochs: 10,
            patience: 10,
            validation_fraction: 1.0 / 3.0,
            weight_decay: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SedModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub n_train_regions: usize,
    pub n_validation_regions: usize,
}

/// Network inputs for the region frames of one example.
struct Prepared {
    x: Array2<f64>,
    /// (first row in `x`, target) per region.
    regions: Vec<(usize, RegionTarget)>,
}

fn prepare(model: &SedModel, ex: &TrainingExample) -> Result<Prepared> {
    let emb = &ex.embedding;
    if emb.dim() != model.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim,
            found: emb.dim(),
        });
    }
    let c = model.n_classes();
    let total: usize = ex.regions.iter().map(|r| r.end_frame.saturating_sub(r.start_frame)).sum();
    let mut x = Array2::zeros((total, model.arch.features()));
    let mut regions = Vec::with_capacity(ex.regions.len());
    let mut row = 0;
    for r in &ex.regions {
        if r.start_frame >= r.end_frame {
            return Err(Error::EmptyRegion);
        }
        if r.end_frame > emb.n_frames() {
            return Err(Error::RegionOutOfBounds {
                start: r.start_frame,
                end: r.end_frame,
                len: emb.n_frames(),
            });
        }
        let len = r.end_frame - r.start_frame;
        let ok = match &r.target {
            RegionTarget::Weak(t) => t.len() == c,
            RegionTarget::Frames(t) => t.dim() == (len, c),
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "target shape does not match region {}..{} with {c} classes",
                r.start_frame, r.end_frame
            )));
        }
        x.slice_mut(s![row..row + len, ..])
            .assign(&input_rows(emb, r.start_frame..r.end_frame, &model.arch));
        regions.push((row, r.target.clone()));
        row += len;
    }
    Ok(Prepared { x, regions })
}

fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn in_clip(p: f64) -> bool {
    (PROB_CLIP..=1.0 - PROB_CLIP).contains(&p)
}

/// Loss of one prepared example; adds its gradient into `grad` when given.
fn prepared_loss(model: &SedModel, prep: &Prepared, grad: Option<&mut [f64]>) -> f64 {
    let act = model.activations(prep.x.view());
    let (n, c) = act.probs.dim();
    let mut d_zc = Array2::<f64>::zeros((n, c));
    let mut d_w = Array2::<f64>::zeros((n, c));
    let mut loss = 0.0;
    for (i, (start, target)) in prep.regions.iter().enumerate() {
        let end = prep.regions.get(i + 1).map_or(n, |r| r.0);
        match target {
            RegionTarget::Weak(tau) => {
                for k in 0..c {
                    let p = act.probs.slice(s![*start..end, k]);
                    let w = act.weights.slice(s![*start..end, k]);
                    let wsum = w.sum();
                    let o = p.iter().zip(w).map(|(p, w)| p * w).sum::<f64>() / wsum;
                    loss += bce(o, tau[k]);
                    if !in_clip(o) {
                        continue;
                    }
                    let g = -tau[k] / o + (1.0 - tau[k]) / (1.0 - o);
                    for t in *start..end {
                        let (pt, wt) = (act.probs[[t, k]], act.weights[[t, k]]);
                        d_zc[[t, k]] += g * wt / wsum * pt * (1.0 - pt);
                        d_w[[t, k]] += g * (pt - o) / wsum;
                    }
                }
            }
            RegionTarget::Frames(tau) => {
                for t in *start..end {
                    for k in 0..c {
                        let p = act.probs[[t, k]];
                        let y = tau[[t - start, k]];
                        loss += bce(p, y);
                        if in_clip(p) {
                            d_zc[[t, k]] += p - y;
                        }
                    }
                }
            }
        }
    }
    let Some(grad) = grad else { return loss };

    let d_za = ndarray::Zip::from(&d_w)
        .and(&act.weights)
        .and(&act.att_scores)
        .map_collect(|&dw, &w, &z| if z.abs() < ATTENTION_CLIP { dw * w } else { 0.0 });
    let b = model.blocks();
    let mut d_h = d_zc.dot(&b.wc.t());
    d_h += &d_za.dot(&b.wa.t());
    ndarray::Zip::from(&mut d_h).and(&act.pre).for_each(|d, &pre| {
        if pre <= 0.0 {
            *d = 0.0;
        }
    });
    let layout = model.arch.layout();
    let mut add = |range: std::ops::Range<usize>, values: &mut dyn Iterator<Item = f64>| {
        for (g, v) in grad[range].iter_mut().zip(values) {
            *g += v;
        }
    };
    add(layout.w1(), &mut prep.x.t().dot(&d_h).into_iter());
    add(layout.b1(), &mut d_h.sum_axis(Axis(0)).into_iter());
    add(layout.wc(), &mut act.hidden.t().dot(&d_zc).into_iter());
    add(layout.bc(), &mut d_zc.sum_axis(Axis(0)).into_iter());
    add(layout.wa(), &mut act.hidden.t().dot(&d_za).into_iter());
    add(layout.ba(), &mut d_za.sum_axis(Axis(0)).into_iter());
    loss
}

/// Loss of one example (summed over its regions) and its gradient with
/// respect to the flat parameter vector.
pub fn loss_and_gradient(model: &SedModel, example: &TrainingExample) -> Result<(f64, Vec<f64>)> {
    let prep = prepare(model, example)?;
    let mut grad = vec![0.0; model.params.len()];
    let loss = prepared_loss(model, &prep, Some(&mut grad));
    Ok((loss, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], decay: &[std::ops::Range<usize>], cfg: &TrainConfig) {
        if cfg.weight_decay > 0.0 {
            let keep = 1.0 - cfg.learning_rate * cfg.weight_decay;
            for r in decay {
                params[r.clone()].iter_mut().for_each(|p| *p *= keep);
            }
        }
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Splits regions into train and validation examples under the seeded rng.
fn split(examples: &[TrainingExample], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let mut keys: Vec<(usize, usize)> = examples
        .iter()
        .enumerate()
        .flat_map(|(e, ex)| (0..ex.regions.len()).map(move |r| (e, r)))
        .collect();
    keys.shuffle(rng);
    let n_val = (keys.len() as f64 * fraction).floor() as usize;
    let val: std::collections::BTreeSet<(usize, usize)> = keys[..n_val].iter().copied().collect();
    let pick = |want_val: bool| -> Vec<TrainingExample> {
        examples
            .iter()
            .enumerate()
            .filter_map(|(e, ex)| {
                let regions: Vec<AnnotatedRegion> = ex
                    .regions
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| val.contains(&(e, *r)) == want_val)
                    .map(|(_, reg)| reg.clone())
                    .collect();
                (!regions.is_empty()).then(|| TrainingExample {
                    recording_id: ex.recording_id.clone(),
                    embedding: ex.embedding.clone(),
                    regions,
                })
            })
            .collect()
    };
    (pick(false), pick(true))
}

/// Trains a fresh model on the annotated regions of `examples`.
///
/// One third of the regions (under `seed`) is held out for early stopping;
/// the parameters with the lowest validation loss are returned.
pub fn train(
    examples: &[TrainingExample],
    classes: &ClassList,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mode: LossMode,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut examples: Vec<TrainingExample> = examples.iter().filter(|e| !e.regions.is_empty()).cloned().collect();
    if examples.is_empty() {
        return Err(Error::NoTrainingData);
    }
    for ex in &examples {
        for r in &ex.regions {
            let matches = matches!(
                (mode, &r.target),
                (LossMode::Weak, RegionTarget::Weak(_)) | (LossMode::Strong, RegionTarget::Frames(_))
            );
            if !matches {
                return Err(Error::Config(format!("region target of {} does not match {mode:?} training", ex.recording_id)));
            }
        }
    }
    examples.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    let input_dim = examples[0].embedding.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SedModel::initialized(model_config, input_dim, classes.clone(), &mut rng);
    let (train_ex, val_ex) = split(&examples, config.validation_fraction, &mut rng);
    let n_train_regions: usize = train_ex.iter().map(|e| e.regions.len()).sum();
    let n_val_regions: usize = val_ex.iter().map(|e| e.regions.len()).sum();
    let train_prep: Vec<Prepared> = train_ex.iter().map(|e| prepare(&model, e)).collect::<Result<_>>()?;
    let val_prep: Vec<Prepared> = val_ex.iter().map(|e| prepare(&model, e)).collect::<Result<_>>()?;

    let mut adam = Adam::new(model.params.len());
    let decay = model.arch.layout().weights();
    let mut best = (f64::INFINITY, model.params.clone(), 0usize);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_prep.len()).collect();
    let batch = config.batch_size.max(1);
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let results = crate::par_map(chunk, |&i| {
                let mut g = vec![0.0; model.params.len()];
                let l = prepared_loss(&model, &train_prep[i], Some(&mut g));
                (l, g)
            });
            let mut grad = vec![0.0; model.params.len()];
            let scale = 1.0 / chunk.len() as f64;
            for (l, g) in &results {
                epoch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b * scale;
                }
            }
            adam.update(&mut model.params, &grad, &decay, config);
        }
        let train_loss = epoch_loss / n_train_regions as f64;
        let validation_loss = if val_prep.is_empty() {
            crate::par_map(&train_prep, |p| prepared_loss(&model, p, None)).iter().sum::<f64>() / n_train_regions as f64
        } else {
            crate::par_map(&val_prep, |p| prepared_loss(&model, p, None)).iter().sum::<f64>() / n_val_regions as f64
        };
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("train {train_loss}, validation {validation_loss}"),
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, model.params.clone(), epoch);
        }
        if epoch >= config.min_epochs && epoch - best.2 >= config.patience {
            break;
        }
    }
    model.params = best.1;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.2,
        n_train_regions,
        n_validation_regions: n_val_regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn classes(n: usize) -> ClassList {
        ClassList::new((0..n).map(|i| format!("c{i}"))).unwrap()
    }

    fn tiny(seed: u64) -> (SedModel, TrainingExample, TrainingExample) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            context: 2,
            hidden: 5,
            ..ModelConfig::default()
        };
        let mut model = SedModel::initialized(&cfg, 6, classes(2), &mut rng);
        for p in &mut model.params {
            *p += rng.random_range(-0.5..0.5);
        }
        let emb = Arc::new(EmbeddingSequence::new(
            "r",
            Array2::from_shape_simple_fn((12, 6), || rng.random_range(-1.0f32..1.0)),
            20.0,
        ));
        let weak = TrainingExample {
            recording_id: "r".into(),
            embedding: emb.clone(),
            regions: vec![
                AnnotatedRegion {
                    start_frame: 1,
                    end_frame: 5,
                    target: RegionTarget::Weak(vec![1.0, 0.0]),
                },
                AnnotatedRegion {
                    start_frame: 7,
                    end_frame: 12,
                    target: RegionTarget::Weak(vec![0.0, 1.0]),
                },
            ],
        };
        let mut frames = Array2::zeros((4, 2));
        frames[[1, 0]] = 1.0;
        frames[[2, 1]] = 1.0;
        let strong = TrainingExample {
            recording_id: "r".into(),
            embedding: emb,
            regions: vec![
                AnnotatedRegion {
                    start_frame: 0,
                    end_frame: 4,
                    target: RegionTarget::Frames(frames),
                },
                AnnotatedRegion {
                    start_frame: 8,
                    end_frame: 11,
                    target: RegionTarget::Frames(Array2::ones((3, 2))),
                },
            ],
        };
        (model, weak, strong)
    }

    fn max_rel_error(model: &SedModel, ex: &TrainingExample) -> f64 {
        let (_, grad) = loss_and_gradient(model, ex).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            let numeric = (loss_and_gradient(&plus, ex).unwrap().0 - loss_and_gradient(&minus, ex).unwrap().0) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (model, weak, strong) = tiny(seed);
            assert!(max_rel_error(&model, &weak) < 1e-4, "weak seed {seed}");
            assert!(max_rel_error(&model, &strong) < 1e-4, "strong seed {seed}");
        }
    }

    #[test]
    fn strong_loss_is_framewise_bce_and_skips_attention() {
        let (model, _, strong) = tiny(3);
        let (loss, grad) = loss_and_gradient(&model, &strong).unwrap();
        let (p, _) = model.forward(&strong.embedding).unwrap();
        let mut expected = 0.0;
        for r in &strong.regions {
            let RegionTarget::Frames(t) = &r.target else { unreachable!() };
            for f in r.start_frame..r.end_frame {
                for k in 0..2 {
                    expected += bce(p[[f, k]], t[[f - r.start_frame, k]]);
                }
            }
        }
        assert!((loss - expected).abs() < 1e-10);
        let att = model.arch.attention_params();
        assert!(grad[att].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn far_frames_do_not_affect_loss() {
        let (model, weak, _) = tiny(1);
        // Regions are [1,5) and [7,12) with c = 2; extend the sequence so
        // some frames lie out of reach.
        let mut values = Array2::zeros((30, 6));
        values.slice_mut(s![..12, ..]).assign(&weak.embedding.values);
        let mut ex = weak.clone();
        ex.embedding = Arc::new(EmbeddingSequence::new("r", values.clone(), 20.0));
        let (l1, _) = loss_and_gradient(&model, &ex).unwrap();
        values.slice_mut(s![15.., ..]).fill(7.5);
        ex.embedding = Arc::new(EmbeddingSequence::new("r", values, 20.0));
        let (l2, _) = loss_and_gradient(&model, &ex).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = Arc::new(EmbeddingSequence::new(
            "r",
            Array2::from_shape_simple_fn((20, 4), || rng.random_range(-1.0f32..1.0)),
            20.0,
        ));
        let ex = TrainingExample {
            recording_id: "r".into(),
            embedding: emb,
            regions: vec![AnnotatedRegion {
                start_frame: 2,
                end_frame: 10,
                target: RegionTarget::Weak(vec![1.0]),
            }],
        };
        let cfg = TrainConfig {
            min_epochs: 200,
            ..TrainConfig::default()
        };
        let mc = ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        };
        let a = train(std::slice::from_ref(&ex), &classes(1), &mc, &cfg, LossMode::Weak, 7).unwrap();
        assert_eq!(a.history.len(), 200);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        let b = train(&[ex], &classes(1), &mc, &cfg, LossMode::Weak, 7).unwrap();
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn training_errors() {
        let (_, mut weak, _) = tiny(0);
        let mc = ModelConfig::default();
        assert!(matches!(
            train(&[weak.clone()], &classes(2), &mc, &TrainConfig::default(), LossMode::Strong, 0),
            Err(Error::Config(_))
        ));
        weak.regions.clear();
        assert!(matches!(
            train(&[weak], &classes(2), &mc, &TrainConfig::default(), LossMode::Weak, 0),
            Err(Error::NoTrainingData)
        ));
    }

    #[test]
    fn frame_targets_use_frame_centres() {
        let t = frame_targets(&[(1, 0.05, 0.11)], 0, 8, 0.02, 2);
        let active: Vec<usize> = (0..8).filter(|&i| t[[i, 1]] == 1.0).collect();
        assert_eq!(active, vec![2, 3, 4]);
        assert!(t.column(0).iter().all(|&v| v == 0.0));
    }
}
