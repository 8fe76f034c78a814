//! Attention-pooled frame classifier.
//!
//! Each frame sees its embedding stacked with `c` neighbours on each side
//! (edge-clamped), passes through one ReLU layer, and feeds two heads: a
//! logistic classifier giving `p_t` and an exponentiated attention score
//! giving `w_t`. Parameters live in one flat vector so the optimizer,
//! checkpointing and gradient checks can treat them uniformly.

mod checkpoint;
mod decode;
mod train;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::labels::ClassList;

pub use checkpoint::SEDM_MAGIC;
pub use decode::{decode_events, DecodeConfig, DetectedEvent};
pub use train::{
    frame_targets, loss_and_gradient, train, AnnotatedRegion, EpochStats, LossMode, RegionTarget, TrainConfig,
    TrainOutcome, TrainingExample,
};

pub const PROB_CLIP: f64 = 1e-7;
pub const ATTENTION_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub context: usize,
    pub hidden: usize,
    /// Append `y_t - mean(y)` over the whole input sequence to each frame.
    pub sequence_offset: bool,
    /// Initial classifier bias, i.e. the logit of the prior event probability.
    pub classifier_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            context: 2,
            hidden: 64,
            sequence_offset: false,
            classifier_bias_init: -3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub context: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub sequence_offset: bool,
}

/// Offsets of the parameter blocks inside the flat vector, in declared order
/// `W1, b1, Wc, bc, Wa, ba`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Layout {
    fn w1(&self) -> Range<usize> {
        0..self.features * self.hidden
    }
    fn b1(&self) -> Range<usize> {
        let a = self.w1().end;
        a..a + self.hidden
    }
    fn wc(&self) -> Range<usize> {
        let a = self.b1().end;
        a..a + self.hidden * self.classes
    }
    fn bc(&self) -> Range<usize> {
        let a = self.wc().end;
        a..a + self.classes
    }
    fn wa(&self) -> Range<usize> {
        let a = self.bc().end;
        a..a + self.hidden * self.classes
    }
    fn ba(&self) -> Range<usize> {
        let a = self.wa().end;
        a..a + self.classes
    }
    pub fn len(&self) -> usize {
        self.ba().end
    }
    pub fn attention(&self) -> Range<usize> {
        self.wa().start..self.ba().end
    }
    /// Weight-matrix positions; biases are excluded.
    pub fn weights(&self) -> [Range<usize>; 3] {
        [self.w1(), self.wc(), self.wa()]
    }
}

impl Architecture {
    pub fn features(&self) -> usize {
        (2 * self.context + 1) * self.input_dim + if self.sequence_offset { self.input_dim } else { 0 }
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            features: self.features(),
            hidden: self.hidden,
            classes: self.n_classes,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    /// Flat-vector positions of the attention head (`Wa`, `ba`).
    pub fn attention_params(&self) -> Range<usize> {
        self.layout().attention()
    }
}

/// Views into a flat parameter (or gradient) vector.
pub(crate) struct Blocks<'a> {
    pub w1: ArrayView2<'a, f64>,
    pub b1: ArrayView1<'a, f64>,
    pub wc: ArrayView2<'a, f64>,
    pub bc: ArrayView1<'a, f64>,
    pub wa: ArrayView2<'a, f64>,
    pub ba: ArrayView1<'a, f64>,
}

impl Layout {
    pub(crate) fn blocks<'a>(&self, flat: &'a [f64]) -> Blocks<'a> {
        let m = |r: Range<usize>, rows: usize, cols: usize| {
            ArrayView2::from_shape((rows, cols), &flat[r]).expect("layout matches")
        };
        let v = |r: Range<usize>| ArrayView1::from(&flat[r]);
        Blocks {
            w1: m(self.w1(), self.features, self.hidden),
            b1: v(self.b1()),
            wc: m(self.wc(), self.hidden, self.classes),
            bc: v(self.bc()),
            wa: m(self.wa(), self.hidden, self.classes),
            ba: v(self.ba()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SedModel {
    pub arch: Architecture,
    pub classes: ClassList,
    pub params: Vec<f64>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
pub(crate) struct Activations {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub att_scores: Array2<f64>,
    pub probs: Array2<f64>,
    pub weights: Array2<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SedModel {
    /// All-zero parameters.
    pub fn zeros(config: &ModelConfig, input_dim: usize, classes: ClassList) -> Self {
        let arch = Architecture {
            context: config.context,
            input_dim,
            hidden: config.hidden,
            n_classes: classes.len(),
            sequence_offset: config.sequence_offset,
        };
        Self {
            params: vec![0.0; arch.n_params()],
            arch,
            classes,
        }
    }

    /// Scaled-uniform (Glorot) weights and zero biases.
    pub fn initialized(config: &ModelConfig, input_dim: usize, classes: ClassList, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(config, input_dim, classes);
        let layout = model.arch.layout();
        let mut fill = |range: Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.params[range] {
                *p = rng.random_range(-a..a);
            }
        };
        fill(layout.w1(), layout.features, layout.hidden);
        fill(layout.wc(), layout.hidden, layout.classes);
        fill(layout.wa(), layout.hidden, layout.classes);
        model.params[layout.bc()].fill(config.classifier_bias_init);
        model
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    pub(crate) fn blocks(&self) -> Blocks<'_> {
        self.arch.layout().blocks(&self.params)
    }

    fn check_dim(&self, emb: &EmbeddingSequence) -> Result<()> {
        if emb.dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                found: emb.dim(),
            });
        }
        Ok(())
    }

    /// Frame probabilities `P` and attention weights `W`, both `T x C`.
    pub fn forward(&self, emb: &EmbeddingSequence) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_dim(emb)?;
        let x = input_rows(emb, 0..emb.n_frames(), &self.arch);
        let act = self.activations(x.view());
        Ok((act.probs, act.weights))
    }

    pub(crate) fn activations(&self, x: ArrayView2<f64>) -> Activations {
        let b = self.blocks();
        let mut pre = x.dot(&b.w1);
        pre += &b.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let mut zc = hidden.dot(&b.wc);
        zc += &b.bc;
        let mut za = hidden.dot(&b.wa);
        za += &b.ba;
        let probs = zc.mapv(sigmoid);
        let weights = za.mapv(|v| v.clamp(-ATTENTION_CLIP, ATTENTION_CLIP).exp());
        Activations {
            pre,
            hidden,
            att_scores: za,
            probs,
            weights,
        }
    }

    /// Attention-pooled output of each region, one row per region.
    pub fn pooled_outputs(&self, emb: &EmbeddingSequence, regions: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(emb)?;
        let (p, w) = self.forward(emb)?;
        regions
            .iter()
            .map(|&(start, end)| attention_pool(p.view(), w.view(), start..end).map(|o| o.to_vec()))
            .collect()
    }

    pub fn detect_events(&self, emb: &EmbeddingSequence, decode: &DecodeConfig) -> Result<Vec<DetectedEvent>> {
        let (p, _) = self.forward(emb)?;
        Ok(decode_events(p.view(), emb.hop_s(), decode))
    }
}

/// Context-stacked network inputs for `frames`, one row per frame.
pub(crate) fn input_rows(emb: &EmbeddingSequence, frames: Range<usize>, arch: &Architecture) -> Array2<f64> {
    let t_len = emb.n_frames();
    let d = emb.dim();
    let c = arch.context as isize;
    let mean = arch.sequence_offset.then(|| emb.mean_rows(0, t_len));
    let mut x = Array2::zeros((frames.len(), arch.features()));
    for (row, t) in frames.enumerate() {
        let mut out = x.row_mut(row);
        for (k, off) in (-c..=c).enumerate() {
            let src = (t as isize + off).clamp(0, t_len as isize - 1) as usize;
            let dst = out.slice_mut(s![k * d..(k + 1) * d]);
            for (o, v) in dst.into_iter().zip(emb.values.row(src)) {
                *o = *v as f64;
            }
        }
        if let Some(mean) = &mean {
            let base = (2 * arch.context + 1) * d;
            for (k, v) in emb.values.row(t).iter().enumerate() {
                out[base + k] = *v as f64 - mean[k];
            }
        }
    }
    x
}

/// `o = sum(w * p) / sum(w)` over the frames of `region`, per class.
pub fn attention_pool(p: ArrayView2<f64>, w: ArrayView2<f64>, region: Range<usize>) -> Result<Array1<f64>> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if region.end > p.nrows() || p.dim() != w.dim() {
        return Err(Error::RegionOutOfBounds {
            start: region.start,
            end: region.end,
            len: p.nrows(),
        });
    }
    let p = p.slice(s![region.clone(), ..]);
    let w = w.slice(s![region, ..]);
    let num = (&p * &w).sum_axis(Axis(0));
    let den = w.sum_axis(Axis(0));
    Ok(num / den)
}

/// `sum_k -(t_k ln o_k + (1 - t_k) ln(1 - o_k))` with `o` clipped.
pub fn weak_loss(o: &[f64], target: &[f64]) -> f64 {
    o.iter()
        .zip(target)
        .map(|(&o, &t)| {
            let o = o.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * o.ln() + (1.0 - t) * (1.0 - o).ln())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classes(n: usize) -> ClassList {
        ClassList::new((0..n).map(|i| format!("c{i}"))).unwrap()
    }

    fn random_seq(t: usize, d: usize, seed: u64) -> EmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSequence::new("r", Array2::from_shape_simple_fn((t, d), || rng.random_range(-1.0f32..1.0)), 20.0)
    }

    #[test]
    fn zero_parameters_give_half_and_unit_weights() {
        let m = SedModel::zeros(&ModelConfig::default(), 4, classes(3));
        let (p, w) = m.forward(&random_seq(7, 4, 1)).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        assert!(w.iter().all(|&v| v == 1.0));
        let (p, _) = m.forward(&random_seq(1, 4, 1)).unwrap();
        assert_eq!(p.dim(), (1, 3));
        assert!(matches!(m.forward(&random_seq(3, 5, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn forward_matches_brute_force() {
        let cfg = ModelConfig {
            context: 1,
            hidden: 3,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = SedModel::initialized(&cfg, 2, classes(2), &mut rng);
        let mut m = m;
        for p in &mut m.params {
            *p += rng.random_range(-0.3..0.3);
        }
        let seq = random_seq(6, 2, 4);
        let (p, w) = m.forward(&seq).unwrap();

        // Independent recomputation with explicit index arithmetic.
        let prm = &m.params;
        let (f, h, c) = (6usize, 3usize, 2usize);
        let w1 = |i: usize, j: usize| prm[i * h + j];
        let b1 = |j: usize| prm[f * h + j];
        let off = f * h + h;
        let wc = |j: usize, k: usize| prm[off + j * c + k];
        let bc = |k: usize| prm[off + h * c + k];
        let off2 = off + h * c + c;
        let wa = |j: usize, k: usize| prm[off2 + j * c + k];
        let ba = |k: usize| prm[off2 + h * c + k];
        for t in 0..6usize {
            let mut x = Vec::new();
            for dt in [-1i64, 0, 1] {
                let src = (t as i64 + dt).clamp(0, 5) as usize;
                x.extend(seq.values.row(src).iter().map(|&v| v as f64));
            }
            let hid: Vec<f64> = (0..h)
                .map(|j| ((0..f).map(|i| x[i] * w1(i, j)).sum::<f64>() + b1(j)).max(0.0))
                .collect();
            for k in 0..c {
                let zc: f64 = (0..h).map(|j| hid[j] * wc(j, k)).sum::<f64>() + bc(k);
                let za: f64 = (0..h).map(|j| hid[j] * wa(j, k)).sum::<f64>() + ba(k);
                assert!((p[[t, k]] - 1.0 / (1.0 + (-zc).exp())).abs() < 1e-12);
                assert!((w[[t, k]] - za.clamp(-10.0, 10.0).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let p = Array2::from_shape_vec((2, 1), vec![0.2, 0.6]).unwrap();
        let w = Array2::from_shape_vec((2, 1), vec![1.0, 3.0]).unwrap();
        let o = attention_pool(p.view(), w.view(), 0..2).unwrap();
        assert!((o[0] - 0.5).abs() < 1e-12);
        let o = attention_pool(p.view(), w.view(), 1..2).unwrap();
        assert_eq!(o[0], 0.6);
        let ones = Array2::ones((2, 1));
        let o = attention_pool(p.view(), ones.view(), 0..2).unwrap();
        assert!((o[0] - 0.4).abs() < 1e-12);
        assert!(matches!(attention_pool(p.view(), w.view(), 1..1), Err(Error::EmptyRegion)));
        assert!(matches!(attention_pool(p.view(), w.view(), 1..3), Err(Error::RegionOutOfBounds { .. })));
    }

    #[test]
    fn weak_loss_examples() {
        assert!(weak_loss(&[1.0], &[1.0]) < 1e-6);
        assert!((weak_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]) - 4.0 * 2f64.ln()).abs() < 1e-12);
        let l = weak_loss(&[0.9, 0.2], &[1.0, 0.0]);
        assert!((l - (-(0.9f64.ln()) - 0.8f64.ln())).abs() < 1e-12);
        assert!((l - 0.3285).abs() < 1e-4);
    }

    proptest::proptest! {
        #[test]
        fn pooling_is_convex_and_scale_invariant(
            vals in proptest::collection::vec((0.001f64..0.999, 0.01f64..100.0), 1..20),
            scale in 0.01f64..100.0,
        ) {
            let n = vals.len();
            let p = Array2::from_shape_vec((n, 1), vals.iter().map(|v| v.0).collect()).unwrap();
            let w = Array2::from_shape_vec((n, 1), vals.iter().map(|v| v.1).collect()).unwrap();
            let o = attention_pool(p.view(), w.view(), 0..n).unwrap()[0];
            let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            let ws = w.mapv(|v| v * scale);
            let o2 = attention_pool(p.view(), ws.view(), 0..n).unwrap()[0];
            proptest::prop_assert!((o - o2).abs() < 1e-12);
        }
    }
}
