//! Log-mel spectrogram front end.
//!
//! Each frame is Hann-windowed, zero-padded to the next power of two,
//! transformed to a power spectrum, projected onto triangular HTK-mel filters
//! spanning 0 Hz to Nyquist, and compressed with `ln(energy + floor)`.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::binio;
use crate::error::{Error, Result};

pub const LMEL_MAGIC: &[u8; 4] = b"LMEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_bands: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_ms: 40.0,
            hop_ms: 20.0,
            n_bands: 128,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        ((self.frame_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_ms / 1000.0
    }

    /// Number of frames produced for `n_samples` input samples.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> usize {
        let frame = self.frame_samples(sample_rate);
        if n_samples < frame {
            0
        } else {
            (n_samples - frame) / self.hop_samples(sample_rate) + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub recording_id: String,
    /// T x B natural-log band energies.
    pub values: Array2<f32>,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.values.ncols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_matrix(LMEL_MAGIC, path.as_ref(), &self.values)
    }

    /// Loads a cached matrix; framing defaults to the standard 40/20 ms.
    pub fn load(path: impl AsRef<Path>, recording_id: impl Into<String>) -> Result<Self> {
        let values = binio::read_matrix(LMEL_MAGIC, path.as_ref())?;
        let cfg = FeatureConfig::default();
        Ok(Self {
            recording_id: recording_id.into(),
            values,
            frame_ms: cfg.frame_ms,
            hop_ms: cfg.hop_ms,
        })
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters stored sparsely as (first bin, weights).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    n_fft: usize,
}

impl MelFilterbank {
    pub fn new(n_bands: usize, n_fft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = (0..n_bands)
            .map(|b| {
                let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= center {
                        (f - lo) / (center - lo)
                    } else if f > center && f < hi {
                        (hi - f) / (hi - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self {
            filters,
            centers_hz: edges[1..=n_bands].to_vec(),
            n_fft,
        }
    }

    pub fn n_bands(&self) -> usize {
        self.filters.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Reusable analysis state for one sample rate.
pub struct LogMelExtractor {
    config: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new(config: &FeatureConfig, sample_rate: u32) -> Self {
        let frame = config.frame_samples(sample_rate);
        let n_fft = frame.next_power_of_two();
        let window = if frame == 1 {
            vec![1.0]
        } else {
            (0..frame)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (frame - 1) as f64).cos())
                .collect()
        };
        Self {
            config: config.clone(),
            sample_rate,
            window,
            hop: config.hop_samples(sample_rate),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            bank: MelFilterbank::new(config.n_bands, n_fft, sample_rate),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<LogMelSpectrogram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz, clip {} is {} Hz",
                self.sample_rate, clip.recording_id, clip.sample_rate
            )));
        }
        let frame = self.window.len();
        let n_frames = self.config.frame_count(clip.samples.len(), clip.sample_rate);
        if n_frames == 0 {
            return Err(Error::ClipTooShort {
                recording_id: clip.recording_id.clone(),
                samples: clip.samples.len(),
                frame,
            });
        }
        let n_fft = self.bank.n_fft;
        let n_bins = n_fft / 2 + 1;
        let floor = self.config.log_floor;
        let mut values = Array2::<f32>::zeros((n_frames, self.bank.n_bands()));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        let mut bands = vec![0.0f64; self.bank.n_bands()];
        for (t, mut row) in values.rows_mut().into_iter().enumerate() {
            let start = t * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < frame {
                    Complex::new(clip.samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.bank.apply(&power, &mut bands);
            for (dst, e) in row.iter_mut().zip(&bands) {
                *dst = (e + floor).ln() as f32;
            }
        }
        Ok(LogMelSpectrogram {
            recording_id: clip.recording_id.clone(),
            values,
            frame_ms: self.config.frame_ms,
            hop_ms: self.config.hop_ms,
        })
    }
}

pub fn compute_logmel(clip: &AudioClip, config: &FeatureConfig) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new(config, clip.sample_rate).compute(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new("r", 16000, samples).unwrap()
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let spec = compute_logmel(&clip(vec![0.0; 8000]), &FeatureConfig::default()).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(spec.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_gives_49_frames() {
        let spec = compute_logmel(&clip(vec![0.1; 16000]), &FeatureConfig::default()).unwrap();
        assert_eq!(spec.values.dim(), (49, 128));
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let err = compute_logmel(&clip(vec![0.1; 639]), &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ClipTooShort { frame: 640, .. }));
        assert!(compute_logmel(&clip(vec![0.1; 640]), &FeatureConfig::default()).is_ok());
    }

    #[test]
    fn sine_peaks_in_nearest_band() {
        // Oracle: band centers straight from the HTK formula, independent of the filterbank.
        let top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (1..=128)
            .map(|i| 700.0 * (10f64.powf(top * i as f64 / 129.0 / 2595.0) - 1.0))
            .collect();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let samples: Vec<f32> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin() as f32 * 0.5)
            .collect();
        let spec = compute_logmel(&clip(samples), &FeatureConfig::default()).unwrap();
        for row in spec.values.rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = compute_logmel(&clip(vec![0.3; 4000]), &FeatureConfig::default()).unwrap();
        let path = dir.path().join("r.lmel");
        spec.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LMEL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), spec.n_frames() as u32);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 128);
        assert_eq!(LogMelSpectrogram::load(&path, "r").unwrap().values, spec.values);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn frame_count_formula(n in 640usize..6000) {
            let samples: Vec<f32> = (0..n).map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.5).collect();
            let spec = compute_logmel(&clip(samples), &FeatureConfig::default()).unwrap();
            prop_assert_eq!(spec.n_frames(), (n - 640) / 320 + 1);
        }

        #[test]
        fn deterministic_and_gain_monotone(seed in any::<u64>(), gain in 1.1f32..10.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..2000).map(|_| rng.random_range(-0.09f32..0.09)).collect();
            let a = compute_logmel(&clip(samples.clone()), &FeatureConfig::default()).unwrap();
            let b = compute_logmel(&clip(samples.clone()), &FeatureConfig::default()).unwrap();
            prop_assert_eq!(&a.values, &b.values);
            let louder: Vec<f32> = samples.iter().map(|s| s * gain).collect();
            let c = compute_logmel(&clip(louder), &FeatureConfig::default()).unwrap();
            for (lo, hi) in a.values.iter().zip(c.values.iter()) {
                prop_assert!(hi >= lo);
            }
        }
    }
}
