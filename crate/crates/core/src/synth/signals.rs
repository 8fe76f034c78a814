//! Sound templates: event classes, background scenes and clutter.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TemplateKind {
    ToneBurst { freq_hz: f64 },
    Chirp { start_hz: f64, end_hz: f64 },
    NoiseBurst { low_hz: f64, high_hz: f64 },
    AmTone { carrier_hz: f64, mod_hz: f64 },
    ClickTrain { rate_hz: f64, click_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub name: String,
    #[serde(flatten)]
    pub kind: TemplateKind,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

/// Gaussian noise shaped in the frequency domain by `gain(f)`.
pub fn shaped_noise(n: usize, sample_rate: f64, rng: &mut impl Rng, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sample_rate / n as f64;
        *v *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Raised-cosine fade of `fade` samples at both ends.
fn apply_fade(x: &mut [f64], fade: usize) {
    let fade = fade.min(x.len() / 2);
    let n = x.len();
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

fn band(low: f64, high: f64) -> impl Fn(f64) -> f64 {
    move |f| {
        let edge = 0.1 * (high - low).max(1.0);
        let up = ((f - low) / edge + 0.5).clamp(0.0, 1.0);
        let down = ((high - f) / edge + 0.5).clamp(0.0, 1.0);
        up * down
    }
}

/// Renders one event instance; frequencies jitter by up to ±5 %.
pub fn render_event(kind: &TemplateKind, n: usize, sample_rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let jitter = rng.random_range(0.95..1.05);
    let t = |i: usize| i as f64 / sample_rate;
    let mut x: Vec<f64> = match *kind {
        TemplateKind::ToneBurst { freq_hz } => {
            let f = freq_hz * jitter;
            (0..n)
                .map(|i| (2.0 * PI * f * t(i)).sin() + 0.3 * (4.0 * PI * f * t(i)).sin())
                .collect()
        }
        TemplateKind::Chirp { start_hz, end_hz } => {
            let (f0, f1) = (start_hz * jitter, end_hz * jitter);
            let dur = n as f64 / sample_rate;
            (0..n)
                .map(|i| {
                    let ti = t(i);
                    (2.0 * PI * (f0 * ti + 0.5 * (f1 - f0) / dur * ti * ti)).sin()
                })
                .collect()
        }
        TemplateKind::NoiseBurst { low_hz, high_hz } => {
            shaped_noise(n, sample_rate, rng, band(low_hz * jitter, high_hz * jitter))
        }
        TemplateKind::AmTone { carrier_hz, mod_hz } => {
            let (fc, fm) = (carrier_hz * jitter, mod_hz);
            (0..n)
                .map(|i| (1.0 + 0.9 * (2.0 * PI * fm * t(i)).sin()) * (2.0 * PI * fc * t(i)).sin())
                .collect()
        }
        TemplateKind::ClickTrain { rate_hz, click_hz } => {
            let period = (sample_rate / (rate_hz * jitter)).max(1.0) as usize;
            let decay = 0.004 * sample_rate;
            (0..n)
                .map(|i| {
                    let k = i % period;
                    (-(k as f64) / decay).exp() * (2.0 * PI * click_hz * k as f64 / sample_rate).sin()
                })
                .collect()
        }
    };
    apply_fade(&mut x, (0.01 * sample_rate) as usize);
    x
}

/// Background scene `k`: noise with spectral slope `f^-(0.5 + 0.5 k)` above
/// 50 Hz, normalised to `rms_level`.
pub fn render_background(scene: usize, n: usize, sample_rate: f64, rms_level: f64, rng: &mut impl Rng) -> Vec<f64> {
    let alpha = 0.5 + 0.5 * scene as f64;
    let mut x = shaped_noise(n, sample_rate, rng, |f| {
        let f = f.max(50.0);
        (f / 50.0).powf(-alpha / 2.0)
    });
    let r = rms(&x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms_level / r);
    }
    x
}

/// Non-target sound: a low harmonic hum or a smooth broadband swell.
pub fn render_clutter(n: usize, sample_rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut x: Vec<f64> = if rng.random_bool(0.5) {
        let f0 = rng.random_range(60.0..180.0);
        (0..n)
            .map(|i| {
                let ti = i as f64 / sample_rate;
                (1..=5).map(|h| (2.0 * PI * f0 * h as f64 * ti).sin() / h as f64).sum()
            })
            .collect()
    } else {
        let low = rng.random_range(100.0..400.0);
        let high = rng.random_range(800.0..2000.0);
        let mut x = shaped_noise(n, sample_rate, rng, band(low, high));
        for (i, v) in x.iter_mut().enumerate() {
            *v *= (PI * i as f64 / n as f64).sin();
        }
        x
    };
    apply_fade(&mut x, (0.05 * sample_rate) as usize);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn peak_hz(x: &[f64], sr: f64) -> f64 {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * sr / n as f64
    }

    #[test]
    fn tone_energy_sits_at_its_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = render_event(&TemplateKind::ToneBurst { freq_hz: 1000.0 }, 16000, 16000.0, &mut rng);
        let p = peak_hz(&x, 16000.0);
        assert!((900.0..1100.0).contains(&p), "{p}");
    }

    #[test]
    fn noise_burst_is_band_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = render_event(&TemplateKind::NoiseBurst { low_hz: 3000.0, high_hz: 5000.0 }, 16000, 16000.0, &mut rng);
        let p = peak_hz(&x, 16000.0);
        assert!((2500.0..5500.0).contains(&p), "{p}");
    }

    #[test]
    fn background_has_requested_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = render_background(1, 32000, 16000.0, 0.05, &mut rng);
        assert!((rms(&x) - 0.05).abs() < 1e-12);
    }
}
