//! WAV ingestion and emission.
//!
//! Integer PCM is normalized by `2^(bits-1)`, so an int16 value of -32768 maps
//! to exactly -1.0. Multichannel files keep only channel 0.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono audio with its native sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub recording_id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(recording_id: impl Into<String>, sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        let recording_id = recording_id.into();
        if samples.is_empty() {
            return Err(Error::EmptyAudio(recording_id));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            recording_id,
            sample_rate,
            samples,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples in `[start_s, end_s)`, clamped to the clip.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> &[f32] {
        let rate = self.sample_rate as f64;
        let n = self.samples.len();
        let a = ((start_s.max(0.0) * rate).round() as usize).min(n);
        let b = ((end_s.max(0.0) * rate).round() as usize).clamp(a, n);
        &self.samples[a..b]
    }
}

/// Reads a RIFF/WAVE file (8/16/24/32-bit integer PCM or 32-bit float).
pub fn load_audio(path: impl AsRef<Path>, recording_id: impl Into<String>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(std::io::BufReader::new(file), path, recording_id.into())
}

/// Decodes WAV bytes already in memory.
pub fn decode_wav_bytes(bytes: &[u8], recording_id: impl Into<String>) -> Result<AudioClip> {
    decode_wav(Cursor::new(bytes), Path::new("<memory>"), recording_id.into())
}

fn decode_wav<R: Read>(reader: R, path: &Path, recording_id: String) -> Result<AudioClip> {
    let reader = WavReader::new(reader).map_err(|e| classify(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| classify(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| classify(path, e))?
        }
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                reason: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };
    let samples: Vec<f32> = interleaved.iter().step_by(channels).copied().collect();
    if samples.is_empty() {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    AudioClip::new(recording_id, spec.sample_rate, samples)
}

fn classify(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: "unsupported WAV format".into(),
        },
        other => Error::Audio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

pub(crate) fn quantize_i16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn write_pcm16<W: Write + Seek>(out: W, samples: &[f32], sample_rate: u32) -> std::result::Result<(), hound::Error> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::new(out, spec)?;
    let mut w16 = writer.get_i16_writer(samples.len() as u32);
    for &s in samples {
        w16.write_sample(quantize_i16(s));
    }
    w16.flush()?;
    writer.finalize()
}

/// Encodes mono samples as a 16-bit PCM WAV byte stream.
pub fn wav_bytes(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    write_pcm16(&mut cursor, samples, sample_rate).expect("in-memory WAV encoding cannot fail");
    cursor.into_inner()
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let bytes = wav_bytes(&clip.samples, clip.sample_rate);
    crate::binio::write_atomic(path, &bytes)
}
