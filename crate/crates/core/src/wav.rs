//! 16-bit PCM mono WAV I/O.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

#[inline]
pub fn sample_to_i16(x: f64) -> i16 {
    let clamped = x.clamp(-1.0, 1.0 - 1.0 / FULL_SCALE);
    (clamped * FULL_SCALE).round() as i16
}

#[inline]
pub fn i16_to_sample(v: i16) -> f64 {
    v as f64 / FULL_SCALE
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Parameter(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Parameter(format!(
            "{}: expected 16-bit PCM, found {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(i16_to_sample))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err(path))?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in &wave.samples {
        writer.write_sample(sample_to_i16(s)).map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))
}

/// Round a waveform through the 16-bit grid, as writing and re-reading would.
pub fn quantize(wave: &Waveform) -> Waveform {
    Waveform {
        samples: wave.samples.iter().map(|&s| i16_to_sample(sample_to_i16(s))).collect(),
        sample_rate_hz: wave.sample_rate_hz,
    }
}
