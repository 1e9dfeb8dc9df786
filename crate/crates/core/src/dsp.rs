//! STFT analysis/synthesis and magnitude compression.
//!
//! Framing pads `window_len - hop` zeros in front of the signal and at least
//! as many at the tail (rounded up to a whole number of hops), so every
//! original sample sits under two or more overlapping windows. Synthesis is
//! weighted overlap-add normalized by the squared-window envelope, then the
//! padding is cut away again.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netops::RealMatrix;

/// Envelope values below this are clamped before dividing.
pub const WOLA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power per sample.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Periodic Hann window: `0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FramingRecord", into = "FramingRecord")]
pub struct FramingConfig {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FramingRecord {
    window_len: usize,
    hop: usize,
}

impl TryFrom<FramingRecord> for FramingConfig {
    type Error = Error;

    fn try_from(r: FramingRecord) -> Result<Self> {
        FramingConfig::new(r.window_len, r.hop)
    }
}

impl From<FramingConfig> for FramingRecord {
    fn from(c: FramingConfig) -> Self {
        FramingRecord {
            window_len: c.window_len,
            hop: c.hop,
        }
    }
}

impl Default for FramingConfig {
    /// 32 ms Hann window with a 16 ms hop at 8 kHz.
    fn default() -> Self {
        Self::new(256, 128).expect("default framing is valid")
    }
}

impl FramingConfig {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if window_len < 4 || window_len % 2 != 0 {
            return Err(Error::Config(format!(
                "window length must be even and >= 4, got {window_len}"
            )));
        }
        if hop == 0 || hop > window_len / 2 {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {hop}",
                window_len / 2
            )));
        }
        Ok(Self {
            window_len,
            hop,
            window: hann_periodic(window_len),
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Number of frequency bins kept from the real DFT.
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Zeros inserted before the first sample.
    pub fn front_pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Length of the zero-padded analysis buffer for a signal of `len` samples.
    pub fn padded_len(&self, len: usize) -> usize {
        let content = self.front_pad() + len + (self.window_len - self.hop);
        let extra = content - self.window_len;
        self.window_len + extra.div_ceil(self.hop) * self.hop
    }

    pub fn frame_count(&self, len: usize) -> usize {
        (self.padded_len(len) - self.window_len) / self.hop + 1
    }
}

/// Complex STFT stored as separate real/imaginary `frames x bins` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: RealMatrix,
    pub imag: RealMatrix,
    pub framing: FramingConfig,
    pub original_len: usize,
    /// `Some(alpha)` once magnitudes have been raised to `alpha`.
    pub compressed_with_alpha: Option<f64>,
}

impl ComplexSpectrogram {
    pub fn new(
        real: RealMatrix,
        imag: RealMatrix,
        framing: FramingConfig,
        original_len: usize,
        compressed_with_alpha: Option<f64>,
    ) -> Result<Self> {
        if (real.rows(), real.cols()) != (imag.rows(), imag.cols()) {
            return Err(Error::shape(format!(
                "real part {}x{} vs imaginary part {}x{}",
                real.rows(),
                real.cols(),
                imag.rows(),
                imag.cols()
            )));
        }
        if real.rows() == 0 {
            return Err(Error::shape("spectrogram needs at least one frame"));
        }
        if real.cols() != framing.bins() {
            return Err(Error::shape(format!(
                "{} bins for a {}-sample window",
                real.cols(),
                framing.window_len()
            )));
        }
        Ok(Self {
            real,
            imag,
            framing,
            original_len,
            compressed_with_alpha,
        })
    }

    pub fn frames(&self) -> usize {
        self.real.rows()
    }

    pub fn bins(&self) -> usize {
        self.real.cols()
    }

    pub fn energy(&self) -> f64 {
        self.real
            .data()
            .iter()
            .chain(self.imag.data())
            .map(|v| v * v)
            .sum()
    }

    fn map_bins(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> (RealMatrix, RealMatrix) {
        let mut re = self.real.clone();
        let mut im = self.imag.clone();
        for (r, i) in re.data_mut().iter_mut().zip(im.data_mut()) {
            let (a, b) = f(*r, *i);
            *r = a;
            *i = b;
        }
        (re, im)
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

pub fn stft(x: &Waveform, cfg: &FramingConfig) -> Result<ComplexSpectrogram> {
    let n = cfg.window_len();
    if x.len() < n {
        return Err(Error::Length { len: x.len(), min: n });
    }
    let padded_len = cfg.padded_len(x.len());
    let mut padded = vec![0.0; padded_len];
    padded[cfg.front_pad()..cfg.front_pad() + x.len()].copy_from_slice(&x.samples);

    let frames = cfg.frame_count(x.len());
    let bins = cfg.bins();
    let fft = plan(n, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut real = RealMatrix::zeros(frames, bins);
    let mut imag = RealMatrix::zeros(frames, bins);
    for t in 0..frames {
        let seg = &padded[t * cfg.hop()..t * cfg.hop() + n];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(cfg.window()) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..bins {
            real[(t, k)] = buf[k].re;
            imag[(t, k)] = buf[k].im;
        }
    }
    ComplexSpectrogram::new(real, imag, cfg.clone(), x.len(), None)
}

/// Inverse STFT; the sample rate is not tracked by the spectrogram and must be supplied.
pub fn istft(spec: &ComplexSpectrogram, sample_rate_hz: u32) -> Result<Waveform> {
    if let Some(alpha) = spec.compressed_with_alpha {
        return Err(Error::Domain(format!(
            "spectrogram is compressed with alpha {alpha}; apply idrc first"
        )));
    }
    let cfg = &spec.framing;
    let n = cfg.window_len();
    let hop = cfg.hop();
    let bins = cfg.bins();
    let frames = spec.frames();
    let total = (frames - 1) * hop + n;
    let mut acc = vec![0.0; total];
    let mut env = vec![0.0; total];
    let ifft = plan(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / n as f64;
    for t in 0..frames {
        for k in 0..bins {
            let z = Complex64::new(spec.real[(t, k)], spec.imag[(t, k)]);
            buf[k] = z;
            if k > 0 && k < n - k {
                buf[n - k] = z.conj();
            }
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let off = t * hop;
        for (i, w) in cfg.window().iter().enumerate() {
            acc[off + i] += w * buf[i].re * scale;
            env[off + i] += w * w;
        }
    }
    let start = cfg.front_pad();
    let end = (start + spec.original_len).min(total);
    let mut samples: Vec<f64> = (start..end)
        .map(|i| acc[i] / env[i].max(WOLA_FLOOR))
        .collect();
    samples.resize(spec.original_len, 0.0);
    Waveform::new(samples, sample_rate_hz)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Scale a complex value to magnitude `|z|^power`, keeping its phase. Zero stays zero.
#[inline]
pub(crate) fn compress_bin(re: f64, im: f64, power: f64) -> (f64, f64) {
    let mag = re.hypot(im);
    if mag == 0.0 {
        return (0.0, 0.0);
    }
    let gain = mag.powf(power - 1.0);
    (re * gain, im * gain)
}

/// Dynamic range compression of the magnitude spectrum.
pub fn drc(x: &ComplexSpectrogram, alpha: f64) -> Result<ComplexSpectrogram> {
    check_alpha(alpha)?;
    if let Some(a) = x.compressed_with_alpha {
        return Err(Error::Domain(format!("spectrogram already compressed with alpha {a}")));
    }
    let (real, imag) = if alpha == 1.0 {
        (x.real.clone(), x.imag.clone())
    } else {
        x.map_bins(|r, i| compress_bin(r, i, alpha))
    };
    Ok(ComplexSpectrogram {
        real,
        imag,
        framing: x.framing.clone(),
        original_len: x.original_len,
        compressed_with_alpha: Some(alpha),
    })
}

pub fn idrc(x: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let alpha = x
        .compressed_with_alpha
        .ok_or_else(|| Error::Domain("spectrogram is not compressed".into()))?;
    check_alpha(alpha)?;
    let (real, imag) = if alpha == 1.0 {
        (x.real.clone(), x.imag.clone())
    } else {
        x.map_bins(|r, i| compress_bin(r, i, 1.0 / alpha))
    };
    Ok(ComplexSpectrogram {
        real,
        imag,
        framing: x.framing.clone(),
        original_len: x.original_len,
        compressed_with_alpha: None,
    })
}
