//! Two-speaker mixture synthesis and manifest generation.
//!
//! The target is never rescaled; the interferer is scaled to the requested
//! target-to-interferer ratio, and optional noise is scaled against the power
//! of the two-speaker mixture. All sources are cut to the shortest length;
//! the target is taken from its start, interferer and noise from a seeded
//! random offset.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::wav::read_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub target_path: PathBuf,
    pub interferer_path: PathBuf,
    pub enrollment_path: PathBuf,
    pub noise_path: Option<PathBuf>,
    pub sir_db: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.enrollment_path == self.target_path {
            return Err(Error::Parameter(
                "enrollment must be a different utterance from the mixed target".into(),
            ));
        }
        if self.noise_path.is_some() != self.snr_db.is_some() {
            return Err(Error::Parameter("noise_path and snr_db must be given together".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Unscaled target, sample-aligned with its contribution to `mixture`.
    pub target: Waveform,
    pub interferer_gain: f64,
    pub noise_gain: Option<f64>,
}

fn segment(x: &Waveform, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let slack = x.len() - len;
    let start = if slack == 0 { 0 } else { rng.gen_range(0..=slack) };
    x.samples[start..start + len].to_vec()
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn nonzero_power(x: &[f64], what: &str) -> Result<f64> {
    let p = mean_power(x);
    if p > 0.0 {
        Ok(p)
    } else {
        Err(Error::Degenerate(format!("{what} has zero power")))
    }
}

/// `y = target + g_i * interferer (+ g_n * noise)`.
pub fn mix_signals(
    target: &Waveform,
    interferer: &Waveform,
    noise: Option<(&Waveform, f64)>,
    sir_db: f64,
    seed: u64,
) -> Result<Mixture> {
    if !sir_db.is_finite() {
        return Err(Error::Parameter(format!("SIR must be finite, got {sir_db}")));
    }
    let rate = target.sample_rate_hz;
    for w in std::iter::once(interferer).chain(noise.map(|(n, _)| n)) {
        if w.sample_rate_hz != rate {
            return Err(Error::SampleRate {
                expected: rate,
                actual: w.sample_rate_hz,
            });
        }
    }
    let len = [target.len(), interferer.len()]
        .into_iter()
        .chain(noise.map(|(n, _)| n.len()))
        .min()
        .unwrap_or(0);
    if len == 0 {
        return Err(Error::Degenerate("empty source".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tgt = target.samples[..len].to_vec();
    let itf = segment(interferer, len, &mut rng);
    let p_t = nonzero_power(&tgt, "target")?;
    let p_i = nonzero_power(&itf, "interferer")?;
    let g_i = (p_t / p_i).sqrt() * 10f64.powf(-sir_db / 20.0);
    let mut y: Vec<f64> = tgt.iter().zip(&itf).map(|(t, i)| t + g_i * i).collect();

    let mut noise_gain = None;
    if let Some((n, snr_db)) = noise {
        if !snr_db.is_finite() {
            return Err(Error::Parameter(format!("SNR must be finite, got {snr_db}")));
        }
        let nz = segment(n, len, &mut rng);
        let p_n = nonzero_power(&nz, "noise")?;
        let p_s = nonzero_power(&y, "speech mixture")?;
        let g_n = (p_s / p_n).sqrt() * 10f64.powf(-snr_db / 20.0);
        for (v, m) in y.iter_mut().zip(&nz) {
            *v += g_n * m;
        }
        noise_gain = Some(g_n);
    }

    Ok(Mixture {
        mixture: Waveform::new(y, rate)?,
        target: Waveform::new(tgt, rate)?,
        interferer_gain: g_i,
        noise_gain,
    })
}

/// Reads the referenced files and mixes them.
pub fn mix(spec: &MixtureSpec) -> Result<Mixture> {
    spec.validate()?;
    let target = read_wav(&spec.target_path)?;
    let interferer = read_wav(&spec.interferer_path)?;
    let noise = spec.noise_path.as_ref().map(read_wav).transpose()?;
    let noise = noise.as_ref().zip(spec.snr_db);
    mix_signals(&target, &interferer, noise, spec.sir_db, spec.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOptions {
    /// SIR drawn uniformly from this range, in dB.
    pub sir_range_db: (f64, f64),
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            sir_range_db: (0.0, 5.0),
        }
    }
}

/// Speaker id of a file: its stem up to the first `_` or `-`.
pub fn speaker_of(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let id = stem.split(['_', '-']).next().unwrap_or(stem);
    (!id.is_empty()).then(|| id.to_string())
}

/// Seeded target/interferer/enrollment triples drawn from a flat directory of WAV files.
pub fn make_manifest(dir: impl AsRef<Path>, seed: u64, count: usize, opts: &ManifestOptions) -> Result<Vec<MixtureSpec>> {
    let dir = dir.as_ref();
    let (lo, hi) = opts.sir_range_db;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Parameter(format!("bad SIR range {lo}..{hi}")));
    }
    let mut by_speaker: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav {
            continue;
        }
        if let Some(spk) = speaker_of(&path) {
            by_speaker.entry(spk).or_default().push(path);
        }
    }
    for files in by_speaker.values_mut() {
        files.sort();
    }
    if by_speaker.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least two speakers in {}, found {}",
            dir.display(),
            by_speaker.len()
        )));
    }
    let speakers: Vec<&String> = by_speaker.keys().collect();
    let eligible: Vec<&String> = by_speaker
        .iter()
        .filter(|(_, f)| f.len() >= 2)
        .map(|(s, _)| s)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Parameter(
            "no speaker has two utterances to pair a target with an enrollment".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let spk = *eligible.choose(&mut rng).unwrap();
        let files = &by_speaker[spk];
        let picked: Vec<&PathBuf> = files.choose_multiple(&mut rng, 2).collect();
        let others: Vec<&&String> = speakers.iter().filter(|s| **s != spk).collect();
        let other = **others.choose(&mut rng).unwrap();
        let interferer = by_speaker[other].choose(&mut rng).unwrap();
        let sir_db = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        rows.push(MixtureSpec {
            target_path: picked[0].clone(),
            interferer_path: interferer.clone(),
            enrollment_path: picked[1].clone(),
            noise_path: None,
            sir_db,
            snr_db: None,
            seed: rng.gen::<u32>() as u64,
        });
    }
    Ok(rows)
}

pub fn write_manifest(mut out: impl Write, rows: &[MixtureSpec]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<MixtureSpec>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}
