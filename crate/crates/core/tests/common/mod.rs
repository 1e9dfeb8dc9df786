//! Seeded synthetic signals shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use cienet::{Waveform, SAMPLE_RATE_HZ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn white_noise(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Waveform::new(samples, SAMPLE_RATE_HZ).unwrap()
}

/// A voiced source with syllable-length bursts separated by pauses, a slow
/// intonation glide, light vibrato and a single formant bump.
pub fn voiced(len: usize, f0: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE_HZ as f64;
    let vibrato_hz = rng.gen_range(2.0..5.0);
    let syllable_hz = rng.gen_range(3.0..6.0);
    let syllable_phase = rng.gen_range(0.0..2.0 * PI);
    let formant = rng.gen_range(500.0..900.0);
    let glide_hz = rng.gen_range(0.3..0.8);
    let glide_phase = rng.gen_range(0.0..2.0 * PI);
    let (glide, vibrato) = (0.2, 0.02);
    let harmonics = ((3600.0 / (f0 * (1.0 + glide + vibrato))) as usize).max(1);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let gains: Vec<f64> = (1..=harmonics)
        .map(|k| {
            let f = k as f64 * f0;
            (k as f64).powf(-1.5) * (1.0 + 2.0 * (-((f - formant) / 300.0).powi(2)).exp())
        })
        .collect();

    let mut theta = 0.0;
    let mut samples = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / fs;
        let pitch = f0
            * (1.0
                + glide * (2.0 * PI * glide_hz * t + glide_phase).sin()
                + vibrato * (2.0 * PI * vibrato_hz * t).sin());
        theta += 2.0 * PI * pitch / fs;
        let env = (PI * syllable_hz * t + syllable_phase).sin().max(0.0).powi(4);
        let s: f64 = gains
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(k, (g, p))| g * ((k + 1) as f64 * theta + p).sin())
            .sum();
        samples.push(env * s);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Waveform::new(samples.iter().map(|v| 0.5 * v / peak).collect(), SAMPLE_RATE_HZ).unwrap()
}
