//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use cienet::dsp::{drc, idrc, istft, stft};
use cienet::gradcheck::{interaction_backward, run_gradcheck};
use cienet::interaction::{consistent, consistent_with_weights, similarity, weight};
use cienet::metrics::{improvements, si_sdr};
use cienet::model_io::init_params;
use cienet::netops::RealMatrix;
use cienet::network::Cienet;
use cienet::{
    BlockKind, ComplexSpectrogram, Error, FramingConfig, HyperParams, ModelParams, Waveform,
    SAMPLE_RATE_HZ,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> RealMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RealMatrix::from_vec(rows, cols, data).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|v| v * v).sum();
    (num / den).sqrt()
}

fn perfect_reconstruction() -> Outcome {
    let cfg = FramingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let len = rng.gen_range(SAMPLE_RATE_HZ as usize..=4 * SAMPLE_RATE_HZ as usize);
        let x = common::white_noise(len, 1000 + i);
        let y = istft(&stft(&x, &cfg).map_err(|e| e.to_string())?, SAMPLE_RATE_HZ)
            .map_err(|e| e.to_string())?;
        ensure(y.len() == x.len(), || format!("signal {i}: length {} != {}", y.len(), x.len()))?;
        worst = worst.max(rel_l2(&y.samples, &x.samples));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-6, || format!("max relative error {worst:.3e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max relative error {worst:.3e} in {secs:.2} s"))
}

fn drc_roundtrip() -> Outcome {
    let cfg = FramingConfig::default();
    let x = stft(&common::white_noise(16000, 7), &cfg).map_err(|e| e.to_string())?;
    let c = drc(&x, 0.5).map_err(|e| e.to_string())?;
    let back = idrc(&c).map_err(|e| e.to_string())?;
    let (mut worst_mag, mut worst_phase) = (0.0f64, 0.0f64);
    let bins = x.real.data().len();
    for k in 0..bins {
        let (re, im) = (x.real.data()[k], x.imag.data()[k]);
        let (bre, bim) = (back.real.data()[k], back.imag.data()[k]);
        let (cre, cim) = (c.real.data()[k], c.imag.data()[k]);
        let mag = re.hypot(im);
        if mag == 0.0 {
            ensure(bre == 0.0 && bim == 0.0, || format!("bin {k}: zero not preserved"))?;
            continue;
        }
        worst_mag = worst_mag.max((bre - re).hypot(bim - im) / mag);
        let dphi = (cim.atan2(cre) - im.atan2(re) + std::f64::consts::PI)
            .rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        worst_phase = worst_phase.max(dphi.abs());
    }
    let ident = drc(&x, 1.0).map_err(|e| e.to_string())?;
    let exact = ident.real == x.real && ident.imag == x.imag;
    ensure(worst_mag < 1e-6, || format!("roundtrip error {worst_mag:.3e}"))?;
    ensure(worst_phase < 1e-9, || format!("phase drift {worst_phase:.3e}"))?;
    ensure(exact, || "alpha = 1 is not the identity".into())?;
    Ok(format!("roundtrip {worst_mag:.1e}, phase {worst_phase:.1e}, alpha=1 exact"))
}

fn interaction_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut row_err, mut perm_err) = (0.0f64, 0.0f64);
    let mut min_sharp = 1.0f64;
    let mut sharp_rows = 0;
    for inst in 0..100 {
        let t = rng.gen_range(1..20);
        let te = rng.gen_range(1..20);
        let f = rng.gen_range(1..40);
        let y = random_matrix(t, f, &mut rng);
        let e = random_matrix(te, f, &mut rng);
        let (out, w) = consistent_with_weights(&y, &e).map_err(|e| e.to_string())?;
        for r in 0..t {
            row_err = row_err.max((w.matrix().row(r).iter().sum::<f64>() - 1.0).abs());
        }
        for c in 0..f {
            let lo = (0..te).map(|j| e[(j, c)]).fold(f64::INFINITY, f64::min);
            let hi = (0..te).map(|j| e[(j, c)]).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..t {
                let v = out[(r, c)];
                ensure(v >= lo - 1e-12 && v <= hi + 1e-12, || {
                    format!("instance {inst}: F[{r},{c}] = {v} outside [{lo}, {hi}]")
                })?;
            }
        }

        let mut order: Vec<usize> = (0..te).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&j| e.row(j).to_vec()).collect();
        let permuted = consistent(&y, &RealMatrix::from_rows(&rows).unwrap()).unwrap();
        perm_err = perm_err.max(permuted.max_abs_diff(&out));

        let single = random_matrix(1, f, &mut rng);
        let b = consistent(&y, &single).unwrap();
        ensure((0..t).all(|r| b.row(r) == single.row(0)), || {
            format!("instance {inst}: single enrollment frame not broadcast exactly")
        })?;

        // Scale Y by 100 and check rows whose best similarity leads the runner-up
        // by at least 0.1, so the argmax is unique beyond rounding.
        let s1 = similarity(&y, &e).unwrap();
        let sharp = weight(&similarity(&y.map(|v| 100.0 * v), &e).unwrap());
        for r in 0..t {
            let mut sims: Vec<(f64, usize)> = s1.row(r).iter().copied().zip(0..).collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0));
            if te > 1 && sims[0].0 - sims[1].0 < 0.1 {
                continue;
            }
            sharp_rows += 1;
            min_sharp = min_sharp.min(sharp.matrix()[(r, sims[0].1)]);
        }
    }
    ensure(row_err <= 1e-6, || format!("row sums off by {row_err:.3e}"))?;
    ensure(perm_err < 1e-9, || format!("permutation changed output by {perm_err:.3e}"))?;
    ensure(min_sharp > 0.999, || format!("sharpened row max {min_sharp}"))?;
    Ok(format!(
        "row sums {row_err:.1e}, permutation {perm_err:.1e}, sharpened max >= {min_sharp:.6} on {sharp_rows} rows"
    ))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        for r in run_gradcheck(seed, 1e-4).map_err(|e| e.to_string())? {
            ensure(r.max_rel_error < 1e-4, || {
                format!("seed {seed} {}: {:.3e}", r.component, r.max_rel_error)
            })?;
            worst = worst.max(r.max_rel_error);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = random_matrix(7, 9, &mut rng);
    let e = random_matrix(1, 9, &mut rng);
    let g = random_matrix(7, 9, &mut rng);
    let (dy, _) = interaction_backward(&y, &e, &g).map_err(|e| e.to_string())?;
    ensure(dy.data().iter().all(|&v| v == 0.0), || "T_E = 1 gives nonzero dY".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max relative error {worst:.3e} over 10 seeds in {secs:.2} s"))
}

fn si_sdr_values() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let e: Vec<f64> = r.iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    let base = si_sdr(&e, &r).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (scale, shift) in [(3.0, 0.0), (0.01, 0.0), (1.0, 5.0), (-2.0, -0.7)] {
        let moved: Vec<f64> = e.iter().map(|v| scale * v + shift).collect();
        worst = worst.max((si_sdr(&moved, &r).unwrap() - base).abs());
    }
    let worked = si_sdr(&[1.0, -1.0, 0.0], &[1.0, 0.0, -1.0]).map_err(|e| e.to_string())?;
    let rep = improvements(&e, &e, &r).map_err(|e| e.to_string())?;
    ensure(worst < 1e-6, || format!("invariance error {worst:.3e} dB"))?;
    ensure((worked + 4.771).abs() < 1e-3, || format!("worked instance gives {worked}"))?;
    ensure(rep.si_sdri_db == 0.0 && rep.sdri_db == 0.0, || {
        format!("est = mix improvements {} / {}", rep.si_sdri_db, rep.sdri_db)
    })?;
    Ok(format!("invariance {worst:.1e} dB, worked instance {worked:.4} dB, est=mix 0"))
}

fn oracle_mask_estimate(y: &Waveform, x: &Waveform, alpha: f64) -> cienet::Result<Waveform> {
    let cfg = FramingConfig::default();
    let yc = drc(&stft(y, &cfg)?, alpha)?;
    let xc = drc(&stft(x, &cfg)?, alpha)?;
    let mut re = yc.real.clone();
    let mut im = yc.imag.clone();
    for k in 0..re.data().len() {
        let ym = yc.real.data()[k].hypot(yc.imag.data()[k]);
        let xm = xc.real.data()[k].hypot(xc.imag.data()[k]);
        let m = if ym > 0.0 { xm / ym } else { 0.0 };
        re.data_mut()[k] *= m;
        im.data_mut()[k] *= m;
    }
    let masked = ComplexSpectrogram::new(re, im, cfg, y.len(), Some(alpha))?;
    istft(&idrc(&masked)?, y.sample_rate_hz)
}

fn oracle_mask() -> Outcome {
    let len = 3 * SAMPLE_RATE_HZ as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = f64::INFINITY;
    for i in 0..10 {
        let target = common::voiced(len, rng.gen_range(100.0..140.0), 2 * i);
        let other = common::voiced(len, rng.gen_range(180.0..260.0), 2 * i + 1);
        let gain = (target.power() / other.power()).sqrt();
        let interferer: Vec<f64> = other.samples.iter().map(|v| v * gain).collect();
        let mix: Vec<f64> = target.samples.iter().zip(&interferer).map(|(a, b)| a + b).collect();
        let y = Waveform::new(mix, SAMPLE_RATE_HZ).unwrap();
        let est = oracle_mask_estimate(&y, &target, 0.5).map_err(|e| e.to_string())?;
        let rep = improvements(&est.samples, &y.samples, &target.samples)
            .map_err(|e| e.to_string())?;
        eprintln!("oracle mixture {i}: SI-SDRi {:.2} dB", rep.si_sdri_db);
        ensure(rep.si_sdri_db >= 10.0, || {
            format!("mixture {i}: SI-SDRi {:.2} dB", rep.si_sdri_db)
        })?;
        worst = worst.min(rep.si_sdri_db);
    }
    Ok(format!("min SI-SDRi {worst:.2} dB over 10 mixtures"))
}

fn forward_pass_and_count() -> Outcome {
    let params = init_params(&HyperParams::for_kind(BlockKind::Mdprnn), 0)
        .map_err(|e| e.to_string())?;
    let net = Cienet::from_params(&params).map_err(|e| e.to_string())?;
    let y = common::white_noise(SAMPLE_RATE_HZ as usize, 41);
    let e = common::voiced(2 * SAMPLE_RATE_HZ as usize, 120.0, 42);
    let start = Instant::now();
    let x = net.extract(&y, &e).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("forward pass took {secs:.2} s"))?;
    ensure(x.len() == y.len(), || format!("output length {} != {}", x.len(), y.len()))?;
    ensure(x.samples.iter().all(|v| v.is_finite()), || "non-finite output".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("default.cien");
    params.save(&path).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_cien"))
        .args(["inspect", "--model"])
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let count = report["param_count"].as_u64().ok_or("no param_count in inspect output")?;
    ensure((2_300_000..=3_100_000).contains(&count), || format!("{count} parameters"))?;
    Ok(format!("forward pass {secs:.2} s, inspect reports {count} parameters"))
}

fn format_roundtrip() -> Outcome {
    let params = init_params(&HyperParams::for_kind(BlockKind::Mdptnet), 3)
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.cien");
    params.save(&path).map_err(|e| e.to_string())?;
    let loaded = ModelParams::load(&path).map_err(|e| e.to_string())?;
    ensure(loaded == params, || "loaded parameters differ".into())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure(loaded.to_bytes().unwrap() == bytes, || "re-serialized bytes differ".into())?;

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let mut bad_header = bytes.clone();
    bad_header[17] = b'!';
    let mut extra = bytes.clone();
    extra.push(0);
    let cases: [(&str, Vec<u8>); 6] = [
        ("bad magic", bad_magic),
        ("bad version", bad_version),
        ("truncated preamble", bytes[..10].to_vec()),
        ("corrupt header", bad_header),
        ("truncated payload", bytes[..bytes.len() - 4].to_vec()),
        ("trailing bytes", extra),
    ];
    for (what, data) in cases {
        match ModelParams::from_bytes(&data) {
            Err(Error::Format { .. }) => {}
            Err(other) => return Err(format!("{what}: unexpected error {other}")),
            Ok(_) => return Err(format!("{what}: accepted")),
        }
    }
    Ok("bit-exact roundtrip, 6 corruptions rejected".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("stft/istft perfect reconstruction", perfect_reconstruction),
        ("drc/idrc roundtrip", drc_roundtrip),
        ("interaction algebra", interaction_algebra),
        ("gradient checks", gradient_checks),
        ("si-sdr unit values", si_sdr_values),
        ("oracle-mask sanity", oracle_mask),
        ("shape and structure", forward_pass_and_count),
        ("model file format", format_roundtrip),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
