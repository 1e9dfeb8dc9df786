use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use cienet::gradcheck::{run_gradcheck, DEFAULT_EPS};
use cienet::metrics::improvements;
use cienet::mixer::{make_manifest, mix_signals, write_manifest, ManifestOptions};
use cienet::model_io::init_params;
use cienet::network::Cienet;
use cienet::wav::{read_wav, write_wav};
use cienet::{BlockKind, Error, HyperParams, ModelParams, Result, Waveform, SAMPLE_RATE_HZ};

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "cien", version, about = "Target speaker extraction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix a target and an interferer (plus optional noise) at a given SIR.
    Mix {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        interferer: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        sir: f64,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_ref: PathBuf,
    },
    /// Write a freshly initialized model with the default hyperparameters.
    Init {
        #[arg(long, default_value = "mdprnn")]
        arch: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the enrolled speaker from a mixture.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SI-SDR / SDR of an estimate and their improvement over the mixture.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        mix: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
    },
    /// Print hyperparameters and parameter count of a model file.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Emit a JSON-lines mixing manifest for a directory of `<speaker>_<utt>.wav` files.
    Manifest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_8k(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::SampleRate {
            expected: SAMPLE_RATE_HZ,
            actual: w.sample_rate_hz,
        });
    }
    Ok(w)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Mix {
            target,
            interferer,
            sir,
            noise,
            snr,
            seed,
            out,
            out_ref,
        } => {
            if noise.is_some() != snr.is_some() {
                return Err(Error::Parameter("--noise and --snr must be given together".into()));
            }
            let t = read_8k(&target)?;
            let i = read_8k(&interferer)?;
            let n = noise.as_deref().map(read_8k).transpose()?;
            let m = mix_signals(&t, &i, n.as_ref().zip(snr), sir, seed)?;
            write_wav(&out, &m.mixture)?;
            write_wav(&out_ref, &m.target)?;
            println!(
                "{}",
                json!({
                    "mixture": out,
                    "reference": out_ref,
                    "samples": m.mixture.len(),
                    "interferer_gain": m.interferer_gain,
                    "noise_gain": m.noise_gain,
                })
            );
        }
        Command::Init { arch, seed, out } => {
            let kind: BlockKind = arch.parse()?;
            let params = init_params(&HyperParams::for_kind(kind), seed)?;
            params.save(&out)?;
            println!(
                "{}",
                json!({ "path": out, "param_count": params.param_count(), "hyper": params.hyper })
            );
        }
        Command::Extract {
            model,
            mixture,
            enroll,
            out,
        } => {
            let net = Cienet::from_params(&ModelParams::load(&model)?)?;
            let y = read_8k(&mixture)?;
            let e = read_8k(&enroll)?;
            let start = Instant::now();
            let x = net.extract(&y, &e)?;
            let secs = start.elapsed().as_secs_f64();
            write_wav(&out, &x)?;
            println!(
                "{}",
                json!({ "out": out, "samples": x.len(), "seconds": secs })
            );
        }
        Command::Eval { est, mix, reference } => {
            let est = read_8k(&est)?;
            let mix = read_8k(&mix)?;
            let reference = read_8k(&reference)?;
            let report = improvements(&est.samples, &mix.samples, &reference.samples)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Gradcheck { seed, eps } => {
            let reports = run_gradcheck(seed, eps)?;
            let mut ok = true;
            for r in &reports {
                println!("{}", serde_json::to_string(r)?);
                if !(r.max_rel_error < GRADCHECK_TOLERANCE) {
                    eprintln!("{}: max relative error {:e} exceeds {GRADCHECK_TOLERANCE:e}", r.component, r.max_rel_error);
                    ok = false;
                }
            }
            return Ok(ok);
        }
        Command::Inspect { model } => {
            let params = ModelParams::load(&model)?;
            println!(
                "{}",
                json!({ "param_count": params.param_count(), "hyper": params.hyper })
            );
        }
        Command::Manifest { dir, seed, count, out } => {
            let rows = make_manifest(&dir, seed, count, &ManifestOptions::default())?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    write_manifest(std::io::BufWriter::new(file), &rows)?;
                }
                None => write_manifest(std::io::stdout().lock(), &rows)?,
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
