//! Target speaker extraction in the time-frequency domain.
//!
//! The mixture and an enrollment utterance of the target speaker are both
//! transformed with an STFT and compressed in magnitude. An attention-style
//! interaction block re-weights the enrollment frames so they line up with
//! the mixture frames, and the stacked result drives a dual-path masking
//! network whose output is decoded back to a waveform.
//!
//! Besides the forward network the crate ships the signal toolkit around it:
//! STFT/DRC, SI-SDR evaluation, two-speaker mixture synthesis, a binary
//! parameter format and finite-difference gradient checks.

pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod interaction;
pub mod metrics;
pub mod mixer;
pub mod model_io;
pub mod netops;
pub mod network;
pub mod wav;

pub use dsp::{ComplexSpectrogram, FramingConfig, Waveform};
pub use error::{Error, Result};
pub use model_io::ModelParams;
pub use network::{BlockKind, HyperParams};

/// Sample rate every CLI-facing signal must use.
pub const SAMPLE_RATE_HZ: u32 = 8000;
