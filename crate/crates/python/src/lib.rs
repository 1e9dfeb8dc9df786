//! Python module `pycienet`.
//!
//! Signals cross the boundary as lists of floats, spectrogram planes and
//! interaction matrices as lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cienet::dsp::{drc, idrc, istft, stft};
use cienet::gradcheck::{run_gradcheck, DEFAULT_EPS};
use cienet::interaction::consistent_with_weights;
use cienet::metrics::{improvements, sdr_simple, si_sdr};
use cienet::model_io::init_params;
use cienet::netops::RealMatrix;
use cienet::network::Cienet;
use cienet::{
    BlockKind, ComplexSpectrogram, Error, FramingConfig, HyperParams, ModelParams, Waveform,
    SAMPLE_RATE_HZ,
};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for cienet::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

pub fn to_matrix(rows: &[Vec<f64>]) -> cienet::Result<RealMatrix> {
    RealMatrix::from_rows(rows)
}

pub fn spectrogram(
    real: &[Vec<f64>],
    imag: &[Vec<f64>],
    length: usize,
    alpha: Option<f64>,
) -> cienet::Result<ComplexSpectrogram> {
    ComplexSpectrogram::new(
        to_matrix(real)?,
        to_matrix(imag)?,
        FramingConfig::default(),
        length,
        alpha,
    )
}

type Planes = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn planes(s: &ComplexSpectrogram) -> Planes {
    (s.real.to_rows(), s.imag.to_rows())
}

/// A target speaker extraction network with its parameters.
#[pyclass(module = "pycienet")]
struct Model {
    params: ModelParams,
    net: Cienet,
}

impl Model {
    fn wrap(params: ModelParams) -> PyResult<Self> {
        let net = Cienet::from_params(&params).or_py()?;
        Ok(Self { params, net })
    }
}

#[pymethods]
impl Model {
    /// Freshly initialized model with the default hyperparameters.
    #[staticmethod]
    #[pyo3(signature = (arch = "mdprnn", seed = 0))]
    fn init(arch: &str, seed: u64) -> PyResult<Self> {
        let kind: BlockKind = arch.parse().or_py()?;
        Self::wrap(init_params(&HyperParams::for_kind(kind), seed).or_py()?)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::wrap(ModelParams::load(path).or_py()?)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.params.save(path).or_py()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    #[getter]
    fn hyper<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let hp = &self.params.hyper;
        let d = PyDict::new(py);
        d.set_item("encoder_channels", hp.encoder_channels)?;
        d.set_item("block_channels", hp.block_channels)?;
        d.set_item("num_blocks", hp.num_blocks)?;
        d.set_item("hidden", hp.hidden)?;
        d.set_item("heads", hp.heads)?;
        d.set_item("alpha", hp.alpha)?;
        d.set_item("block_kind", hp.block_kind.to_string())?;
        d.set_item("window_len", hp.framing.window_len())?;
        d.set_item("hop", hp.framing.hop())?;
        Ok(d)
    }

    /// Estimated target waveform, same length as `mixture`.
    #[pyo3(signature = (mixture, enrollment, sample_rate = SAMPLE_RATE_HZ))]
    fn extract(
        &self,
        py: Python<'_>,
        mixture: Vec<f64>,
        enrollment: Vec<f64>,
        sample_rate: u32,
    ) -> PyResult<Vec<f64>> {
        let y = Waveform::new(mixture, sample_rate).or_py()?;
        let e = Waveform::new(enrollment, sample_rate).or_py()?;
        let x = py.detach(|| self.net.extract(&y, &e)).or_py()?;
        Ok(x.samples)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(block_kind={}, param_count={})",
            self.params.hyper.block_kind,
            self.params.param_count()
        )
    }
}

#[pyfunction(name = "si_sdr")]
fn py_si_sdr(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    si_sdr(&est, &reference).or_py()
}

#[pyfunction(name = "sdr_simple")]
fn py_sdr_simple(est: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    sdr_simple(&est, &reference).or_py()
}

/// SI-SDR, SDR and their improvements over the mixture.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    est: Vec<f64>,
    mix: Vec<f64>,
    reference: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = improvements(&est, &mix, &reference).or_py()?;
    let d = PyDict::new(py);
    d.set_item("si_sdr_db", r.si_sdr_db)?;
    d.set_item("si_sdri_db", r.si_sdri_db)?;
    d.set_item("sdr_db", r.sdr_db)?;
    d.set_item("sdri_db", r.sdri_db)?;
    d.set_item("capped", r.capped)?;
    Ok(d)
}

/// `(real, imag)` planes of shape frames x 129.
#[pyfunction(name = "stft")]
#[pyo3(signature = (samples, sample_rate = SAMPLE_RATE_HZ))]
fn py_stft(samples: Vec<f64>, sample_rate: u32) -> PyResult<Planes> {
    let w = Waveform::new(samples, sample_rate).or_py()?;
    Ok(planes(&stft(&w, &FramingConfig::default()).or_py()?))
}

#[pyfunction(name = "istft")]
#[pyo3(signature = (real, imag, length, sample_rate = SAMPLE_RATE_HZ))]
fn py_istft(
    real: Vec<Vec<f64>>,
    imag: Vec<Vec<f64>>,
    length: usize,
    sample_rate: u32,
) -> PyResult<Vec<f64>> {
    let spec = spectrogram(&real, &imag, length, None).or_py()?;
    Ok(istft(&spec, sample_rate).or_py()?.samples)
}

/// Raise bin magnitudes to `alpha`, keeping phase.
#[pyfunction(name = "drc")]
#[pyo3(signature = (real, imag, alpha = 0.5))]
fn py_drc(real: Vec<Vec<f64>>, imag: Vec<Vec<f64>>, alpha: f64) -> PyResult<Planes> {
    let spec = spectrogram(&real, &imag, 0, None).or_py()?;
    Ok(planes(&drc(&spec, alpha).or_py()?))
}

#[pyfunction(name = "idrc")]
fn py_idrc(real: Vec<Vec<f64>>, imag: Vec<Vec<f64>>, alpha: f64) -> PyResult<Planes> {
    let spec = spectrogram(&real, &imag, 0, Some(alpha)).or_py()?;
    Ok(planes(&idrc(&spec).or_py()?))
}

/// `(F, W)` with `W = softmax_rows(Y E^T)` and `F = W E`.
#[pyfunction]
fn interaction(y: Vec<Vec<f64>>, e: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (f, w) = consistent_with_weights(&to_matrix(&y).or_py()?, &to_matrix(&e).or_py()?).or_py()?;
    Ok((f.to_rows(), w.matrix().to_rows()))
}

/// One dict per checked component.
#[pyfunction]
#[pyo3(signature = (seed = 0, eps = DEFAULT_EPS))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, eps: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    run_gradcheck(seed, eps)
        .or_py()?
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("component", r.component)?;
            d.set_item("max_rel_error", r.max_rel_error)?;
            d.set_item("eps", r.eps)?;
            d.set_item("seed", r.seed)?;
            d.set_item("checked", r.checked)?;
            d.set_item("skipped", r.skipped)?;
            Ok(d)
        })
        .collect()
}

/// `(samples, sample_rate)` of a mono 16-bit WAV file.
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f64>, u32)> {
    let w = cienet::wav::read_wav(path).or_py()?;
    Ok((w.samples, w.sample_rate_hz))
}

#[pyfunction]
#[pyo3(signature = (path, samples, sample_rate = SAMPLE_RATE_HZ))]
fn write_wav(path: &str, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    let w = Waveform::new(samples, sample_rate).or_py()?;
    cienet::wav::write_wav(path, &w).or_py()
}

#[pymodule]
fn pycienet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SAMPLE_RATE_HZ", SAMPLE_RATE_HZ)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(py_si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(py_sdr_simple, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(py_stft, m)?)?;
    m.add_function(wrap_pyfunction!(py_istft, m)?)?;
    m.add_function(wrap_pyfunction!(py_drc, m)?)?;
    m.add_function(wrap_pyfunction!(py_idrc, m)?)?;
    m.add_function(wrap_pyfunction!(interaction, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    Ok(())
}
