//! Frame-level interaction between the compressed mixture and enrollment
//! spectra.
//!
//! For each of the real and imaginary planes separately, mixture frames are
//! compared with every enrollment frame by a plain inner product, the
//! similarities are row-softmaxed into a weighting matrix, and the weights mix
//! the enrollment frames into a representation with the mixture's frame count.
//! No scaling and no learned projections are involved.

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::netops::{matmul, matmul_transposed, softmax_rows, RealMatrix};

/// Row-stochastic `T_Y x T_E` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMatrix {
    weights: RealMatrix,
}

impl WeightingMatrix {
    pub fn matrix(&self) -> &RealMatrix {
        &self.weights
    }

    pub fn into_matrix(self) -> RealMatrix {
        self.weights
    }
}

/// Enrollment features re-expressed on the mixture's frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentRepresentation {
    pub real_part: RealMatrix,
    pub imag_part: RealMatrix,
    pub real_weights: WeightingMatrix,
    pub imag_weights: WeightingMatrix,
}

fn check_parts(y: &RealMatrix, e: &RealMatrix) -> Result<()> {
    if y.cols() != e.cols() {
        return Err(Error::shape(format!(
            "mixture has {} bins, enrollment has {}",
            y.cols(),
            e.cols()
        )));
    }
    if e.rows() == 0 {
        return Err(Error::shape("enrollment has no frames"));
    }
    Ok(())
}

/// `S[i][j] = <y_i, e_j>`.
pub fn similarity(y: &RealMatrix, e: &RealMatrix) -> Result<RealMatrix> {
    check_parts(y, e)?;
    matmul_transposed(y, e)
}

pub fn weight(s: &RealMatrix) -> WeightingMatrix {
    WeightingMatrix {
        weights: softmax_rows(s),
    }
}

/// Weighted enrollment features together with the weights that produced them.
pub fn consistent_with_weights(y: &RealMatrix, e: &RealMatrix) -> Result<(RealMatrix, WeightingMatrix)> {
    let a = weight(&similarity(y, e)?);
    let f = matmul(a.matrix(), e)?;
    Ok((f, a))
}

pub fn consistent(y: &RealMatrix, e: &RealMatrix) -> Result<RealMatrix> {
    consistent_with_weights(y, e).map(|(f, _)| f)
}

pub fn interaction_block(yc: &ComplexSpectrogram, ec: &ComplexSpectrogram) -> Result<ConsistentRepresentation> {
    match (yc.compressed_with_alpha, ec.compressed_with_alpha) {
        (Some(a), Some(b)) if a == b => {}
        (a, b) => {
            return Err(Error::Domain(format!(
                "mixture and enrollment must share a compression factor, got {a:?} and {b:?}"
            )))
        }
    }
    let (real_part, real_weights) = consistent_with_weights(&yc.real, &ec.real)?;
    let (imag_part, imag_weights) = consistent_with_weights(&yc.imag, &ec.imag)?;
    Ok(ConsistentRepresentation {
        real_part,
        imag_part,
        real_weights,
        imag_weights,
    })
}
