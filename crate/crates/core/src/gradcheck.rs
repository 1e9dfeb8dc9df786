//! Analytic gradients of the differentiable pieces specific to this model
//! (interaction block, magnitude compression, SI-SDR loss), checked against
//! central finite differences on small seeded instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::compress_bin;
use crate::error::{Error, Result};
use crate::interaction::consistent_with_weights;
use crate::metrics::si_sdr_loss_grad;
use crate::netops::{matmul, RealMatrix};

pub const DEFAULT_EPS: f64 = 1e-4;
/// Bins with a smaller magnitude are not checked; compression has a kink at zero.
pub const MIN_MAGNITUDE: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub component: String,
    pub max_rel_error: f64,
    pub eps: f64,
    pub seed: u64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates left out (near-zero magnitudes).
    pub skipped: usize,
}

/// Gradients of `<upstream, softmax(Y E^T) E>` with respect to `Y` and `E`.
pub fn interaction_backward(
    y: &RealMatrix,
    e: &RealMatrix,
    upstream: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    let (_, a) = consistent_with_weights(y, e)?;
    let a = a.into_matrix();
    if (upstream.rows(), upstream.cols()) != (y.rows(), y.cols()) {
        return Err(Error::shape(format!(
            "upstream {}x{} for output {}x{}",
            upstream.rows(),
            upstream.cols(),
            y.rows(),
            y.cols()
        )));
    }
    // dA = G E^T, then through the row softmax: dS = A * (dA - rowsum(A * dA)).
    let d_a = crate::netops::matmul_transposed(upstream, e)?;
    let mut d_s = RealMatrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let dot: f64 = a.row(i).iter().zip(d_a.row(i)).map(|(p, g)| p * g).sum();
        for j in 0..a.cols() {
            d_s[(i, j)] = a[(i, j)] * (d_a[(i, j)] - dot);
        }
    }
    let d_y = matmul(&d_s, e)?;
    // E enters as the values (A^T G) and through the similarities (dS^T Y).
    let mut d_e = matmul(&a.transpose(), upstream)?;
    let via_sim = matmul(&d_s.transpose(), y)?;
    for (v, s) in d_e.data_mut().iter_mut().zip(via_sim.data()) {
        *v += s;
    }
    Ok((d_y, d_e))
}

/// Vector-Jacobian product of per-bin compression `z -> |z|^alpha z/|z|`.
///
/// Bins with zero magnitude get a zero gradient.
pub fn drc_backward(
    real: &RealMatrix,
    imag: &RealMatrix,
    alpha: f64,
    upstream: (&RealMatrix, &RealMatrix),
) -> Result<(RealMatrix, RealMatrix)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let shape = (real.rows(), real.cols());
    for m in [imag, upstream.0, upstream.1] {
        if (m.rows(), m.cols()) != shape {
            return Err(Error::shape("drc_backward operands differ in shape"));
        }
    }
    let mut d_re = RealMatrix::zeros(shape.0, shape.1);
    let mut d_im = RealMatrix::zeros(shape.0, shape.1);
    for k in 0..real.data().len() {
        let (a, b) = (real.data()[k], imag.data()[k]);
        let (ua, ub) = (upstream.0.data()[k], upstream.1.data()[k]);
        let m = a.hypot(b);
        if m == 0.0 {
            continue;
        }
        // J = m^(alpha-1) I + (alpha-1) m^(alpha-3) z z^T, symmetric.
        let base = m.powf(alpha - 1.0);
        let outer = (alpha - 1.0) * m.powf(alpha - 3.0) * (a * ua + b * ub);
        d_re.data_mut()[k] = base * ua + outer * a;
        d_im.data_mut()[k] = base * ub + outer * b;
    }
    Ok((d_re, d_im))
}

/// Central differences of a scalar function, one coordinate at a time.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `max |analytic - fd| / max(|fd|, 1e-12)` over the coordinates where `keep` holds.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], keep: impl Fn(usize) -> bool) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut n = 0;
    for (i, (a, d)) in analytic.iter().zip(numeric).enumerate() {
        if !keep(i) {
            continue;
        }
        worst = worst.max((a - d).abs() / d.abs().max(REL_FLOOR));
        n += 1;
    }
    (worst, n)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> RealMatrix {
    RealMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("sizes agree")
}

fn frobenius(a: &RealMatrix, b: &RealMatrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_interaction(seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
    let (ty, te, f) = (rng.gen_range(2..=8), rng.gen_range(2..=8), rng.gen_range(2..=8));
    let y = random_matrix(ty, f, &mut rng);
    let e = random_matrix(te, f, &mut rng);
    let g = random_matrix(ty, f, &mut rng);
    let (d_y, d_e) = interaction_backward(&y, &e, &g)?;

    let n_y = ty * f;
    let mut x = y.data().to_vec();
    x.extend_from_slice(e.data());
    let objective = |v: &[f64]| {
        let yy = RealMatrix::from_vec(ty, f, v[..n_y].to_vec()).unwrap();
        let ee = RealMatrix::from_vec(te, f, v[n_y..].to_vec()).unwrap();
        frobenius(&g, &consistent_with_weights(&yy, &ee).unwrap().0)
    };
    let numeric = central_difference(objective, &x, eps);
    let mut analytic = d_y.into_vec();
    analytic.extend(d_e.into_vec());
    let (err, n) = max_relative_error(&analytic, &numeric, |_| true);
    Ok(GradReport {
        component: "interaction".into(),
        max_rel_error: err,
        eps,
        seed,
        checked: n,
        skipped: 0,
    })
}

fn check_drc(seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let (t, f) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
    let alpha = rng.gen_range(0.2..=1.0);
    let n = t * f;
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        let mag = rng.gen_range(0.2..2.0);
        let phase = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        re.push(mag * f64::cos(phase));
        im.push(mag * f64::sin(phase));
    }
    let real = RealMatrix::from_vec(t, f, re)?;
    let imag = RealMatrix::from_vec(t, f, im)?;
    let up_re = random_matrix(t, f, &mut rng);
    let up_im = random_matrix(t, f, &mut rng);
    let (d_re, d_im) = drc_backward(&real, &imag, alpha, (&up_re, &up_im))?;

    let mut x = real.data().to_vec();
    x.extend_from_slice(imag.data());
    let objective = |v: &[f64]| {
        (0..n)
            .map(|k| {
                let (a, b) = compress_bin(v[k], v[n + k], alpha);
                up_re.data()[k] * a + up_im.data()[k] * b
            })
            .sum::<f64>()
    };
    let numeric = central_difference(objective, &x, eps);
    let mut analytic = d_re.into_vec();
    analytic.extend(d_im.into_vec());
    let small: Vec<bool> = (0..n).map(|k| x[k].hypot(x[n + k]) < MIN_MAGNITUDE).collect();
    let skipped = 2 * small.iter().filter(|&&s| s).count();
    if skipped > 0 {
        eprintln!("gradcheck drc seed {seed}: skipping {skipped} coordinates below {MIN_MAGNITUDE:e}");
    }
    let (err, checked) = max_relative_error(&analytic, &numeric, |i| !small[i % n]);
    Ok(GradReport {
        component: "drc".into(),
        max_rel_error: err,
        eps,
        seed,
        checked,
        skipped,
    })
}

fn check_si_sdr(seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let reference: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let est: Vec<f64> = reference
        .iter()
        .map(|r| 0.8 * r + rng.gen_range(-1.0..1.0))
        .collect();
    let (_, analytic) = si_sdr_loss_grad(&est, &reference)?;
    let numeric = central_difference(|v| si_sdr_loss_grad(v, &reference).map(|(l, _)| l).unwrap_or(f64::NAN), &est, eps);
    let (err, n) = max_relative_error(&analytic, &numeric, |_| true);
    Ok(GradReport {
        component: "si_sdr_loss".into(),
        max_rel_error: err,
        eps,
        seed,
        checked: n,
        skipped: 0,
    })
}

/// Runs all three checks for one seed.
pub fn run_gradcheck(seed: u64, eps: f64) -> Result<Vec<GradReport>> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!("eps must lie in [1e-6, 1e-3], got {eps}")));
    }
    Ok(vec![
        check_interaction(seed, eps)?,
        check_drc(seed, eps)?,
        check_si_sdr(seed, eps)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_self_test() {
        for eps in [1e-6, 1e-4, 1e-3, 0.5] {
            let d = central_difference(|v| v[0] * v[0], &[3.0], eps);
            assert!((d[0] - 6.0).abs() < 1e-9, "eps {eps}: {}", d[0]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_matrix(3, 4, &mut rng);
        let e = random_matrix(2, 4, &mut rng);
        let (dy, de) = interaction_backward(&y, &e, &RealMatrix::zeros(3, 4)).unwrap();
        assert!(dy.data().iter().chain(de.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_enrollment_frame_has_no_mixture_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_matrix(5, 4, &mut rng);
        let e = random_matrix(1, 4, &mut rng);
        let g = random_matrix(5, 4, &mut rng);
        let (dy, de) = interaction_backward(&y, &e, &g).unwrap();
        assert!(dy.data().iter().all(|&v| v == 0.0));
        // F = broadcast of e, so dE is the column sum of the upstream.
        for c in 0..4 {
            let s: f64 = (0..5).map(|r| g[(r, c)]).sum();
            assert!((de[(0, c)] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn drc_identity_and_real_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let re = random_matrix(2, 3, &mut rng);
        let im = random_matrix(2, 3, &mut rng);
        let ur = random_matrix(2, 3, &mut rng);
        let ui = random_matrix(2, 3, &mut rng);
        let (dr, di) = drc_backward(&re, &im, 1.0, (&ur, &ui)).unwrap();
        assert!(dr.max_abs_diff(&ur) < 1e-15 && di.max_abs_diff(&ui) < 1e-15);

        let x = RealMatrix::from_vec(1, 1, vec![4.0]).unwrap();
        let zero = RealMatrix::zeros(1, 1);
        let one = RealMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let (dr, _) = drc_backward(&x, &zero, 0.5, (&one, &zero)).unwrap();
        assert!((dr[(0, 0)] - 0.5 * 4f64.powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn all_components_pass() {
        for seed in 0..3 {
            let reports = run_gradcheck(seed, DEFAULT_EPS).unwrap();
            assert_eq!(reports.len(), 3);
            for r in reports {
                assert!(r.max_rel_error < 1e-4, "{r:?}");
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn reports_are_deterministic() {
        assert_eq!(run_gradcheck(4, 1e-4).unwrap(), run_gradcheck(4, 1e-4).unwrap());
    }

    #[test]
    fn eps_range_is_enforced() {
        assert!(run_gradcheck(0, 1e-2).is_err());
        assert!(run_gradcheck(0, 1e-7).is_err());
    }
}
