//! SI-SDR, a plain energy-ratio SDR, improvements over the mixture, and the
//! negative SI-SDR training loss with its analytic gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude of the value reported when a ratio saturates.
pub const CAP_DB: f64 = 300.0;
const CAP_RATIO: f64 = 1e30;

/// A dB value plus whether it hit the +/-300 dB cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decibels {
    pub db: f64,
    pub capped: bool,
}

fn ratio_db(num: f64, den: f64) -> Decibels {
    if num == 0.0 {
        return Decibels { db: -CAP_DB, capped: true };
    }
    if den == 0.0 {
        return Decibels { db: CAP_DB, capped: true };
    }
    let r = num / den;
    if r > CAP_RATIO {
        Decibels { db: CAP_DB, capped: true }
    } else if r < 1.0 / CAP_RATIO {
        Decibels { db: -CAP_DB, capped: true }
    } else {
        Decibels {
            db: 10.0 * r.log10(),
            capped: false,
        }
    }
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate has {} samples, reference has {}",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Degenerate("empty signals".into()));
    }
    Ok(())
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-removed estimate and reference, plus the projection pieces shared by
/// the metric and its gradient.
struct Projection {
    est: Vec<f64>,
    reference: Vec<f64>,
    /// `<est, ref>`
    cross: f64,
    /// `||ref||^2`
    ref_energy: f64,
    /// `||s_target||^2`
    target_energy: f64,
    /// `||est - s_target||^2`
    error_energy: f64,
}

fn project(est: &[f64], reference: &[f64]) -> Result<Projection> {
    check_pair(est, reference)?;
    let est = centered(est);
    let reference = centered(reference);
    let ref_energy = energy(&reference);
    if ref_energy == 0.0 {
        return Err(Error::Degenerate("reference is zero after mean removal".into()));
    }
    let cross = inner(&est, &reference);
    let scale = cross / ref_energy;
    let error_energy = est
        .iter()
        .zip(&reference)
        .map(|(e, r)| (e - scale * r).powi(2))
        .sum();
    Ok(Projection {
        target_energy: scale * scale * ref_energy,
        est,
        reference,
        cross,
        ref_energy,
        error_energy,
    })
}

pub fn si_sdr_detail(est: &[f64], reference: &[f64]) -> Result<Decibels> {
    let p = project(est, reference)?;
    Ok(ratio_db(p.target_energy, p.error_energy))
}

/// Scale-invariant SDR in dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    si_sdr_detail(est, reference).map(|d| d.db)
}

pub fn sdr_simple_detail(est: &[f64], reference: &[f64]) -> Result<Decibels> {
    check_pair(est, reference)?;
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::Degenerate("reference is all zeros".into()));
    }
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (r - e).powi(2)).sum();
    Ok(ratio_db(ref_energy, err))
}

/// `10 log10(||ref||^2 / ||ref - est||^2)`, no projection and no mean removal.
pub fn sdr_simple(est: &[f64], reference: &[f64]) -> Result<f64> {
    sdr_simple_detail(est, reference).map(|d| d.db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub si_sdr_db: f64,
    pub si_sdri_db: f64,
    pub sdr_db: f64,
    pub sdri_db: f64,
    pub capped: bool,
}

pub fn improvements(est: &[f64], mix: &[f64], reference: &[f64]) -> Result<EvalReport> {
    check_pair(mix, reference)?;
    let si_est = si_sdr_detail(est, reference)?;
    let si_mix = si_sdr_detail(mix, reference)?;
    let sdr_est = sdr_simple_detail(est, reference)?;
    let sdr_mix = sdr_simple_detail(mix, reference)?;
    Ok(EvalReport {
        si_sdr_db: si_est.db,
        si_sdri_db: si_est.db - si_mix.db,
        sdr_db: sdr_est.db,
        sdri_db: sdr_est.db - sdr_mix.db,
        capped: si_est.capped || si_mix.capped || sdr_est.capped || sdr_mix.capped,
    })
}

/// Negative SI-SDR (dB) and its gradient with respect to the raw estimate.
///
/// With mean-removed `x` and `r`, `p = <x, r>`, `R = ||r||^2` and
/// `D = R ||x - (p/R) r||^2`, the metric is `10/ln10 (2 ln|p| - ln D)` and
/// its gradient in `x` is `10/ln10 (2 r / p - 2 (R x - p r) / D)`. Mean
/// removal is a projection, so the gradient is projected the same way.
pub fn si_sdr_loss_grad(est: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = project(est, reference)?;
    let d = p.ref_energy * p.error_energy;
    if p.cross == 0.0 {
        return Err(Error::GradientUndefined(
            "estimate is orthogonal to the reference".into(),
        ));
    }
    if !(d > 1e-24 * p.ref_energy * energy(&p.est)) {
        return Err(Error::GradientUndefined(
            "estimate is a scaled copy of the reference".into(),
        ));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let loss = -10.0 * (p.target_energy / p.error_energy).log10();
    let mut grad: Vec<f64> = p
        .est
        .iter()
        .zip(&p.reference)
        .map(|(x, r)| -k * (2.0 * r / p.cross - 2.0 * (p.ref_energy * x - p.cross * r) / d))
        .collect();
    let mean = grad.iter().sum::<f64>() / grad.len() as f64;
    grad.iter_mut().for_each(|g| *g -= mean);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn worked_instance() {
        // ref and est are already zero-mean; s = 0.5 ref, e = est - s.
        let v = si_sdr(&[1.0, -1.0, 0.0], &[1.0, 0.0, -1.0]).unwrap();
        assert!((v - 10.0 * (0.5f64 / 1.5).log10()).abs() < 1e-12);
        assert!((v + 4.771).abs() < 1e-3);
    }

    #[test]
    fn capped_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(100, &mut rng);
        let d = si_sdr_detail(&r, &r).unwrap();
        assert_eq!(d, Decibels { db: CAP_DB, capped: true });
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), CAP_DB);
        let ortho = si_sdr_detail(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!(ortho, Decibels { db: -CAP_DB, capped: true });
        assert_eq!(sdr_simple(&r, &r).unwrap(), CAP_DB);
    }

    #[test]
    fn sdr_simple_cases() {
        assert_eq!(sdr_simple(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random(50, &mut rng);
        let e = random(50, &mut rng);
        let num: f64 = r.iter().map(|v| v * v).sum();
        let den: f64 = r.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((sdr_simple(&e, &r).unwrap() - 10.0 * (num / den).log10()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(si_sdr(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(matches!(sdr_simple(&[1.0], &[0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random(256, &mut rng);
        let e: Vec<f64> = r.iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
        let base = si_sdr(&e, &r).unwrap();
        for a in [0.5, 2.0, 10.0] {
            let s: Vec<f64> = e.iter().map(|v| a * v).collect();
            assert!((si_sdr(&s, &r).unwrap() - base).abs() < 1e-6);
        }
        let shifted: Vec<f64> = e.iter().map(|v| v + 0.7).collect();
        assert!((si_sdr(&shifted, &r).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn improvements_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random(128, &mut rng);
        let m: Vec<f64> = r.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let rep = improvements(&m, &m, &r).unwrap();
        assert_eq!(rep.si_sdri_db, 0.0);
        assert_eq!(rep.sdri_db, 0.0);
        assert!(!rep.capped);
        let best = improvements(&r, &m, &r).unwrap();
        assert!(best.capped);
        assert_eq!(best.si_sdr_db, CAP_DB);
        assert!(best.si_sdri_db > 250.0);
    }

    #[test]
    fn report_json_keys() {
        let rep = EvalReport {
            si_sdr_db: 1.0,
            si_sdri_db: 2.0,
            sdr_db: 3.0,
            sdri_db: 4.0,
            capped: false,
        };
        assert_eq!(
            serde_json::to_string(&rep).unwrap(),
            r#"{"si_sdr_db":1.0,"si_sdri_db":2.0,"sdr_db":3.0,"sdri_db":4.0,"capped":false}"#
        );
    }

    #[test]
    fn gradient_is_scale_invariant_and_matches_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random(64, &mut rng);
        let e = random(64, &mut rng);
        let (loss, grad) = si_sdr_loss_grad(&e, &r).unwrap();
        assert!((loss + si_sdr(&e, &r).unwrap()).abs() < 1e-9);
        let along: f64 = grad.iter().zip(&e).map(|(g, x)| g * x).sum();
        assert!(along.abs() < 1e-8);
        assert!(grad.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn step_against_gradient_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random(64, &mut rng);
        let e = random(64, &mut rng);
        let (loss, grad) = si_sdr_loss_grad(&e, &r).unwrap();
        let stepped: Vec<f64> = e.iter().zip(&grad).map(|(x, g)| x - 1e-3 * g).collect();
        assert!(si_sdr_loss_grad(&stepped, &r).unwrap().0 < loss);
    }

    #[test]
    fn degenerate_gradient() {
        let r = vec![1.0, -2.0, 0.5, 0.5];
        let s: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert!(matches!(si_sdr_loss_grad(&s, &r), Err(Error::GradientUndefined(_))));
        assert!(matches!(
            si_sdr_loss_grad(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]),
            Err(Error::GradientUndefined(_))
        ));
    }
}
