//! 1 − cosine proximity loss and binary cross-entropy for the label head.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

const COS_EPS: f64 = 1e-12;
const BCE_CLAMP: f64 = 1e-7;

/// loss = 1 − (p·t)/((‖p‖+ε)(‖t‖+ε)); returns the loss and dloss/dpred.
/// An all-zero target is rejected as ill-posed supervision.
pub fn cosine_proximity_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dim(format!(
            "cosine loss: pred {} vs target {}",
            pred.len(),
            target.len()
        )));
    }
    let nt = norm(target);
    if nt == 0.0 {
        return Err(Error::Numeric("cosine loss: all-zero target".into()));
    }
    let np = norm(pred);
    let denom = (np + COS_EPS) * (nt + COS_EPS);
    let d = dot(pred, target);
    let loss = 1.0 - d / denom;

    let mut dpred = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        dpred[i] = -target[i] / denom;
    }
    if np > 0.0 {
        let scale = d / (np * (np + COS_EPS) * (np + COS_EPS) * (nt + COS_EPS));
        for i in 0..pred.len() {
            dpred[i] += scale * pred[i];
        }
    }
    Ok((loss, dpred))
}

/// Mean binary cross-entropy with outputs clamped to [1e-7, 1−1e-7] before
/// the logs. Returns the loss and dloss/dout (zero where the clamp bound is
/// active, matching the piecewise-constant clamped loss).
pub fn binary_cross_entropy(out: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if out.len() != y.len() || out.is_empty() {
        return Err(Error::Dim("bce: dims mismatch".into()));
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Data("bce: label values outside [0,1]".into()));
    }
    let l = out.len() as f64;
    let mut loss = 0.0;
    let mut dout = vec![0.0; out.len()];
    for i in 0..out.len() {
        let clamped = out[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y[i] * clamped.ln() + (1.0 - y[i]) * (1.0 - clamped).ln();
        if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&out[i]) {
            dout[i] = (-y[i] / clamped + (1.0 - y[i]) / (1.0 - clamped)) / l;
        }
    }
    Ok((loss / l, dout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_is_zero() {
        let v = [1.0, 2.0, 3.0];
        let (loss, _) = cosine_proximity_loss(&v, &v).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn orthogonal_is_one() {
        let (loss, _) = cosine_proximity_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_is_two() {
        let (loss, _) = cosine_proximity_loss(&[1.0, -2.0], &[-1.0, 2.0]).unwrap();
        assert!((loss - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(cosine_proximity_loss(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let target = [0.3, -0.8, 0.5];
        let pred = [0.9, 0.2, -0.4];
        let (_, dpred) = cosine_proximity_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut plus = pred;
            let mut minus = pred;
            plus[i] += h;
            minus[i] -= h;
            let (lp, _) = cosine_proximity_loss(&plus, &target).unwrap();
            let (lm, _) = cosine_proximity_loss(&minus, &target).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - dpred[i]).abs() < 1e-8,
                "coord {i}: fd {fd} vs {}",
                dpred[i]
            );
        }
    }

    #[test]
    fn bce_half_is_ln2() {
        let (loss, _) = binary_cross_entropy(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_hits_clamp_floor() {
        let (loss, _) = binary_cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((0.0..1.1e-7).contains(&loss));
    }

    #[test]
    fn bce_rejects_bad_labels() {
        assert!(binary_cross_entropy(&[0.5], &[1.5]).is_err());
    }
}
