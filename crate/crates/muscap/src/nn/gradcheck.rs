//! Central finite-difference gradient verification. This is the independent
//! oracle every hand-written backward pass is held against.

use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-6;
const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub pass: bool,
}

/// Compares `analytic` against central differences of `f` at `theta`.
/// The relative error is ‖g_a − g_fd‖∞ normalized by max(‖g_a‖∞, 1e-8).
pub fn gradient_check<F>(
    f: &F,
    theta: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if theta.len() != analytic.len() {
        return Err(Error::Dim("gradient_check: length mismatch".into()));
    }
    let base = f(theta);
    if !base.is_finite() {
        return Err(Error::Numeric(
            "gradient_check: non-finite objective".into(),
        ));
    }

    let fd = finite_difference_gradient(f, theta)?;

    let g_norm = analytic
        .iter()
        .fold(0.0f64, |a, &g| a.max(g.abs()))
        .max(NORM_FLOOR);
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for i in 0..theta.len() {
        let rel = (analytic[i] - fd[i]).abs() / g_norm;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_coord,
        pass: max_rel_err < tolerance,
    })
}

#[cfg(feature = "parallel")]
pub fn finite_difference_gradient<F>(f: &F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    (0..theta.len())
        .into_par_iter()
        .map(|i| fd_coord(f, theta, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn finite_difference_gradient<F>(f: &F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    finite_difference_gradient_seq(f, theta)
}

/// Sequential variant, kept for benches.
pub fn finite_difference_gradient_seq<F>(f: &F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..theta.len()).map(|i| fd_coord(f, theta, i)).collect()
}

fn fd_coord<F>(f: &F, theta: &[f64], i: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut work = theta.to_vec();
    work[i] = theta[i] + FD_STEP;
    let plus = f(&work);
    work[i] = theta[i] - FD_STEP;
    let minus = f(&work);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Numeric(format!(
            "gradient_check: non-finite objective at coordinate {i}"
        )));
    }
    Ok((plus - minus) / (2.0 * FD_STEP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let f = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>();
        let theta = [1.0, -2.0, 0.5];
        let analytic: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        let report = gradient_check(&f, &theta, &analytic, 1e-9).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_fails() {
        let f = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>();
        let theta = [1.0, -2.0];
        let wrong: Vec<f64> = theta.iter().map(|x| 4.0 * x).collect(); // off by 2x
        let report = gradient_check(&f, &theta, &wrong, 1e-5).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |_: &[f64]| f64::NAN;
        assert!(gradient_check(&f, &[1.0], &[0.0], 1e-5).is_err());
    }
}
