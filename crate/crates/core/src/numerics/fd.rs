//! Central finite-difference gradient checking.
//!
//! The oracle against which every analytic gradient in the crate is judged.
//! It knows nothing about the tape: it only perturbs a flat parameter vector
//! and re-evaluates a closure.

use crate::error::{Error, Result};

/// Relative error between an analytic derivative and a central difference,
/// guarded against tiny denominators.
fn rel_err(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / analytic.abs().max(central.abs()).max(1e-8)
}

/// Check every coordinate. Returns the max relative error over `theta`.
pub fn fd_check(
    theta: &mut [f64],
    analytic: &[f64],
    f: impl FnMut(&[f64]) -> f64,
    step: f64,
) -> Result<f64> {
    let coords: Vec<usize> = (0..theta.len()).collect();
    fd_check_coords(theta, analytic, f, step, &coords)
}

/// Check a chosen subset of coordinates (the full model has tens of
/// thousands; checks sample them but still cover every parameter tensor).
pub fn fd_check_coords(
    theta: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    step: f64,
    coords: &[usize],
) -> Result<f64> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Domain(format!("fd step must be positive, got {step}")));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "fd_check: {} parameters but {} analytic gradients",
            theta.len(),
            analytic.len()
        )));
    }
    let mut max_err = 0.0f64;
    for &i in coords {
        let saved = theta[i];
        theta[i] = saved + step;
        let up = f(theta);
        theta[i] = saved - step;
        let down = f(theta);
        theta[i] = saved;
        let central = (up - down) / (2.0 * step);
        max_err = max_err.max(rel_err(analytic[i], central));
    }
    Ok(max_err)
}
