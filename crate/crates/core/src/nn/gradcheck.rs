//! Central finite-difference gradient checks.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest [`relative_error`] over the checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate (index into the point) where the largest error occurred.
    pub worst_index: usize,
    /// Numeric derivatives, in the order the coordinates were checked.
    pub numeric: Vec<f64>,
}

/// `|analytic - numeric| / max(1, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compares `analytic` against central differences of `f` around `point`.
///
/// `coords` restricts the check to a subset of coordinates; `None` checks all.
pub fn grad_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if point.len() != analytic.len() {
        return Err(Error::dims("grad_check", &[point.len()], &[analytic.len()]));
    }
    if !(step > 0.0) {
        return Err(Error::validation("finite-difference step must be positive"));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut theta = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        numeric: Vec::with_capacity(coords.len()),
    };
    for &i in coords {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = f(&theta);
        theta[i] = orig - step;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                tensor: format!("coordinate {i}"),
                what: "function value",
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.numeric.push(numeric);
    }
    Ok(report)
}
