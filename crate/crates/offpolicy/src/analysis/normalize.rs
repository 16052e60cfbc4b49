//! Normalization of value-error tables.

use crate::error::{Error, Result};

/// Smallest spread between the largest value error and the floor that can be normalized.
pub const MIN_SPREAD: f64 = 1e-20;

/// Maps value errors to `(VE - floor) / max(VE - floor)`.
///
/// Entries that fall below the floor by rounding are clamped to zero.
pub fn normalize_ve(values: &[f64], floor: f64) -> Result<Vec<f64>> {
    normalize_ve_with_spread(values, floor, MIN_SPREAD)
}

/// [`normalize_ve`] with a caller-chosen smallest admissible spread, for
/// tables whose cells carry rounding noise on a known scale.
pub fn normalize_ve_with_spread(values: &[f64], floor: f64, min_spread: f64) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) || !floor.is_finite() {
        return Err(Error::DegenerateTable("non-finite value error".into()));
    }
    let spread = values.iter().map(|v| v - floor).fold(f64::NEG_INFINITY, f64::max);
    if !(spread > min_spread) {
        return Err(Error::DegenerateTable(format!("spread {spread:e} too small to normalize")));
    }
    Ok(values.iter().map(|v| ((v - floor) / spread).max(0.0)).collect())
}
