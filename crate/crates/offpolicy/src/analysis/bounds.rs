//! Constants of the projected fixed-point error bound.

use nalgebra::DMatrix;
use serde::Serialize;

use super::check_dims;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg;
use crate::mdp::{self, FiniteMdp, Policy, StateWeighting};

/// Bound constants for a weighting `d`, features and an evaluation weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// `||D^{1/2} P D^{-1/2}||_2`, the `d`-norm of the discounted transition operator.
    pub c_d: f64,
    /// `||L^{-1} X^T D P X L^{-T}||_2` with `X^T D X = L L^T`.
    pub s_df: f64,
    /// `max_s d_eval(s) / d(s)`.
    pub kappa: f64,
    /// `C(d, F)`, or `None` when `s_df >= 1` and the bound does not apply.
    pub bound_constant: Option<f64>,
    /// `sqrt(kappa) C(d, F)`, the constant for error measured under `d_eval`.
    pub eval_bound_constant: Option<f64>,
}

/// Computes the bound constants.
pub fn bound_constants(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x: &FeatureMap,
    d_eval: &StateWeighting,
) -> Result<BoundReport> {
    check_dims(mdp, pi, d, x)?;
    let p = mdp::discounted_transition_operator(mdp, pi);
    let c_d = linalg::weighted_operator_norm(&p, &d.d);

    let xm = x.matrix();
    let xtd = xm.transpose() * linalg::diag(&d.d);
    let gram = &xtd * xm;
    let s_df = match gram.clone().cholesky() {
        Some(chol) => {
            let l = chol.l();
            let k = &xtd * &p * xm;
            let left =
                l.solve_lower_triangular(&k).unwrap_or_else(|| DMatrix::from_element(k.nrows(), k.ncols(), f64::NAN));
            let s = l
                .solve_lower_triangular(&left.transpose())
                .unwrap_or_else(|| DMatrix::from_element(k.nrows(), k.ncols(), f64::NAN));
            let norm = linalg::spectral_norm(&s.transpose());
            if norm.is_finite() {
                norm
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    };

    let kappa =
        d.d.iter()
            .zip(d_eval.d.iter())
            .filter(|(_, &e)| e > 0.0)
            .map(|(&w, &e)| if w > 0.0 { e / w } else { f64::INFINITY })
            .fold(0.0, f64::max);

    let bound_constant = bound_constant_from(c_d, s_df);
    Ok(BoundReport { c_d, s_df, kappa, bound_constant, eval_bound_constant: bound_constant.map(|c| kappa.sqrt() * c) })
}

/// `C(d, F)` from the transition constant and a projected-operator constant,
/// or `None` when the operator constant is not below one.
pub fn bound_constant_from(c_d: f64, operator_constant: f64) -> Option<f64> {
    if operator_constant < 1.0 {
        Some(if c_d < 1.0 { 1.0 / (1.0 - c_d) } else { (1.0 + c_d) / (1.0 - operator_constant) })
    } else {
        None
    }
}

/// Projected-operator constant of the affine subset `{X (w0 + U c)}` of the
/// function class, where the columns of `directions` (`k x m`) span `U`.
///
/// Returns `sup_c ||Pi_d P X U c||_d / ||X U c||_d`. With `U = I` this equals
/// [`BoundReport::s_df`]; a smaller subset that still contains the fixed point
/// and the projected true values can certify a bound when `s_df >= 1`.
pub fn subset_operator_constant(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x: &FeatureMap,
    directions: &DMatrix<f64>,
) -> Result<f64> {
    check_dims(mdp, pi, d, x)?;
    if directions.nrows() != x.k() || directions.ncols() == 0 {
        return Err(Error::InvalidParameter(format!("directions must have {} rows and at least one column", x.k())));
    }
    let p = mdp::discounted_transition_operator(mdp, pi);
    let dm = linalg::diag(&d.d);
    let xm = x.matrix();
    let y = xm * directions;
    let gram_y = y.transpose() * &dm * &y;
    let chol_y = gram_y
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("directions are dependent under the weighting".into()))?;
    // ||Pi P Y c||_d^2 = c^T (X^T D P Y)^T C^{-1} (X^T D P Y) c.
    let cross = xm.transpose() * &dm * &p * &y;
    let chol_x =
        (xm.transpose() * &dm * xm).cholesky().ok_or_else(|| Error::SingularSystem("X^T D X is singular".into()))?;
    let left =
        chol_x.l().solve_lower_triangular(&cross).ok_or_else(|| Error::SingularSystem("X^T D X is singular".into()))?;
    let scaled = chol_y
        .l()
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::SingularSystem("directions are dependent under the weighting".into()))?;
    Ok(linalg::spectral_norm(&scaled))
}
