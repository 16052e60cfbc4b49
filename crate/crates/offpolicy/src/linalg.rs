//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition number above which a general square system is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
/// Condition number above which a symmetric weighting matrix receives a ridge.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Ridge added to an ill-conditioned symmetric weighting matrix.
pub const RIDGE: f64 = 1e-10;

/// Ratio of the largest to the smallest singular value (infinite when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !max.is_finite() {
        return f64::INFINITY;
    }
    if min <= 0.0 {
        return f64::INFINITY;
    }
    max / min
}

/// Solves `a x = b` with an LU factorization, rejecting numerically singular systems.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "{what}: shape mismatch {}x{} vs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let cond = condition_number(a);
    if !(cond < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem(format!("{what}: condition number {cond:e}")));
    }
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::SingularSystem(format!("{what}: LU factorization failed")))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem(format!("{what}: non-finite solution")))
    }
}

/// Matrix version of [`solve`].
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !(cond < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem(format!("{what}: condition number {cond:e}")));
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::SingularSystem(format!("{what}: LU factorization failed")))
}

/// Cholesky-based solver for a symmetric positive (semi)definite matrix.
///
/// When the condition number exceeds [`RIDGE_CONDITION`] the matrix is
/// regularized with [`RIDGE`] times the identity and [`SpdSolver::ridged`]
/// reports it.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    ridged: bool,
}

impl SpdSolver {
    /// Factorizes `c`, adding a ridge when it is ill-conditioned.
    pub fn new(c: &DMatrix<f64>, what: &str) -> Result<Self> {
        let sym = (c + c.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        let ridged = !(min > 0.0 && max / min <= RIDGE_CONDITION);
        let mat = if ridged {
            let n = sym.nrows();
            sym + DMatrix::identity(n, n) * RIDGE
        } else {
            sym
        };
        let chol = Cholesky::new(mat)
            .ok_or_else(|| Error::SingularSystem(format!("{what}: matrix is not positive definite")))?;
        Ok(SpdSolver { chol, ridged })
    }

    /// Solves `c x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Whether the ridge was applied.
    pub fn ridged(&self) -> bool {
        self.ridged
    }

    /// Lower-triangular Cholesky factor `l` with `c = l lᵀ`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Weighted norm `sqrt(sum_s d(s) v(s)^2)`.
pub fn weighted_norm(v: &DVector<f64>, d: &DVector<f64>) -> f64 {
    weighted_sq_norm(v, d).sqrt()
}

/// Weighted squared norm `sum_s d(s) v(s)^2`.
pub fn weighted_sq_norm(v: &DVector<f64>, d: &DVector<f64>) -> f64 {
    v.iter().zip(d.iter()).map(|(x, w)| w * x * x).sum()
}

/// Operator norm induced by the weighted norm, `||D^{1/2} M D^{-1/2}||_2`.
///
/// Returns infinity when some weight is zero.
pub fn weighted_operator_norm(m: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    if d.iter().any(|&x| x <= 0.0) {
        return f64::INFINITY;
    }
    let n = d.len();
    let scaled = DMatrix::from_fn(n, n, |i, j| d[i].sqrt() * m[(i, j)] / d[j].sqrt());
    spectral_norm(&scaled)
}

/// Diagonal matrix built from a vector.
pub fn diag(d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_rejects_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve(&a, &b, "t"), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let got = solve(&a, &(&a * &x), "t").unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn spd_solver_ridges_singular_gram_matrix() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let c = x.transpose() * &x;
        let s = SpdSolver::new(&c, "t").unwrap();
        assert!(s.ridged());
        let c2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(!SpdSolver::new(&c2, "t").unwrap().ridged());
    }

    #[test]
    fn weighted_operator_norm_of_identity_is_one() {
        let d = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let i = DMatrix::identity(3, 3);
        assert!((weighted_operator_norm(&i, &d) - 1.0).abs() < 1e-12);
    }
}
