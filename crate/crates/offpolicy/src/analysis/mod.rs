//! Closed-form objectives, fixed points, decompositions and bound constants.

mod bounds;
mod normalize;
mod objectives;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{self, SpdSolver};
use crate::mdp::{self, FiniteMdp, Policy, StateWeighting};

pub use bounds::{bound_constant_from, bound_constants, subset_operator_constant, BoundReport};
pub use normalize::{normalize_ve, normalize_ve_with_spread, MIN_SPREAD};
pub use objectives::{
    approx_error, be_decomposition, be_solution, be_value, bellman_residual, generalized_pbe_solution,
    generalized_pbe_value, oblique_projection, projection, tde_fixed_point, tde_value, tde_variance, ve, ve_minimizer,
    ObliqueProjection,
};

/// The `(A, b, C)` triple of a linear TD objective under a weighting and trace parameter.
#[derive(Debug, Clone)]
pub struct ObjectiveMatrices {
    /// `A = X^T D (I - lambda P)^{-1} (I - P) X`.
    pub a: DMatrix<f64>,
    /// `b = X^T D (I - lambda P)^{-1} r_pi`.
    pub b: DVector<f64>,
    /// `C = X^T D X`.
    pub c: DMatrix<f64>,
    /// Weighting the matrices were computed under.
    pub weighting: StateWeighting,
    /// Trace parameter.
    pub lambda: f64,
}

fn check_dims(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap) -> Result<()> {
    let n = mdp.n_states();
    if pi.n_states() != n || pi.n_actions() != mdp.n_actions() || d.len() != n || x.n_states() != n {
        return Err(Error::InvalidParameter("MDP, policy, weighting and features disagree on dimensions".into()));
    }
    Ok(())
}

/// Computes `(A, b, C)` for the given weighting and trace parameter.
pub fn compute_matrices(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x: &FeatureMap,
    lambda: f64,
) -> Result<ObjectiveMatrices> {
    check_dims(mdp, pi, d, x)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let n = mdp.n_states();
    let p = mdp::discounted_transition_operator(mdp, pi);
    let r = mdp::expected_rewards(mdp, pi);
    let eye = DMatrix::<f64>::identity(n, n);
    let xm = x.matrix();
    let xtd = xm.transpose() * linalg::diag(&d.d);
    let (lhs, rhs) = if lambda == 0.0 {
        (&eye - &p, r)
    } else {
        let resolvent = &eye - &p * lambda;
        let joint = DMatrix::from_fn(n, n + 1, |i, j| if j < n { (&eye - &p)[(i, j)] } else { r[i] });
        let solved = linalg::solve_matrix(&resolvent, &joint, "trace resolvent")?;
        (solved.columns(0, n).into_owned(), solved.column(n).into_owned())
    };
    Ok(ObjectiveMatrices { a: &xtd * lhs * xm, b: &xtd * rhs, c: &xtd * xm, weighting: d.clone(), lambda })
}

impl ObjectiveMatrices {
    /// Expected TD update `b - A w`.
    pub fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * w
    }

    /// Solver for `C`, ridged when ill-conditioned.
    pub fn c_solver(&self) -> Result<SpdSolver> {
        SpdSolver::new(&self.c, "C")
    }
}

/// Linear PBE `(b - A w)^T C^{-1} (b - A w)`.
pub fn linear_pbe(w: &DVector<f64>, m: &ObjectiveMatrices) -> Result<f64> {
    let r = m.residual(w);
    let solver = m.c_solver()?;
    Ok(r.dot(&solver.solve(&r)).max(0.0))
}

/// Norm of the expected update `||b - A w||^2`.
pub fn neu(w: &DVector<f64>, m: &ObjectiveMatrices) -> f64 {
    m.residual(w).norm_squared()
}

/// Gradient of [`neu`], `-2 A^T (b - A w)`.
pub fn neu_gradient(w: &DVector<f64>, m: &ObjectiveMatrices) -> DVector<f64> {
    m.a.transpose() * m.residual(w) * -2.0
}

/// Gradient of [`linear_pbe`], `-2 A^T C^{-1} (b - A w)`.
pub fn pbe_gradient(w: &DVector<f64>, m: &ObjectiveMatrices) -> Result<DVector<f64>> {
    let solver = m.c_solver()?;
    Ok(m.a.transpose() * solver.solve(&m.residual(w)) * -2.0)
}

/// Weights solving `A w = b`.
pub fn td_fixed_point(m: &ObjectiveMatrices) -> Result<DVector<f64>> {
    linalg::solve(&m.a, &m.b, "TD fixed point")
}

/// Inner maximization of the saddlepoint form of the PBE.
///
/// Returns `h* = C^{-1}(b - A w)` and the attained value
/// `2 (b - A w)^T h* - h*^T C h*`.
pub fn saddlepoint_inner_max(m: &ObjectiveMatrices, w: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let r = m.residual(w);
    let h = m.c_solver()?.solve(&r);
    let value = 2.0 * r.dot(&h) - h.dot(&(&m.c * &h));
    Ok((h, value))
}

/// Value of the saddlepoint objective `2 (b - A w)^T h - h^T C h` at a given `h`.
pub fn saddlepoint_objective(m: &ObjectiveMatrices, w: &DVector<f64>, h: &DVector<f64>) -> f64 {
    2.0 * m.residual(w).dot(h) - h.dot(&(&m.c * h))
}

/// Named choice of weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightingChoice {
    /// Behavior stationary distribution `d_b`.
    Db,
    /// Target stationary distribution `d_pi`.
    Dpi,
    /// Emphatic weighting `m`.
    M,
}

impl WeightingChoice {
    /// Parses `db`, `dpi` or `m`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "db" => Ok(WeightingChoice::Db),
            "dpi" => Ok(WeightingChoice::Dpi),
            "m" => Ok(WeightingChoice::M),
            _ => Err(Error::InvalidParameter(format!("unknown weighting '{s}'"))),
        }
    }

    /// Short label.
    pub fn label(&self) -> &'static str {
        match self {
            WeightingChoice::Db => "db",
            WeightingChoice::Dpi => "dpi",
            WeightingChoice::M => "m",
        }
    }

    /// All three choices.
    pub fn all() -> [WeightingChoice; 3] {
        [WeightingChoice::Db, WeightingChoice::Dpi, WeightingChoice::M]
    }
}

/// The three standard weightings of an off-policy problem.
#[derive(Debug, Clone)]
pub struct Weightings {
    /// Behavior stationary distribution.
    pub d_b: StateWeighting,
    /// Target stationary distribution.
    pub d_pi: StateWeighting,
    /// Emphatic weighting built from `d_b`.
    pub m: StateWeighting,
}

impl Weightings {
    /// Computes `d_b`, `d_pi` and `m` for the given trace parameter.
    pub fn compute(mdp: &FiniteMdp, pi: &Policy, b: &Policy, lambda: f64) -> Result<Self> {
        let d_b = mdp::behavior_weighting(mdp, b)?;
        let d_pi = mdp::target_weighting(mdp, pi)?;
        let f = mdp::followon(mdp, pi, &d_b)?;
        let m = mdp::emphatic_weighting(&d_b, &f, lambda)?;
        Ok(Weightings { d_b, d_pi, m })
    }

    /// Weighting selected by `choice`.
    pub fn get(&self, choice: WeightingChoice) -> &StateWeighting {
        match choice {
            WeightingChoice::Db => &self.d_b,
            WeightingChoice::Dpi => &self.d_pi,
            WeightingChoice::M => &self.m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{self, tabular};
    use crate::mdp::builders;
    use crate::mdp::WeightingKind;

    fn uniform(n: usize) -> StateWeighting {
        StateWeighting::new(DVector::from_element(n, 1.0 / n as f64), WeightingKind::Custom).unwrap()
    }

    #[test]
    fn two_state_matrices_match_hand_computation() {
        let p = vec![0.5, 0.5, 0.0, 1.0, 1.0, 0.0, 0.2, 0.8];
        let r = vec![1.0, 2.0, 0.0, 3.0, -1.0, 0.0, 0.5, 4.0];
        let mdp = FiniteMdp::new(2, 2, p, r, vec![0.9; 8], vec![1.0, 0.0]).unwrap();
        let pi = Policy::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
        let m = compute_matrices(&mdp, &pi, &uniform(2), &tabular(2), 0.0).unwrap();
        // P_pi rows: s0 -> [0.25, 0.75], s1 -> [0.25 + 0.15, 0.6] = [0.4, 0.6]
        // r_pi: s0 = 0.5*(0.5*1 + 0.5*2) + 0.5*3 = 2.25; s1 = 0.25*(-1) + 0.75*(0.2*0.5 + 0.8*4) = 2.225
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[0.5 * (1.0 - 0.9 * 0.25), -0.5 * 0.9 * 0.75, -0.5 * 0.9 * 0.4, 0.5 * (1.0 - 0.9 * 0.6)],
        );
        let b = DVector::from_vec(vec![0.5 * 2.25, 0.5 * 2.225]);
        assert!((m.a - a).abs().max() < 1e-12);
        assert!((m.b - b).abs().max() < 1e-12);
    }

    #[test]
    fn zero_reward_gives_zero_b() {
        let prob = builders::baird_star();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &features::baird(), 0.3).unwrap();
        assert_eq!(m.b.abs().max(), 0.0);
    }

    #[test]
    fn lambda_one_tabular_solution_is_true_value() {
        let prob = builders::random_walk(5).unwrap();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &tabular(5), 1.0).unwrap();
        let w = td_fixed_point(&m).unwrap();
        let v = mdp::true_values(&prob.mdp, &prob.target).unwrap();
        assert!((w - v).abs().max() < 1e-9);
    }

    #[test]
    fn tabular_on_policy_a_is_weighted_identity_minus_p() {
        let prob = builders::random_walk(5).unwrap();
        let d = mdp::target_weighting(&prob.mdp, &prob.target).unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &tabular(5), 0.0).unwrap();
        let l = DMatrix::identity(5, 5) - mdp::discounted_transition_operator(&prob.mdp, &prob.target);
        assert!((m.a - linalg::diag(&d.d) * l).abs().max() < 1e-15);
    }

    #[test]
    fn pbe_vanishes_at_td_fixed_point_and_bounds_neu() {
        let prob = builders::random_walk(19).unwrap();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let x = features::state_aggregation(19, 2).unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &x, 0.0).unwrap();
        let w = td_fixed_point(&m).unwrap();
        assert!(linear_pbe(&w, &m).unwrap() < 1e-10);
        assert!(neu(&w, &m) < 1e-20);
        assert!(pbe_gradient(&w, &m).unwrap().norm() < 1e-9);
        let w2 = DVector::from_vec(vec![0.3, -0.7]);
        let lmin = m.c.clone().symmetric_eigenvalues().min();
        assert!(neu(&w2, &m) >= lmin * linear_pbe(&w2, &m).unwrap() - 1e-15);
    }

    #[test]
    fn td_fixed_point_matches_expected_update_iteration() {
        let prob = builders::random_walk(19).unwrap();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let x = features::state_aggregation(19, 2).unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &x, 0.0).unwrap();
        let w_star = td_fixed_point(&m).unwrap();
        let mut w = DVector::zeros(2);
        for _ in 0..200_000 {
            w += m.residual(&w) * 1.0;
        }
        assert!((w - w_star).abs().max() < 1e-8);
    }

    #[test]
    fn saddlepoint_value_is_zero_at_fixed_point() {
        let prob = builders::random_walk(5).unwrap();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let m =
            compute_matrices(&prob.mdp, &prob.target, &d, &features::state_aggregation(5, 2).unwrap(), 0.0).unwrap();
        let w = td_fixed_point(&m).unwrap();
        let (h, v) = saddlepoint_inner_max(&m, &w).unwrap();
        assert!(h.norm() < 1e-10 && v.abs() < 1e-12);
    }

    #[test]
    fn saddlepoint_maximizer_beats_grid() {
        let prob = builders::random_walk(5).unwrap();
        let d = mdp::behavior_weighting(&prob.mdp, &prob.behavior).unwrap();
        let m =
            compute_matrices(&prob.mdp, &prob.target, &d, &features::state_aggregation(5, 2).unwrap(), 0.0).unwrap();
        let w = DVector::from_vec(vec![0.4, -0.2]);
        let (h, v) = saddlepoint_inner_max(&m, &w).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0.0, 0.0);
        let step = 0.002;
        for i in -500..=500 {
            for j in -500..=500 {
                let g = DVector::from_vec(vec![i as f64 * step, j as f64 * step]);
                let val = saddlepoint_objective(&m, &w, &g);
                if val > best {
                    best = val;
                    arg = (g[0], g[1]);
                }
            }
        }
        assert!(v >= best - 1e-12);
        assert!((arg.0 - h[0]).abs() <= step && (arg.1 - h[1]).abs() <= step);
    }

    #[test]
    fn pbe_matches_explicit_projection_on_policy() {
        let prob = builders::random_walk(5).unwrap();
        let d = mdp::target_weighting(&prob.mdp, &prob.target).unwrap();
        let x = tabular(5);
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &x, 0.0).unwrap();
        let w = DVector::from_vec(vec![0.1, -0.4, 0.3, 0.9, -0.2]);
        let delta = bellman_residual(&prob.mdp, &prob.target, &x, &w);
        let proj = projection(&x, &d).unwrap() * &delta;
        let direct = linalg::weighted_sq_norm(&proj, &d.d);
        assert!((linear_pbe(&w, &m).unwrap() - direct).abs() < 1e-8);
    }

    #[test]
    fn orthonormal_features_make_neu_equal_pbe() {
        let prob = builders::random_walk(5).unwrap();
        let d = uniform(5);
        let x = FeatureMap::new(DMatrix::identity(5, 5) * 5f64.sqrt(), "scaled").unwrap();
        let m = compute_matrices(&prob.mdp, &prob.target, &d, &x, 0.0).unwrap();
        let w = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4, 0.0]);
        assert!((neu(&w, &m) - linear_pbe(&w, &m).unwrap()).abs() < 1e-10);
    }
}
