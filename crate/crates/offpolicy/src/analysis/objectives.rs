//! Bellman error, generalized PBE, TD error and value error.

use nalgebra::{DMatrix, DVector};

use super::{check_dims, compute_matrices, linear_pbe};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{self, SpdSolver};
use crate::mdp::{self, FiniteMdp, Policy, StateWeighting};

/// Singular-value cutoff, relative to the largest, for least-squares solves.
const PSEUDO_INVERSE_CUTOFF: f64 = 1e-12;

/// Bellman residual `r_pi + P_{pi,gamma} X w - X w`.
pub fn bellman_residual(mdp: &FiniteMdp, pi: &Policy, x: &FeatureMap, w: &DVector<f64>) -> DVector<f64> {
    let v = x.matrix() * w;
    let p = mdp::discounted_transition_operator(mdp, pi);
    mdp::expected_rewards(mdp, pi) + &p * &v - v
}

/// Weighted orthogonal projection `X (X^T D X)^{-1} X^T D` onto the span of `x`.
pub fn projection(x: &FeatureMap, d: &StateWeighting) -> Result<DMatrix<f64>> {
    let xm = x.matrix();
    let xtd = xm.transpose() * linalg::diag(&d.d);
    let solver = SpdSolver::new(&(&xtd * xm), "projection Gram matrix")?;
    let coef =
        DMatrix::from_columns(&(0..xtd.ncols()).map(|j| solver.solve(&xtd.column(j).into_owned())).collect::<Vec<_>>());
    Ok(xm * coef)
}

/// Mean squared Bellman error `||T v - v||_d^2`.
pub fn be_value(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap, w: &DVector<f64>) -> f64 {
    linalg::weighted_sq_norm(&bellman_residual(mdp, pi, x, w), &d.d)
}

/// Minimizer of the Bellman error: solves `X^T L^T D L X w = X^T L^T D r_pi`.
pub fn be_solution(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap) -> Result<DVector<f64>> {
    check_dims(mdp, pi, d, x)?;
    let n = mdp.n_states();
    let l = DMatrix::identity(n, n) - mdp::discounted_transition_operator(mdp, pi);
    let lx = l * x.matrix();
    let lxtd = lx.transpose() * linalg::diag(&d.d);
    linalg::solve(&(&lxtd * &lx), &(&lxtd * mdp::expected_rewards(mdp, pi)), "Bellman error normal equations")
}

struct GeneralizedSystem {
    /// `Phi^T D L X`.
    g: DMatrix<f64>,
    /// Solver for `Phi^T D Phi`.
    gram: SpdSolver,
    /// `Phi^T D`.
    phitd: DMatrix<f64>,
    /// `L = I - P_{pi,gamma}`.
    l: DMatrix<f64>,
    r: DVector<f64>,
}

fn generalized_system(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x_f: &FeatureMap,
    x_h: &FeatureMap,
) -> Result<GeneralizedSystem> {
    check_dims(mdp, pi, d, x_f)?;
    if x_h.n_states() != mdp.n_states() {
        return Err(Error::InvalidParameter("H features have the wrong number of states".into()));
    }
    let n = mdp.n_states();
    let l = DMatrix::identity(n, n) - mdp::discounted_transition_operator(mdp, pi);
    let phitd = x_h.matrix().transpose() * linalg::diag(&d.d);
    let gram = SpdSolver::new(&(&phitd * x_h.matrix()), "H Gram matrix")?;
    let g = &phitd * &l * x_f.matrix();
    Ok(GeneralizedSystem { g, gram, phitd, l, r: mdp::expected_rewards(mdp, pi) })
}

impl GeneralizedSystem {
    /// `(Phi^T D Phi)^{-1} M` applied column-wise, i.e. `Gram^{-1} G`.
    fn gram_inv_g(&self) -> DMatrix<f64> {
        DMatrix::from_columns(
            &(0..self.g.ncols()).map(|j| self.gram.solve(&self.g.column(j).into_owned())).collect::<Vec<_>>(),
        )
    }

    /// Returns `M^T L X` and `M^T` where `M^T = X^T L^T D Pi_H`.
    fn normal_system(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let left = self.gram_inv_g().transpose();
        let mt = &left * &self.phitd;
        (&left * &self.g, mt)
    }
}

/// Minimizer of the generalized PBE with correction features `x_h`.
pub fn generalized_pbe_solution(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x_f: &FeatureMap,
    x_h: &FeatureMap,
) -> Result<DVector<f64>> {
    let sys = generalized_system(mdp, pi, d, x_f, x_h)?;
    let (lhs, mt) = sys.normal_system();
    linalg::solve(&lhs, &(mt * &sys.r), "generalized PBE normal equations")
}

/// Generalized PBE `||Pi_H (T v - v)||_d^2` evaluated through the correction features.
pub fn generalized_pbe_value(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x_f: &FeatureMap,
    x_h: &FeatureMap,
    w: &DVector<f64>,
) -> Result<f64> {
    let sys = generalized_system(mdp, pi, d, x_f, x_h)?;
    let delta = &sys.r - &sys.l * (x_f.matrix() * w);
    let g = &sys.phitd * delta;
    Ok(g.dot(&sys.gram.solve(&g)).max(0.0))
}

/// Oblique projection operator whose fixed point is the generalized PBE solution.
#[derive(Debug, Clone)]
pub struct ObliqueProjection {
    /// `X (M^T L X)^{-1} M^T L`.
    pub matrix: DMatrix<f64>,
    /// Operator norm in the `d`-weighted norm.
    pub d_norm: f64,
}

/// Builds the oblique projection for the given feature spaces.
pub fn oblique_projection(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x_f: &FeatureMap,
    x_h: &FeatureMap,
) -> Result<ObliqueProjection> {
    let sys = generalized_system(mdp, pi, d, x_f, x_h)?;
    let (lhs, mt) = sys.normal_system();
    let rhs = mt * &sys.l;
    let coef = linalg::solve_matrix(&lhs, &rhs, "oblique projection")?;
    let matrix = x_f.matrix() * coef;
    let d_norm = linalg::weighted_operator_norm(&matrix, &d.d);
    Ok(ObliqueProjection { matrix, d_norm })
}

/// Approximation error `||h* - Pi_H h*||_d` of the correction features at `w`,
/// where `h* = T v - v`.
pub fn approx_error(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x_h: &FeatureMap,
    w: &DVector<f64>,
    x_f: &FeatureMap,
) -> Result<f64> {
    check_dims(mdp, pi, d, x_f)?;
    let h_star = bellman_residual(mdp, pi, x_f, w);
    let proj = projection(x_h, d)?;
    let resid = &h_star - proj * &h_star;
    Ok(linalg::weighted_norm(&resid, &d.d))
}

/// Splits the Bellman error into the linear PBE and the projection penalty
/// `||T v - Pi T v||_d^2`. Returns `(pbe, penalty)`.
pub fn be_decomposition(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    x: &FeatureMap,
    w: &DVector<f64>,
) -> Result<(f64, f64)> {
    let m = compute_matrices(mdp, pi, d, x, 0.0)?;
    let pbe = linear_pbe(w, &m)?;
    let p = mdp::discounted_transition_operator(mdp, pi);
    let tv = mdp::expected_rewards(mdp, pi) + p * (x.matrix() * w);
    let resid = &tv - projection(x, d)? * &tv;
    Ok((pbe, linalg::weighted_sq_norm(&resid, &d.d)))
}

/// Applies `f(s, weight, reward, gamma', s')` over every `(s, a, s')` with
/// nonzero `d(s) pi(a|s) P(s'|s,a)`.
fn for_each_transition(
    mdp: &FiniteMdp,
    pi: &Policy,
    d: &StateWeighting,
    mut f: impl FnMut(usize, f64, f64, f64, usize),
) {
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let wa = d.d[s] * pi.prob(s, a);
            if wa == 0.0 {
                continue;
            }
            for s2 in 0..mdp.n_states() {
                let p = mdp.p(s, a, s2);
                if p > 0.0 {
                    f(s, wa * p, mdp.r(s, a, s2), mdp.gamma(s, a, s2), s2);
                }
            }
        }
    }
}

/// Mean squared TD error `E_d[(R + gamma' v(S') - v(S))^2]` under the target policy.
pub fn tde_value(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap, w: &DVector<f64>) -> f64 {
    let v = x.matrix() * w;
    let mut total = 0.0;
    for_each_transition(mdp, pi, d, |s, weight, r, g, s2| {
        let delta = r + g * v[s2] - v[s];
        total += weight * delta * delta;
    });
    total
}

/// Weighted conditional variance `sum_s d(s) Var[R + gamma' v(S') | S = s]`.
pub fn tde_variance(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap, w: &DVector<f64>) -> f64 {
    let v = x.matrix() * w;
    let n = mdp.n_states();
    let mut first = DVector::<f64>::zeros(n);
    let mut second = DVector::<f64>::zeros(n);
    for_each_transition(mdp, pi, &StateWeighting::ones(n), |s, weight, r, g, s2| {
        let target = r + g * v[s2];
        first[s] += weight * target;
        second[s] += weight * target * target;
    });
    (0..n).map(|s| d.d[s] * (second[s] - first[s] * first[s]).max(0.0)).sum()
}

/// Minimizer of [`tde_value`].
pub fn tde_fixed_point(mdp: &FiniteMdp, pi: &Policy, d: &StateWeighting, x: &FeatureMap) -> Result<DVector<f64>> {
    check_dims(mdp, pi, d, x)?;
    let k = x.k();
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for_each_transition(mdp, pi, d, |s, weight, r, gamma, s2| {
        let e = x.row(s) - x.row(s2) * gamma;
        g += &e * e.transpose() * weight;
        rhs += &e * (weight * r);
    });
    linalg::solve(&g, &rhs, "TD error normal equations")
}

/// Mean squared value error `||X w - v_pi||_d^2`.
pub fn ve(w: &DVector<f64>, x: &FeatureMap, v_pi: &DVector<f64>, d: &StateWeighting) -> f64 {
    linalg::weighted_sq_norm(&(x.matrix() * w - v_pi), &d.d)
}

/// Least-squares minimizer of [`ve`], using a pseudo-inverse for rank-deficient features.
pub fn ve_minimizer(x: &FeatureMap, v_pi: &DVector<f64>, d: &StateWeighting) -> Result<DVector<f64>> {
    if v_pi.len() != x.n_states() || d.len() != x.n_states() {
        return Err(Error::InvalidParameter("value, features and weighting disagree on length".into()));
    }
    let sqrt_d = d.d.map(|v| v.max(0.0).sqrt());
    let a = DMatrix::from_fn(x.n_states(), x.k(), |i, j| sqrt_d[i] * x.matrix()[(i, j)]);
    let b = v_pi.component_mul(&sqrt_d);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&b, smax * PSEUDO_INVERSE_CUTOFF)
        .map_err(|e| Error::SingularSystem(format!("value error least squares: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{td_fixed_point, Weightings};
    use crate::features::{self, tabular};
    use crate::mdp::builders::{self, RandomDiscount};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, ns: usize, k: usize) -> (FiniteMdp, Policy, Policy, FeatureMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = builders::random_mdp(&mut rng, ns, 2, RandomDiscount::Constant(0.9)).unwrap();
        let x =
            DMatrix::from_fn(ns, k, |i, j| ((i * 7 + j * 3 + seed as usize) % 5) as f64 - 1.5 + 0.1 * (i * j) as f64);
        (prob.mdp, prob.target, prob.behavior, FeatureMap::new(x, "random").unwrap())
    }

    #[test]
    fn h_equal_to_f_recovers_td_fixed_point() {
        let (mdp, pi, b, x) = random_problem(3, 6, 3);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let w1 = generalized_pbe_solution(&mdp, &pi, &d, &x, &x).unwrap();
        let w2 = td_fixed_point(&compute_matrices(&mdp, &pi, &d, &x, 0.0).unwrap()).unwrap();
        assert!((w1 - w2).abs().max() < 1e-8);
    }

    #[test]
    fn tabular_h_recovers_be_solution() {
        let (mdp, pi, b, x) = random_problem(5, 6, 3);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let w1 = generalized_pbe_solution(&mdp, &pi, &d, &x, &tabular(6)).unwrap();
        let w2 = be_solution(&mdp, &pi, &d, &x).unwrap();
        assert!((w1 - w2).abs().max() < 1e-8);
    }

    #[test]
    fn be_solution_beats_perturbations() {
        let (mdp, pi, b, x) = random_problem(11, 5, 2);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let w = be_solution(&mdp, &pi, &d, &x).unwrap();
        let base = be_value(&mdp, &pi, &d, &x, &w);
        for dir in [[1.0, 0.0], [0.0, 1.0], [0.7, -0.7]] {
            let dw = DVector::from_row_slice(&dir) * 1e-3;
            assert!(be_value(&mdp, &pi, &d, &x, &(&w + &dw)) >= base);
            assert!(be_value(&mdp, &pi, &d, &x, &(&w - &dw)) >= base);
        }
    }

    #[test]
    fn oblique_projection_fixes_solution_value() {
        let (mdp, pi, b, x) = random_problem(17, 6, 2);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let xh = features::state_aggregation(6, 3).unwrap();
        let w = generalized_pbe_solution(&mdp, &pi, &d, &x, &xh).unwrap();
        let proj = oblique_projection(&mdp, &pi, &d, &x, &xh).unwrap();
        let v_pi = mdp::true_values(&mdp, &pi).unwrap();
        let lhs = x.matrix() * &w;
        assert!((lhs - &proj.matrix * v_pi).abs().max() < 1e-8);
        assert!((&proj.matrix * &proj.matrix - &proj.matrix).abs().max() < 1e-8);
        assert!(proj.d_norm >= 1.0 - 1e-10);
    }

    #[test]
    fn tde_fixed_point_minimizes_tde() {
        let (mdp, pi, b, x) = random_problem(23, 5, 2);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let w = tde_fixed_point(&mdp, &pi, &d, &x).unwrap();
        let base = tde_value(&mdp, &pi, &d, &x, &w);
        for dir in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
            let dw = DVector::from_row_slice(&dir) * 1e-3;
            assert!(tde_value(&mdp, &pi, &d, &x, &(&w + &dw)) >= base);
        }
    }

    #[test]
    fn tde_bias_on_five_state_walk() {
        let prob = builders::random_walk(5).unwrap();
        let x = tabular(5);
        let ones = StateWeighting::ones(5);
        let d_pi = mdp::target_weighting(&prob.mdp, &prob.target).unwrap();
        let v_pi = mdp::true_values(&prob.mdp, &prob.target).unwrap();
        let w = tde_fixed_point(&prob.mdp, &prob.target, &d_pi, &x).unwrap();
        let err = ve(&w, &x, &v_pi, &ones);
        // Frozen from an independent dense least-squares computation.
        assert!((err - 0.270_3).abs() < 5e-4, "{err}");
    }

    #[test]
    fn ve_minimizer_handles_rank_deficiency() {
        let x = FeatureMap::new(DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 2.0, 4.0]), "dup").unwrap();
        let v = DVector::from_vec(vec![1.0, 1.0, 3.0]);
        let d = StateWeighting::ones(3);
        let w = ve_minimizer(&x, &v, &d).unwrap();
        // Best scalar multiple of [1,1,2]: (1+1+6)/6.
        let fitted = x.matrix() * &w;
        let c = 8.0 / 6.0;
        assert!((fitted - DVector::from_vec(vec![c, c, 2.0 * c])).abs().max() < 1e-10);
    }

    #[test]
    fn approx_error_is_zero_for_tabular_h() {
        let (mdp, pi, b, x) = random_problem(2, 5, 2);
        let d = mdp::behavior_weighting(&mdp, &b).unwrap();
        let w = DVector::from_vec(vec![0.5, -1.0]);
        assert!(approx_error(&mdp, &pi, &d, &tabular(5), &w, &x).unwrap() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bellman_error_splits_into_pbe_and_penalty(seed in 0u64..10_000, w0 in -3.0f64..3.0, w1 in -3.0f64..3.0) {
            let (mdp, pi, b, x) = random_problem(seed, 5, 2);
            let d = mdp::behavior_weighting(&mdp, &b).unwrap();
            let w = DVector::from_vec(vec![w0, w1]);
            let (pbe, penalty) = be_decomposition(&mdp, &pi, &d, &x, &w).unwrap();
            let be = be_value(&mdp, &pi, &d, &x, &w);
            prop_assert!((be - pbe - penalty).abs() <= 1e-10 * be.max(1.0));
        }

        #[test]
        fn generalized_gap_equals_squared_approx_error(seed in 0u64..10_000, w0 in -3.0f64..3.0, w1 in -3.0f64..3.0) {
            let (mdp, pi, b, x) = random_problem(seed, 6, 2);
            let d = mdp::behavior_weighting(&mdp, &b).unwrap();
            let xh = features::state_aggregation(6, 3).unwrap();
            let w = DVector::from_vec(vec![w0, w1]);
            let be = be_value(&mdp, &pi, &d, &x, &w);
            let pbe = generalized_pbe_value(&mdp, &pi, &d, &x, &xh, &w).unwrap();
            let ae = approx_error(&mdp, &pi, &d, &xh, &w, &x).unwrap();
            prop_assert!((be - pbe - ae * ae).abs() <= 1e-10 * be.max(1.0));
        }

        #[test]
        fn tde_is_be_plus_variance(seed in 0u64..10_000, w0 in -3.0f64..3.0, w1 in -3.0f64..3.0) {
            let (mdp, pi, b, x) = random_problem(seed, 5, 2);
            let d = mdp::behavior_weighting(&mdp, &b).unwrap();
            let w = DVector::from_vec(vec![w0, w1]);
            let tde = tde_value(&mdp, &pi, &d, &x, &w);
            let be = be_value(&mdp, &pi, &d, &x, &w);
            let var = tde_variance(&mdp, &pi, &d, &x, &w);
            prop_assert!((tde - be - var).abs() <= 1e-10 * tde.max(1.0));
        }

        #[test]
        fn pbe_never_exceeds_be(seed in 0u64..10_000, w0 in -3.0f64..3.0, w1 in -3.0f64..3.0) {
            let (mdp, pi, b, x) = random_problem(seed, 5, 2);
            let ws = Weightings::compute(&mdp, &pi, &b, 0.0).unwrap();
            let w = DVector::from_vec(vec![w0, w1]);
            let m = compute_matrices(&mdp, &pi, &ws.d_b, &x, 0.0).unwrap();
            let pbe = linear_pbe(&w, &m).unwrap();
            prop_assert!(pbe <= be_value(&mdp, &pi, &ws.d_b, &x, &w) * (1.0 + 1e-9) + 1e-12);
        }
    }
}
