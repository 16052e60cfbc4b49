//! Expected-update dynamics of the prediction algorithms at `lambda = 0`.
//!
//! Each iteration applies the expectation of one sampled update under the
//! behavior distribution, written in terms of the `(A, b, C)` matrices.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::agents::{AgentConfig, Algorithm};
use crate::analysis::{compute_matrices, ObjectiveMatrices};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::SpdSolver;
use crate::mdp::{self, FiniteMdp, Policy, StateWeighting, WeightingKind};

/// Matrices driving the expected updates of every supported algorithm.
#[derive(Debug, Clone)]
pub struct ExpectedSystem {
    /// Matrices under the behavior weighting.
    pub db: ObjectiveMatrices,
    /// Matrices under the emphatic weighting.
    pub emphatic: ObjectiveMatrices,
    /// `A` of the behavior policy evaluated on its own data.
    pub a_behavior: DMatrix<f64>,
    c_db: SpdSolver,
    a_t: DMatrix<f64>,
    a_behavior_t: DMatrix<f64>,
    htd_correction: DMatrix<f64>,
    tdc_correction: DMatrix<f64>,
    emphatic_tdc_correction: DMatrix<f64>,
}

impl ExpectedSystem {
    /// Builds the system for a problem and feature map.
    pub fn new(mdp: &FiniteMdp, pi: &Policy, b: &Policy, x: &FeatureMap) -> Result<Self> {
        let d_b = mdp::behavior_weighting(mdp, b)?;
        let f = mdp::followon(mdp, pi, &d_b)?;
        let m = StateWeighting::new(f.d.clone(), WeightingKind::Emphatic)?;
        let db = compute_matrices(mdp, pi, &d_b, x, 0.0)?;
        let emphatic = compute_matrices(mdp, pi, &m, x, 0.0)?;
        let a_behavior = compute_matrices(mdp, b, &d_b, x, 0.0)?.a;
        let c_db = db.c_solver()?;
        let a_t = db.a.transpose();
        let a_behavior_t = a_behavior.transpose();
        Ok(ExpectedSystem {
            htd_correction: &a_t - &a_behavior_t,
            tdc_correction: &db.c - &a_t,
            emphatic_tdc_correction: &emphatic.c - emphatic.a.transpose(),
            a_t,
            a_behavior_t,
            db,
            emphatic,
            a_behavior,
            c_db,
        })
    }

    /// Linear PBE under the behavior weighting.
    pub fn pbe(&self, w: &DVector<f64>) -> f64 {
        let r = self.db.residual(w);
        r.dot(&self.c_db.solve(&r)).max(0.0)
    }

    /// Number of features.
    pub fn k(&self) -> usize {
        self.db.b.len()
    }
}

/// Primary and secondary weights evolved by the expected updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedState {
    /// Primary weights.
    pub w: DVector<f64>,
    /// Secondary weights.
    pub h: DVector<f64>,
}

/// Whether an algorithm has a matrix-form expected update here.
pub fn supports(alg: Algorithm) -> bool {
    matches!(
        alg,
        Algorithm::Td
            | Algorithm::Gtd
            | Algorithm::Gtd2
            | Algorithm::Htd
            | Algorithm::Pgtd
            | Algorithm::Pgtd2
            | Algorithm::Etd
            | Algorithm::EmphaticGtd
            | Algorithm::Tdrc
    )
}

/// `b - A w - G h`, with `G` given explicitly.
fn corrected(m: &ObjectiveMatrices, w: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    let mut r = m.residual(w);
    r.gemv(-1.0, g, h, 1.0);
    r
}

/// Expected increments `(dw, dh)` per unit stepsize, before multiplying by `alpha` and `alpha_h`.
pub fn expected_increments(
    sys: &ExpectedSystem,
    alg: Algorithm,
    beta_reg: f64,
    w: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = &sys.db;
    let e = &sys.emphatic;
    let zeros = || DVector::zeros(w.len());
    let regress = |mat: &ObjectiveMatrices| corrected(mat, w, &mat.c, h);
    Ok(match alg {
        Algorithm::Td => (m.residual(w), zeros()),
        Algorithm::Gtd => (corrected(m, w, &sys.tdc_correction, h), regress(m)),
        Algorithm::Gtd2 => (&sys.a_t * h, regress(m)),
        Algorithm::Htd => (corrected(m, w, &sys.htd_correction, h), corrected(m, w, &sys.a_behavior_t, h)),
        Algorithm::Etd => (e.residual(w), zeros()),
        Algorithm::EmphaticGtd => (corrected(e, w, &sys.emphatic_tdc_correction, h), regress(e)),
        Algorithm::Tdrc => {
            let mut dh = regress(m);
            dh.axpy(-beta_reg, h, 1.0);
            (corrected(m, w, &sys.tdc_correction, h), dh)
        }
        other => return Err(Error::InvalidParameter(format!("no expected-update form for '{other}'"))),
    })
}

/// One expected update in place. The proximal methods apply mirror-prox to
/// the expected update field: the full step evaluates the field at the
/// half-step point and moves from the original point.
pub fn expected_step(sys: &ExpectedSystem, cfg: &AgentConfig, state: &mut ExpectedState) -> Result<()> {
    match cfg.algorithm {
        Algorithm::Pgtd | Algorithm::Pgtd2 => {
            let inner = if cfg.algorithm == Algorithm::Pgtd { Algorithm::Gtd } else { Algorithm::Gtd2 };
            let (dw, dh) = expected_increments(sys, inner, 0.0, &state.w, &state.h)?;
            let w_half = &state.w + dw * cfg.alpha;
            let h_half = &state.h + dh * cfg.alpha_h;
            let (dw2, dh2) = expected_increments(sys, inner, 0.0, &w_half, &h_half)?;
            state.w.axpy(cfg.alpha, &dw2, 1.0);
            state.h.axpy(cfg.alpha_h, &dh2, 1.0);
        }
        alg => {
            let (dw, dh) = expected_increments(sys, alg, cfg.beta_reg, &state.w, &state.h)?;
            state.w.axpy(cfg.alpha, &dw, 1.0);
            state.h.axpy(cfg.alpha_h, &dh, 1.0);
        }
    }
    Ok(())
}

/// Outcome of an expected-update run.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectedRun {
    /// Algorithm name.
    pub algorithm: String,
    /// Iterations performed.
    pub iterations: usize,
    /// Whether the weight norm exceeded the divergence threshold.
    pub diverged: bool,
    /// Linear PBE under the behavior weighting at the end.
    pub final_pbe: f64,
    /// Weight norm at the end.
    pub final_norm: f64,
    /// Recorded `(iteration, pbe, norm)` checkpoints.
    pub checkpoints: Vec<(usize, f64, f64)>,
}

/// Stopping rule of [`run_expected`].
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    /// Hard iteration cap.
    pub max_iterations: usize,
    /// Stop once the PBE falls below this value.
    pub pbe_tolerance: f64,
    /// Stop once the weight norm exceeds this value.
    pub divergence_norm: f64,
    /// Checkpoint spacing in iterations.
    pub check_every: usize,
}

/// Iterates the expected update from `w0` with zero secondary weights.
pub fn run_expected(sys: &ExpectedSystem, cfg: &AgentConfig, w0: &DVector<f64>, stop: StopRule) -> Result<ExpectedRun> {
    cfg.validate()?;
    if w0.len() != sys.k() {
        return Err(Error::InvalidParameter("initial weights have the wrong length".into()));
    }
    if stop.check_every == 0 {
        return Err(Error::InvalidParameter("check_every must be positive".into()));
    }
    let mut state = ExpectedState { w: w0.clone(), h: DVector::zeros(sys.k()) };
    let mut checkpoints = vec![(0, sys.pbe(&state.w), state.w.norm())];
    let mut iterations = 0;
    let mut diverged = false;
    while iterations < stop.max_iterations {
        let burst = stop.check_every.min(stop.max_iterations - iterations);
        for _ in 0..burst {
            expected_step(sys, cfg, &mut state)?;
            iterations += 1;
            let norm = state.w.norm();
            if !(norm <= stop.divergence_norm) {
                diverged = true;
                break;
            }
        }
        let pbe = sys.pbe(&state.w);
        checkpoints.push((iterations, pbe, state.w.norm()));
        if diverged || pbe < stop.pbe_tolerance {
            break;
        }
    }
    let final_pbe = sys.pbe(&state.w);
    Ok(ExpectedRun {
        algorithm: cfg.algorithm.name().to_string(),
        iterations,
        diverged,
        final_pbe,
        final_norm: state.w.norm(),
        checkpoints,
    })
}

/// Spectral radius of the linear iteration map of an algorithm, useful to
/// predict convergence or divergence of [`run_expected`].
pub fn iteration_spectral_radius(sys: &ExpectedSystem, cfg: &AgentConfig) -> Result<f64> {
    let k = sys.k();
    let mut map = DMatrix::<f64>::zeros(2 * k, 2 * k);
    let zero_b = ExpectedSystem {
        db: ObjectiveMatrices { b: DVector::zeros(k), ..sys.db.clone() },
        emphatic: ObjectiveMatrices { b: DVector::zeros(k), ..sys.emphatic.clone() },
        ..sys.clone()
    };
    for j in 0..2 * k {
        let mut state = ExpectedState { w: DVector::zeros(k), h: DVector::zeros(k) };
        if j < k {
            state.w[j] = 1.0;
        } else {
            state.h[j - k] = 1.0;
        }
        expected_step(&zero_b, cfg, &mut state)?;
        for i in 0..k {
            map[(i, j)] = state.w[i];
            map[(k + i, j)] = state.h[i];
        }
    }
    Ok(map.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max))
}
