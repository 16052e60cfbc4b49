//! Linear action-value control with a mellowmax bootstrap target.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{self, FiniteMdp, Policy};

/// Bellman residual at which [`optimal_q_oracle`] stops.
pub const ORACLE_TOLERANCE: f64 = 1e-12;
/// Iteration cap of [`optimal_q_oracle`].
pub const ORACLE_MAX_ITERATIONS: usize = 10_000_000;

/// Index of the largest entry, ties broken toward the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Mellowmax `tau^{-1} log(mean(exp(tau q)))`; `tau = 0` is the hard max.
pub fn mellowmax(q: &[f64], tau: f64) -> f64 {
    assert!(!q.is_empty(), "mellowmax of an empty row");
    let max = q[argmax(q)];
    if tau == 0.0 {
        return max;
    }
    let mean_expm1 = q.iter().map(|&v| (tau * (v - max)).exp_m1()).sum::<f64>() / q.len() as f64;
    max + mean_expm1.ln_1p() / tau
}

/// Derivative of [`mellowmax`] with respect to each entry: `softmax(tau q)`,
/// or a one-hot vector at the lowest-index maximizer when `tau = 0`.
pub fn mellowmax_weights(q: &[f64], tau: f64) -> Vec<f64> {
    let top = argmax(q);
    if tau == 0.0 {
        return (0..q.len()).map(|i| if i == top { 1.0 } else { 0.0 }).collect();
    }
    let e: Vec<f64> = q.iter().map(|&v| (tau * (v - q[top])).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Gradient of `m(q(s, .))` with respect to per-action weights when
/// `q(s, a) = W_a^T x`: row `a` is `weight_a x^T`.
pub fn mellowmax_gradient(q: &[f64], tau: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let weights = mellowmax_weights(q, tau);
    DMatrix::from_fn(q.len(), x.len(), |a, j| weights[a] * x[j])
}

/// Per-action linear weights for values and corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValueModel {
    /// Value weights, one row per action.
    pub w: DMatrix<f64>,
    /// Correction weights, one row per action.
    pub theta: DMatrix<f64>,
    /// Mellowmax temperature.
    pub tau: f64,
    /// Regularization of the correction weights.
    pub beta_reg: f64,
}

impl ActionValueModel {
    /// Zero-initialized model.
    pub fn new(n_actions: usize, k: usize, tau: f64, beta_reg: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite and nonnegative".into()));
        }
        if !(beta_reg >= 0.0) || !beta_reg.is_finite() {
            return Err(Error::InvalidParameter("beta_reg must be finite and nonnegative".into()));
        }
        Ok(ActionValueModel { w: DMatrix::zeros(n_actions, k), theta: DMatrix::zeros(n_actions, k), tau, beta_reg })
    }

    /// Action values `q(s, .) = W x`.
    pub fn q(&self, x: &DVector<f64>) -> Vec<f64> {
        (&self.w * x).iter().copied().collect()
    }

    /// Correction estimate `h(s, a) = theta_a^T x`.
    pub fn h(&self, x: &DVector<f64>, a: usize) -> f64 {
        self.theta.row(a).transpose().dot(x)
    }

    /// Number of actions.
    pub fn n_actions(&self) -> usize {
        self.w.nrows()
    }
}

/// One control transition in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample {
    /// Features of the current state.
    pub x: DVector<f64>,
    /// Action taken.
    pub a: usize,
    /// Reward.
    pub reward: f64,
    /// Discount; zero on termination.
    pub gamma_next: f64,
    /// Features of the next state.
    pub x_next: DVector<f64>,
}

/// Control algorithm tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlAlgorithm {
    /// Semi-gradient Q-learning with a mellowmax target.
    Q,
    /// Saddlepoint gradient method.
    Gq,
    /// Q-learning with regularized corrections.
    Qrc,
}

impl std::str::FromStr for ControlAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(ControlAlgorithm::Q),
            "gq" => Ok(ControlAlgorithm::Gq),
            "qrc" => Ok(ControlAlgorithm::Qrc),
            _ => Err(Error::InvalidParameter(format!("unknown control agent '{s}'"))),
        }
    }
}

/// Stepsizes of a control update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    /// Stepsize of the value weights.
    pub alpha: f64,
    /// Stepsize of the correction weights.
    pub alpha_h: f64,
}

/// TD error `r + gamma' m(q(s', .)) - q(s, a)`.
pub fn control_td_error(model: &ActionValueModel, sample: &ControlSample) -> f64 {
    let q_next = model.q(&sample.x_next);
    sample.reward + sample.gamma_next * mellowmax(&q_next, model.tau) - model.q(&sample.x)[sample.a]
}

/// Unit-stepsize increments `(dW, dTheta)` of an algorithm on one sample.
pub fn control_increments(
    alg: ControlAlgorithm,
    model: &ActionValueModel,
    sample: &ControlSample,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (na, k) = model.w.shape();
    let delta = control_td_error(model, sample);
    let h = model.h(&sample.x, sample.a);
    let mut dw = DMatrix::zeros(na, k);
    let mut dtheta = DMatrix::zeros(na, k);
    let primary = match alg {
        ControlAlgorithm::Q | ControlAlgorithm::Qrc => delta,
        ControlAlgorithm::Gq => h,
    };
    for j in 0..k {
        dw[(sample.a, j)] += primary * sample.x[j];
    }
    if alg != ControlAlgorithm::Q {
        let grad = mellowmax_gradient(&model.q(&sample.x_next), model.tau, &sample.x_next);
        dw -= grad * (sample.gamma_next * h);
        for j in 0..k {
            dtheta[(sample.a, j)] = (delta - h) * sample.x[j] - model.beta_reg * model.theta[(sample.a, j)];
        }
    }
    (dw, dtheta)
}

fn apply(model: &mut ActionValueModel, cfg: &ControlConfig, inc: (DMatrix<f64>, DMatrix<f64>)) {
    model.w += inc.0 * cfg.alpha;
    model.theta += inc.1 * cfg.alpha_h;
}

/// Q-learning step `W_a <- W_a + alpha delta x`.
pub fn q_learning_step(model: &mut ActionValueModel, sample: &ControlSample, cfg: &ControlConfig) {
    let inc = control_increments(ControlAlgorithm::Q, model, sample);
    apply(model, cfg, inc);
}

/// QRC step: gradient-corrected value update and regularized correction regression.
pub fn qrc_step(model: &mut ActionValueModel, sample: &ControlSample, cfg: &ControlConfig) {
    let inc = control_increments(ControlAlgorithm::Qrc, model, sample);
    apply(model, cfg, inc);
}

/// GQ step: saddlepoint value update `h (grad q - gamma' grad m)` with the QRC correction regression.
pub fn gq_step(model: &mut ActionValueModel, sample: &ControlSample, cfg: &ControlConfig) {
    let inc = control_increments(ControlAlgorithm::Gq, model, sample);
    apply(model, cfg, inc);
}

/// Dispatches one step.
pub fn control_step(alg: ControlAlgorithm, model: &mut ActionValueModel, sample: &ControlSample, cfg: &ControlConfig) {
    let inc = control_increments(alg, model, sample);
    apply(model, cfg, inc);
}

/// Soft-optimal action values: fixed point of `q <- E[R + gamma' m(q(S', .))]`.
pub fn optimal_q_oracle(mdp: &FiniteMdp, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter("tau must be finite and nonnegative".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = DMatrix::<f64>::zeros(ns, na);
    let mut next = q.clone();
    for _ in 0..ORACLE_MAX_ITERATIONS {
        let m: Vec<f64> = (0..ns).map(|s| mellowmax(&q.row(s).iter().copied().collect::<Vec<_>>(), tau)).collect();
        for s in 0..ns {
            for a in 0..na {
                next[(s, a)] =
                    (0..ns).map(|s2| mdp.p(s, a, s2) * (mdp.r(s, a, s2) + mdp.gamma(s, a, s2) * m[s2])).sum();
            }
        }
        let change = (&next - &q).abs().max();
        std::mem::swap(&mut q, &mut next);
        if change < ORACLE_TOLERANCE {
            return Ok(q);
        }
    }
    Err(Error::NonConvergent(format!(
        "mellowmax value iteration did not reach {ORACLE_TOLERANCE:e} in {ORACLE_MAX_ITERATIONS} iterations"
    )))
}

/// Action values of a model as a state-by-action table.
pub fn q_table(model: &ActionValueModel, x: &FeatureMap) -> DMatrix<f64> {
    (&model.w * x.matrix().transpose()).transpose()
}

/// Expected increments under `d_b(s) b(a|s) P(s, a, s')`.
pub fn expected_control_increments(
    alg: ControlAlgorithm,
    mdp: &FiniteMdp,
    b: &Policy,
    d_b: &DVector<f64>,
    x: &FeatureMap,
    model: &ActionValueModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let shape = model.w.shape();
    let mut dw = DMatrix::zeros(shape.0, shape.1);
    let mut dtheta = DMatrix::zeros(shape.0, shape.1);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for s2 in 0..mdp.n_states() {
                let weight = d_b[s] * b.prob(s, a) * mdp.p(s, a, s2);
                if weight == 0.0 {
                    continue;
                }
                let sample = ControlSample {
                    x: x.row(s),
                    a,
                    reward: mdp.r(s, a, s2),
                    gamma_next: mdp.gamma(s, a, s2),
                    x_next: x.row(s2),
                };
                let (w_inc, t_inc) = control_increments(alg, model, &sample);
                dw += w_inc * weight;
                dtheta += t_inc * weight;
            }
        }
    }
    (dw, dtheta)
}

/// Result of iterating expected control updates.
#[derive(Debug, Clone)]
pub struct ExpectedControlRun {
    /// Final model.
    pub model: ActionValueModel,
    /// Iterations performed.
    pub iterations: usize,
    /// Largest absolute entry of the final expected value-weight increment.
    pub residual: f64,
}

/// Iterates expected control updates until the increment falls below `tolerance`.
pub fn run_expected_control(
    alg: ControlAlgorithm,
    mdp: &FiniteMdp,
    b: &Policy,
    x: &FeatureMap,
    mut model: ActionValueModel,
    cfg: &ControlConfig,
    max_iterations: usize,
    tolerance: f64,
) -> Result<ExpectedControlRun> {
    let d_b = mdp::behavior_weighting(mdp, b)?.d;
    let mut residual = f64::INFINITY;
    for it in 0..max_iterations {
        let (dw, dtheta) = expected_control_increments(alg, mdp, b, &d_b, x, &model);
        residual = dw.abs().max().max(dtheta.abs().max());
        if !residual.is_finite() {
            return Err(Error::NonConvergent("expected control dynamics diverged".into()));
        }
        if residual < tolerance {
            return Ok(ExpectedControlRun { model, iterations: it, residual });
        }
        apply(&mut model, cfg, (dw, dtheta));
    }
    Ok(ExpectedControlRun { model, iterations: max_iterations, residual })
}

/// Epsilon-greedy action over a row of action values, ties broken to the lowest index.
pub fn epsilon_greedy<R: Rng + ?Sized>(rng: &mut R, q: &[f64], epsilon: f64) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}
