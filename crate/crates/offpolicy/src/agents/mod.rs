//! Incremental off-policy prediction algorithms with linear function approximation.
//!
//! Every algorithm consumes one [`FeatureSample`] per step and mutates an
//! [`AgentState`] in place. The discount of the previous transition is kept
//! in the state; a zero value marks the first step of an episode, which
//! resets traces, the followon accumulator and the alternative-life product.

mod updates;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{Policy, TransitionSample};

pub use updates::{
    step_adaptive_trace, step_alternative_life_td, step_emphatic_gtd, step_etd, step_gtd, step_gtd2, step_htd,
    step_offpolicy_td, step_proximal, step_tdrc, EtdVariant, ProximalVariant, TraceKind,
};

/// Algorithm tag, addressable by the names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Off-policy TD(lambda) with the ratio in the trace.
    Td,
    /// Alternative-life TD(lambda) with the product of past ratios.
    AltLife,
    /// GTD(lambda), also called TDC(lambda).
    Gtd,
    /// GTD2(lambda).
    Gtd2,
    /// Hybrid TD(lambda).
    Htd,
    /// Proximal GTD(lambda).
    Pgtd,
    /// Proximal GTD2(lambda).
    Pgtd2,
    /// Tree Backup(lambda) state-value variant.
    Tb,
    /// Simplified V-trace(lambda).
    Vtrace,
    /// ABTD(zeta).
    Abtd,
    /// Emphatic TD(lambda).
    Etd,
    /// Emphatic TD(lambda, beta).
    EtdBeta,
    /// Emphatic GTD(lambda).
    EmphaticGtd,
    /// TD with regularized corrections.
    Tdrc,
}

impl Algorithm {
    /// Every algorithm in a fixed order.
    pub const ALL: [Algorithm; 14] = [
        Algorithm::Td,
        Algorithm::AltLife,
        Algorithm::Gtd,
        Algorithm::Gtd2,
        Algorithm::Htd,
        Algorithm::Pgtd,
        Algorithm::Pgtd2,
        Algorithm::Tb,
        Algorithm::Vtrace,
        Algorithm::Abtd,
        Algorithm::Etd,
        Algorithm::EtdBeta,
        Algorithm::EmphaticGtd,
        Algorithm::Tdrc,
    ];

    /// Command-line name.
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Td => "td",
            Algorithm::AltLife => "alt-life",
            Algorithm::Gtd => "gtd",
            Algorithm::Gtd2 => "gtd2",
            Algorithm::Htd => "htd",
            Algorithm::Pgtd => "pgtd",
            Algorithm::Pgtd2 => "pgtd2",
            Algorithm::Tb => "tb",
            Algorithm::Vtrace => "vtrace",
            Algorithm::Abtd => "abtd",
            Algorithm::Etd => "etd",
            Algorithm::EtdBeta => "etd-beta",
            Algorithm::EmphaticGtd => "emphatic-gtd",
            Algorithm::Tdrc => "tdrc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm '{s}'")))
    }
}

/// Stepsizes and algorithm parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Algorithm to run.
    pub algorithm: Algorithm,
    /// Primary stepsize.
    pub alpha: f64,
    /// Secondary stepsize.
    pub alpha_h: f64,
    /// Trace parameter.
    pub lambda: f64,
    /// Regularization strength of the TDRC secondary weights.
    pub beta_reg: f64,
    /// Followon decay of ETD(lambda, beta).
    pub beta_etd: f64,
    /// ABTD parameter.
    pub zeta: f64,
    /// V-trace cap on the previous ratio.
    pub c_bar: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Td,
            alpha: 0.01,
            alpha_h: 0.01,
            lambda: 0.0,
            beta_reg: 1.0,
            beta_etd: 0.9,
            zeta: 0.5,
            c_bar: 1.0,
        }
    }
}

impl AgentConfig {
    /// Config with the given algorithm and stepsizes, other fields at their defaults.
    pub fn new(algorithm: Algorithm, alpha: f64, alpha_h: f64) -> Self {
        AgentConfig { algorithm, alpha, alpha_h, ..AgentConfig::default() }
    }

    /// Sets the trace parameter.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Checks every parameter range.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidParameter(msg.into())) };
        check(self.alpha.is_finite() && self.alpha >= 0.0, "alpha must be a finite nonnegative number")?;
        check(self.alpha_h.is_finite() && self.alpha_h >= 0.0, "alpha_h must be a finite nonnegative number")?;
        check((0.0..=1.0).contains(&self.lambda), "lambda must lie in [0, 1]")?;
        check(self.beta_reg >= 0.0 && self.beta_reg.is_finite(), "beta_reg must be finite and nonnegative")?;
        check((0.0..=1.0).contains(&self.beta_etd), "beta_etd must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.zeta), "zeta must lie in [0, 1]")?;
        check(self.c_bar > 0.0, "c_bar must be positive")?;
        Ok(())
    }
}

/// A transition expressed in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    /// Features of the current state.
    pub x: DVector<f64>,
    /// Features of the next state.
    pub x_next: DVector<f64>,
    /// Reward.
    pub reward: f64,
    /// Discount of this transition.
    pub gamma_next: f64,
    /// Importance-sampling ratio of the action taken.
    pub rho: f64,
    /// Target probability of the action taken.
    pub pi_prob: f64,
    /// Behavior probability of the action taken.
    pub b_prob: f64,
}

impl FeatureSample {
    /// Maps a tabular transition through a feature map.
    pub fn from_transition(t: &TransitionSample, x: &FeatureMap) -> Self {
        FeatureSample {
            x: x.row(t.s),
            x_next: x.row(t.s_next),
            reward: t.reward,
            gamma_next: t.gamma_next,
            rho: t.rho,
            pi_prob: t.pi_prob,
            b_prob: t.b_prob,
        }
    }

    /// TD error `r + gamma' w^T x' - w^T x`.
    pub fn td_error(&self, w: &DVector<f64>) -> f64 {
        self.reward + self.gamma_next * w.dot(&self.x_next) - w.dot(&self.x)
    }
}

/// ABTD constants `psi_0` and `psi_max` computed from full policy tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbtdConstants {
    /// `1 / max_{s,a} max(b, pi)`.
    pub psi0: f64,
    /// `1 / min_{s,a} max(b, pi)`.
    pub psi_max: f64,
}

impl AbtdConstants {
    /// Computes the constants from the target and behavior policies.
    pub fn from_policies(pi: &Policy, b: &Policy) -> Result<Self> {
        if pi.n_states() != b.n_states() || pi.n_actions() != b.n_actions() {
            return Err(Error::InvalidParameter("policy shapes differ".into()));
        }
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for s in 0..pi.n_states() {
            for a in 0..pi.n_actions() {
                let m = pi.prob(s, a).max(b.prob(s, a));
                hi = hi.max(m);
                lo = lo.min(m);
            }
        }
        if lo <= 0.0 {
            return Err(Error::InvalidParameter("some action has zero probability under both policies".into()));
        }
        Ok(AbtdConstants { psi0: 1.0 / hi, psi_max: 1.0 / lo })
    }

    /// `psi(zeta) = 2 zeta psi_0 + max(0, 2 zeta - 1)(psi_max - 2 psi_0)`.
    pub fn psi(&self, zeta: f64) -> f64 {
        2.0 * zeta * self.psi0 + (2.0 * zeta - 1.0).max(0.0) * (self.psi_max - 2.0 * self.psi0)
    }

    /// `nu = min(psi, 1 / max(b, pi))`.
    pub fn nu(&self, zeta: f64, b_prob: f64, pi_prob: f64) -> f64 {
        self.psi(zeta).min(1.0 / b_prob.max(pi_prob))
    }
}

impl Default for AbtdConstants {
    fn default() -> Self {
        AbtdConstants { psi0: 1.0, psi_max: 1.0 }
    }
}

/// Mutable learning state shared by every algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Primary weights.
    pub w: DVector<f64>,
    /// Secondary weights.
    pub h: DVector<f64>,
    /// Importance-weighted (or generic adaptive) trace.
    pub z_rho: DVector<f64>,
    /// Behavior trace without ratios.
    pub z_b: DVector<f64>,
    /// Followon accumulator.
    pub f: f64,
    /// Emphasis of the most recent step.
    pub m: f64,
    /// Ratio of the previous step.
    pub rho_prev: f64,
    /// Target probability of the previous action.
    pub pi_prev: f64,
    /// Behavior probability of the previous action.
    pub b_prev: f64,
    /// Discount of the previous transition; zero at the start of an episode.
    pub gamma_prev: f64,
    /// Product of the ratios earlier in the episode.
    pub prod_rho: f64,
    /// ABTD constants.
    pub abtd: AbtdConstants,
}

impl AgentState {
    /// Zero weights for `k` features.
    pub fn new(k: usize) -> Self {
        Self::with_weights(DVector::zeros(k))
    }

    /// State with given initial primary weights.
    pub fn with_weights(w: DVector<f64>) -> Self {
        let k = w.len();
        AgentState {
            w,
            h: DVector::zeros(k),
            z_rho: DVector::zeros(k),
            z_b: DVector::zeros(k),
            f: 1.0,
            m: 1.0,
            rho_prev: 1.0,
            pi_prev: 1.0,
            b_prev: 1.0,
            gamma_prev: 0.0,
            prod_rho: 1.0,
            abtd: AbtdConstants::default(),
        }
    }

    /// Number of features.
    pub fn k(&self) -> usize {
        self.w.len()
    }
}

/// Clears traces and per-episode accumulators; weights are untouched.
pub fn reset_episode(state: &mut AgentState) {
    state.z_rho.fill(0.0);
    state.z_b.fill(0.0);
    state.f = 1.0;
    state.m = 1.0;
    state.rho_prev = 1.0;
    state.pi_prev = 1.0;
    state.b_prev = 1.0;
    state.gamma_prev = 0.0;
    state.prod_rho = 1.0;
}

/// An algorithm bound to its configuration and state.
#[derive(Debug, Clone)]
pub struct Agent {
    /// Configuration.
    pub cfg: AgentConfig,
    /// Learning state.
    pub state: AgentState,
}

impl Agent {
    /// Builds an agent; ABTD constants are taken from the policies.
    pub fn new(cfg: AgentConfig, w0: DVector<f64>, pi: &Policy, b: &Policy) -> Result<Self> {
        cfg.validate()?;
        let mut state = AgentState::with_weights(w0);
        if cfg.algorithm == Algorithm::Abtd {
            state.abtd = AbtdConstants::from_policies(pi, b)?;
        }
        Ok(Agent { cfg, state })
    }

    /// Applies one update.
    pub fn step(&mut self, sample: &FeatureSample) {
        let (s, cfg) = (&mut self.state, &self.cfg);
        match cfg.algorithm {
            Algorithm::Td => step_offpolicy_td(s, sample, cfg),
            Algorithm::AltLife => step_alternative_life_td(s, sample, cfg),
            Algorithm::Gtd => step_gtd(s, sample, cfg),
            Algorithm::Gtd2 => step_gtd2(s, sample, cfg),
            Algorithm::Htd => step_htd(s, sample, cfg),
            Algorithm::Pgtd => step_proximal(s, sample, cfg, ProximalVariant::Gtd),
            Algorithm::Pgtd2 => step_proximal(s, sample, cfg, ProximalVariant::Gtd2),
            Algorithm::Tb => step_adaptive_trace(s, sample, cfg, TraceKind::TreeBackup),
            Algorithm::Vtrace => step_adaptive_trace(s, sample, cfg, TraceKind::Vtrace),
            Algorithm::Abtd => step_adaptive_trace(s, sample, cfg, TraceKind::Abtd),
            Algorithm::Etd => step_etd(s, sample, cfg, EtdVariant::Followon),
            Algorithm::EtdBeta => step_etd(s, sample, cfg, EtdVariant::Beta),
            Algorithm::EmphaticGtd => step_emphatic_gtd(s, sample, cfg),
            Algorithm::Tdrc => step_tdrc(s, sample, cfg),
        }
    }

    /// Starts a new episode.
    pub fn reset_episode(&mut self) {
        reset_episode(&mut self.state);
    }

    /// Current primary weights.
    pub fn weights(&self) -> &DVector<f64> {
        &self.state.w
    }
}
