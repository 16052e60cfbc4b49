//! Per-transition update rules.

use nalgebra::DVector;

use super::{AgentConfig, AgentState, FeatureSample};

/// Trace-decay rule of the action-dependent bootstrapping family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// Factor `rho_{t-1} lambda`.
    Generic,
    /// Factor `pi_{t-1} lambda`.
    TreeBackup,
    /// Factor `min(c_bar, rho_{t-1}) lambda`.
    Vtrace,
    /// Factor `nu_{t-1} pi_{t-1}`.
    Abtd,
}

/// Which proximal method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProximalVariant {
    /// Proximal GTD2(lambda).
    Gtd2,
    /// Proximal GTD(lambda).
    Gtd,
}

/// Followon recursion used by emphatic TD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtdVariant {
    /// `F <- rho_{t-1} gamma_t F + 1`.
    Followon,
    /// `F <- rho_{t-1} beta F + 1`, restarting at one on episode boundaries.
    Beta,
}

/// Records the quantities later steps refer to as "previous".
fn advance(state: &mut AgentState, sample: &FeatureSample) {
    state.gamma_prev = sample.gamma_next;
    state.rho_prev = sample.rho;
    state.pi_prev = sample.pi_prob;
    state.b_prev = sample.b_prob;
}

/// `z <- rho (gamma_t lambda z + scale x)`.
fn ratio_trace(z: &mut DVector<f64>, gamma_t: f64, lambda: f64, scale: f64, x: &DVector<f64>, rho: f64) {
    *z *= gamma_t * lambda;
    z.axpy(scale, x, 1.0);
    *z *= rho;
}

/// `w <- w + alpha delta z - alpha gamma' (1 - lambda)(h^T z) x'`.
fn corrected_w(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig, delta: f64, h: &DVector<f64>) {
    let corr = cfg.alpha * sample.gamma_next * (1.0 - cfg.lambda) * h.dot(&state.z_rho);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    state.w.axpy(-corr, &sample.x_next, 1.0);
}

/// `w <- w + alpha (h^T x) x - alpha gamma' (1 - lambda)(h^T z) x'`.
fn gtd2_w(w: &mut DVector<f64>, z: &DVector<f64>, sample: &FeatureSample, cfg: &AgentConfig, h: &DVector<f64>) {
    let corr = cfg.alpha * sample.gamma_next * (1.0 - cfg.lambda) * h.dot(z);
    w.axpy(cfg.alpha * h.dot(&sample.x), &sample.x, 1.0);
    w.axpy(-corr, &sample.x_next, 1.0);
}

/// `h <- h + alpha_h [delta z - scale (h^T x) x]`.
fn regress_h(h: &mut DVector<f64>, z: &DVector<f64>, x: &DVector<f64>, delta: f64, scale: f64, alpha_h: f64) {
    let hx = h.dot(x);
    h.axpy(alpha_h * delta, z, 1.0);
    h.axpy(-alpha_h * scale * hx, x, 1.0);
}

/// Off-policy TD(lambda): `z <- rho (gamma lambda z + x)`, `w <- w + alpha delta z`.
pub fn step_offpolicy_td(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, 1.0, &sample.x, sample.rho);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    advance(state, sample);
}

/// Alternative-life TD(lambda): the feature vector entering the trace carries
/// the product of the ratios seen earlier in the episode.
pub fn step_alternative_life_td(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    if state.gamma_prev == 0.0 {
        state.prod_rho = 1.0;
    }
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, state.prod_rho, &sample.x, sample.rho);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    state.prod_rho *= sample.rho;
    advance(state, sample);
}

/// GTD(lambda), the gradient-correction method also known as TDC(lambda).
pub fn step_gtd(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, 1.0, &sample.x, sample.rho);
    let h_old = state.h.clone();
    regress_h(&mut state.h, &state.z_rho, &sample.x, delta, 1.0, cfg.alpha_h);
    corrected_w(state, sample, cfg, delta, &h_old);
    advance(state, sample);
}

/// GTD2(lambda).
pub fn step_gtd2(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, 1.0, &sample.x, sample.rho);
    let h_old = state.h.clone();
    regress_h(&mut state.h, &state.z_rho, &sample.x, delta, 1.0, cfg.alpha_h);
    gtd2_w(&mut state.w, &state.z_rho, sample, cfg, &h_old);
    advance(state, sample);
}

/// Hybrid TD(lambda) with a ratio trace and a plain behavior trace.
pub fn step_htd(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, 1.0, &sample.x, sample.rho);
    ratio_trace(&mut state.z_b, state.gamma_prev, cfg.lambda, 1.0, &sample.x, 1.0);
    let e = &sample.x - &sample.x_next * sample.gamma_next;
    let h_zb = state.h.dot(&state.z_b);
    let diff_h = (&state.z_rho - &state.z_b).dot(&state.h);
    state.h.axpy(cfg.alpha_h * delta, &state.z_rho, 1.0);
    state.h.axpy(-cfg.alpha_h * h_zb, &e, 1.0);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    state.w.axpy(-cfg.alpha * diff_h, &e, 1.0);
    advance(state, sample);
}

/// Proximal GTD2(lambda) or Proximal GTD(lambda): a half step, a TD error
/// recomputed at the half-step weights, then a full step from the original point.
pub fn step_proximal(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig, variant: ProximalVariant) {
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, 1.0, &sample.x, sample.rho);
    let z = &state.z_rho;
    let scale = cfg.alpha * sample.gamma_next * (1.0 - cfg.lambda);

    let mut h_half = state.h.clone();
    regress_h(&mut h_half, z, &sample.x, delta, 1.0, cfg.alpha_h);
    let mut w_half = state.w.clone();
    match variant {
        ProximalVariant::Gtd2 => gtd2_w(&mut w_half, z, sample, cfg, &state.h),
        ProximalVariant::Gtd => {
            w_half.axpy(cfg.alpha * delta, z, 1.0);
            w_half.axpy(-scale * state.h.dot(z), &sample.x_next, 1.0);
        }
    }
    let delta_half = sample.td_error(&w_half);

    let hx_half = h_half.dot(&sample.x);
    let mut h_new = state.h.clone();
    h_new.axpy(cfg.alpha_h * delta_half, z, 1.0);
    h_new.axpy(-cfg.alpha_h * hx_half, &sample.x, 1.0);
    let mut w_new = state.w.clone();
    match variant {
        ProximalVariant::Gtd2 => gtd2_w(&mut w_new, z, sample, cfg, &h_half),
        ProximalVariant::Gtd => {
            w_new.axpy(cfg.alpha * delta_half, z, 1.0);
            w_new.axpy(-scale * h_half.dot(z), &sample.x_next, 1.0);
        }
    }
    state.h = h_new;
    state.w = w_new;
    advance(state, sample);
}

/// Off-policy TD with an action-dependent trace: `z <- gamma_t factor z + x`,
/// `w <- w + alpha rho delta z`.
pub fn step_adaptive_trace(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig, kind: TraceKind) {
    let factor = match kind {
        TraceKind::Generic => state.rho_prev * cfg.lambda,
        TraceKind::TreeBackup => state.pi_prev * cfg.lambda,
        TraceKind::Vtrace => cfg.c_bar.min(state.rho_prev) * cfg.lambda,
        TraceKind::Abtd => state.abtd.nu(cfg.zeta, state.b_prev, state.pi_prev) * state.pi_prev,
    };
    let delta = sample.td_error(&state.w);
    state.z_rho *= state.gamma_prev * factor;
    state.z_rho += &sample.x;
    state.w.axpy(cfg.alpha * sample.rho * delta, &state.z_rho, 1.0);
    advance(state, sample);
}

fn update_followon(state: &mut AgentState, cfg: &AgentConfig, variant: EtdVariant) {
    state.f = match variant {
        EtdVariant::Followon => state.rho_prev * state.gamma_prev * state.f + 1.0,
        EtdVariant::Beta if state.gamma_prev > 0.0 => state.rho_prev * cfg.beta_etd * state.f + 1.0,
        EtdVariant::Beta => 1.0,
    };
    state.m = cfg.lambda + (1.0 - cfg.lambda) * state.f;
}

/// Emphatic TD(lambda) and ETD(lambda, beta).
pub fn step_etd(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig, variant: EtdVariant) {
    update_followon(state, cfg, variant);
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, state.m, &sample.x, sample.rho);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    advance(state, sample);
}

/// Emphatic GTD(lambda): GTD(lambda) with the emphatic trace and an
/// emphasis-weighted regression term for the secondary weights.
pub fn step_emphatic_gtd(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    update_followon(state, cfg, EtdVariant::Followon);
    let delta = sample.td_error(&state.w);
    ratio_trace(&mut state.z_rho, state.gamma_prev, cfg.lambda, state.m, &sample.x, sample.rho);
    let h_old = state.h.clone();
    regress_h(&mut state.h, &state.z_rho, &sample.x, delta, state.m, cfg.alpha_h);
    corrected_w(state, sample, cfg, delta, &h_old);
    advance(state, sample);
}

/// TD with regularized corrections: TDC(0) with an `l2` penalty on the secondary weights.
pub fn step_tdrc(state: &mut AgentState, sample: &FeatureSample, cfg: &AgentConfig) {
    let delta = sample.td_error(&state.w);
    state.z_rho.fill(0.0);
    ratio_trace(&mut state.z_rho, 0.0, 0.0, 1.0, &sample.x, sample.rho);
    let h_old = state.h.clone();
    regress_h(&mut state.h, &state.z_rho, &sample.x, delta, 1.0, cfg.alpha_h);
    state.h.axpy(-cfg.alpha_h * cfg.beta_reg, &h_old, 1.0);
    let corr = cfg.alpha * sample.gamma_next * h_old.dot(&state.z_rho);
    state.w.axpy(cfg.alpha * delta, &state.z_rho, 1.0);
    state.w.axpy(-corr, &sample.x_next, 1.0);
    advance(state, sample);
}
