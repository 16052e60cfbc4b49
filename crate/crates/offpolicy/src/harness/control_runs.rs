//! Sampled control runs compared against the soft-optimal action values.

use serde::{Deserialize, Serialize};

use super::{map_indexed, seed_stream, SHARED_STREAM};
use crate::control::{
    self, epsilon_greedy, mellowmax, ActionValueModel, ControlAlgorithm, ControlConfig, ControlSample,
};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::mdp::sample_index;

/// Parameters of a control experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlSpec {
    /// Environment name.
    pub env: String,
    /// Representation specification.
    pub features: String,
    /// Algorithm.
    pub agent: ControlAlgorithm,
    /// Mellowmax temperature.
    pub tau: f64,
    /// Regularization of the correction weights.
    pub beta: f64,
    /// Exploration rate of the epsilon-greedy behavior.
    pub epsilon: f64,
    /// Value stepsize.
    pub alpha: f64,
    /// Correction stepsize; defaults to `alpha`.
    pub alpha_h: Option<f64>,
    /// Environment steps per run.
    pub steps: usize,
    /// Independent runs.
    pub runs: usize,
    /// Base seed.
    pub seed: u64,
    /// Steps between recorded points.
    pub record_every: usize,
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec {
            env: "control_chain:3".into(),
            features: "tabular".into(),
            agent: ControlAlgorithm::Qrc,
            tau: 0.0,
            beta: 1.0,
            epsilon: 0.1,
            alpha: 0.1,
            alpha_h: None,
            steps: 10_000,
            runs: 1,
            seed: 0,
            record_every: 100,
        }
    }
}

/// One recorded point of a control run.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    /// Run index.
    pub run: usize,
    /// Environment step.
    pub step: usize,
    /// `max_{s,a} |q(s,a) - q*(s,a)|`; `None` once the weights are non-finite.
    pub max_q_error_vs_oracle: Option<f64>,
    /// `sum_s start(s) m(q(s, .))`, the model's estimate of the return from the start distribution.
    pub return_estimate: Option<f64>,
}

/// Runs every control experiment with an epsilon-greedy behavior over the current values.
pub fn run_control(spec: &ControlSpec) -> Result<Vec<ControlRow>> {
    if spec.runs == 0 || spec.steps == 0 || spec.record_every == 0 {
        return Err(Error::InvalidParameter("runs, steps and record_every must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.epsilon) {
        return Err(Error::InvalidParameter("epsilon must lie in [0, 1]".into()));
    }
    let cfg = ControlConfig { alpha: spec.alpha, alpha_h: spec.alpha_h.unwrap_or(spec.alpha) };
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite() && cfg.alpha_h >= 0.0 && cfg.alpha_h.is_finite()) {
        return Err(Error::InvalidParameter("stepsizes must be finite and nonnegative".into()));
    }
    let problem = super::load_problem(&spec.env)?;
    let ns = problem.mdp.n_states();
    let na = problem.mdp.n_actions();
    let x = FeatureSpec::parse(&spec.features)?.build(
        ns,
        problem.features.as_ref(),
        &mut seed_stream(spec.seed, SHARED_STREAM),
    )?;
    ActionValueModel::new(na, x.k(), spec.tau, spec.beta)?;
    let q_star = control::optimal_q_oracle(&problem.mdp, spec.tau)?;
    let start = problem.mdp.start_vector();

    let runs = map_indexed(spec.runs, |run| -> Result<Vec<ControlRow>> {
        let mut rng = seed_stream(spec.seed, run as u64);
        let mut model = ActionValueModel::new(na, x.k(), spec.tau, spec.beta)?;
        let mut rows = Vec::new();
        let record = |rows: &mut Vec<ControlRow>, step: usize, model: &ActionValueModel| -> bool {
            let q = control::q_table(model, &x);
            if !q.iter().all(|v| v.is_finite()) {
                rows.push(ControlRow { run, step, max_q_error_vs_oracle: None, return_estimate: None });
                return true;
            }
            let err = (&q - &q_star).abs().max();
            let ret =
                (0..ns).map(|s| start[s] * mellowmax(&q.row(s).iter().copied().collect::<Vec<_>>(), spec.tau)).sum();
            rows.push(ControlRow { run, step, max_q_error_vs_oracle: Some(err), return_estimate: Some(ret) });
            false
        };
        record(&mut rows, 0, &model);
        let mut s = sample_index(&mut rng, start.iter().copied());
        for step in 1..=spec.steps {
            let xs = x.row(s);
            let a = epsilon_greedy(&mut rng, &model.q(&xs), spec.epsilon);
            let s2 = sample_index(&mut rng, (0..ns).map(|j| problem.mdp.p(s, a, j)));
            let sample = ControlSample {
                x: xs,
                a,
                reward: problem.mdp.r(s, a, s2),
                gamma_next: problem.mdp.gamma(s, a, s2),
                x_next: x.row(s2),
            };
            control::control_step(spec.agent, &mut model, &sample, &cfg);
            s = s2;
            if step % spec.record_every == 0 && record(&mut rows, step, &model) {
                break;
            }
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrc_approaches_oracle_on_chain() {
        let spec = ControlSpec { steps: 50_000, record_every: 50_000, tau: 2.0, ..ControlSpec::default() };
        let rows = run_control(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        let last = rows[1].max_q_error_vs_oracle.unwrap();
        assert!(last < rows[0].max_q_error_vs_oracle.unwrap());
        assert!(last < 0.05, "{last}");
    }

    #[test]
    fn initial_return_estimate_is_zero() {
        let rows = run_control(&ControlSpec { steps: 10, record_every: 10, ..ControlSpec::default() }).unwrap();
        assert_eq!(rows[0].return_estimate, Some(0.0));
    }

    #[test]
    fn control_runs_are_deterministic() {
        let spec = ControlSpec { runs: 3, steps: 2000, agent: ControlAlgorithm::Gq, ..ControlSpec::default() };
        assert_eq!(run_control(&spec).unwrap(), run_control(&spec).unwrap());
    }

    #[test]
    fn bad_parameters_are_rejected() {
        for spec in [
            ControlSpec { epsilon: 1.5, ..ControlSpec::default() },
            ControlSpec { tau: -1.0, ..ControlSpec::default() },
            ControlSpec { runs: 0, ..ControlSpec::default() },
            ControlSpec { env: "nowhere".into(), ..ControlSpec::default() },
        ] {
            assert!(matches!(run_control(&spec), Err(Error::InvalidParameter(_))));
        }
    }
}
