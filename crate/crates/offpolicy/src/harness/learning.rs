//! Sampled learning curves measured with closed-form value error.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{map_indexed, seed_stream, ResultRow, DIVERGENCE_NORM, SHARED_STREAM};
use crate::agents::{Agent, AgentConfig, FeatureSample};
use crate::analysis::{self, WeightingChoice, Weightings};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::mdp::{self, builders};

/// Parameters of a learning-curve experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Environment name.
    pub env: String,
    /// Representation of the primary weights.
    pub features: String,
    /// Representation of the secondary weights; the agents share `features`.
    pub h_features: Option<String>,
    /// Agent configuration, including the algorithm.
    pub cfg: AgentConfig,
    /// Weighting under which the value error is measured (`db`, `dpi` or `m`).
    pub weighting: String,
    /// Independent runs.
    pub runs: usize,
    /// Environment steps per run.
    pub steps: usize,
    /// Base seed.
    pub seed: u64,
    /// Steps between recorded points.
    pub record_every: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            env: "random_walk:19".into(),
            features: "native".into(),
            h_features: None,
            cfg: AgentConfig::default(),
            weighting: "dpi".into(),
            runs: 1,
            steps: 1000,
            seed: 0,
            record_every: 100,
        }
    }
}

impl ExperimentSpec {
    /// Checks counts and agent parameters.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.steps == 0 || self.record_every == 0 {
            return Err(Error::InvalidParameter("runs, steps and record_every must be at least 1".into()));
        }
        if !self.steps.is_multiple_of(self.record_every) {
            return Err(Error::InvalidParameter("record_every must divide steps".into()));
        }
        if let Some(h) = &self.h_features {
            if h != &self.features {
                return Err(Error::InvalidParameter(
                    "sampled agents use the primary representation for their secondary weights".into(),
                ));
            }
        }
        self.cfg.validate()
    }
}

/// Runs every learning curve and returns rows `ve` and `pbe` per recorded
/// step. A run whose weight norm exceeds [`DIVERGENCE_NORM`] records a
/// `diverged` row at that step and stops.
pub fn run_learning_curve(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let problem = super::load_problem(&spec.env)?;
    let eval = WeightingChoice::parse(&spec.weighting)?;
    let (pi, b) = (&problem.target, &problem.behavior);
    let ns = problem.mdp.n_states();
    let x = FeatureSpec::parse(&spec.features)?.build(
        ns,
        problem.features.as_ref(),
        &mut seed_stream(spec.seed, SHARED_STREAM),
    )?;
    mdp::check_coverage(pi, b)?;
    let weightings = Weightings::compute(&problem.mdp, pi, b, spec.cfg.lambda)?;
    let d_eval = weightings.get(eval).clone();
    let v_pi = mdp::true_values(&problem.mdp, pi)?;
    let pbe_matrices = analysis::compute_matrices(&problem.mdp, pi, &weightings.d_b, &x, spec.cfg.lambda)?;
    let c_solver = pbe_matrices.c_solver()?;
    let w0 = if problem.name == "baird" && x.k() == 8 {
        DVector::from_vec(builders::baird_initial_weights())
    } else {
        DVector::zeros(x.k())
    };

    let runs = map_indexed(spec.runs, |run| -> Result<Vec<ResultRow>> {
        let mut rng = seed_stream(spec.seed, run as u64);
        let mut agent = Agent::new(spec.cfg, w0.clone(), pi, b)?;
        let mut rows = Vec::new();
        let record = |rows: &mut Vec<ResultRow>, step: usize, w: &DVector<f64>| -> bool {
            let diverged = !w.iter().all(|v| v.is_finite()) || w.norm() > DIVERGENCE_NORM;
            let (ve, pbe) = if diverged {
                (None, None)
            } else {
                let r = pbe_matrices.residual(w);
                (Some(analysis::ve(w, &x, &v_pi, &d_eval)), Some(r.dot(&c_solver.solve(&r)).max(0.0)))
            };
            rows.push(ResultRow { run, step, metric: "ve".into(), value: ve });
            rows.push(ResultRow { run, step, metric: "pbe".into(), value: pbe });
            diverged
        };
        record(&mut rows, 0, agent.weights());
        let mut s = mdp::sample_start(&mut rng, &problem.mdp);
        for step in 1..=spec.steps {
            let t = mdp::sample_step(&mut rng, s, b, pi, &problem.mdp)?;
            agent.step(&FeatureSample::from_transition(&t, &x));
            s = t.s_next;
            let w = agent.weights();
            let blown = !w.iter().all(|v| v.is_finite()) || w.norm() > DIVERGENCE_NORM;
            if (step.is_multiple_of(spec.record_every) || blown) && record(&mut rows, step, w) {
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
    use crate::agents::Algorithm;

    fn spec(env: &str, alg: Algorithm, alpha: f64, steps: usize, runs: usize) -> ExperimentSpec {
        ExperimentSpec {
            env: env.into(),
            cfg: AgentConfig::new(alg, alpha, alpha),
            runs,
            steps,
            record_every: steps / 10,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn zero_stepsize_gives_flat_curve() {
        let rows = run_learning_curve(&spec("random_walk:19", Algorithm::Gtd, 0.0, 1000, 2)).unwrap();
        let ve: Vec<f64> = rows.iter().filter(|r| r.metric == "ve").map(|r| r.value.unwrap()).collect();
        assert_eq!(ve.len(), 22);
        assert!(ve.iter().all(|&v| v == ve[0]));
    }

    #[test]
    fn step_zero_matches_closed_form_initial_error() {
        for alg in Algorithm::ALL {
            let rows = run_learning_curve(&spec("baird", alg, 0.01, 10, 1)).unwrap();
            let prob = builders::baird_star();
            let x = prob.features.clone().unwrap();
            let d = mdp::target_weighting(&prob.mdp, &prob.target).unwrap();
            let v = mdp::true_values(&prob.mdp, &prob.target).unwrap();
            let w0 = DVector::from_vec(builders::baird_initial_weights());
            let expected = analysis::ve(&w0, &x, &v, &d);
            assert_eq!(rows[0].step, 0);
            assert_eq!(rows[0].value, Some(expected), "{alg}");
        }
    }

    #[test]
    fn offpolicy_td_diverges_on_baird() {
        let rows = run_learning_curve(&spec("baird", Algorithm::Td, 0.01, 20_000, 1)).unwrap();
        assert!(rows.iter().any(|r| r.value.is_none()));
    }

    #[test]
    fn gtd_improves_on_baird() {
        let mut s = spec("baird", Algorithm::Gtd, 0.01, 50_000, 30);
        s.cfg.alpha_h = 0.1;
        let rows = run_learning_curve(&s).unwrap();
        let mean = |metric: &str, step: usize| {
            let v: Vec<f64> =
                rows.iter().filter(|r| r.metric == metric && r.step == step).map(|r| r.value.unwrap()).collect();
            assert_eq!(v.len(), 30);
            v.iter().sum::<f64>() / 30.0
        };
        assert!(mean("ve", 50_000) < mean("ve", 0));
        assert!(mean("pbe", 50_000) < 1e-3, "{}", mean("pbe", 50_000));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = spec("random_walk:19", Algorithm::Etd, 0.01, 500, 3);
        assert_eq!(run_learning_curve(&s).unwrap(), run_learning_curve(&s).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec("random_walk:19", Algorithm::Td, 0.01, 100, 1);
        s.record_every = 30;
        assert!(matches!(run_learning_curve(&s), Err(Error::InvalidParameter(_))));
        s.record_every = 10;
        s.runs = 0;
        assert!(matches!(run_learning_curve(&s), Err(Error::InvalidParameter(_))));
    }
}
