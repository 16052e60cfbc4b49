//! Closed-form solution of one objective on one problem.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{load_problem, seed_stream, SHARED_STREAM};
use crate::analysis::{self, BoundReport, WeightingChoice, Weightings};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::mdp;

/// Objective selectable by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveObjective {
    /// TD fixed point.
    Td,
    /// Projected Bellman error, generalized when correction features are given.
    Pbe,
    /// Bellman error.
    Be,
    /// Mean squared TD error.
    Tde,
    /// Value error.
    Ve,
}

impl std::str::FromStr for SolveObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td" => Ok(SolveObjective::Td),
            "pbe" => Ok(SolveObjective::Pbe),
            "be" => Ok(SolveObjective::Be),
            "tde" => Ok(SolveObjective::Tde),
            "ve" => Ok(SolveObjective::Ve),
            _ => Err(Error::InvalidParameter(format!("unknown objective '{s}'"))),
        }
    }
}

/// Parameters of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSpec {
    /// Environment name or path to an MDP JSON document.
    pub env: String,
    /// Representation of the value estimate.
    pub features: String,
    /// Representation of the correction class of the generalized PBE.
    pub h_features: Option<String>,
    /// Weighting of the objective (`db`, `dpi` or `m`).
    pub weighting: String,
    /// Objective.
    pub objective: SolveObjective,
    /// Trace parameter.
    pub lambda: f64,
    /// Seed of randomized representations.
    pub seed: u64,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            env: "random_walk:19".into(),
            features: "native".into(),
            h_features: None,
            weighting: "db".into(),
            objective: SolveObjective::Td,
            lambda: 0.0,
            seed: 0,
        }
    }
}

/// Solution of an objective with its value errors and bound constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Minimizing weights.
    pub weights: Vec<f64>,
    /// Value error under `d_b`.
    pub ve_db: f64,
    /// Value error under `d_pi`.
    pub ve_dpi: f64,
    /// Objective at the returned weights.
    pub objective_value: f64,
    /// Bound constants of the weighting with `d_pi` as evaluation weighting;
    /// `None` when they cannot be computed.
    pub bound_report: Option<BoundReport>,
}

/// Solves the requested objective in closed form.
pub fn solve(spec: &SolveSpec) -> Result<SolveReport> {
    let problem = load_problem(&spec.env)?;
    let (pi, b) = (&problem.target, &problem.behavior);
    mdp::check_coverage(pi, b)?;
    let ns = problem.mdp.n_states();
    let mut rng = seed_stream(spec.seed, SHARED_STREAM);
    let x = FeatureSpec::parse(&spec.features)?.build(ns, problem.features.as_ref(), &mut rng)?;
    let x_h = match &spec.h_features {
        Some(h) => Some(FeatureSpec::parse(h)?.build(ns, problem.features.as_ref(), &mut rng)?),
        None => None,
    };
    if x_h.is_some() && spec.objective != SolveObjective::Pbe {
        return Err(Error::InvalidParameter("h-features apply to the pbe objective only".into()));
    }
    let uses_lambda = matches!(spec.objective, SolveObjective::Td | SolveObjective::Pbe) && x_h.is_none();
    if spec.lambda != 0.0 && !uses_lambda {
        return Err(Error::InvalidParameter(format!("lambda is not defined for objective {:?}", spec.objective)));
    }
    let weightings = Weightings::compute(&problem.mdp, pi, b, spec.lambda)?;
    let d = weightings.get(WeightingChoice::parse(&spec.weighting)?);
    let v_pi = mdp::true_values(&problem.mdp, pi)?;
    let (w, value): (DVector<f64>, f64) = match (spec.objective, &x_h) {
        (SolveObjective::Td | SolveObjective::Pbe, None) => {
            let m = analysis::compute_matrices(&problem.mdp, pi, d, &x, spec.lambda)?;
            let w = analysis::td_fixed_point(&m)?;
            let v = analysis::linear_pbe(&w, &m)?;
            (w, v)
        }
        (SolveObjective::Pbe, Some(h)) => {
            let w = analysis::generalized_pbe_solution(&problem.mdp, pi, d, &x, h)?;
            let v = analysis::generalized_pbe_value(&problem.mdp, pi, d, &x, h, &w)?;
            (w, v)
        }
        (SolveObjective::Be, _) => {
            let w = analysis::be_solution(&problem.mdp, pi, d, &x)?;
            let v = analysis::be_value(&problem.mdp, pi, d, &x, &w);
            (w, v)
        }
        (SolveObjective::Tde, _) => {
            let w = analysis::tde_fixed_point(&problem.mdp, pi, d, &x)?;
            let v = analysis::tde_value(&problem.mdp, pi, d, &x, &w);
            (w, v)
        }
        (SolveObjective::Ve, _) => {
            let w = analysis::ve_minimizer(&x, &v_pi, d)?;
            let v = analysis::ve(&w, &x, &v_pi, d);
            (w, v)
        }
        (SolveObjective::Td, Some(_)) => unreachable!("rejected above"),
    };
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem("solution is not finite".into()));
    }
    let bound_report = analysis::bound_constants(&problem.mdp, pi, d, &x, &weightings.d_pi).ok();
    Ok(SolveReport {
        ve_db: analysis::ve(&w, &x, &v_pi, &weightings.d_b),
        ve_dpi: analysis::ve(&w, &x, &v_pi, &weightings.d_pi),
        weights: w.iter().copied().collect(),
        objective_value: value,
        bound_report,
    })
}
