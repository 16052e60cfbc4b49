//! Small problems on which objectives and algorithms disagree sharply.

use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use crate::agents::{AgentConfig, Algorithm};
use crate::analysis::{self, compute_matrices, td_fixed_point};
use crate::dynamics::{self, ExpectedRun, ExpectedSystem, StopRule};
use crate::error::{Error, Result};
use crate::features::{tabular, FeatureMap};
use crate::mdp::{self, builders, StateWeighting};

/// Named counterexample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counterexample {
    /// Expected-update trajectories on the star problem.
    Baird,
    /// Behavior-policy sweep on the two-state family.
    Kolter,
    /// Aliased four-state problem.
    Aliased,
    /// TDE minimizer bias on the five-state walk.
    TdeBias,
}

impl FromStr for Counterexample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baird" => Ok(Counterexample::Baird),
            "kolter" => Ok(Counterexample::Kolter),
            "aliased" => Ok(Counterexample::Aliased),
            "tde-bias" => Ok(Counterexample::TdeBias),
            _ => Err(Error::InvalidParameter(format!("unknown counterexample '{s}'"))),
        }
    }
}

/// One point of a figure-shaped table.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    /// Abscissa: a behavior parameter, iteration, state or problem label.
    pub x: String,
    /// Series name.
    pub series: String,
    /// Ordinate; `None` marks a diverged trajectory.
    pub value: Option<f64>,
}

fn row(x: impl ToString, series: &str, value: f64) -> CounterexampleRow {
    CounterexampleRow { x: x.to_string(), series: series.into(), value: Some(value) }
}

/// State values assigned to the two post-alias states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AliasedContrast {
    /// Values of `B` and `C` at the TD fixed point.
    pub td: [f64; 2],
    /// Values of `B` and `C` at the BE minimizer.
    pub be: [f64; 2],
}

/// Solves TD and BE on the aliased problem under its stationary distribution.
pub fn aliased_contrast() -> Result<AliasedContrast> {
    let prob = builders::aliased_four_state();
    let x = prob.features.clone().expect("aliased problem ships features");
    let d = mdp::target_weighting(&prob.mdp, &prob.target)?;
    let w_td = td_fixed_point(&compute_matrices(&prob.mdp, &prob.target, &d, &x, 0.0)?)?;
    let w_be = analysis::be_solution(&prob.mdp, &prob.target, &d, &x)?;
    let values = |w: &DVector<f64>| {
        let v = x.matrix() * w;
        [v[2], v[3]]
    };
    Ok(AliasedContrast { td: values(&w_td), be: values(&w_be) })
}

/// One behavior parameter of the Kolter sweep; errors are measured under `d_pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KolterPoint {
    /// Behavior probability of the first state.
    pub p: f64,
    /// Value error of the TD fixed point under `d_b`.
    pub ve_pbe_db: f64,
    /// Value error of the BE minimizer under `d_b`.
    pub ve_be_db: f64,
    /// Value error of the TD fixed point under the emphatic weighting.
    pub ve_pbe_m: f64,
    /// Smallest representable value error.
    pub ve_floor: f64,
}

/// Summary of a Kolter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KolterSweep {
    /// Sweep points in increasing `p`.
    pub points: Vec<KolterPoint>,
    /// `max_p VE(PBE-d_b) / VE(BE-d_b)`.
    pub max_pbe_to_be_ratio: f64,
    /// `max_p VE(PBE-m) / floor`.
    pub max_emphatic_to_floor_ratio: f64,
}

/// Sweeps the behavior probability over `n_points` evenly spaced values in `[0.01, 0.99]`.
pub fn kolter_sweep(n_points: usize) -> Result<KolterSweep> {
    if n_points < 2 {
        return Err(Error::InvalidParameter("the sweep needs at least two points".into()));
    }
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let p = 0.01 + 0.98 * i as f64 / (n_points - 1) as f64;
        let prob = builders::kolter_family(p)?;
        let x = prob.features.clone().expect("kolter problem ships features");
        let pi = &prob.target;
        let d_b = mdp::behavior_weighting(&prob.mdp, &prob.behavior)?;
        let d_pi = mdp::target_weighting(&prob.mdp, pi)?;
        let m = mdp::followon(&prob.mdp, pi, &d_b)?;
        let v = mdp::true_values(&prob.mdp, pi)?;
        let ve = |w: &DVector<f64>| analysis::ve(w, &x, &v, &d_pi);
        let w_pbe_db = td_fixed_point(&compute_matrices(&prob.mdp, pi, &d_b, &x, 0.0)?)?;
        let w_pbe_m = td_fixed_point(&compute_matrices(&prob.mdp, pi, &m, &x, 0.0)?)?;
        let w_be = analysis::be_solution(&prob.mdp, pi, &d_b, &x)?;
        let w_floor = analysis::ve_minimizer(&x, &v, &d_pi)?;
        points.push(KolterPoint {
            p,
            ve_pbe_db: ve(&w_pbe_db),
            ve_be_db: ve(&w_be),
            ve_pbe_m: ve(&w_pbe_m),
            ve_floor: ve(&w_floor),
        });
    }
    let max_pbe_to_be_ratio = points.iter().map(|q| q.ve_pbe_db / q.ve_be_db).fold(f64::NEG_INFINITY, f64::max);
    let max_emphatic_to_floor_ratio = points.iter().map(|q| q.ve_pbe_m / q.ve_floor).fold(f64::NEG_INFINITY, f64::max);
    Ok(KolterSweep { points, max_pbe_to_be_ratio, max_emphatic_to_floor_ratio })
}

/// Value errors on the five-state walk with tabular features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TdeBias {
    /// Value error of the TDE minimizer.
    pub ve_tde: f64,
    /// Value error of the TD fixed point.
    pub ve_td: f64,
}

/// Compares the TDE minimizer with the TD fixed point on `random_walk(5)`.
/// Both objectives are weighted by `d_pi`; value errors are unweighted sums over states.
pub fn tde_bias() -> Result<TdeBias> {
    let prob = builders::random_walk(5)?;
    let x: FeatureMap = tabular(5);
    let pi = &prob.target;
    let d_pi = mdp::target_weighting(&prob.mdp, pi)?;
    let v = mdp::true_values(&prob.mdp, pi)?;
    let ones = StateWeighting::ones(5);
    let w_tde = analysis::tde_fixed_point(&prob.mdp, pi, &d_pi, &x)?;
    let w_td = td_fixed_point(&compute_matrices(&prob.mdp, pi, &d_pi, &x, 0.0)?)?;
    Ok(TdeBias { ve_tde: analysis::ve(&w_tde, &x, &v, &ones), ve_td: analysis::ve(&w_td, &x, &v, &ones) })
}

/// Algorithms traced on the star problem.
pub const BAIRD_ALGORITHMS: [Algorithm; 6] =
    [Algorithm::Td, Algorithm::Gtd, Algorithm::Gtd2, Algorithm::Htd, Algorithm::Etd, Algorithm::Tdrc];

/// Expected-update trajectory of one algorithm on the star problem.
#[derive(Debug, Clone, Serialize)]
pub struct BairdCurve {
    /// Algorithm.
    pub algorithm: Algorithm,
    /// Trajectory summary and checkpoints.
    pub run: ExpectedRun,
}

/// Runs expected updates with `alpha = 0.01` and `alpha_h = 0.1` from the
/// standard initial weights, stopping at PBE below `1e-8`, weight norm above
/// `1e6`, or `max_iterations`.
pub fn baird_expected(algorithms: &[Algorithm], max_iterations: usize, check_every: usize) -> Result<Vec<BairdCurve>> {
    let prob = builders::baird_star();
    let x = prob.features.clone().expect("baird problem ships features");
    let sys = ExpectedSystem::new(&prob.mdp, &prob.target, &prob.behavior, &x)?;
    let w0 = DVector::from_vec(builders::baird_initial_weights());
    let stop = StopRule { max_iterations, pbe_tolerance: 1e-8, divergence_norm: 1e6, check_every };
    algorithms
        .iter()
        .map(|&algorithm| {
            let cfg = AgentConfig::new(algorithm, 0.01, 0.1);
            Ok(BairdCurve { algorithm, run: dynamics::run_expected(&sys, &cfg, &w0, stop)? })
        })
        .collect()
}

/// Knobs of [`run_counterexample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleParams {
    /// Points of the Kolter sweep.
    pub kolter_points: usize,
    /// Iteration cap of the star trajectories.
    pub baird_iterations: usize,
    /// Checkpoint spacing of the star trajectories.
    pub baird_check_every: usize,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        CounterexampleParams { kolter_points: 981, baird_iterations: 100_000, baird_check_every: 1000 }
    }
}

/// Builds the figure-shaped table of a counterexample.
pub fn run_counterexample(which: Counterexample, params: &CounterexampleParams) -> Result<Vec<CounterexampleRow>> {
    Ok(match which {
        Counterexample::Aliased => {
            let c = aliased_contrast()?;
            vec![row("B", "td", c.td[0]), row("C", "td", c.td[1]), row("B", "be", c.be[0]), row("C", "be", c.be[1])]
        }
        Counterexample::TdeBias => {
            let t = tde_bias()?;
            vec![row("random_walk:5", "ve_td", t.ve_td), row("random_walk:5", "ve_tde", t.ve_tde)]
        }
        Counterexample::Kolter => {
            let sweep = kolter_sweep(params.kolter_points)?;
            let mut rows = Vec::with_capacity(4 * sweep.points.len());
            for q in &sweep.points {
                rows.push(row(q.p, "ve_pbe_db", q.ve_pbe_db));
                rows.push(row(q.p, "ve_be_db", q.ve_be_db));
                rows.push(row(q.p, "ve_pbe_m", q.ve_pbe_m));
                rows.push(row(q.p, "ve_floor", q.ve_floor));
            }
            rows
        }
        Counterexample::Baird => {
            let curves = baird_expected(&BAIRD_ALGORITHMS, params.baird_iterations, params.baird_check_every)?;
            let mut rows = Vec::new();
            for c in &curves {
                let name = c.algorithm.name();
                for &(it, pbe, norm) in &c.run.checkpoints {
                    let finite = pbe.is_finite() && norm.is_finite();
                    rows.push(CounterexampleRow {
                        x: it.to_string(),
                        series: format!("{name}:pbe"),
                        value: finite.then_some(pbe),
                    });
                    rows.push(CounterexampleRow {
                        x: it.to_string(),
                        series: format!("{name}:norm"),
                        value: finite.then_some(norm),
                    });
                }
            }
            rows
        }
    })
}
