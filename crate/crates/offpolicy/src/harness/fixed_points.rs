//! Closed-form fixed-point study over random policies and representations.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{map_indexed, seed_stream};
use crate::analysis::{self, normalize_ve_with_spread, WeightingChoice, Weightings};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureSpec};
use crate::linalg;
use crate::mdp::{self, Policy, Problem};

/// Objective whose fixed point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Linear projected Bellman error (the TD fixed point).
    Pbe,
    /// Bellman error.
    Be,
}

impl Objective {
    /// Both objectives.
    pub const ALL: [Objective; 2] = [Objective::Pbe, Objective::Be];

    /// Short label.
    pub fn label(&self) -> &'static str {
        match self {
            Objective::Pbe => "pbe",
            Objective::Be => "be",
        }
    }
}

/// Parameters of the fixed-point study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSpec {
    /// Environment name.
    pub env: String,
    /// Representation specifications such as `agg:2`.
    pub representations: Vec<String>,
    /// Number of random policy pairs.
    pub reps: usize,
    /// Base seed.
    pub seed: u64,
    /// Trace parameter of the emphatic weighting.
    pub lambda: f64,
}

impl Default for FixedPointSpec {
    fn default() -> Self {
        FixedPointSpec {
            env: "random_walk:19".into(),
            representations: ["tabular", "agg:2", "dependent", "tile:4x4", "relu:76-9-0.25"].map(String::from).to_vec(),
            reps: 10_000,
            seed: 0,
            lambda: 0.0,
        }
    }
}

/// Aggregated statistics of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointCell {
    /// Representation label.
    pub representation: String,
    /// Objective.
    pub objective: Objective,
    /// Weighting of the objective.
    pub weighting: WeightingChoice,
    /// Weighting of the value error.
    pub eval_weighting: WeightingChoice,
    /// Repetitions contributing raw values.
    pub n: usize,
    /// Mean raw value error, `None` when every repetition was skipped.
    pub mean_value: Option<f64>,
    /// Standard error of the mean raw value error.
    pub se_value: Option<f64>,
    /// Repetitions contributing normalized values.
    pub n_normalized: usize,
    /// Mean normalized error, `None` when no repetition could be normalized.
    pub mean_normalized: Option<f64>,
    /// Standard error of the mean normalized error.
    pub se_normalized: Option<f64>,
}

impl FixedPointCell {
    /// 95% normal confidence interval of the mean normalized error.
    pub fn normalized_ci95(&self) -> Option<(f64, f64)> {
        let (m, se) = (self.mean_normalized?, self.se_normalized?);
        Some((m - 1.96 * se, m + 1.96 * se))
    }
}

/// Counters of repetitions that could not contribute fully.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipSummary {
    /// Representation label.
    pub representation: String,
    /// Repetitions skipped because a linear system was singular.
    pub skipped_singular: usize,
    /// Repetitions whose table could not be normalized.
    pub degenerate: usize,
}

/// Result grid of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointTable {
    /// Cells keyed by (representation, objective, weighting, eval weighting).
    pub cells: Vec<FixedPointCell>,
    /// Per-representation skip counters.
    pub summary: Vec<SkipSummary>,
}

impl FixedPointTable {
    /// Looks up one cell.
    pub fn cell(
        &self,
        representation: &str,
        objective: Objective,
        weighting: WeightingChoice,
        eval_weighting: WeightingChoice,
    ) -> Option<&FixedPointCell> {
        self.cells.iter().find(|c| {
            c.representation == representation
                && c.objective == objective
                && c.weighting == weighting
                && c.eval_weighting == eval_weighting
        })
    }
}

/// Value-error evaluation weightings used by the study.
pub const EVAL_WEIGHTINGS: [WeightingChoice; 2] = [WeightingChoice::Db, WeightingChoice::Dpi];

/// Relative singular-value cutoff when reducing a representation to a basis of its span.
pub const BASIS_CUTOFF: f64 = 1e-10;

/// Spread, relative to `||v_pi||_d^2`, below which a value-error table counts as degenerate.
pub const RELATIVE_SPREAD: f64 = 1e-12;

const CELLS_PER_EVAL: usize = 6;

enum RepOutcome {
    Singular,
    Done {
        /// Raw value errors per eval weighting, in (objective, weighting) order.
        raw: [[f64; CELLS_PER_EVAL]; 2],
        /// Normalized value errors, `None` when degenerate.
        normalized: Option<[[f64; CELLS_PER_EVAL]; 2]>,
    },
}

fn solve_cell(
    problem: &Problem,
    pi: &Policy,
    x: &FeatureMap,
    w: &Weightings,
    obj: Objective,
    c: WeightingChoice,
) -> Result<DVector<f64>> {
    let d = w.get(c);
    match obj {
        Objective::Pbe => analysis::td_fixed_point(&analysis::compute_matrices(&problem.mdp, pi, d, x, 0.0)?),
        Objective::Be => analysis::be_solution(&problem.mdp, pi, d, x),
    }
}

fn one_repetition(
    problem: &Problem,
    reps: &[FeatureSpec],
    lambda: f64,
    seed: u64,
    rep: usize,
) -> Result<Vec<RepOutcome>> {
    let mut rng = seed_stream(seed, rep as u64);
    let (ns, na) = (problem.mdp.n_states(), problem.mdp.n_actions());
    let pi = Policy::random_simplex(&mut rng, ns, na);
    let b = Policy::random_simplex(&mut rng, ns, na);
    let weightings = Weightings::compute(&problem.mdp, &pi, &b, lambda)?;
    let v_pi = mdp::true_values(&problem.mdp, &pi)?;
    let mut out = Vec::with_capacity(reps.len());
    for spec in reps {
        let x = spec.build(ns, problem.features.as_ref(), &mut rng)?.column_basis(BASIS_CUTOFF)?;
        let mut solutions = Vec::with_capacity(CELLS_PER_EVAL);
        let mut singular = false;
        for obj in Objective::ALL {
            for c in WeightingChoice::all() {
                match solve_cell(problem, &pi, &x, &weightings, obj, c) {
                    Ok(w) => solutions.push(w),
                    Err(Error::SingularSystem(_)) => singular = true,
                    Err(e) => return Err(e),
                }
            }
        }
        if singular {
            out.push(RepOutcome::Singular);
            continue;
        }
        let mut raw = [[0.0; CELLS_PER_EVAL]; 2];
        let mut normalized = Some([[0.0; CELLS_PER_EVAL]; 2]);
        for (e, &eval) in EVAL_WEIGHTINGS.iter().enumerate() {
            let d = weightings.get(eval);
            for (i, w) in solutions.iter().enumerate() {
                raw[e][i] = analysis::ve(w, &x, &v_pi, d);
            }
            let floor = analysis::ve(&analysis::ve_minimizer(&x, &v_pi, d)?, &x, &v_pi, d);
            let scale = linalg::weighted_sq_norm(&v_pi, &d.d);
            match normalize_ve_with_spread(&raw[e], floor, RELATIVE_SPREAD * scale) {
                Ok(n) => {
                    if let Some(t) = normalized.as_mut() {
                        t[e].copy_from_slice(&n);
                    }
                }
                Err(Error::DegenerateTable(_)) => normalized = None,
                Err(err) => return Err(err),
            }
        }
        out.push(RepOutcome::Done { raw, normalized });
    }
    Ok(out)
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean_se(&self) -> (Option<f64>, Option<f64>) {
        if self.n == 0 {
            return (None, None);
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        if self.n == 1 {
            return (Some(mean), None);
        }
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (Some(mean), Some((var / n).sqrt()))
    }
}

/// Runs the study: each repetition draws target and behavior policies on the
/// simplex, builds every representation and reduces it to an orthonormal
/// basis of its span, solves PBE and BE under `d_b`,
/// `d_pi` and `m`, and records value errors under `d_b` and `d_pi`, raw and
/// normalized between the representable floor and the worst cell.
pub fn run_fixed_point_study(spec: &FixedPointSpec) -> Result<FixedPointTable> {
    if spec.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let problem = super::load_problem(&spec.env)?;
    let reps: Vec<FeatureSpec> = spec.representations.iter().map(|s| FeatureSpec::parse(s)).collect::<Result<_>>()?;
    if reps.is_empty() {
        return Err(Error::InvalidParameter("no representations requested".into()));
    }
    let outcomes = map_indexed(spec.reps, |rep| one_repetition(&problem, &reps, spec.lambda, spec.seed, rep));

    let mut raw = vec![[[Moments::default(); CELLS_PER_EVAL]; 2]; reps.len()];
    let mut norm = raw.clone();
    let mut summary: Vec<SkipSummary> =
        reps.iter().map(|r| SkipSummary { representation: r.label(), skipped_singular: 0, degenerate: 0 }).collect();
    for outcome in outcomes {
        for (r, o) in outcome?.into_iter().enumerate() {
            match o {
                RepOutcome::Singular => summary[r].skipped_singular += 1,
                RepOutcome::Done { raw: values, normalized } => {
                    for e in 0..2 {
                        for i in 0..CELLS_PER_EVAL {
                            raw[r][e][i].push(values[e][i]);
                        }
                    }
                    match normalized {
                        Some(t) => {
                            for e in 0..2 {
                                for i in 0..CELLS_PER_EVAL {
                                    norm[r][e][i].push(t[e][i]);
                                }
                            }
                        }
                        None => summary[r].degenerate += 1,
                    }
                }
            }
        }
    }

    let mut cells = Vec::new();
    for (r, rep) in reps.iter().enumerate() {
        for (e, &eval) in EVAL_WEIGHTINGS.iter().enumerate() {
            for (oi, obj) in Objective::ALL.into_iter().enumerate() {
                for (wi, c) in WeightingChoice::all().into_iter().enumerate() {
                    let i = oi * 3 + wi;
                    let (mean_value, se_value) = raw[r][e][i].mean_se();
                    let (mean_normalized, se_normalized) = norm[r][e][i].mean_se();
                    cells.push(FixedPointCell {
                        representation: rep.label(),
                        objective: obj,
                        weighting: c,
                        eval_weighting: eval,
                        n: raw[r][e][i].n,
                        mean_value,
                        se_value,
                        n_normalized: norm[r][e][i].n,
                        mean_normalized,
                        se_normalized,
                    });
                }
            }
        }
    }
    Ok(FixedPointTable { cells, summary })
}
