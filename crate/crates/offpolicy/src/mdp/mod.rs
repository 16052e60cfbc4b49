//! Finite MDPs with transition-dependent discounting, policies, sampling and
//! the state weightings used by every objective.

pub mod builders;
mod json;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use builders::Problem;
pub use json::MdpDocument;

/// Tolerance used when validating that probability vectors sum to one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;
/// Convergence tolerance of the stationary-distribution power iteration.
pub const STATIONARY_TOLERANCE: f64 = 1e-12;
/// Iteration budget of the stationary-distribution power iteration.
pub const STATIONARY_MAX_ITERATIONS: usize = 1_000_000;

/// Tabular MDP with tensors indexed `(s, a, s')`.
///
/// A transition with discount zero ends the episode; the next episode starts
/// from `start`. Builders place the post-termination mass of `P` on the
/// start distribution so that sampled trajectories restart automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    gamma: Vec<f64>,
    start: Vec<f64>,
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::InvalidParameter(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl FiniteMdp {
    /// Builds and validates an MDP from flat row-major tensors.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        gamma: Vec<f64>,
        start: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidParameter("an MDP needs at least one state and one action".into()));
        }
        let len = n_states * n_actions * n_states;
        if p.len() != len || r.len() != len || gamma.len() != len || start.len() != n_states {
            return Err(Error::InvalidParameter("tensor shape mismatch".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                check_distribution(&p[base..base + n_states], &format!("P({s},{a},.)"))?;
            }
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("reward tensor has non-finite entries".into()));
        }
        if gamma.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(Error::InvalidParameter("discounts must lie in [0, 1]".into()));
        }
        check_distribution(&start, "start distribution")?;
        Ok(FiniteMdp { n_states, n_actions, p, r, gamma, start })
    }

    /// Number of states.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of actions.
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    fn idx(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    /// Transition probability `P(s, a, s')`.
    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[self.idx(s, a, s2)]
    }

    /// Reward `r(s, a, s')`.
    #[inline]
    pub fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.r[self.idx(s, a, s2)]
    }

    /// Discount `gamma(s, a, s')`.
    #[inline]
    pub fn gamma(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.gamma[self.idx(s, a, s2)]
    }

    /// Start distribution.
    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// Start distribution as a vector.
    pub fn start_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.start)
    }

    /// Whether every discount equals `g`.
    pub fn constant_discount(&self) -> Option<f64> {
        let g = self.gamma[0];
        self.gamma.iter().all(|&x| x == g).then_some(g)
    }
}

/// Stochastic stationary policy with probabilities indexed `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    /// Validates and wraps a probability matrix with one row per state.
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            check_distribution(&row, &format!("policy row {s}"))?;
        }
        Ok(Policy { probs })
    }

    /// Builds a policy from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidParameter("ragged policy rows".into()));
        }
        Policy::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    /// Uniform random policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy { probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64) }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::InvalidParameter("action index out of range".into()));
        }
        Ok(Policy { probs: DMatrix::from_fn(actions.len(), n_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 }) })
    }

    /// Samples a policy whose rows are uniform on the probability simplex.
    pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            let e: Vec<f64> = (0..n_actions).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
            let total: f64 = e.iter().sum();
            for a in 0..n_actions {
                probs[(s, a)] = e[a] / total;
            }
        }
        Policy { probs }
    }

    /// Probability `pi(a | s)`.
    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    /// Underlying probability matrix.
    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Number of states covered by the policy.
    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    /// Number of actions covered by the policy.
    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Samples an action in state `s`.
    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R, s: usize) -> usize {
        sample_index(rng, self.probs.row(s).iter().copied())
    }
}

/// Draws an index from an iterator of probabilities.
pub fn sample_index<R: Rng + ?Sized, I: IntoIterator<Item = f64>>(rng: &mut R, probs: I) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Origin of a state weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingKind {
    /// Stationary distribution of the behavior policy.
    Behavior,
    /// Stationary distribution of the target policy.
    Target,
    /// Followon weighting.
    Followon,
    /// Emphatic weighting.
    Emphatic,
    /// Any other user-supplied weighting.
    Custom,
}

/// Nonnegative per-state weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeighting {
    /// Weight of each state.
    pub d: DVector<f64>,
    /// Origin of the weighting.
    pub kind: WeightingKind,
}

impl StateWeighting {
    /// Validates nonnegativity and that some entry is positive.
    pub fn new(d: DVector<f64>, kind: WeightingKind) -> Result<Self> {
        if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("weightings must be finite and nonnegative".into()));
        }
        if !d.iter().any(|&x| x > 0.0) {
            return Err(Error::InvalidParameter("weighting is identically zero".into()));
        }
        Ok(StateWeighting { d, kind })
    }

    /// Uniform custom weighting with unit mass on every state.
    pub fn ones(n: usize) -> Self {
        StateWeighting { d: DVector::from_element(n, 1.0), kind: WeightingKind::Custom }
    }

    /// Copy rescaled to sum to one.
    pub fn normalized(&self) -> Self {
        let total = self.d.sum();
        StateWeighting { d: &self.d / total, kind: self.kind }
    }

    /// Number of states.
    pub fn len(&self) -> usize {
        self.d.len()
    }

    /// Whether the weighting has no states.
    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// One sampled transition together with its importance-sampling data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    /// State the action was taken in.
    pub s: usize,
    /// Action drawn from the behavior policy.
    pub a: usize,
    /// Next state.
    pub s_next: usize,
    /// Reward of the transition.
    pub reward: f64,
    /// Discount of the transition; zero marks termination.
    pub gamma_next: f64,
    /// Importance-sampling ratio `pi(a|s) / b(a|s)`.
    pub rho: f64,
    /// Target probability `pi(a|s)`.
    pub pi_prob: f64,
    /// Behavior probability `b(a|s)`.
    pub b_prob: f64,
}

fn check_shapes(mdp: &FiniteMdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidParameter(format!(
            "policy shape {}x{} does not match MDP {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Discounted transition operator `P_{pi,gamma}(s, s') = sum_a pi(a|s) P(s,a,s') gamma(s,a,s')`.
pub fn discounted_transition_operator(mdp: &FiniteMdp, pi: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..n {
                out[(s, s2)] += pa * mdp.p(s, a, s2) * mdp.gamma(s, a, s2);
            }
        }
    }
    out
}

/// Undiscounted state transition matrix `P_pi`.
pub fn transition_matrix(mdp: &FiniteMdp, pi: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(s, a);
            for s2 in 0..n {
                out[(s, s2)] += pa * mdp.p(s, a, s2);
            }
        }
    }
    out
}

/// Expected immediate reward `r_pi(s)`.
pub fn expected_rewards(mdp: &FiniteMdp, pi: &Policy) -> DVector<f64> {
    let n = mdp.n_states();
    DVector::from_fn(n, |s, _| {
        let mut acc = 0.0;
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(s, a);
            for s2 in 0..n {
                acc += pa * mdp.p(s, a, s2) * mdp.r(s, a, s2);
            }
        }
        acc
    })
}

/// Restart chain: continuing transitions keep their successor, terminating
/// transitions (`gamma = 0`) move their mass to the start distribution.
pub fn restart_matrix(mdp: &FiniteMdp, pi: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states();
    let start = mdp.start();
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        let mut terminating = 0.0;
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..n {
                let mass = pa * mdp.p(s, a, s2);
                if mdp.gamma(s, a, s2) > 0.0 {
                    out[(s, s2)] += mass;
                } else {
                    terminating += mass;
                }
            }
        }
        for s2 in 0..n {
            out[(s, s2)] += terminating * start[s2];
        }
    }
    out
}

/// True value function `v_pi = (I - P_{pi,gamma})^{-1} r_pi`.
pub fn true_values(mdp: &FiniteMdp, pi: &Policy) -> Result<DVector<f64>> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_states();
    let l = DMatrix::identity(n, n) - discounted_transition_operator(mdp, pi);
    linalg::solve(&l, &expected_rewards(mdp, pi), "true values")
}

/// Stationary distribution of the restart chain under `pi`.
///
/// Power iteration from the uniform distribution on the lazy chain
/// `(I + P_restart) / 2`, which shares its stationary distributions with
/// `P_restart` and is aperiodic.
pub fn stationary_distribution(mdp: &FiniteMdp, pi: &Policy) -> Result<StateWeighting> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_states();
    let pt = restart_matrix(mdp, pi).transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    for _ in 0..STATIONARY_MAX_ITERATIONS {
        next.gemv(0.5, &pt, &d, 0.0);
        next.axpy(0.5, &d, 1.0);
        let change: f64 = next.iter().zip(d.iter()).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut d, &mut next);
        if change < STATIONARY_TOLERANCE {
            let total = d.sum();
            d /= total;
            return StateWeighting::new(d, WeightingKind::Custom);
        }
    }
    Err(Error::NonConvergent(format!("stationary distribution after {STATIONARY_MAX_ITERATIONS} iterations")))
}

/// Stationary distribution tagged as the behavior weighting `d_b`.
pub fn behavior_weighting(mdp: &FiniteMdp, b: &Policy) -> Result<StateWeighting> {
    let mut d = stationary_distribution(mdp, b)?;
    d.kind = WeightingKind::Behavior;
    Ok(d)
}

/// Stationary distribution tagged as the target weighting `d_pi`.
pub fn target_weighting(mdp: &FiniteMdp, pi: &Policy) -> Result<StateWeighting> {
    let mut d = stationary_distribution(mdp, pi)?;
    d.kind = WeightingKind::Target;
    Ok(d)
}

/// Followon weighting `f = (I - P_{pi,gamma}^T)^{-1} d_b`.
pub fn followon(mdp: &FiniteMdp, pi: &Policy, d_b: &StateWeighting) -> Result<StateWeighting> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_states();
    let l = DMatrix::identity(n, n) - discounted_transition_operator(mdp, pi).transpose();
    let f = linalg::solve(&l, &d_b.d, "followon")?;
    let f = f.map(|x| x.max(0.0));
    StateWeighting::new(f, WeightingKind::Followon)
}

/// Emphatic weighting `m = lambda d_b + (1 - lambda) f`.
pub fn emphatic_weighting(d_b: &StateWeighting, f: &StateWeighting, lambda: f64) -> Result<StateWeighting> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    if d_b.len() != f.len() {
        return Err(Error::InvalidParameter("weighting lengths differ".into()));
    }
    StateWeighting::new(&d_b.d * lambda + &f.d * (1.0 - lambda), WeightingKind::Emphatic)
}

/// Checks that `b(a|s) > 0` wherever `pi(a|s) > 0`.
pub fn check_coverage(pi: &Policy, b: &Policy) -> Result<()> {
    if pi.n_states() != b.n_states() || pi.n_actions() != b.n_actions() {
        return Err(Error::InvalidParameter("policy shapes differ".into()));
    }
    for s in 0..pi.n_states() {
        for a in 0..pi.n_actions() {
            if pi.prob(s, a) > 0.0 && b.prob(s, a) == 0.0 {
                return Err(Error::CoverageViolation(format!("pi({a}|{s}) > 0 but b({a}|{s}) = 0")));
            }
        }
    }
    Ok(())
}

/// Samples a start state.
pub fn sample_start<R: Rng + ?Sized>(rng: &mut R, mdp: &FiniteMdp) -> usize {
    sample_index(rng, mdp.start().iter().copied())
}

/// Samples one transition from state `s` with an action drawn from `b`.
pub fn sample_step<R: Rng + ?Sized>(
    rng: &mut R,
    s: usize,
    b: &Policy,
    pi: &Policy,
    mdp: &FiniteMdp,
) -> Result<TransitionSample> {
    if s >= mdp.n_states() {
        return Err(Error::InvalidParameter(format!("state {s} out of range")));
    }
    for a in 0..mdp.n_actions() {
        if pi.prob(s, a) > 0.0 && b.prob(s, a) == 0.0 {
            return Err(Error::CoverageViolation(format!("pi({a}|{s}) > 0 but b({a}|{s}) = 0")));
        }
    }
    let a = b.sample_action(rng, s);
    let s_next = sample_index(rng, (0..mdp.n_states()).map(|s2| mdp.p(s, a, s2)));
    let pi_prob = pi.prob(s, a);
    let b_prob = b.prob(s, a);
    Ok(TransitionSample {
        s,
        a,
        s_next,
        reward: mdp.r(s, a, s_next),
        gamma_next: mdp.gamma(s, a, s_next),
        rho: pi_prob / b_prob,
        pi_prob,
        b_prob,
    })
}
