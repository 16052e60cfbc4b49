//! Built-in example environments.

use nalgebra::DMatrix;
use rand::Rng;

use super::{FiniteMdp, Policy};
use crate::error::{Error, Result};
use crate::features::{self, FeatureMap};

/// Discount of the random walk's continuing transitions.
pub const RANDOM_WALK_GAMMA: f64 = 0.99;
/// Discount of the star counterexample.
pub const BAIRD_GAMMA: f64 = 0.99;
/// Discount of the two-state Kolter family.
pub const KOLTER_GAMMA: f64 = 0.99;
/// True values of the two Kolter states under the target policy.
pub const KOLTER_VALUES: [f64; 2] = [1.0, 2.0];
/// Feature of the second Kolter state (the first state has feature 1).
pub const KOLTER_FEATURE: f64 = 2.05;
/// Discount of the control chain's continuing transitions.
pub const CONTROL_CHAIN_GAMMA: f64 = 0.9;

/// An environment together with its canonical target and behavior policies.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Name the problem was built from.
    pub name: String,
    /// Dynamics.
    pub mdp: FiniteMdp,
    /// Target policy `pi`.
    pub target: Policy,
    /// Behavior policy `b`.
    pub behavior: Policy,
    /// Representation that belongs to the environment, when it has one.
    pub features: Option<FeatureMap>,
}

struct Tensors {
    ns: usize,
    na: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    g: Vec<f64>,
}

impl Tensors {
    fn new(ns: usize, na: usize) -> Self {
        let len = ns * na * ns;
        Tensors { ns, na, p: vec![0.0; len], r: vec![0.0; len], g: vec![0.0; len] }
    }

    fn set(&mut self, s: usize, a: usize, s2: usize, p: f64, r: f64, g: f64) {
        let i = (s * self.na + a) * self.ns + s2;
        self.p[i] += p;
        self.r[i] = r;
        self.g[i] = g;
    }

    /// Terminating transition whose successor is drawn from `start`.
    fn terminate(&mut self, s: usize, a: usize, p: f64, r: f64, start: &[f64]) {
        for (s2, &q) in start.iter().enumerate() {
            if q > 0.0 {
                self.set(s, a, s2, p * q, r, 0.0);
            }
        }
    }

    fn build(self, start: Vec<f64>) -> Result<FiniteMdp> {
        FiniteMdp::new(self.ns, self.na, self.p, self.r, self.g, start)
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Random walk with `n` non-terminal states and actions left (0) and right (1).
///
/// Episodes start in the center state. Stepping left from the leftmost state
/// terminates with reward -1, stepping right from the rightmost state
/// terminates with reward +1; all other transitions have reward 0 and
/// discount [`RANDOM_WALK_GAMMA`]. Both canonical policies are uniform.
pub fn random_walk(n: usize) -> Result<Problem> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("random walk needs an odd number of states >= 3, got {n}")));
    }
    let start = one_hot(n, n / 2);
    let mut t = Tensors::new(n, 2);
    for s in 0..n {
        if s == 0 {
            t.terminate(s, 0, 1.0, -1.0, &start);
        } else {
            t.set(s, 0, s - 1, 1.0, 0.0, RANDOM_WALK_GAMMA);
        }
        if s == n - 1 {
            t.terminate(s, 1, 1.0, 1.0, &start);
        } else {
            t.set(s, 1, s + 1, 1.0, 0.0, RANDOM_WALK_GAMMA);
        }
    }
    Ok(Problem {
        name: format!("random_walk:{n}"),
        mdp: t.build(start)?,
        target: Policy::uniform(n, 2),
        behavior: Policy::uniform(n, 2),
        features: None,
    })
}

/// Seven-state star counterexample with a dashed action (0) and a solid action (1).
///
/// The dashed action moves uniformly to one of the six upper states, the solid
/// action moves to the lower state. Rewards are zero and the discount is
/// [`BAIRD_GAMMA`]. The behavior picks dashed with probability 6/7; the target
/// always picks solid.
pub fn baird_star() -> Problem {
    let n = 7;
    let mut t = Tensors::new(n, 2);
    for s in 0..n {
        for s2 in 0..6 {
            t.set(s, 0, s2, 1.0 / 6.0, 0.0, BAIRD_GAMMA);
        }
        t.set(s, 1, 6, 1.0, 0.0, BAIRD_GAMMA);
    }
    let target = Policy::deterministic(2, &[1; 7]).expect("valid action");
    let behavior =
        Policy::new(DMatrix::from_fn(n, 2, |_, a| if a == 0 { 6.0 / 7.0 } else { 1.0 / 7.0 })).expect("valid rows");
    Problem {
        name: "baird".into(),
        mdp: t.build(vec![1.0 / n as f64; n]).expect("valid tensors"),
        target,
        behavior,
        features: Some(features::baird()),
    }
}

/// Initial weights conventionally used with [`baird_star`].
pub fn baird_initial_weights() -> Vec<f64> {
    vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0]
}

/// Two-state family indexed by the behavior probability `p` of action 0.
///
/// Action 0 moves to state 0 and action 1 moves to state 1 from either
/// state. The target picks both actions with probability 1/2, so rewards are
/// chosen to make the target values equal [`KOLTER_VALUES`]. The single
/// feature is `(1, KOLTER_FEATURE)`, which represents the values up to a
/// small approximation error. The behavior stationary distribution is
/// `(p, 1 - p)`.
pub fn kolter_family(p: f64) -> Result<Problem> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("behavior probability must lie in (0, 1), got {p}")));
    }
    let mean_value = 0.5 * (KOLTER_VALUES[0] + KOLTER_VALUES[1]);
    let mut t = Tensors::new(2, 2);
    for s in 0..2 {
        let r = KOLTER_VALUES[s] - KOLTER_GAMMA * mean_value;
        t.set(s, 0, 0, 1.0, r, KOLTER_GAMMA);
        t.set(s, 1, 1, 1.0, r, KOLTER_GAMMA);
    }
    let x = DMatrix::from_column_slice(2, 1, &[1.0, KOLTER_FEATURE]);
    Ok(Problem {
        name: format!("kolter:{p}"),
        mdp: t.build(vec![0.5, 0.5])?,
        target: Policy::uniform(2, 2),
        behavior: Policy::from_rows(&[vec![p, 1.0 - p], vec![p, 1.0 - p]])?,
        features: Some(FeatureMap::new(x, "kolter")?),
    })
}

/// Four states `A1, A2, B, C` with one action.
///
/// Episodes start in `A1` or `A2` with equal probability. `A1` moves to `B`,
/// `A2` moves to `C`; `B` terminates with reward 1 and `C` with reward 0.
/// The representation aliases `A1` and `A2`.
pub fn aliased_four_state() -> Problem {
    let start = vec![0.5, 0.5, 0.0, 0.0];
    let mut t = Tensors::new(4, 1);
    t.set(0, 0, 2, 1.0, 0.0, 1.0);
    t.set(1, 0, 3, 1.0, 0.0, 1.0);
    t.terminate(2, 0, 1.0, 1.0, &start);
    t.terminate(3, 0, 1.0, 0.0, &start);
    let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    Problem {
        name: "aliased".into(),
        mdp: t.build(start).expect("valid tensors"),
        target: Policy::uniform(4, 1),
        behavior: Policy::uniform(4, 1),
        features: Some(FeatureMap::new(x, "aliased").expect("valid features")),
    }
}

/// Two states `x` (0) and `y` (1) with actions `a1` (0) and `a2` (1).
///
/// In `x`, `a1` moves to `y` and `a2` stays. In `y`, `a1` terminates with
/// reward 1 and `a2` stays. Continuing transitions have reward 0 and
/// discount 1. The target always takes `a1`; the behavior is uniform.
pub fn two_action_chain() -> Problem {
    let start = vec![1.0, 0.0];
    let mut t = Tensors::new(2, 2);
    t.set(0, 0, 1, 1.0, 0.0, 1.0);
    t.set(0, 1, 0, 1.0, 0.0, 1.0);
    t.terminate(1, 0, 1.0, 1.0, &start);
    t.set(1, 1, 1, 1.0, 0.0, 1.0);
    Problem {
        name: "two_action_chain".into(),
        mdp: t.build(start).expect("valid tensors"),
        target: Policy::deterministic(2, &[0, 0]).expect("valid actions"),
        behavior: Policy::uniform(2, 2),
        features: None,
    }
}

/// Deterministic chain of `n` states for control with actions left (0) and right (1).
///
/// Left from state 0 stays put; right from the last state terminates with
/// reward 1 and restarts in state 0. Other transitions have reward 0 and
/// discount [`CONTROL_CHAIN_GAMMA`]. Both canonical policies are uniform.
pub fn control_chain(n: usize) -> Result<Problem> {
    if n < 2 {
        return Err(Error::InvalidParameter("control chain needs at least two states".into()));
    }
    let start = one_hot(n, 0);
    let mut t = Tensors::new(n, 2);
    for s in 0..n {
        t.set(s, 0, s.saturating_sub(1), 1.0, 0.0, CONTROL_CHAIN_GAMMA);
        if s + 1 == n {
            t.terminate(s, 1, 1.0, 1.0, &start);
        } else {
            t.set(s, 1, s + 1, 1.0, 0.0, CONTROL_CHAIN_GAMMA);
        }
    }
    Ok(Problem {
        name: format!("control_chain:{n}"),
        mdp: t.build(start)?,
        target: Policy::uniform(n, 2),
        behavior: Policy::uniform(n, 2),
        features: None,
    })
}

/// How discounts of a random MDP are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RandomDiscount {
    /// Every transition uses the same discount.
    Constant(f64),
    /// Each transition draws its discount uniformly from `[0, max]`.
    Uniform {
        /// Largest possible discount.
        max: f64,
    },
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Random dense MDP with Dirichlet(1) rows, uniform rewards in `[-1, 1]` and
/// random uniform policies.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    discount: RandomDiscount,
) -> Result<Problem> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter("empty random MDP".into()));
    }
    let mut t = Tensors::new(n_states, n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = random_simplex(rng, n_states);
            for (s2, &p) in row.iter().enumerate() {
                let g = match discount {
                    RandomDiscount::Constant(g) => g,
                    RandomDiscount::Uniform { max } => rng.random::<f64>() * max,
                };
                let r = rng.random::<f64>() * 2.0 - 1.0;
                t.set(s, a, s2, p, r, g);
            }
        }
    }
    let start = random_simplex(rng, n_states);
    let target = Policy::random_simplex(rng, n_states, n_actions);
    let behavior = Policy::random_simplex(rng, n_states, n_actions);
    Ok(Problem { name: "random".into(), mdp: t.build(start)?, target, behavior, features: None })
}

/// Builds a named problem such as `random_walk:19`, `baird`, `kolter:0.3`,
/// `aliased`, `two_action_chain` or `control_chain:3`.
pub fn by_name(spec: &str) -> Result<Problem> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let parse_usize = |a: Option<&str>, default: usize| -> Result<usize> {
        a.map_or(Ok(default), |v| {
            v.parse().map_err(|_| Error::InvalidParameter(format!("bad integer '{v}' in '{spec}'")))
        })
    };
    match name {
        "random_walk" => random_walk(parse_usize(arg, 19)?),
        "baird" | "baird_star" => Ok(baird_star()),
        "kolter" | "kolter_family" => {
            let p = arg.map_or(Ok(0.5), |v| {
                v.parse::<f64>().map_err(|_| Error::InvalidParameter(format!("bad probability '{v}'")))
            })?;
            kolter_family(p)
        }
        "aliased" | "aliased_four_state" => Ok(aliased_four_state()),
        "two_action_chain" => Ok(two_action_chain()),
        "control_chain" => control_chain(parse_usize(arg, 3)?),
        _ => Err(Error::InvalidParameter(format!("unknown environment '{spec}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{discounted_transition_operator, followon, restart_matrix, stationary_distribution, true_values};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_walk_boundaries_have_one_terminating_action_each() {
        let prob = random_walk(19).unwrap();
        let m = &prob.mdp;
        let mut zero_gamma = Vec::new();
        for s in 0..19 {
            for a in 0..2 {
                let terminates = (0..19).any(|s2| m.p(s, a, s2) > 0.0 && m.gamma(s, a, s2) == 0.0);
                if terminates {
                    zero_gamma.push((s, a));
                }
            }
        }
        assert_eq!(zero_gamma, vec![(0, 0), (18, 1)]);
        assert_eq!(m.r(0, 0, 9), -1.0);
        assert_eq!(m.r(18, 1, 9), 1.0);
        for s in 0..19 {
            for a in 0..2 {
                for s2 in 0..19 {
                    if m.r(s, a, s2) != 0.0 {
                        assert!((s, a) == (0, 0) || (s, a) == (18, 1));
                    }
                }
            }
        }
    }

    #[test]
    fn random_walk_interior_rows_have_two_half_discount_entries() {
        let prob = random_walk(19).unwrap();
        let p = discounted_transition_operator(&prob.mdp, &prob.target);
        for s in 1..18 {
            let hits = p.row(s).iter().filter(|&&x| (x - 0.495).abs() < 1e-15).count();
            assert_eq!(hits, 2, "row {s}");
        }
    }

    #[test]
    fn random_walk_values_are_antisymmetric() {
        let prob = random_walk(19).unwrap();
        let v = true_values(&prob.mdp, &prob.target).unwrap();
        for s in 0..19 {
            assert!((v[s] + v[18 - s]).abs() < 1e-10);
        }
        let v5 = true_values(&random_walk(5).unwrap().mdp, &Policy::uniform(5, 2)).unwrap();
        assert!(v5[2].abs() < 1e-12);
    }

    #[test]
    fn random_walk_stationary_distribution_is_symmetric() {
        let prob = random_walk(19).unwrap();
        let d = stationary_distribution(&prob.mdp, &prob.behavior).unwrap();
        for s in 0..19 {
            assert!((d.d[s] - d.d[18 - s]).abs() < 1e-10);
        }
        let pr = restart_matrix(&prob.mdp, &prob.behavior);
        let resid = (pr.transpose() * &d.d - &d.d).abs().max();
        assert!(resid < 1e-10);
    }

    #[test]
    fn builders_reject_invalid_parameters() {
        assert!(random_walk(4).is_err());
        assert!(random_walk(1).is_err());
        assert!(kolter_family(0.0).is_err());
        assert!(kolter_family(1.0).is_err());
        assert!(control_chain(1).is_err());
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn aliased_values_of_b_and_c() {
        let prob = aliased_four_state();
        let v = true_values(&prob.mdp, &prob.target).unwrap();
        assert!((v[2] - 1.0).abs() < 1e-12);
        assert!(v[3].abs() < 1e-12);
    }

    #[test]
    fn kolter_family_has_declared_values_and_behavior_distribution() {
        let prob = kolter_family(0.3).unwrap();
        let v = true_values(&prob.mdp, &prob.target).unwrap();
        assert!((v[0] - KOLTER_VALUES[0]).abs() < 1e-9);
        assert!((v[1] - KOLTER_VALUES[1]).abs() < 1e-9);
        let d = stationary_distribution(&prob.mdp, &prob.behavior).unwrap();
        assert!((d.d[0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn kolter_followon_matches_truncated_series() {
        let prob = kolter_family(0.8).unwrap();
        let d = stationary_distribution(&prob.mdp, &prob.behavior).unwrap();
        let f = followon(&prob.mdp, &prob.target, &d).unwrap();
        let pt = discounted_transition_operator(&prob.mdp, &prob.target).transpose();
        let mut term = d.d.clone();
        let mut sum = d.d.clone();
        for _ in 0..10_000 {
            term = &pt * term;
            sum += &term;
        }
        assert!((sum - f.d).abs().max() < 1e-8);
    }

    #[test]
    fn baird_stationary_distribution_matches_rollout() {
        let prob = baird_star();
        let d = stationary_distribution(&prob.mdp, &prob.behavior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 7];
        let mut s = crate::mdp::sample_start(&mut rng, &prob.mdp);
        let n = 1_000_000;
        for _ in 0..n {
            counts[s] += 1;
            s = crate::mdp::sample_step(&mut rng, s, &prob.behavior, &prob.target, &prob.mdp).unwrap().s_next;
        }
        for i in 0..7 {
            assert!((counts[i] as f64 / n as f64 - d.d[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn two_action_chain_ratio_for_target_action_is_two() {
        let prob = two_action_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        loop {
            let t = crate::mdp::sample_step(&mut rng, 0, &prob.behavior, &prob.target, &prob.mdp).unwrap();
            if t.a == 0 {
                assert_eq!(t.rho, 2.0);
                break;
            }
            assert_eq!(t.rho, 0.0);
        }
    }

    #[test]
    fn named_builders_resolve() {
        for name in ["random_walk:5", "baird", "kolter:0.2", "aliased", "two_action_chain", "control_chain:3"] {
            assert!(by_name(name).is_ok(), "{name}");
        }
    }

    #[test]
    fn random_mdps_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_mdp(&mut rng, 4, 3, RandomDiscount::Uniform { max: 0.95 }).unwrap();
            assert!(true_values(&p.mdp, &p.target).is_ok());
        }
    }
}
