//! JSON document format for finite MDPs.

use serde::{Deserialize, Serialize};

use super::{FiniteMdp, Policy};
use crate::error::{Error, Result};

/// Serializable MDP: nested `(s, a, s')` arrays plus the start distribution.
///
/// The optional `pi` and `b` fields carry a target and behavior policy; when
/// absent, loaders fall back to uniform policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    /// Number of states.
    pub n_states: usize,
    /// Number of actions.
    pub n_actions: usize,
    /// Transition probabilities.
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    /// Rewards.
    pub r: Vec<Vec<Vec<f64>>>,
    /// Discounts.
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// Start distribution.
    pub start: Vec<f64>,
    /// Optional target policy rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<Vec<f64>>>,
    /// Optional behavior policy rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

fn flatten(t: &[Vec<Vec<f64>>], ns: usize, na: usize, what: &str) -> Result<Vec<f64>> {
    if t.len() != ns || t.iter().any(|row| row.len() != na || row.iter().any(|v| v.len() != ns)) {
        return Err(Error::InvalidParameter(format!("{what} must have shape {ns}x{na}x{ns}")));
    }
    Ok(t.iter().flatten().flatten().copied().collect())
}

fn nest(mdp: &FiniteMdp, f: impl Fn(usize, usize, usize) -> f64) -> Vec<Vec<Vec<f64>>> {
    (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| (0..mdp.n_states()).map(|s2| f(s, a, s2)).collect()).collect())
        .collect()
}

fn policy_rows(p: &Policy) -> Vec<Vec<f64>> {
    (0..p.n_states()).map(|s| (0..p.n_actions()).map(|a| p.prob(s, a)).collect()).collect()
}

impl MdpDocument {
    /// Captures an MDP and optional policies.
    pub fn from_mdp(mdp: &FiniteMdp, pi: Option<&Policy>, b: Option<&Policy>) -> Self {
        MdpDocument {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            p: nest(mdp, |s, a, s2| mdp.p(s, a, s2)),
            r: nest(mdp, |s, a, s2| mdp.r(s, a, s2)),
            gamma: nest(mdp, |s, a, s2| mdp.gamma(s, a, s2)),
            start: mdp.start().to_vec(),
            pi: pi.map(policy_rows),
            b: b.map(policy_rows),
        }
    }

    /// Validates the document and builds the MDP.
    pub fn to_mdp(&self) -> Result<FiniteMdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        FiniteMdp::new(
            ns,
            na,
            flatten(&self.p, ns, na, "P")?,
            flatten(&self.r, ns, na, "r")?,
            flatten(&self.gamma, ns, na, "gamma")?,
            self.start.clone(),
        )
    }

    /// Target and behavior policies, uniform when absent.
    pub fn policies(&self) -> Result<(Policy, Policy)> {
        let load = |rows: &Option<Vec<Vec<f64>>>| -> Result<Policy> {
            match rows {
                Some(r) => {
                    let p = Policy::from_rows(r)?;
                    if p.n_states() != self.n_states || p.n_actions() != self.n_actions {
                        return Err(Error::InvalidParameter("policy shape mismatch".into()));
                    }
                    Ok(p)
                }
                None => Ok(Policy::uniform(self.n_states, self.n_actions)),
            }
        };
        Ok((load(&self.pi)?, load(&self.b)?))
    }

    /// Parses a JSON string.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Serializes to a JSON string.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::builders;

    #[test]
    fn json_round_trip_preserves_mdp() {
        let prob = builders::random_walk(5).unwrap();
        let doc = MdpDocument::from_mdp(&prob.mdp, Some(&prob.target), Some(&prob.behavior));
        let text = doc.to_json();
        let back = MdpDocument::from_json(&text).unwrap();
        assert_eq!(back.to_mdp().unwrap(), prob.mdp);
        let (pi, b) = back.policies().unwrap();
        assert_eq!(pi, prob.target);
        assert_eq!(b, prob.behavior);
    }

    #[test]
    fn json_uses_documented_keys() {
        let prob = builders::two_action_chain();
        let v: serde_json::Value =
            serde_json::from_str(&MdpDocument::from_mdp(&prob.mdp, None, None).to_json()).unwrap();
        for key in ["n_states", "n_actions", "P", "r", "gamma", "start"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn malformed_shapes_are_rejected() {
        let text = r#"{"n_states":2,"n_actions":1,"P":[[[1.0,0.0]]],"r":[[[0,0]]],"gamma":[[[1,1]]],"start":[1,0]}"#;
        let doc = MdpDocument::from_json(text).unwrap();
        assert!(matches!(doc.to_mdp(), Err(Error::InvalidParameter(_))));
    }
}
