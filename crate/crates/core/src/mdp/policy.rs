use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{sample_index, ActionSpace, QFunction};
use crate::error::{Error, Result};
use crate::stats::LabRng;

/// A (possibly stochastic) policy over the action grid.
pub trait Policy: Send + Sync + Debug {
    /// Writes `pi(a_j | state)` for every grid action `a_j` into `probs`.
    fn action_probs(&self, state: &[f64], actions: &ActionSpace, probs: &mut [f64]);

    /// Short human-readable label used in reports.
    fn describe(&self) -> String;
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn action_probs(&self, state: &[f64], actions: &ActionSpace, probs: &mut [f64]) {
        (**self).action_probs(state, actions, probs)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_probs(&self, state: &[f64], actions: &ActionSpace, probs: &mut [f64]) {
        (**self).action_probs(state, actions, probs)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Draws an action index; `probs` is scratch space of length `actions.len()`.
pub fn sample_action(
    rng: &mut LabRng,
    policy: &dyn Policy,
    state: &[f64],
    actions: &ActionSpace,
    probs: &mut [f64],
) -> usize {
    policy.action_probs(state, actions, probs);
    sample_index(rng, probs)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn action_probs(&self, _state: &[f64], actions: &ActionSpace, probs: &mut [f64]) {
        let p = 1.0 / actions.len() as f64;
        probs.iter_mut().for_each(|x| *x = p);
    }

    fn describe(&self) -> String {
        "uniform".into()
    }
}

/// Always plays the grid action with the given index.
#[derive(Debug, Clone, Copy)]
pub struct FixedActionPolicy(pub usize);

impl Policy for FixedActionPolicy {
    fn action_probs(&self, _state: &[f64], _actions: &ActionSpace, probs: &mut [f64]) {
        probs.iter_mut().for_each(|x| *x = 0.0);
        probs[self.0.min(probs.len() - 1)] = 1.0;
    }

    fn describe(&self) -> String {
        format!("fixed:{}", self.0)
    }
}

/// A state-independent distribution over the action grid.
#[derive(Debug, Clone)]
pub struct BiasedPolicy {
    probs: Vec<f64>,
}

impl BiasedPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let s: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("biased policy needs a probability vector".into()));
        }
        Ok(Self { probs })
    }
}

impl Policy for BiasedPolicy {
    fn action_probs(&self, _state: &[f64], _actions: &ActionSpace, probs: &mut [f64]) {
        probs.copy_from_slice(&self.probs);
    }

    fn describe(&self) -> String {
        format!("biased:{:?}", self.probs)
    }
}

/// Deterministic switch on the first state coordinate.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdPolicy {
    pub threshold: f64,
    pub below: usize,
    pub above: usize,
}

impl Policy for ThresholdPolicy {
    fn action_probs(&self, state: &[f64], _actions: &ActionSpace, probs: &mut [f64]) {
        probs.iter_mut().for_each(|x| *x = 0.0);
        let s = state.first().copied().unwrap_or(0.0);
        let a = if s < self.threshold { self.below } else { self.above };
        probs[a.min(probs.len() - 1)] = 1.0;
    }

    fn describe(&self) -> String {
        format!("threshold:{}:{}:{}", self.threshold, self.below, self.above)
    }
}

/// Convex combination of policies.
#[derive(Debug, Clone)]
pub struct MixturePolicy {
    parts: Vec<(f64, Arc<dyn Policy>)>,
}

impl MixturePolicy {
    pub fn new(parts: Vec<(f64, Arc<dyn Policy>)>) -> Result<Self> {
        let s: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.is_empty() || parts.iter().any(|(w, _)| *w < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mixture weights must form a distribution".into()));
        }
        Ok(Self { parts })
    }
}

impl Policy for MixturePolicy {
    fn action_probs(&self, state: &[f64], actions: &ActionSpace, probs: &mut [f64]) {
        let mut tmp = vec![0.0; probs.len()];
        probs.iter_mut().for_each(|x| *x = 0.0);
        for (w, p) in &self.parts {
            p.action_probs(state, actions, &mut tmp);
            for (o, t) in probs.iter_mut().zip(&tmp) {
                *o += w * t;
            }
        }
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.parts.iter().map(|(w, p)| format!("{w}*{}", p.describe())).collect();
        format!("mixture[{}]", parts.join("+"))
    }
}

/// Greedy policy with respect to a Q-function over the action grid. Ties go
/// to the smallest action index.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<Q> {
    q: Q,
}

impl<Q: QFunction> GreedyPolicy<Q> {
    pub fn new(q: Q) -> Self {
        Self { q }
    }

    pub fn q(&self) -> &Q {
        &self.q
    }

    pub fn greedy_index(&self, state: &[f64], actions: &ActionSpace) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &a) in actions.values().iter().enumerate() {
            let v = self.q.value(state, a);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }
}

impl<Q: QFunction + Send + Debug> Policy for GreedyPolicy<Q> {
    fn action_probs(&self, state: &[f64], actions: &ActionSpace, probs: &mut [f64]) {
        probs.iter_mut().for_each(|x| *x = 0.0);
        probs[self.greedy_index(state, actions)] = 1.0;
    }

    fn describe(&self) -> String {
        "greedy".into()
    }
}

/// Policy tabulated at state-grid nodes; queries use the nearest node.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    nodes: Vec<f64>,
    n_actions: usize,
    probs: Vec<f64>,
    label: String,
}

impl TabularPolicy {
    /// `probs` is node-major: `probs[i * n_actions + a]`. `nodes` holds the
    /// first state coordinate of every node (empty for single-state problems,
    /// in which case `probs` has one row).
    pub fn new(nodes: Vec<f64>, n_actions: usize, probs: Vec<f64>, label: impl Into<String>) -> Self {
        assert_eq!(probs.len(), nodes.len().max(1) * n_actions);
        Self { nodes, n_actions, probs, label: label.into() }
    }

    fn nearest(&self, state: &[f64]) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let s = state[0];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, x) in self.nodes.iter().enumerate() {
            let d = (x - s).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

impl Policy for TabularPolicy {
    fn action_probs(&self, state: &[f64], _actions: &ActionSpace, probs: &mut [f64]) {
        let i = self.nearest(state);
        probs.copy_from_slice(&self.probs[i * self.n_actions..(i + 1) * self.n_actions]);
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Serializable policy description for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    #[default]
    Uniform,
    Fixed {
        action: usize,
    },
    Biased {
        probs: Vec<f64>,
    },
    Threshold {
        threshold: f64,
        below: usize,
        above: usize,
    },
}

impl PolicySpec {
    pub fn build(&self, actions: &ActionSpace) -> Result<Arc<dyn Policy>> {
        let n = actions.len();
        let check = |a: usize| {
            if a >= n {
                Err(Error::Config(format!("action index {a} out of range for {n} actions")))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            PolicySpec::Uniform => Arc::new(UniformPolicy),
            PolicySpec::Fixed { action } => {
                check(*action)?;
                Arc::new(FixedActionPolicy(*action))
            }
            PolicySpec::Biased { probs } => {
                if probs.len() != n {
                    return Err(Error::Config("biased policy length mismatch".into()));
                }
                Arc::new(BiasedPolicy::new(probs.clone())?)
            }
            PolicySpec::Threshold { threshold, below, above } => {
                check(*below)?;
                check(*above)?;
                Arc::new(ThresholdPolicy { threshold: *threshold, below: *below, above: *above })
            }
        })
    }
}
