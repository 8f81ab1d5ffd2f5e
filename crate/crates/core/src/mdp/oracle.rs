//! Grid ground truth: discretised kernels, exact Bellman operators by
//! quadrature, value iteration for `Q^pi` / `Q*`, and sub-optimality.

use super::{ActionSpace, Policy, QFunction, StateLayout, SyntheticMdp};
use crate::error::{Error, Result};

/// Quadrature nodes over the state space. `nodes` holds the (single) state
/// coordinate of each node and is empty for single-state problems.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub layout: StateLayout,
}

impl StateGrid {
    pub fn for_mdp(mdp: &SyntheticMdp, resolution: usize) -> Result<Self> {
        match mdp.layout() {
            StateLayout::Single => Ok(Self { nodes: Vec::new(), weights: vec![1.0], layout: StateLayout::Single }),
            StateLayout::Chain { cells } => Ok(Self {
                nodes: (0..cells).map(|j| (j as f64 + 0.5) / cells as f64).collect(),
                weights: vec![1.0; cells],
                layout: StateLayout::Chain { cells },
            }),
            StateLayout::Continuous => {
                if resolution < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "grid resolution must be at least 2, got {resolution}"
                    )));
                }
                let h = 1.0 / (resolution - 1) as f64;
                let nodes = (0..resolution).map(|i| i as f64 * h).collect();
                let mut weights = vec![h; resolution];
                weights[0] = h / 2.0;
                weights[resolution - 1] = h / 2.0;
                Ok(Self { nodes, weights, layout: StateLayout::Continuous })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Initial-distribution masses at the nodes, renormalised to sum to one.
    pub fn initial_masses(&self, mdp: &SyntheticMdp) -> Vec<f64> {
        let mut rho: Vec<f64> =
            (0..self.len()).map(|i| self.weights[i] * mdp.initial_density(&self.state(i))).collect();
        let total: f64 = rho.iter().sum();
        rho.iter_mut().for_each(|p| *p /= total);
        rho
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// State vector of node `i` (empty for single-state problems).
    pub fn state(&self, i: usize) -> Vec<f64> {
        if self.nodes.is_empty() {
            Vec::new()
        } else {
            vec![self.nodes[i]]
        }
    }

    /// Interpolation stencil `(i0, i1, w1)` for a state: value is
    /// `(1 - w1) v[i0] + w1 v[i1]`.
    fn stencil(&self, state: &[f64]) -> (usize, usize, f64) {
        match self.layout {
            StateLayout::Single => (0, 0, 0.0),
            StateLayout::Chain { cells } => {
                let j = ((state[0] * cells as f64).floor() as isize).clamp(0, cells as isize - 1) as usize;
                (j, j, 0.0)
            }
            StateLayout::Continuous => {
                let g = self.nodes.len();
                let x = state[0].clamp(0.0, 1.0) * (g - 1) as f64;
                let i0 = (x.floor() as usize).min(g - 2);
                (i0, i0 + 1, x - i0 as f64)
            }
        }
    }
}

/// A function tabulated on `state grid x action grid`, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: StateGrid,
    pub actions: ActionSpace,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn at(&self, i: usize, a: usize) -> f64 {
        self.values[i * self.n_actions() + a]
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|v| f(*v)).collect(), ..self.clone() }
    }
}

impl QFunction for GridFunction {
    /// Linear interpolation in the state (nearest cell for chains), nearest
    /// grid action.
    fn value(&self, state: &[f64], action: f64) -> f64 {
        let a = self.actions.index_of(action);
        let (i0, i1, w) = self.grid.stencil(state);
        let v0 = self.at(i0, a);
        if w == 0.0 {
            v0
        } else {
            (1.0 - w) * v0 + w * self.at(i1, a)
        }
    }
}

/// Which Bellman operator to apply.
#[derive(Debug, Clone, Copy)]
pub enum BellmanTarget<'a> {
    Policy(&'a dyn Policy),
    Optimal,
}

/// Sub-optimality argument: a value estimate (evaluation) or a policy
/// (learning).
#[derive(Debug, Clone, Copy)]
pub enum Estimate<'a> {
    Value(f64),
    Policy(&'a dyn Policy),
}

#[derive(Debug, Clone)]
struct Solved {
    q: GridFunction,
    sweep_changes: Vec<f64>,
    /// `pi(a|s_i)` table for evaluation targets.
    policy_table: Option<Vec<f64>>,
    label: String,
}

/// Fine-grid tabulation of one synthetic MDP: discretised kernel, mean
/// rewards, initial masses, and (once populated) `Q^pi` and `Q*`.
#[derive(Debug, Clone)]
pub struct GridOracle {
    grid: StateGrid,
    actions: ActionSpace,
    gamma: f64,
    tol: f64,
    /// `kernel[(i * n_a + a) * G + j]` = mass moved from node `i` under
    /// action `a` to node `j`; rows sum to one.
    kernel: Vec<f64>,
    reward: Vec<f64>,
    rho: Vec<f64>,
    raw_mass_error: f64,
    q_pi: Option<Solved>,
    q_star: Option<Solved>,
}

pub const DEFAULT_RESOLUTION: usize = 201;
pub const DEFAULT_TOL: f64 = 1e-10;

impl GridOracle {
    /// Discretises `mdp` on `resolution` state nodes (continuous layouts;
    /// chains use their cells, single-state problems one node).
    pub fn new(mdp: &SyntheticMdp, resolution: usize, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let grid = StateGrid::for_mdp(mdp, resolution)?;
        let actions = mdp.actions().clone();
        let g = grid.len();
        let n_a = actions.len();
        let mut kernel = vec![0.0; g * n_a * g];
        let mut reward = vec![0.0; g * n_a];
        let mut raw_mass_error: f64 = 0.0;
        for i in 0..g {
            let s = grid.state(i);
            for (ai, &a) in actions.values().iter().enumerate() {
                reward[i * n_a + ai] = mdp.mean_reward(&s, a);
                let row = &mut kernel[(i * n_a + ai) * g..(i * n_a + ai + 1) * g];
                for (j, out) in row.iter_mut().enumerate() {
                    *out = grid.weights[j] * mdp.transition_density(&s, a, &grid.state(j));
                }
                let mass: f64 = row.iter().sum();
                raw_mass_error = raw_mass_error.max((mass - 1.0).abs());
                if !(mass > 0.0) {
                    return Err(Error::Config(format!(
                        "transition kernel has no mass on the grid at node {i}, action {a}"
                    )));
                }
                row.iter_mut().for_each(|p| *p /= mass);
            }
        }
        let rho = grid.initial_masses(mdp);
        Ok(Self {
            grid,
            actions,
            gamma: mdp.gamma(),
            tol,
            kernel,
            reward,
            rho,
            raw_mass_error,
            q_pi: None,
            q_star: None,
        })
    }

    /// Oracle with the default resolution (201 state nodes) and tolerance.
    pub fn with_defaults(mdp: &SyntheticMdp) -> Result<Self> {
        Self::new(mdp, DEFAULT_RESOLUTION, DEFAULT_TOL)
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Largest deviation from one of the raw (pre-renormalisation) trapezoid
    /// mass of a kernel row.
    pub fn raw_mass_error(&self) -> f64 {
        self.raw_mass_error
    }

    /// Discretised transition row for `(node, action index)`.
    pub fn kernel_row(&self, i: usize, a: usize) -> &[f64] {
        let g = self.grid.len();
        let n_a = self.actions.len();
        &self.kernel[(i * n_a + a) * g..(i * n_a + a + 1) * g]
    }

    pub fn mean_reward_table(&self) -> GridFunction {
        self.wrap(self.reward.clone())
    }

    fn wrap(&self, values: Vec<f64>) -> GridFunction {
        GridFunction { grid: self.grid.clone(), actions: self.actions.clone(), values }
    }

    pub fn tabulate(&self, f: &dyn QFunction) -> GridFunction {
        let n_a = self.actions.len();
        let mut values = vec![0.0; self.grid.len() * n_a];
        for i in 0..self.grid.len() {
            let s = self.grid.state(i);
            for (ai, &a) in self.actions.values().iter().enumerate() {
                values[i * n_a + ai] = f.value(&s, a);
            }
        }
        self.wrap(values)
    }

    /// `pi(a | s_i)` at every node, node-major.
    pub fn policy_table(&self, pi: &dyn Policy) -> Vec<f64> {
        let n_a = self.actions.len();
        let mut out = vec![0.0; self.grid.len() * n_a];
        for i in 0..self.grid.len() {
            pi.action_probs(&self.grid.state(i), &self.actions, &mut out[i * n_a..(i + 1) * n_a]);
        }
        out
    }

    /// Continuation value `V_f(s_j)` at every node.
    fn continuation(&self, f: &GridFunction, target: &ContinuationRule) -> Vec<f64> {
        let n_a = self.actions.len();
        (0..self.grid.len())
            .map(|j| {
                let row = &f.values[j * n_a..(j + 1) * n_a];
                match target {
                    ContinuationRule::Table(t) => row.iter().zip(&t[j * n_a..(j + 1) * n_a]).map(|(q, p)| q * p).sum(),
                    ContinuationRule::Max => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    fn rule(&self, target: BellmanTarget<'_>) -> ContinuationRule {
        match target {
            BellmanTarget::Policy(p) => ContinuationRule::Table(self.policy_table(p)),
            BellmanTarget::Optimal => ContinuationRule::Max,
        }
    }

    fn apply_rule(&self, f: &GridFunction, rule: &ContinuationRule) -> GridFunction {
        let v = self.continuation(f, rule);
        let g = self.grid.len();
        let n_a = self.actions.len();
        let mut out = vec![0.0; g * n_a];
        for (idx, o) in out.iter_mut().enumerate() {
            let row = &self.kernel[idx * g..(idx + 1) * g];
            let ev: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
            *o = self.reward[idx] + self.gamma * ev;
        }
        self.wrap(out)
    }

    fn check_range(values: &[f64]) -> Result<()> {
        for v in values {
            if !v.is_finite() || v.abs() > 10.0 {
                return Err(Error::OutOfRange(*v));
            }
        }
        Ok(())
    }

    /// `[T f](s, a) = r(s, a) + gamma * sum_j P(s_j | s, a) V_f(s_j)` on the
    /// grid, with `V_f` the `pi`-average or the maximum over actions.
    pub fn apply_bellman(&self, f: &GridFunction, target: BellmanTarget<'_>) -> Result<GridFunction> {
        if f.values.len() != self.grid.len() * self.actions.len() {
            return Err(Error::Shape("grid function does not match the oracle grid".into()));
        }
        Self::check_range(&f.values)?;
        Ok(self.apply_rule(f, &self.rule(target)))
    }

    /// Tabulates `f` on the grid, then applies the Bellman operator.
    pub fn apply_bellman_fn(&self, f: &dyn QFunction, target: BellmanTarget<'_>) -> Result<GridFunction> {
        let t = self.tabulate(f);
        self.apply_bellman(&t, target)
    }

    /// `[T f]` at arbitrary `(state, action)` points. The next-state integral
    /// still runs over the oracle grid (with the kernel renormalised there).
    /// `f` is tabulated on the oracle grid first.
    pub fn bellman_at(
        &self,
        mdp: &SyntheticMdp,
        f: &GridFunction,
        target: BellmanTarget<'_>,
        points: &[(Vec<f64>, f64)],
    ) -> Result<Vec<f64>> {
        Self::check_range(&f.values)?;
        let v = self.continuation(f, &self.rule(target));
        let g = self.grid.len();
        let next: Vec<Vec<f64>> = (0..g).map(|j| self.grid.state(j)).collect();
        Ok(points
            .iter()
            .map(|(s, a)| {
                let mut mass = 0.0;
                let mut acc = 0.0;
                for j in 0..g {
                    let p = self.grid.weights[j] * mdp.transition_density(s, *a, &next[j]);
                    mass += p;
                    acc += p * v[j];
                }
                mdp.mean_reward(s, *a) + self.gamma * acc / mass
            })
            .collect())
    }

    /// Maximum number of sweeps allowed before declaring the kernel
    /// mis-specified.
    pub fn max_sweeps(&self) -> usize {
        const MARGIN: usize = 20;
        if self.gamma == 0.0 {
            return 1 + MARGIN;
        }
        let k = ((self.tol * (1.0 - self.gamma)).ln() / self.gamma.ln()).ceil();
        k.max(1.0) as usize + MARGIN
    }

    /// Value iteration `Q <- T Q` from zero until successive sweeps differ by
    /// at most `tol * (1 - gamma)` in sup norm (so the fixed point is within
    /// `tol`). Stores the result as `Q^pi` or `Q*`.
    pub fn ground_truth(&mut self, target: BellmanTarget<'_>) -> Result<()> {
        let rule = self.rule(target);
        let cap = self.max_sweeps();
        let threshold = self.tol * (1.0 - self.gamma);
        let mut q = self.wrap(vec![0.0; self.grid.len() * self.actions.len()]);
        let mut changes = Vec::new();
        loop {
            let next = self.apply_rule(&q, &rule);
            let change = next.sup_distance(&q);
            changes.push(change);
            q = next;
            if change <= threshold {
                break;
            }
            if changes.len() >= cap {
                return Err(Error::NoConvergence { iterations: changes.len(), last_change: change });
            }
        }
        match (target, rule) {
            (BellmanTarget::Policy(p), ContinuationRule::Table(t)) => {
                self.q_pi = Some(Solved { q, sweep_changes: changes, policy_table: Some(t), label: p.describe() })
            }
            _ => self.q_star = Some(Solved { q, sweep_changes: changes, policy_table: None, label: "optimal".into() }),
        }
        Ok(())
    }

    pub fn q_pi(&self) -> Result<&GridFunction> {
        self.q_pi.as_ref().map(|s| &s.q).ok_or(Error::NotPopulated("Q^pi"))
    }

    pub fn q_star(&self) -> Result<&GridFunction> {
        self.q_star.as_ref().map(|s| &s.q).ok_or(Error::NotPopulated("Q*"))
    }

    /// Label of the policy `Q^pi` was computed for.
    pub fn evaluated_policy(&self) -> Option<&str> {
        self.q_pi.as_ref().map(|s| s.label.as_str())
    }

    /// Sup-norm change of every value-iteration sweep (evaluation target).
    pub fn sweep_changes(&self, optimal: bool) -> Option<&[f64]> {
        let s = if optimal { &self.q_star } else { &self.q_pi };
        s.as_ref().map(|s| s.sweep_changes.as_slice())
    }

    /// `V^pi = E_{s ~ rho, a ~ pi}[Q^pi(s, a)]`.
    pub fn v_pi(&self) -> Result<f64> {
        let solved = self.q_pi.as_ref().ok_or(Error::NotPopulated("Q^pi"))?;
        let table = solved.policy_table.as_ref().expect("evaluation target keeps its table");
        Ok(self.expect_under_rho(&solved.q, table))
    }

    /// `V* = E_{s ~ rho}[max_a Q*(s, a)]`.
    pub fn v_star(&self) -> Result<f64> {
        let q = self.q_star()?;
        let n_a = self.actions.len();
        Ok((0..self.grid.len())
            .map(|i| self.rho[i] * q.values[i * n_a..(i + 1) * n_a].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum())
    }

    /// `sum_i rho_i sum_a table(i, a) f(i, a)`.
    pub fn expect_under_rho(&self, f: &GridFunction, table: &[f64]) -> f64 {
        let n_a = self.actions.len();
        (0..self.grid.len())
            .map(|i| {
                let e: f64 = (0..n_a).map(|a| table[i * n_a + a] * f.at(i, a)).sum();
                self.rho[i] * e
            })
            .sum()
    }

    /// Evaluation: `|V^pi - V_hat|`. Learning: `E_rho[V*(s) - Q*(s, pi_hat(s))]`
    /// (a stochastic `pi_hat` is averaged over its actions).
    pub fn subopt(&self, estimate: Estimate<'_>) -> Result<f64> {
        match estimate {
            Estimate::Value(v) => Ok((self.v_pi()? - v).abs()),
            Estimate::Policy(p) => {
                let q = self.q_star()?;
                let table = self.policy_table(p);
                let played = self.expect_under_rho(q, &table);
                Ok((self.v_star()? - played).max(0.0))
            }
        }
    }

    /// The greedy policy with respect to the tabulated `Q*`.
    pub fn optimal_policy(&self) -> Result<super::TabularPolicy> {
        let q = self.q_star()?;
        let n_a = self.actions.len();
        let mut probs = vec![0.0; q.values.len()];
        for i in 0..self.grid.len() {
            let row = &q.values[i * n_a..(i + 1) * n_a];
            let mut best = 0;
            for a in 1..n_a {
                if row[a] > row[best] {
                    best = a;
                }
            }
            probs[i * n_a + best] = 1.0;
        }
        Ok(super::TabularPolicy::new(self.grid.nodes.clone(), n_a, probs, "greedy(Q*)"))
    }
}

#[derive(Debug, Clone)]
enum ContinuationRule {
    Table(Vec<f64>),
    Max,
}
