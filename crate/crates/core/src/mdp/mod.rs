//! Synthetic continuous MDPs on `[0,1]^d`.
//!
//! The state-action space is `X = S x A` with one action axis, so a `d`
//! dimensional problem has `d - 1` state coordinates. Two layouts are
//! supported for ground-truth work: a single-state problem (`d = 1`) and a
//! one-dimensional state axis (`d = 2`), the latter either continuous with a
//! truncated-Gaussian kernel or an embedded finite chain whose states sit at
//! the cell centres `(j + 1/2) / C`.

mod concentration;
mod oracle;
mod policy;
mod sampler;

pub use concentration::{
    estimate_concentration, estimate_concentration_on, occupancy_at, visitation_table, ConcentrationReport,
    FlaggedCell, RatioLocation, EMPTY_MU,
};
pub use oracle::{BellmanTarget, Estimate, GridFunction, GridOracle, StateGrid, DEFAULT_RESOLUTION, DEFAULT_TOL};
pub use policy::{
    sample_action, BiasedPolicy, FixedActionPolicy, GreedyPolicy, MixturePolicy, Policy, PolicySpec, TabularPolicy,
    ThresholdPolicy, UniformPolicy,
};
pub use sampler::{sample_visitation, OfflineDataset, Transition};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::stats::LabRng;

/// Anything that can be evaluated as a Q-function at `(state, action)`.
pub trait QFunction: Sync {
    fn value(&self, state: &[f64], action: f64) -> f64;
}

impl<F> QFunction for F
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    fn value(&self, state: &[f64], action: f64) -> f64 {
        self(state, action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpaceConfig {
    /// Uniform grid of `n` points on `[0,1]`.
    Grid(usize),
    /// Finite action set embedded in `[0,1]`.
    Values(Vec<f64>),
}

impl Default for ActionSpaceConfig {
    fn default() -> Self {
        ActionSpaceConfig::Grid(11)
    }
}

/// The action grid every integral and maximum over actions runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    values: Vec<f64>,
}

impl ActionSpace {
    pub fn grid(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("action grid needs at least one point".into()));
        }
        let values = if n == 1 { vec![0.0] } else { (0..n).map(|i| i as f64 / (n - 1) as f64).collect() };
        Ok(Self { values })
    }

    pub fn finite(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty action set".into()));
        }
        if values.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("actions must lie in [0,1]".into()));
        }
        Ok(Self { values })
    }

    fn from_config(cfg: &ActionSpaceConfig) -> Result<Self> {
        match cfg {
            ActionSpaceConfig::Grid(n) => Self::grid(*n),
            ActionSpaceConfig::Values(v) => Self::finite(v.clone()),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the grid action nearest to `a` (ties to the lower index).
    pub fn index_of(&self, a: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            let d = (v - a).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// One truncated-Gaussian component of a transition kernel. The mean is
/// `offset + s_coef * s + a_coef * a`, clamped into `[0,1]`, and the law is
/// the normal distribution renormalised on `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub s_coef: f64,
    #[serde(default)]
    pub a_coef: f64,
    pub sd: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelConfig {
    /// `d = 1`: a single state, every transition returns to it.
    SingleState,
    /// Embedded finite chain. `matrices[action][from][to]`; a single matrix
    /// is shared by every action.
    Chain { matrices: Vec<Vec<Vec<f64>>> },
    /// Mixture of truncated Gaussians on `[0,1]`.
    Gaussian { components: Vec<GaussianComponent> },
    /// Next state uniform on `[0,1]` regardless of `(s, a)`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardMeanConfig {
    Constant {
        value: f64,
    },
    /// Per chain cell, per action (`values[cell][action]`); a single entry per
    /// cell is broadcast across actions.
    Cells {
        values: Vec<Vec<f64>>,
    },
    /// `offset + s_coef * s + a_coef * a`, clamped into `[0,1]`.
    Linear {
        offset: f64,
        #[serde(default)]
        s_coef: f64,
        #[serde(default)]
        a_coef: f64,
    },
    /// `base + height * exp(-((s - cs)^2 + (a - ca)^2) / (2 w^2))`.
    Bump {
        base: f64,
        height: f64,
        center_s: f64,
        center_a: f64,
        width: f64,
    },
    /// `base + scale * W(s)` with `W` the Weierstrass series of Hoelder
    /// exponent `alpha` (frequency ratio 4) rescaled into `[0,1]` by its
    /// analytic bound.
    Weierstrass {
        alpha: f64,
        base: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mean: RewardMeanConfig,
    /// Half-width of the zero-mean uniform reward noise, in `[0, 0.5]`.
    #[serde(default)]
    pub noise: f64,
    /// Multiply the mean reward by `1 - gamma` so Q-values land in `[0,1]`.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    #[default]
    Uniform,
    TruncatedGaussian {
        mean: f64,
        sd: f64,
    },
    /// Probability per chain cell.
    Cells {
        probs: Vec<f64>,
    },
}

/// Structured-text description of an MDP (TOML on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    /// Dimension of the state-action space.
    pub dim: usize,
    pub gamma: f64,
    pub kernel: KernelConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub actions: ActionSpaceConfig,
    /// Default seed for data generation.
    #[serde(default)]
    pub seed: u64,
}

impl MdpConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

/// How the state space is laid out; decides both the sampler and the oracle
/// discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLayout {
    Single,
    Chain { cells: usize },
    Continuous,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    offset: f64,
    s_coef: f64,
    a_coef: f64,
    sd: f64,
}

impl Component {
    fn mean(&self, s: f64, a: f64) -> f64 {
        (self.offset + self.s_coef * s + self.a_coef * a).clamp(0.0, 1.0)
    }
}

/// A synthetic MDP with analytically known reward and transition kernels.
#[derive(Debug, Clone)]
pub struct SyntheticMdp {
    config: MdpConfig,
    actions: ActionSpace,
    layout: StateLayout,
    components: Vec<Component>,
    weierstrass_bound: f64,
}

const WEIERSTRASS_TERMS: i32 = 26;

fn weierstrass_raw(alpha: f64, x: f64) -> f64 {
    let b: f64 = 4.0;
    let a = b.powf(-alpha);
    (0..WEIERSTRASS_TERMS).map(|k| a.powi(k) * (b.powi(k) * std::f64::consts::PI * x).cos()).sum()
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Density at `x` of `N(mean, sd^2)` truncated to `[0,1]`.
pub(crate) fn truncated_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let z = std_normal_cdf((1.0 - mean) / sd) - std_normal_cdf(-mean / sd);
    std_normal_pdf((x - mean) / sd) / (sd * z)
}

/// Inverse-CDF draw from `N(mean, sd^2)` truncated to `[0,1]`.
pub(crate) fn sample_truncated_normal(rng: &mut LabRng, mean: f64, sd: f64) -> f64 {
    let lo = std_normal_cdf(-mean / sd);
    let hi = std_normal_cdf((1.0 - mean) / sd);
    let u = lo + (hi - lo) * rng.random::<f64>();
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (mean + sd * std.inverse_cdf(u)).clamp(0.0, 1.0)
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what}: sums to {s}, expected 1")));
    }
    Ok(())
}

impl SyntheticMdp {
    pub fn new(config: MdpConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0,1), got {}", config.gamma)));
        }
        let actions = ActionSpace::from_config(&config.actions)?;
        let n_a = actions.len();
        let layout = match &config.kernel {
            KernelConfig::SingleState => StateLayout::Single,
            KernelConfig::Chain { matrices } => {
                let cells = matrices
                    .first()
                    .map(|m| m.len())
                    .ok_or_else(|| Error::Config("chain kernel without matrices".into()))?;
                if cells == 0 {
                    return Err(Error::Config("chain kernel with zero cells".into()));
                }
                if matrices.len() != 1 && matrices.len() != n_a {
                    return Err(Error::Config(format!(
                        "chain kernel has {} matrices for {} actions",
                        matrices.len(),
                        n_a
                    )));
                }
                for (a, m) in matrices.iter().enumerate() {
                    if m.len() != cells {
                        return Err(Error::Config(format!("matrix {a} is not {cells}x{cells}")));
                    }
                    for (i, row) in m.iter().enumerate() {
                        if row.len() != cells {
                            return Err(Error::Config(format!("matrix {a} row {i} has wrong length")));
                        }
                        check_prob_vector(row, &format!("chain matrix {a} row {i}"))?;
                    }
                }
                StateLayout::Chain { cells }
            }
            KernelConfig::Gaussian { components } => {
                if components.is_empty() {
                    return Err(Error::Config("gaussian kernel without components".into()));
                }
                let w: Vec<f64> = components.iter().map(|c| c.weight).collect();
                check_prob_vector(&w, "gaussian mixture weights")?;
                if components.iter().any(|c| !(c.sd > 0.0) || !c.sd.is_finite()) {
                    return Err(Error::Config("gaussian component sd must be positive".into()));
                }
                StateLayout::Continuous
            }
            KernelConfig::Uniform => StateLayout::Continuous,
        };
        let expected_dim = if layout == StateLayout::Single { 1 } else { 2 };
        if config.dim != expected_dim {
            return Err(Error::Unsupported(format!(
                "dim = {} with this kernel; supported layouts are d = 1 (single state) and d = 2 (one state axis)",
                config.dim
            )));
        }
        match (&config.initial, layout) {
            (InitialConfig::Cells { probs }, StateLayout::Chain { cells }) => {
                if probs.len() != cells {
                    return Err(Error::Config("initial cell probabilities length mismatch".into()));
                }
                check_prob_vector(probs, "initial distribution")?;
            }
            (InitialConfig::Cells { .. }, _) => {
                return Err(Error::Config("cell initial distribution needs a chain kernel".into()))
            }
            (InitialConfig::TruncatedGaussian { sd, .. }, StateLayout::Continuous) => {
                if !(*sd > 0.0) {
                    return Err(Error::Config("initial sd must be positive".into()));
                }
            }
            (InitialConfig::TruncatedGaussian { .. }, _) => {
                return Err(Error::Config("truncated-Gaussian initial distribution needs a continuous kernel".into()))
            }
            (InitialConfig::Uniform, _) => {}
        }
        let r = &config.reward;
        if !(0.0..=0.5).contains(&r.noise) {
            return Err(Error::Config("reward noise must lie in [0, 0.5]".into()));
        }
        if let RewardMeanConfig::Cells { values } = &r.mean {
            let cells = match layout {
                StateLayout::Chain { cells } => cells,
                _ => return Err(Error::Config("cell rewards need a chain kernel".into())),
            };
            if values.len() != cells || values.iter().any(|v| v.len() != 1 && v.len() != n_a) {
                return Err(Error::Config("cell reward table has the wrong shape".into()));
            }
        }
        let components = match &config.kernel {
            KernelConfig::Gaussian { components } => components
                .iter()
                .map(|c| Component { weight: c.weight, offset: c.offset, s_coef: c.s_coef, a_coef: c.a_coef, sd: c.sd })
                .collect(),
            _ => Vec::new(),
        };
        let weierstrass_bound = match r.mean {
            RewardMeanConfig::Weierstrass { alpha, .. } => {
                if !(alpha > 0.0) {
                    return Err(Error::Config("weierstrass alpha must be positive".into()));
                }
                let a = 4f64.powf(-alpha);
                (0..WEIERSTRASS_TERMS).map(|k| a.powi(k)).sum()
            }
            _ => 1.0,
        };
        let mdp = Self { config, actions, layout, components, weierstrass_bound };
        mdp.check_reward_range()?;
        Ok(mdp)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::new(MdpConfig::from_toml_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(MdpConfig::load(path)?)
    }

    fn check_reward_range(&self) -> Result<()> {
        let probe: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let states: Vec<Vec<f64>> = match self.layout {
            StateLayout::Single => vec![vec![]],
            StateLayout::Chain { cells } => (0..cells).map(|j| vec![(j as f64 + 0.5) / cells as f64]).collect(),
            StateLayout::Continuous => probe.iter().map(|&s| vec![s]).collect(),
        };
        for s in &states {
            for &a in self.actions.values() {
                let m = self.base_reward(s, a);
                if !(0.0..=1.0).contains(&m) || !m.is_finite() {
                    return Err(Error::Config(format!("mean reward {m} outside [0,1] at s = {s:?}, a = {a}")));
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &MdpConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn state_dim(&self) -> usize {
        self.config.dim - 1
    }

    pub fn gamma(&self) -> f64 {
        self.config.gamma
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    /// Chain cell containing `s`.
    pub fn cell_of(&self, s: f64, cells: usize) -> usize {
        ((s * cells as f64).floor() as isize).clamp(0, cells as isize - 1) as usize
    }

    /// Mean reward before the optional `1 - gamma` normalisation.
    fn base_reward(&self, state: &[f64], a: f64) -> f64 {
        let s = state.first().copied().unwrap_or(0.0);
        match &self.config.reward.mean {
            RewardMeanConfig::Constant { value } => *value,
            RewardMeanConfig::Cells { values } => {
                let cells = values.len();
                let row = &values[self.cell_of(s, cells)];
                if row.len() == 1 {
                    row[0]
                } else {
                    row[self.actions.index_of(a)]
                }
            }
            RewardMeanConfig::Linear { offset, s_coef, a_coef } => (offset + s_coef * s + a_coef * a).clamp(0.0, 1.0),
            RewardMeanConfig::Bump { base, height, center_s, center_a, width } => {
                let d2 = (s - center_s).powi(2) + (a - center_a).powi(2);
                base + height * (-d2 / (2.0 * width * width)).exp()
            }
            RewardMeanConfig::Weierstrass { alpha, base, scale } => {
                let w = weierstrass_raw(*alpha, s);
                base + scale * (w + self.weierstrass_bound) / (2.0 * self.weierstrass_bound)
            }
        }
    }

    /// Mean reward `E[r | s, a]`, including the normalisation factor.
    pub fn mean_reward(&self, state: &[f64], a: f64) -> f64 {
        let m = self.base_reward(state, a);
        if self.config.reward.normalize {
            m * (1.0 - self.config.gamma)
        } else {
            m
        }
    }

    /// Realised reward: the mean plus zero-mean uniform noise whose half
    /// width is shrunk so the draw stays inside `[0,1]`.
    pub fn sample_reward(&self, rng: &mut LabRng, state: &[f64], a: f64) -> f64 {
        let m = self.mean_reward(state, a);
        let half = self.config.reward.noise.min(m).min(1.0 - m);
        if half <= 0.0 {
            return m;
        }
        (m + half * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)
    }

    /// Transition density (continuous layout) or probability (chain) of
    /// moving to `next` from `(state, a)`; single-state problems return 1.
    pub fn transition_density(&self, state: &[f64], a: f64, next: &[f64]) -> f64 {
        match &self.config.kernel {
            KernelConfig::SingleState => 1.0,
            KernelConfig::Uniform => {
                if (0.0..=1.0).contains(&next[0]) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelConfig::Chain { matrices } => {
                let StateLayout::Chain { cells } = self.layout else { unreachable!() };
                let m = if matrices.len() == 1 { &matrices[0] } else { &matrices[self.actions.index_of(a)] };
                m[self.cell_of(state[0], cells)][self.cell_of(next[0], cells)]
            }
            KernelConfig::Gaussian { .. } => {
                let s = state[0];
                self.components.iter().map(|c| c.weight * truncated_normal_pdf(next[0], c.mean(s, a), c.sd)).sum()
            }
        }
    }

    /// Draws `s'` from `P(. | s, a)` into `out`.
    pub fn sample_next_state(&self, rng: &mut LabRng, state: &[f64], a: f64, out: &mut Vec<f64>) {
        out.clear();
        match &self.config.kernel {
            KernelConfig::SingleState => {}
            KernelConfig::Uniform => out.push(rng.random::<f64>()),
            KernelConfig::Chain { matrices } => {
                let StateLayout::Chain { cells } = self.layout else { unreachable!() };
                let m = if matrices.len() == 1 { &matrices[0] } else { &matrices[self.actions.index_of(a)] };
                let row = &m[self.cell_of(state[0], cells)];
                let j = sample_index(rng, row);
                out.push((j as f64 + 0.5) / cells as f64);
            }
            KernelConfig::Gaussian { .. } => {
                let s = state[0];
                let w: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
                let c = &self.components[sample_index(rng, &w)];
                out.push(sample_truncated_normal(rng, c.mean(s, a), c.sd));
            }
        }
    }

    /// Draws `s_0 ~ rho`.
    pub fn sample_initial(&self, rng: &mut LabRng, out: &mut Vec<f64>) {
        out.clear();
        match (self.layout, &self.config.initial) {
            (StateLayout::Single, _) => {}
            (StateLayout::Chain { cells }, InitialConfig::Cells { probs }) => {
                let j = sample_index(rng, probs);
                out.push((j as f64 + 0.5) / cells as f64);
            }
            (StateLayout::Chain { cells }, _) => {
                let j = rng.random_range(0..cells);
                out.push((j as f64 + 0.5) / cells as f64);
            }
            (StateLayout::Continuous, InitialConfig::TruncatedGaussian { mean, sd }) => {
                out.push(sample_truncated_normal(rng, *mean, *sd));
            }
            (StateLayout::Continuous, _) => out.push(rng.random::<f64>()),
        }
    }

    /// Initial density (continuous) or probability (chain) at `state`.
    pub fn initial_density(&self, state: &[f64]) -> f64 {
        match (self.layout, &self.config.initial) {
            (StateLayout::Single, _) => 1.0,
            (StateLayout::Chain { cells }, InitialConfig::Cells { probs }) => probs[self.cell_of(state[0], cells)],
            (StateLayout::Chain { cells }, _) => 1.0 / cells as f64,
            (StateLayout::Continuous, InitialConfig::TruncatedGaussian { mean, sd }) => {
                truncated_normal_pdf(state[0], *mean, *sd)
            }
            (StateLayout::Continuous, _) => 1.0,
        }
    }

    /// A single-state MDP (`d = 1`) with a constant reward.
    pub fn single_state(gamma: f64, reward: f64, actions: ActionSpaceConfig) -> Result<Self> {
        Self::new(MdpConfig {
            dim: 1,
            gamma,
            kernel: KernelConfig::SingleState,
            reward: RewardConfig { mean: RewardMeanConfig::Constant { value: reward }, noise: 0.0, normalize: false },
            initial: InitialConfig::Uniform,
            actions,
            seed: 0,
        })
    }

    /// The five-cell chain used throughout the test-suites: two actions
    /// (`0` drifts left, `1` drifts right, reflecting ends), rewards rising
    /// to the right, normalised so that Q-values lie in `[0,1]`.
    pub fn chain5(gamma: f64) -> Result<Self> {
        Self::new(chain5_config(gamma))
    }
}

/// Configuration behind [`SyntheticMdp::chain5`].
pub fn chain5_config(gamma: f64) -> MdpConfig {
    let cells = 5;
    let drift = |toward_right: bool| -> Vec<Vec<f64>> {
        (0..cells)
            .map(|i| {
                let mut row = vec![0.0; cells];
                let (lo, hi) = if toward_right { (0.1, 0.7) } else { (0.7, 0.1) };
                let left = i.saturating_sub(1);
                let right = (i + 1).min(cells - 1);
                row[left] += lo;
                row[i] += 0.2;
                row[right] += hi;
                row
            })
            .collect()
    };
    MdpConfig {
        dim: 2,
        gamma,
        kernel: KernelConfig::Chain { matrices: vec![drift(false), drift(true)] },
        reward: RewardConfig {
            mean: RewardMeanConfig::Cells {
                values: vec![vec![0.3, 0.1], vec![0.1, 0.2], vec![0.2, 0.3], vec![0.5, 0.6], vec![0.9, 1.0]],
            },
            noise: 0.5,
            normalize: true,
        },
        initial: InitialConfig::Uniform,
        actions: ActionSpaceConfig::Values(vec![0.0, 1.0]),
        seed: 0,
    }
}

/// Index drawn from an (unnormalised, nonnegative) weight vector.
pub(crate) fn sample_index(rng: &mut LabRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from_seed;

    #[test]
    fn rejects_unit_discount() {
        let mut cfg = chain5_config(0.9);
        cfg.gamma = 1.0;
        assert!(matches!(SyntheticMdp::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_three_dimensional_problems() {
        let mut cfg = chain5_config(0.9);
        cfg.dim = 3;
        assert!(matches!(SyntheticMdp::new(cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_non_stochastic_chain_rows() {
        let mut cfg = chain5_config(0.9);
        if let KernelConfig::Chain { matrices } = &mut cfg.kernel {
            matrices[0][2][2] += 0.1;
        }
        assert!(SyntheticMdp::new(cfg).is_err());
    }

    #[test]
    fn normalised_rewards_scale_by_one_minus_gamma() {
        let mdp = SyntheticMdp::chain5(0.9).unwrap();
        assert!((mdp.mean_reward(&[0.9], 1.0) - 0.1).abs() < 1e-12);
        assert!((mdp.mean_reward(&[0.1], 0.0) - 0.03).abs() < 1e-12);
    }

    #[test]
    fn reward_draws_stay_in_unit_interval_with_exact_mean() {
        let mdp = SyntheticMdp::chain5(0.5).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let r = mdp.sample_reward(&mut rng, &[0.7], 0.0);
            assert!((0.0..=1.0).contains(&r));
            acc += r;
        }
        let m = mdp.mean_reward(&[0.7], 0.0);
        assert!((acc / n as f64 - m).abs() < 4.0 * m / (3.0 * n as f64).sqrt());
    }

    #[test]
    fn truncated_normal_density_and_sampler_agree() {
        let (m, sd) = (0.8, 0.2);
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mut below = 0usize;
        for _ in 0..n {
            let x = sample_truncated_normal(&mut rng, m, sd);
            assert!((0.0..=1.0).contains(&x));
            if x < 0.7 {
                below += 1;
            }
        }
        // P(X < 0.7) by fine midpoint quadrature of the density
        let g = 20_000;
        let p: f64 =
            (0..g).map(|i| truncated_normal_pdf((i as f64 + 0.5) * 0.7 / g as f64, m, sd) * 0.7 / g as f64).sum();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((below as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
            dim = 2
            gamma = 0.8
            seed = 4
            actions = { grid = 5 }
            [kernel]
            kind = "gaussian"
            components = [ { offset = 0.2, s_coef = 0.5, a_coef = 0.3, sd = 0.1 } ]
            [reward]
            mean = { kind = "linear", offset = 0.1, s_coef = 0.8 }
            noise = 0.1
            normalize = true
        "#;
        let mdp = SyntheticMdp::from_toml_str(text).unwrap();
        assert_eq!(mdp.actions().len(), 5);
        assert_eq!(mdp.layout(), StateLayout::Continuous);
        let again = toml::to_string(mdp.config()).unwrap();
        assert_eq!(MdpConfig::from_toml_str(&again).unwrap(), *mdp.config());
    }
}
