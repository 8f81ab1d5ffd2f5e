//! Least-squares value iteration (fitted Q-iteration) with constrained ReLU
//! networks, for policy evaluation and policy learning, with full data reuse
//! or K-fold splitting; Bellman-residual measurement against the grid oracle.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    BellmanTarget, Estimate, GreedyPolicy, GridFunction, GridOracle, OfflineDataset, Policy, QFunction, StateGrid,
    SyntheticMdp,
};
use crate::relu::{fit_arrays, Architecture, ReluNetwork, TrainConfig};
use crate::stats::{derive_seed, mean, rng_from_seed, std_error};

/// What the iteration targets.
#[derive(Debug, Clone)]
pub enum Mode {
    /// Evaluate the given policy: targets `r + gamma E_{a ~ pi}[Q(s', a)]`.
    Ope(Arc<dyn Policy>),
    /// Learn: targets `r + gamma max_a Q(s', a)`.
    Opl,
}

impl Mode {
    pub fn bellman_target(&self) -> BellmanTarget<'_> {
        match self {
            Mode::Ope(p) => BellmanTarget::Policy(p.as_ref()),
            Mode::Opl => BellmanTarget::Optimal,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Ope(_) => "ope",
            Mode::Opl => "opl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Every iteration regresses on the full dataset.
    #[default]
    Reuse,
    /// Iteration `k` regresses on fold `k` of `K` disjoint folds.
    Split,
}

/// How the evaluation estimate is read off the final iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpeReturn {
    /// `E_{s ~ rho, a ~ pi}[Q_K(s, a)]`.
    #[default]
    Mean,
    /// `sqrt(E_{s ~ rho, a ~ pi}[Q_K(s, a)^2])`.
    Norm,
}

#[derive(Debug, Clone)]
pub struct FqiConfig {
    /// Number of iterations `K`.
    pub iterations: usize,
    pub mode: Mode,
    pub data_mode: DataMode,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub ope_return: OpeReturn,
    /// Start each fit (first restart) from the previous iterate.
    pub warm_start: bool,
    /// State-grid resolution of the `rho` quadrature for the returned value.
    pub quadrature_resolution: usize,
    /// Seed of the fold shuffle in split mode.
    pub split_seed: u64,
}

impl FqiConfig {
    pub fn new(iterations: usize, mode: Mode, arch: Architecture) -> Self {
        Self {
            iterations,
            mode,
            data_mode: DataMode::Reuse,
            arch,
            train: TrainConfig::default(),
            ope_return: OpeReturn::Mean,
            warm_start: true,
            quadrature_resolution: crate::mdp::DEFAULT_RESOLUTION,
            split_seed: 0,
        }
    }
}

/// Frozen iterates and per-iteration diagnostics of one run.
#[derive(Debug, Clone)]
pub struct FqiTrace {
    /// `Q_0, .., Q_K`.
    pub q_iterates: Vec<ReluNetwork>,
    /// `||Q_{k+1} - T Q_k||_mu` for `k = 0..K-1`; empty until measured.
    pub bellman_residuals: Vec<f64>,
    /// Training loss of `Q_1, .., Q_K`.
    pub per_iter_train_loss: Vec<f64>,
    /// Size of the regression set of each iteration.
    pub per_iter_samples: Vec<usize>,
    pub wallclock: f64,
}

impl FqiTrace {
    pub fn last(&self) -> &ReluNetwork {
        self.q_iterates.last().expect("at least Q_0")
    }
}

#[derive(Debug, Clone)]
pub enum LsviOutput {
    Value(f64),
    Policy(GreedyPolicy<ReluNetwork>),
}

impl LsviOutput {
    pub fn as_estimate(&self) -> Estimate<'_> {
        match self {
            LsviOutput::Value(v) => Estimate::Value(*v),
            LsviOutput::Policy(p) => Estimate::Policy(p),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LsviOutput::Value(v) => Some(*v),
            LsviOutput::Policy(_) => None,
        }
    }
}

/// Greedy policy on the action grid (ties to the smallest index).
pub fn greedy_policy(q: &ReluNetwork) -> GreedyPolicy<ReluNetwork> {
    GreedyPolicy::new(q.clone())
}

/// Index sets of the `k` folds: a seeded shuffle cut into contiguous blocks,
/// the first `n mod k` blocks one longer. Each fold keeps its indices in
/// ascending order, so a single fold is the dataset in its original order.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("cannot split {n} samples into {k} nonempty folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[at..at + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += len;
    }
    Ok(folds)
}

/// Continuation values `E_pi[Q(s', .)]` or `max_a Q(s', a)` at each `s'`.
fn continuation(
    q: &ReluNetwork,
    mode: &Mode,
    actions: &crate::mdp::ActionSpace,
    next: &[f64],
    ds: usize,
    out: &mut [f64],
) {
    let n_a = actions.len();
    let mut probs = vec![0.0; n_a];
    let mut x = vec![0.0; ds + 1];
    for (i, o) in out.iter_mut().enumerate() {
        let s = &next[i * ds..(i + 1) * ds];
        x[..ds].copy_from_slice(s);
        match mode {
            Mode::Ope(pi) => {
                pi.action_probs(s, actions, &mut probs);
                let mut acc = 0.0;
                for (a, &av) in actions.values().iter().enumerate() {
                    if probs[a] != 0.0 {
                        x[ds] = av;
                        acc += probs[a] * q.eval(&x);
                    }
                }
                *o = acc;
            }
            Mode::Opl => {
                let mut best = f64::NEG_INFINITY;
                for &av in actions.values() {
                    x[ds] = av;
                    best = best.max(q.eval(&x));
                }
                *o = best;
            }
        }
    }
}

/// Runs `K` iterations from the zero network. Returns the value estimate
/// (evaluation) or the greedy policy of `Q_K` (learning) with the trace.
pub fn run_lsvi(mdp: &SyntheticMdp, data: &OfflineDataset, cfg: &FqiConfig) -> Result<(LsviOutput, FqiTrace)> {
    let start = Instant::now();
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("LSVI needs at least one iteration".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if data.state_dim != mdp.state_dim() {
        return Err(Error::Shape("dataset and MDP disagree on the state dimension".into()));
    }
    let ds = data.state_dim;
    let d = ds + 1;
    let n = data.len();
    let folds = match cfg.data_mode {
        DataMode::Reuse => None,
        DataMode::Split => Some(split_folds(n, cfg.iterations, cfg.split_seed)?),
    };
    let mut xs = Vec::with_capacity(n * d);
    let mut next = Vec::with_capacity(n * ds);
    let mut rewards = Vec::with_capacity(n);
    for t in &data.transitions {
        xs.extend_from_slice(&t.state);
        xs.push(t.action);
        next.extend_from_slice(&t.next_state);
        rewards.push(t.reward);
    }
    let gamma = mdp.gamma();
    let actions = mdp.actions();
    let zero = ReluNetwork::zeros(d, cfg.arch)?;
    let mut iterates = vec![zero.project()];
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut sizes = Vec::with_capacity(cfg.iterations);
    let mut cont = vec![0.0; n];
    for k in 1..=cfg.iterations {
        let prev = iterates.last().expect("Q_0 present");
        let (kx, knext, kr): (Vec<f64>, Vec<f64>, Vec<f64>) = match &folds {
            None => (xs.clone(), next.clone(), rewards.clone()),
            Some(f) => {
                let idx = &f[k - 1];
                let mut a = Vec::with_capacity(idx.len() * d);
                let mut b = Vec::with_capacity(idx.len() * ds);
                let mut c = Vec::with_capacity(idx.len());
                for &i in idx {
                    a.extend_from_slice(&xs[i * d..(i + 1) * d]);
                    b.extend_from_slice(&next[i * ds..(i + 1) * ds]);
                    c.push(rewards[i]);
                }
                (a, b, c)
            }
        };
        let m = kr.len();
        cont.resize(m, 0.0);
        continuation(prev, &cfg.mode, actions, &knext, ds, &mut cont[..m]);
        let ys: Vec<f64> = kr.iter().zip(&cont[..m]).map(|(r, c)| r + gamma * c).collect();
        let train = TrainConfig { seed: derive_seed(cfg.train.seed, k as u64), ..cfg.train };
        let init = if cfg.warm_start { prev } else { &zero };
        let fit =
            fit_arrays(init, &kx, &ys, &train).map_err(|e| Error::Iteration { iteration: k, source: Box::new(e) })?;
        let mut net = fit.net;
        net.clamp = true;
        losses.push(fit.loss);
        sizes.push(m);
        iterates.push(net);
    }
    let q_k = iterates.last().expect("Q_K present");
    let output = match &cfg.mode {
        Mode::Ope(pi) => {
            LsviOutput::Value(rho_pi_moment(mdp, q_k, pi.as_ref(), cfg.ope_return, cfg.quadrature_resolution)?)
        }
        Mode::Opl => LsviOutput::Policy(greedy_policy(q_k)),
    };
    let trace = FqiTrace {
        q_iterates: iterates,
        bellman_residuals: Vec::new(),
        per_iter_train_loss: losses,
        per_iter_samples: sizes,
        wallclock: start.elapsed().as_secs_f64(),
    };
    Ok((output, trace))
}

/// `E_{rho x pi}[Q]` (mean) or `sqrt(E_{rho x pi}[Q^2])` (norm) by quadrature
/// on the state grid and a sum over the action grid.
pub fn rho_pi_moment(
    mdp: &SyntheticMdp,
    q: &dyn QFunction,
    pi: &dyn Policy,
    how: OpeReturn,
    resolution: usize,
) -> Result<f64> {
    let grid = StateGrid::for_mdp(mdp, resolution)?;
    let rho = grid.initial_masses(mdp);
    let actions = mdp.actions();
    let mut probs = vec![0.0; actions.len()];
    let mut acc = 0.0;
    for (i, w) in rho.iter().enumerate() {
        let s = grid.state(i);
        pi.action_probs(&s, actions, &mut probs);
        for (a, &av) in actions.values().iter().enumerate() {
            let v = q.value(&s, av);
            acc += w
                * probs[a]
                * match how {
                    OpeReturn::Mean => v,
                    OpeReturn::Norm => v * v,
                };
        }
    }
    Ok(match how {
        OpeReturn::Mean => acc,
        OpeReturn::Norm => acc.sqrt(),
    })
}

/// Per-iteration residual estimates and their Monte-Carlo standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct Residuals {
    pub per_k: Vec<f64>,
    /// Standard error of each residual (delta method on the mean square).
    pub stderr: Vec<f64>,
    pub max: f64,
}

/// `||Q_{k+1} - T Q_k||_mu` as a root mean square over `mu_samples`, with
/// `T Q_k` computed on the oracle grid by quadrature and interpolated.
/// Also stores the values in `trace.bellman_residuals`.
pub fn measure_bellman_residuals(
    trace: &mut FqiTrace,
    oracle: &GridOracle,
    target: BellmanTarget<'_>,
    mu_samples: &[(Vec<f64>, f64)],
) -> Result<Residuals> {
    if mu_samples.is_empty() {
        return Err(Error::InvalidArgument("no mu samples".into()));
    }
    let k_max = trace.q_iterates.len() - 1;
    let mut per_k = Vec::with_capacity(k_max);
    let mut stderr = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let tq = oracle.apply_bellman_fn(&trace.q_iterates[k], target)?;
        let sq: Vec<f64> = mu_samples
            .iter()
            .map(|(s, a)| {
                let diff = trace.q_iterates[k + 1].value(s, *a) - tq.value(s, *a);
                diff * diff
            })
            .collect();
        let ms = mean(&sq);
        let rms = ms.sqrt();
        per_k.push(rms);
        stderr.push(if rms > 0.0 { std_error(&sq) / (2.0 * rms) } else { 0.0 });
    }
    trace.bellman_residuals = per_k.clone();
    let max = per_k.iter().copied().fold(0.0, f64::max);
    Ok(Residuals { per_k, stderr, max })
}

/// `(s, a)` pairs of a dataset, the usual source of `mu` samples.
pub fn state_actions(data: &OfflineDataset) -> Vec<(Vec<f64>, f64)> {
    data.transitions.iter().map(|t| (t.state.clone(), t.action)).collect()
}

/// Exact iteration on the grid: `Q_0 = 0`, `Q_{k+1} = T Q_k`, i.e. LSVI with
/// the regression replaced by interpolation of noiseless targets.
pub fn tabular_lsvi(oracle: &GridOracle, target: BellmanTarget<'_>, iterations: usize) -> Result<Vec<GridFunction>> {
    let zero = |_: &[f64], _: f64| 0.0;
    let mut out = vec![oracle.tabulate(&zero)];
    for _ in 0..iterations {
        let next = oracle.apply_bellman(out.last().expect("nonempty"), target)?;
        out.push(next);
    }
    Ok(out)
}

/// Seed-paired comparison of the two data modes on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ReuseSplitComparison {
    pub seeds: Vec<u64>,
    pub reuse: Vec<f64>,
    pub split: Vec<f64>,
    pub reuse_mean: f64,
    pub reuse_stderr: f64,
    pub split_mean: f64,
    pub split_stderr: f64,
    pub pooled_stderr: f64,
}

impl ReuseSplitComparison {
    pub fn from_runs(seeds: Vec<u64>, reuse: Vec<f64>, split: Vec<f64>) -> Self {
        let (rs, ss) = (std_error(&reuse), std_error(&split));
        Self {
            reuse_mean: mean(&reuse),
            split_mean: mean(&split),
            reuse_stderr: rs,
            split_stderr: ss,
            pooled_stderr: (rs * rs + ss * ss).sqrt(),
            seeds,
            reuse,
            split,
        }
    }

    /// Reuse is no worse than splitting up to one pooled standard error.
    pub fn reuse_no_worse(&self) -> bool {
        self.reuse_mean <= self.split_mean + self.pooled_stderr
    }
}

/// Runs LSVI in both data modes for every seed (training and fold seeds set
/// from the seed) and scores each run against the populated oracle.
pub fn compare_reuse_vs_split(
    mdp: &SyntheticMdp,
    data: &OfflineDataset,
    base: &FqiConfig,
    seeds: &[u64],
    oracle: &GridOracle,
) -> Result<ReuseSplitComparison> {
    let mut reuse = Vec::with_capacity(seeds.len());
    let mut split = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        for (mode, out) in [(DataMode::Reuse, &mut reuse), (DataMode::Split, &mut split)] {
            let mut cfg = base.clone();
            cfg.data_mode = mode;
            cfg.train.seed = seed;
            cfg.split_seed = derive_seed(seed, 0x5917);
            let (res, _) = run_lsvi(mdp, data, &cfg)?;
            out.push(oracle.subopt(res.as_estimate())?);
        }
    }
    Ok(ReuseSplitComparison::from_runs(seeds.to_vec(), reuse, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_visitation, UniformPolicy};

    fn small_arch() -> Architecture {
        Architecture { height: 2, width: 8, sparsity: 64, bound: 10.0 }
    }

    #[test]
    fn folds_partition_the_data() {
        let f = split_folds(10, 3, 4).unwrap();
        assert_eq!(f.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 3, 3]);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_folds(2, 3, 0).is_err());
    }

    #[test]
    fn zero_iterations_rejected_and_zero_epochs_give_zero_value() {
        let mdp = SyntheticMdp::chain5(0.9).unwrap();
        let data = sample_visitation(&mdp, &UniformPolicy, 50, 1).unwrap();
        let mut cfg = FqiConfig::new(0, Mode::Ope(Arc::new(UniformPolicy)), small_arch());
        assert!(run_lsvi(&mdp, &data, &cfg).is_err());
        cfg.iterations = 1;
        cfg.train.epochs = 0;
        let (out, trace) = run_lsvi(&mdp, &data, &cfg).unwrap();
        assert_eq!(out.value(), Some(0.0));
        assert_eq!(trace.q_iterates.len(), 2);
    }

    #[test]
    fn greedy_policy_ties_and_monotone() {
        let arch = Architecture { height: 1, width: 1, sparsity: 3, bound: 1.0 };
        let flat = ReluNetwork::from_params(2, arch, vec![0.3, 0.0, 0.1], true).unwrap();
        let actions = crate::mdp::ActionSpace::grid(3).unwrap();
        assert_eq!(greedy_policy(&flat).greedy_index(&[0.4], &actions), 0);
        let inc = ReluNetwork::from_params(2, arch, vec![0.0, 1.0, 0.0], true).unwrap();
        assert_eq!(greedy_policy(&inc).greedy_index(&[0.4], &actions), 2);
    }
}
