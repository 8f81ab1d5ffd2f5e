//! Tabulated visitation distributions and the concentration coefficient.

use serde::Serialize;

use super::{GridOracle, Policy, SyntheticMdp};
use crate::error::{Error, Result};

/// Cells with `mu` below this are treated as empty.
pub const EMPTY_MU: f64 = 1e-12;

/// Stop summing the geometric series once `gamma^t` drops below this.
const SERIES_CUTOFF: f64 = 1e-16;

/// State marginal `P(s_t = s_i)` for `t = 0, 1, ..` under `pi`, as node masses.
struct Occupancy<'a> {
    oracle: &'a GridOracle,
    table: Vec<f64>,
    state: Vec<f64>,
}

impl<'a> Occupancy<'a> {
    fn new(oracle: &'a GridOracle, pi: &dyn Policy) -> Self {
        Self { oracle, table: oracle.policy_table(pi), state: oracle.rho().to_vec() }
    }

    /// State-action masses `P(s_t = s_i) pi(a | s_i)`, node-major.
    fn joint(&self) -> Vec<f64> {
        let n_a = self.oracle.actions().len();
        let mut out = vec![0.0; self.state.len() * n_a];
        for (i, d) in self.state.iter().enumerate() {
            for a in 0..n_a {
                out[i * n_a + a] = d * self.table[i * n_a + a];
            }
        }
        out
    }

    fn step(&mut self) {
        let n_a = self.oracle.actions().len();
        let g = self.state.len();
        let mut next = vec![0.0; g];
        for i in 0..g {
            for a in 0..n_a {
                let w = self.state[i] * self.table[i * n_a + a];
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(self.oracle.kernel_row(i, a)) {
                    *n += w * p;
                }
            }
        }
        self.state = next;
    }
}

/// `P(s_t = s, a_t = a | rho, pi)` on the oracle grid.
pub fn occupancy_at(oracle: &GridOracle, pi: &dyn Policy, t: usize) -> Vec<f64> {
    let mut occ = Occupancy::new(oracle, pi);
    for _ in 0..t {
        occ.step();
    }
    occ.joint()
}

/// Discounted visitation `mu = (1 - gamma) sum_t gamma^t P(s_t, a_t)` on the
/// oracle grid, by explicit summation of the series (truncated once
/// `gamma^t < 1e-16`, or after `max_terms` terms if given).
pub fn visitation_table(oracle: &GridOracle, eta: &dyn Policy, max_terms: Option<usize>) -> Vec<f64> {
    let gamma = oracle.gamma();
    let mut occ = Occupancy::new(oracle, eta);
    let mut mu = vec![0.0; oracle.n_states() * oracle.actions().len()];
    let mut weight = 1.0 - gamma;
    let mut t = 0;
    loop {
        for (m, j) in mu.iter_mut().zip(occ.joint()) {
            *m += weight * j;
        }
        t += 1;
        weight *= gamma;
        if weight < SERIES_CUTOFF * (1.0 - gamma) || max_terms.is_some_and(|k| t >= k) {
            break;
        }
        occ.step();
    }
    mu
}

/// A grid cell where `mu` is (numerically) empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedCell {
    pub probe: usize,
    pub t: usize,
    pub node: usize,
    pub action: usize,
    pub mu: f64,
    pub nu: f64,
}

/// Where the maximal ratio was found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioLocation {
    pub probe: usize,
    pub t: usize,
    pub node: usize,
    pub action: usize,
    pub nu: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    /// `max nu / mu` over the probes, horizons and cells examined; infinite
    /// when some probe puts mass where `mu` is empty.
    pub kappa_hat: f64,
    /// Always true: the maximum runs over finitely many probes and horizons,
    /// so this bounds the true coefficient from below.
    pub lower_estimate: bool,
    pub probe_policies: Vec<String>,
    pub horizons: Vec<usize>,
    pub argmax: Option<RatioLocation>,
    /// `mu` masses per cell (node-major, action minor).
    pub mu: Vec<f64>,
    /// Per probe, the maximum over horizons of the `nu` mass per cell.
    pub nu_max: Vec<Vec<f64>>,
    /// Cells with `mu < 1e-12`, whether or not the probe reaches them.
    pub flagged: Vec<FlaggedCell>,
    pub diagnostic: Option<String>,
}

/// Estimates `kappa = sup nu / mu` over the given probe policies and
/// horizons, with `mu` the visitation distribution of `eta`.
pub fn estimate_concentration(
    mdp: &SyntheticMdp,
    eta: &dyn Policy,
    probes: &[&dyn Policy],
    horizons: &[usize],
    grid_resolution: usize,
) -> Result<ConcentrationReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("at least one probe policy is needed".into()));
    }
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("at least one horizon is needed".into()));
    }
    let oracle = GridOracle::new(mdp, grid_resolution, super::DEFAULT_TOL)?;
    estimate_concentration_on(&oracle, eta, probes, horizons)
}

/// As [`estimate_concentration`], reusing an existing discretisation.
pub fn estimate_concentration_on(
    oracle: &GridOracle,
    eta: &dyn Policy,
    probes: &[&dyn Policy],
    horizons: &[usize],
) -> Result<ConcentrationReport> {
    let n_a = oracle.actions().len();
    let mu = visitation_table(oracle, eta, None);
    let mut kappa: f64 = 0.0;
    let mut argmax = None;
    let mut flagged = Vec::new();
    let mut nu_max = Vec::with_capacity(probes.len());
    let mut sorted = horizons.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for (pi_idx, probe) in probes.iter().enumerate() {
        let mut occ = Occupancy::new(oracle, *probe);
        let mut at = 0;
        let mut best = vec![0.0f64; mu.len()];
        for &t in &sorted {
            while at < t {
                occ.step();
                at += 1;
            }
            let nu = occ.joint();
            for (cell, (&n, &m)) in nu.iter().zip(&mu).enumerate() {
                best[cell] = best[cell].max(n);
                if m < EMPTY_MU {
                    if n > 0.0 {
                        flagged.push(FlaggedCell {
                            probe: pi_idx,
                            t,
                            node: cell / n_a,
                            action: cell % n_a,
                            mu: m,
                            nu: n,
                        });
                    }
                    continue;
                }
                let ratio = n / m;
                if ratio > kappa {
                    kappa = ratio;
                    argmax =
                        Some(RatioLocation { probe: pi_idx, t, node: cell / n_a, action: cell % n_a, nu: n, mu: m });
                }
            }
        }
        nu_max.push(best);
    }
    let diagnostic = if flagged.is_empty() {
        None
    } else {
        kappa = f64::INFINITY;
        let f = &flagged[0];
        Some(format!(
            "{} cell(s) carry probe mass where mu < {EMPTY_MU:e}; first: probe {} t = {} node {} action {} (nu = {:e}, mu = {:e})",
            flagged.len(),
            f.probe,
            f.t,
            f.node,
            f.action,
            f.nu,
            f.mu
        ))
    };
    Ok(ConcentrationReport {
        kappa_hat: kappa,
        lower_estimate: true,
        probe_policies: probes.iter().map(|p| p.describe()).collect(),
        horizons: sorted,
        argmax,
        mu,
        nu_max,
        flagged,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        ActionSpaceConfig, FixedActionPolicy, InitialConfig, KernelConfig, MdpConfig, RewardConfig, RewardMeanConfig,
        UniformPolicy,
    };

    #[test]
    fn uniform_everything_gives_unit_kappa() {
        let mdp = SyntheticMdp::new(MdpConfig {
            dim: 2,
            gamma: 0.9,
            kernel: KernelConfig::Uniform,
            reward: RewardConfig { mean: RewardMeanConfig::Constant { value: 0.5 }, noise: 0.0, normalize: true },
            initial: InitialConfig::Uniform,
            actions: ActionSpaceConfig::Grid(11),
            seed: 0,
        })
        .unwrap();
        let r = estimate_concentration(&mdp, &UniformPolicy, &[&UniformPolicy], &[0, 1, 5], 201).unwrap();
        assert!((r.kappa_hat - 1.0).abs() < 1e-6, "{}", r.kappa_hat);
        assert!(r.lower_estimate);
    }

    #[test]
    fn single_state_deterministic_probe_against_uniform_behaviour() {
        let mdp = SyntheticMdp::single_state(0.5, 0.5, ActionSpaceConfig::Values(vec![0.0, 1.0])).unwrap();
        let r = estimate_concentration(&mdp, &UniformPolicy, &[&FixedActionPolicy(1)], &[0, 3], 201).unwrap();
        assert!((r.kappa_hat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cells_make_kappa_infinite() {
        let mdp = SyntheticMdp::single_state(0.5, 0.5, ActionSpaceConfig::Values(vec![0.0, 1.0])).unwrap();
        let r = estimate_concentration(&mdp, &FixedActionPolicy(0), &[&FixedActionPolicy(1)], &[0], 201).unwrap();
        assert!(r.kappa_hat.is_infinite());
        assert!(r.diagnostic.is_some());
        assert_eq!(r.flagged.len(), 1);
    }

    #[test]
    fn visitation_masses_sum_to_one() {
        let mdp = SyntheticMdp::chain5(0.9).unwrap();
        let o = GridOracle::with_defaults(&mdp).unwrap();
        let mu = visitation_table(&o, &UniformPolicy, None);
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
