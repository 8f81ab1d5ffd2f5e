//! Empirical check that Bellman images of networks stay smooth.

use serde::Serialize;

use super::grid::FunctionOnGrid;
use super::modulus::{besov_seminorm, estimate_smoothness_exponent, BesovParams, SmoothnessExponent};
use crate::error::Result;
use crate::mdp::{BellmanTarget, GridOracle, Policy, SyntheticMdp};
use crate::relu::ReluNetwork;

pub const DEFAULT_CLOSURE_RESOLUTION: usize = 257;

#[derive(Debug, Clone, Serialize)]
pub struct ClosureEntry {
    pub net: usize,
    pub policy: usize,
    pub policy_name: String,
    pub exponent: SmoothnessExponent,
    pub seminorm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub entries: Vec<ClosureEntry>,
    /// Smallest exponent over the batch (a sentinel counts as its order).
    pub min_exponent: Option<SmoothnessExponent>,
    pub max_seminorm: f64,
    pub batch_size: usize,
    pub params: BesovParams,
    pub resolution: usize,
    pub note: String,
}

/// Evaluates `T^pi f` for every `(f, pi)` pair on a uniform grid over the
/// state-action cube and measures its smoothness. A finite batch can only
/// fail to refute closure; it never establishes it.
pub fn diagnose_dynamic_closure(
    mdp: &SyntheticMdp,
    oracle: &GridOracle,
    nets: &[ReluNetwork],
    policies: &[&dyn Policy],
    params: BesovParams,
    resolution: usize,
) -> Result<ClosureReport> {
    params.validate()?;
    let d = mdp.dim();
    let r = params.default_order();
    let probe = FunctionOnGrid::from_fn(d, resolution, |_| 0.0)?;
    let points: Vec<(Vec<f64>, f64)> = (0..probe.len())
        .map(|i| {
            let x = probe.coords(i);
            let (s, a) = x.split_at(d - 1);
            (s.to_vec(), a[0])
        })
        .collect();

    let mut entries = Vec::with_capacity(nets.len() * policies.len());
    for (ni, net) in nets.iter().enumerate() {
        let table = oracle.tabulate(net);
        for (pi_idx, pi) in policies.iter().enumerate() {
            let values = oracle.bellman_at(mdp, &table, BellmanTarget::Policy(*pi), &points)?;
            let image = FunctionOnGrid::new(probe.shape().to_vec(), values)?;
            entries.push(ClosureEntry {
                net: ni,
                policy: pi_idx,
                policy_name: pi.describe(),
                exponent: estimate_smoothness_exponent(&image, r, params.p)?,
                seminorm: besov_seminorm(&image, params)?,
            });
        }
    }

    let min_exponent = entries.iter().map(|e| e.exponent).min_by(|a, b| a.lower().total_cmp(&b.lower()));
    let max_seminorm = entries.iter().map(|e| e.seminorm).fold(0.0, f64::max);
    let batch_size = entries.len();
    Ok(ClosureReport {
        entries,
        min_exponent,
        max_seminorm,
        batch_size,
        params,
        resolution,
        note: format!(
            "{batch_size} (network, policy) pairs checked; consistency evidence only, not a verification over the whole class"
        ),
    })
}
