//! Network sizes as functions of the sample size and the smoothness of the
//! target class, with every proportionality constant set to one and natural
//! logarithms throughout.

use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub n: usize,
    pub alpha: f64,
    /// Integrability index; `f64::INFINITY` allowed.
    pub p: f64,
    pub d: usize,
    /// `iota = d (1/p - 1/(1 + floor(alpha)))_+`.
    pub iota: f64,
    /// `beta = (2 + d^2 / (alpha (alpha + d)))^-1`.
    pub beta: f64,
    /// Exponent `(beta + 1/2) d / (2 alpha + d)` with `N = ceil(n^exponent)`.
    pub resolution_exponent: f64,
    /// Resolution `N`.
    pub resolution: usize,
    pub arch: Architecture,
}

pub fn iota(alpha: f64, p: f64, d: usize) -> f64 {
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    (d as f64 * (inv_p - 1.0 / (1.0 + alpha.floor()))).max(0.0)
}

pub fn beta(alpha: f64, d: usize) -> f64 {
    let d = d as f64;
    1.0 / (2.0 + d * d / (alpha * (alpha + d)))
}

/// `alpha > d / min(p, 2)`.
pub fn is_admissible(alpha: f64, p: f64, d: usize) -> bool {
    alpha > d as f64 / p.min(2.0)
}

/// Sizes `N, L = ceil(ln N), m = ceil(N ln N), S = N`,
/// `B = N^(1/d + 2 iota / (alpha - iota))`. `L` and `m` are at least one.
pub fn architecture_for(n: usize, alpha: f64, p: f64, d: usize) -> Result<ArchitectureSpec> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
    }
    if d == 0 || !(p >= 1.0) || !alpha.is_finite() || !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("bad smoothness parameters alpha = {alpha}, p = {p}, d = {d}")));
    }
    if !is_admissible(alpha, p, d) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} does not exceed d / min(p, 2) = {}",
            d as f64 / p.min(2.0)
        )));
    }
    let io = iota(alpha, p, d);
    let b = beta(alpha, d);
    let df = d as f64;
    let exponent = (b + 0.5) * df / (2.0 * alpha + df);
    // guard against 10^1.2 landing a hair above an integer through rounding
    let raw = (n as f64).powf(exponent);
    let resolution = ((raw - 1e-9 * raw).ceil() as usize).max(1);
    let nf = resolution as f64;
    let ln = nf.ln();
    let height = (ln.ceil() as usize).max(1);
    let width = ((nf * ln).ceil() as usize).max(1);
    let bound = nf.powf(1.0 / df + 2.0 * io / (alpha - io)).max(1.0);
    Ok(ArchitectureSpec {
        n,
        alpha,
        p,
        d,
        iota: io,
        beta: b,
        resolution_exponent: exponent,
        resolution,
        arch: Architecture { height, width, sparsity: resolution, bound },
    })
}
