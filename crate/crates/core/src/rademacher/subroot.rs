//! Sub-root functions, their fixed points, and the rate exponents they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu::beta;

/// A candidate sub-root function `psi` on `(0, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SubRootSpec {
    /// `psi(r) = a sqrt(r) + b`.
    AffineSqrt { a: f64, b: f64 },
    /// Monotone samples `(r_i, psi_i)`, `r` increasing; linear in between,
    /// `psi_0 sqrt(r / r_0)` below the first sample and `psi_last sqrt(r / r_last)`
    /// beyond the last.
    Tabulated { r: Vec<f64>, psi: Vec<f64> },
    /// The unit-constant localisation bound, see [`theoretical_psi`].
    Theoretical { big_n: f64, n: f64, alpha: f64, d: f64, beta: f64 },
}

impl SubRootSpec {
    pub fn eval(&self, r: f64) -> Result<f64> {
        match self {
            SubRootSpec::AffineSqrt { a, b } => Ok(a * r.max(0.0).sqrt() + b),
            SubRootSpec::Tabulated { r: rs, psi } => {
                if rs.is_empty() || rs.len() != psi.len() {
                    return Err(Error::Shape("tabulated psi needs matching, nonempty samples".into()));
                }
                let last = rs.len() - 1;
                if r <= rs[0] {
                    return Ok(psi[0] * (r.max(0.0) / rs[0]).sqrt());
                }
                if r >= rs[last] {
                    return Ok(psi[last] * (r / rs[last]).sqrt());
                }
                let i = rs.partition_point(|x| *x <= r);
                let w = (r - rs[i - 1]) / (rs[i] - rs[i - 1]);
                Ok(psi[i - 1] + w * (psi[i] - psi[i - 1]))
            }
            SubRootSpec::Theoretical { big_n, n, alpha, d, beta } => {
                theoretical_psi(*big_n, *n, *alpha, *d as usize, *beta, r)
            }
        }
    }

    /// `sqrt(r_*) = (a + sqrt(a^2 + 4b)) / 2` for the affine form.
    pub fn closed_form(&self) -> Option<f64> {
        match self {
            SubRootSpec::AffineSqrt { a, b } => {
                let s = (a + (a * a + 4.0 * b).sqrt()) / 2.0;
                Some(s * s)
            }
            _ => None,
        }
    }

    /// Checks nonnegativity, monotonicity and that `psi(r) / sqrt(r)` does
    /// not increase, on the given increasing grid (relative slack `1e-12`).
    pub fn check_on(&self, grid: &[f64]) -> Result<()> {
        const SLACK: f64 = 1e-12;
        let vals = grid.iter().map(|r| self.eval(*r)).collect::<Result<Vec<_>>>()?;
        for (i, (r, v)) in grid.iter().zip(&vals).enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidArgument(format!("psi({r}) = {v} is not a nonnegative number")));
            }
            if i == 0 {
                continue;
            }
            let (r0, v0) = (grid[i - 1], vals[i - 1]);
            if *v < v0 - SLACK * v0.abs() {
                return Err(Error::InvalidArgument(format!("psi decreases between r = {r0} and r = {r}")));
            }
            if r0 > 0.0 && v / r.sqrt() > (v0 / r0.sqrt()) * (1.0 + SLACK) {
                return Err(Error::InvalidArgument(format!("psi(r) / sqrt(r) increases between r = {r0} and r = {r}")));
            }
        }
        Ok(())
    }
}

/// Number of log-spaced points on which sub-rootness is checked before
/// bisecting.
const CHECK_POINTS: usize = 64;

/// Positive fixed point `r_* = psi(r_*)` by bisection of `psi(r) - r` on
/// `[tol^2, r_max]`, to within `tol`.
pub fn sub_root_fixed_point(psi: &SubRootSpec, r_max: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) || !(r_max > tol * tol) {
        return Err(Error::InvalidArgument(format!("need tol > 0 and r_max > tol^2 (tol {tol}, r_max {r_max})")));
    }
    let mut lo = tol * tol;
    let mut hi = r_max;
    let (a, b) = (lo.ln(), hi.ln());
    let grid: Vec<f64> =
        (0..CHECK_POINTS).map(|i| (a + (b - a) * i as f64 / (CHECK_POINTS - 1) as f64).exp()).collect();
    psi.check_on(&grid)?;
    let g = |r: f64| psi.eval(r).map(|v| v - r);
    if !(g(lo)? > 0.0) || !(g(hi)? < 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The localisation bound with every constant set to 1:
///
/// `n^(-beta - 1/2) sqrt(N (ln^2 N + ln n)) + n^(-beta (1 - d/(2 alpha)) - 1/2)
///  + sqrt(r / n) sqrt(N (ln^2 N + ln n)) + sqrt(r) n^(-(1 - beta d / alpha) / 2) + 1/n`.
pub fn theoretical_psi(big_n: f64, n: f64, alpha: f64, d: usize, beta: f64, r: f64) -> Result<f64> {
    let df = d as f64;
    if !(big_n >= 1.0) || !(n > 1.0) || !(alpha > 0.0) || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need N >= 1, n > 1, alpha > 0, d >= 1 (got N {big_n}, n {n}, alpha {alpha}, d {d})"
        )));
    }
    if !(beta > 0.0 && beta < alpha / df) {
        return Err(Error::InvalidArgument(format!("beta {beta} must lie in (0, alpha / d)")));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("r = {r} must be a nonnegative number")));
    }
    let ln_n = big_n.ln();
    let complexity = (big_n * (ln_n * ln_n + n.ln())).sqrt();
    Ok(n.powf(-beta - 0.5) * complexity
        + n.powf(-beta * (1.0 - df / (2.0 * alpha)) - 0.5)
        + (r / n).sqrt() * complexity
        + r.sqrt() * n.powf(-(1.0 - beta * df / alpha) / 2.0)
        + 1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateExponents {
    /// Exponent of `n` in the statistical error, `(1/2) (2a/(2a+d) + d/a)^-1`.
    pub stat_exponent: f64,
    /// Exponent of `1/eps^2` in the sample complexity, `1 + d/a`.
    pub sample_exponent: f64,
    pub beta: f64,
    /// Exponent of `n` in the network size `N`, `(beta + 1/2) d / (2a + d)`.
    pub n_exponent: f64,
}

pub fn rate_exponent(alpha: f64, d: usize) -> Result<RateExponents> {
    if !(alpha > 0.0) || d == 0 {
        return Err(Error::InvalidArgument(format!("need alpha > 0 and d >= 1, got {alpha}, {d}")));
    }
    let df = d as f64;
    let b = beta(alpha, d);
    Ok(RateExponents {
        stat_exponent: 0.5 / (2.0 * alpha / (2.0 * alpha + df) + df / alpha),
        sample_exponent: 1.0 + df / alpha,
        beta: b,
        n_exponent: (b + 0.5) * df / (2.0 * alpha + df),
    })
}
