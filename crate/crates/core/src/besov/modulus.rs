use serde::{Deserialize, Serialize};

use super::grid::{discrete_p_norm, FunctionOnGrid};
use crate::error::{Error, Result};
use crate::stats::fit_line;

/// `Delta_h^r f` on the valid subgrid (nodes `x` with `x + r h` still on the
/// grid), for `h` = `step` grid spacings along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Difference {
    pub axis: usize,
    pub step: usize,
    pub order: usize,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `C(r, k) (-1)^(r - k)` for `k = 0..=r`.
pub fn difference_weights(r: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(r + 1);
    let mut c = 1.0f64;
    for k in 0..=r {
        let sign = if (r - k).is_multiple_of(2) { 1.0 } else { -1.0 };
        w.push(sign * c);
        c = c * (r - k) as f64 / (k + 1) as f64;
    }
    w
}

pub fn translation_difference(f: &FunctionOnGrid, axis: usize, step: usize, r: usize) -> Result<Difference> {
    if r == 0 || step == 0 {
        return Err(Error::InvalidArgument("difference order and step must be positive".into()));
    }
    if axis >= f.dim() {
        return Err(Error::InvalidArgument(format!("axis {axis} on a {}-dimensional grid", f.dim())));
    }
    let g = f.shape()[axis];
    let span = r * step;
    if span >= g {
        return Err(Error::EmptySubgrid { axis, step, order: r });
    }
    let valid = g - span;
    let stride = f.stride(axis);
    let outer: usize = f.shape()[..axis].iter().product();
    let w = difference_weights(r);
    let vals = f.values();
    let mut out = Vec::with_capacity(outer * valid * stride);
    for o in 0..outer {
        for i in 0..valid {
            let base = o * g * stride + i * stride;
            for inner in 0..stride {
                let b = base + inner;
                let mut acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * vals[b + k * step * stride];
                }
                out.push(acc);
            }
        }
    }
    let mut shape = f.shape().to_vec();
    shape[axis] = valid;
    Ok(Difference { axis, step, order: r, shape, values: out })
}

/// `t -> omega_r(f, t)_p` sampled on a grid of `t` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusCurve {
    pub t_values: Vec<f64>,
    pub omega_values: Vec<f64>,
    pub r: usize,
    pub p: f64,
}

/// `count` log-spaced values from `lo` to 1.
pub fn log_t_grid(lo: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), 0.0f64);
    (0..count)
        .map(|i| {
            if i + 1 == count {
                1.0
            } else if i == 0 {
                lo
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

pub const DEFAULT_T_POINTS: usize = 61;

/// Default `t` grid: log-spaced from the finest grid step to 1.
pub fn default_t_grid(f: &FunctionOnGrid) -> Vec<f64> {
    log_t_grid(f.min_step(), DEFAULT_T_POINTS)
}

/// `p`-norms of `Delta_{k h}^r f` for every axis and every step `k` with a
/// nonempty valid subgrid, paired with the step length `k h`.
fn step_norms(f: &FunctionOnGrid, r: usize, p: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for axis in 0..f.dim() {
        let g = f.shape()[axis];
        let h = f.step(axis);
        for k in 1..=(g - 1) / r {
            let diff = translation_difference(f, axis, k, r).expect("step keeps a nonempty subgrid");
            out.push((k as f64 * h, discrete_p_norm(&diff.values, p)));
        }
    }
    out
}

/// Relative slack when comparing a step length with `t`, so that `t` values
/// computed as exact grid multiples are not lost to rounding.
const STEP_SLACK: f64 = 1e-12;

/// `omega_r(f, t)_p = sup over axis steps h <= t of ||Delta_h^r f||_p` at
/// every `t` in `t_grid`.
pub fn modulus_of_smoothness(f: &FunctionOnGrid, r: usize, p: f64, t_grid: &[f64]) -> Result<ModulusCurve> {
    if r == 0 {
        return Err(Error::InvalidArgument("difference order must be positive".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("norm index p = {p} must be at least 1")));
    }
    if f.shape().iter().all(|g| r >= *g) {
        return Err(Error::EmptySubgrid { axis: 0, step: 1, order: r });
    }
    let mut norms = step_norms(f, r, p);
    norms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut omega = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut sup: Option<f64> = None;
        for &(h, v) in &norms {
            if h > t * (1.0 + STEP_SLACK) {
                break;
            }
            sup = Some(sup.map_or(v, |s: f64| s.max(v)));
        }
        match sup {
            Some(s) => omega.push(s),
            None => return Err(Error::InvalidArgument(format!("t = {t} is below the grid step {}", f.min_step()))),
        }
    }
    Ok(ModulusCurve { t_values: t_grid.to_vec(), omega_values: omega, r, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovParams {
    pub alpha: f64,
    /// In `[1, inf]`.
    pub p: f64,
    /// In `[1, inf]`.
    pub q: f64,
}

impl BesovParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.p >= 1.0) || !(self.q >= 1.0) {
            return Err(Error::InvalidArgument("p and q must lie in [1, inf]".into()));
        }
        Ok(())
    }

    /// Difference order `floor(alpha) + 1`.
    pub fn default_order(&self) -> usize {
        self.alpha.floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seminorm {
    pub value: f64,
    /// Difference order used.
    pub r: usize,
    /// True when a requested order `r <= alpha` was raised to
    /// `floor(alpha) + 1`.
    pub raised: bool,
    /// `omega_r(t) / t^alpha` on the `t` grid.
    pub t_values: Vec<f64>,
    pub integrand: Vec<f64>,
}

/// `|f|_{B^alpha_{p,q}}`: `q < inf` integrates `(omega_r(t) / t^alpha)^q dt / t`
/// by the trapezoid rule in `log t` from the grid step to 1 and takes the
/// `q`-th root; `q = inf` takes the maximum over the `t` grid.
pub fn besov_seminorm(f: &FunctionOnGrid, params: BesovParams) -> Result<f64> {
    Ok(besov_seminorm_detail(f, params, None, &default_t_grid(f))?.value)
}

/// Discrete `p`-norm of `f` plus the seminorm.
pub fn besov_norm(f: &FunctionOnGrid, params: BesovParams) -> Result<f64> {
    Ok(f.p_norm(params.p) + besov_seminorm(f, params)?)
}

pub fn besov_seminorm_detail(
    f: &FunctionOnGrid,
    params: BesovParams,
    order: Option<usize>,
    t_grid: &[f64],
) -> Result<Seminorm> {
    params.validate()?;
    let wanted = order.unwrap_or_else(|| params.default_order());
    let (r, raised) = if (wanted as f64) <= params.alpha { (params.default_order(), true) } else { (wanted, false) };
    let curve = modulus_of_smoothness(f, r, params.p, t_grid)?;
    let integrand: Vec<f64> =
        curve.t_values.iter().zip(&curve.omega_values).map(|(t, w)| w / t.powf(params.alpha)).collect();
    let value = if params.q.is_infinite() {
        integrand.iter().copied().fold(0.0, f64::max)
    } else {
        let q = params.q;
        let mut acc = 0.0;
        for i in 1..integrand.len() {
            let du = curve.t_values[i].ln() - curve.t_values[i - 1].ln();
            acc += du * (integrand[i].powf(q) + integrand[i - 1].powf(q)) / 2.0;
        }
        acc.powf(1.0 / q)
    };
    Ok(Seminorm { value, r, raised, t_values: curve.t_values, integrand })
}

/// Result of a smoothness-exponent fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessExponent {
    Value(f64),
    /// The modulus vanishes numerically: the exponent is at least `r`.
    AtLeast(usize),
}

impl SmoothnessExponent {
    /// Numeric lower reading (`r` for the sentinel).
    pub fn lower(&self) -> f64 {
        match self {
            SmoothnessExponent::Value(v) => *v,
            SmoothnessExponent::AtLeast(r) => *r as f64,
        }
    }
}

impl std::fmt::Display for SmoothnessExponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmoothnessExponent::Value(v) => write!(f, "{v:.4}"),
            SmoothnessExponent::AtLeast(r) => write!(f, ">= {r}"),
        }
    }
}

/// Below this the modulus counts as zero.
pub const OMEGA_FLOOR: f64 = 1e-12;

/// Fit of `log omega_r(t)` against `log t` over the middle decade of `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub exponent: SmoothnessExponent,
    pub curve: ModulusCurve,
    /// Indices of the curve points used in the fit.
    pub used: Vec<usize>,
}

/// Least-squares slope of `log omega_r(t)` on `log t` over the middle decade
/// of the default `t` grid (the two smallest and two largest `t` dropped
/// first), clipped to `[0, r]`.
pub fn estimate_smoothness_exponent(f: &FunctionOnGrid, r: usize, p: f64) -> Result<SmoothnessExponent> {
    Ok(fit_smoothness_exponent(f, r, p, &default_t_grid(f))?.exponent)
}

pub fn fit_smoothness_exponent(f: &FunctionOnGrid, r: usize, p: f64, t_grid: &[f64]) -> Result<ExponentFit> {
    let curve = modulus_of_smoothness(f, r, p, t_grid)?;
    if curve.omega_values.iter().all(|w| *w <= OMEGA_FLOOR) {
        return Ok(ExponentFit { exponent: SmoothnessExponent::AtLeast(r), curve, used: Vec::new() });
    }
    let n = curve.t_values.len();
    if n < 9 {
        return Err(Error::InvalidArgument(format!("{n} t values leave too few after trimming")));
    }
    let inner = 2..n - 2;
    let lo = curve.t_values[inner.start].ln();
    let hi = curve.t_values[inner.end - 1].ln();
    let half = std::f64::consts::LN_10 / 2.0;
    let (wlo, whi) = if hi - lo <= 2.0 * half {
        (lo, hi)
    } else {
        let mid = (lo + hi) / 2.0;
        (mid - half, mid + half)
    };
    let used: Vec<usize> = inner
        .filter(|&i| {
            let u = curve.t_values[i].ln();
            u >= wlo - 1e-12 && u <= whi + 1e-12 && curve.omega_values[i] > OMEGA_FLOOR
        })
        .collect();
    if used.len() < 5 {
        return Err(Error::InvalidArgument(format!("only {} usable modulus points in the fitting window", used.len())));
    }
    let xs: Vec<f64> = used.iter().map(|&i| curve.t_values[i].ln()).collect();
    let ys: Vec<f64> = used.iter().map(|&i| curve.omega_values[i].ln()).collect();
    let slope = fit_line(&xs, &ys).map(|l| l.slope).unwrap_or(0.0);
    Ok(ExponentFit { exponent: SmoothnessExponent::Value(slope.clamp(0.0, r as f64)), curve, used })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_signed_binomials() {
        assert_eq!(difference_weights(1), vec![-1.0, 1.0]);
        assert_eq!(difference_weights(2), vec![1.0, -2.0, 1.0]);
        assert_eq!(difference_weights(3), vec![-1.0, 3.0, -3.0, 1.0]);
    }

    #[test]
    fn second_difference_of_square() {
        let f = FunctionOnGrid::from_fn(1, 11, |x| x[0] * x[0]).unwrap();
        let d = translation_difference(&f, 0, 1, 2).unwrap();
        assert_eq!(d.values.len(), 9);
        assert!(d.values.iter().all(|v| (v - 0.02).abs() < 1e-14));
    }

    #[test]
    fn too_long_steps_leave_no_subgrid() {
        let f = FunctionOnGrid::from_fn(1, 11, |x| x[0]).unwrap();
        assert!(matches!(translation_difference(&f, 0, 6, 2), Err(Error::EmptySubgrid { .. })));
    }

    #[test]
    fn modulus_of_identity_is_largest_grid_multiple() {
        let f = FunctionOnGrid::from_fn(1, 101, |x| x[0]).unwrap();
        let c = modulus_of_smoothness(&f, 1, f64::INFINITY, &[0.01, 0.055, 0.5]).unwrap();
        assert!((c.omega_values[0] - 0.01).abs() < 1e-12);
        assert!((c.omega_values[1] - 0.05).abs() < 1e-12);
        assert!((c.omega_values[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_second_modulus_vanishes() {
        let f = FunctionOnGrid::from_fn(1, 64, |x| 0.3 + 2.0 * x[0]).unwrap();
        let t = default_t_grid(&f);
        for p in [1.0, 2.0, f64::INFINITY] {
            let c = modulus_of_smoothness(&f, 2, p, &t).unwrap();
            assert!(c.omega_values.iter().all(|w| *w < 1e-13));
        }
    }

    #[test]
    fn constant_has_zero_seminorm_and_sentinel_exponent() {
        let f = FunctionOnGrid::from_fn(1, 64, |_| -0.7).unwrap();
        let p = BesovParams { alpha: 0.5, p: 2.0, q: 2.0 };
        assert_eq!(besov_seminorm(&f, p).unwrap(), 0.0);
        assert!((besov_norm(&f, p).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(estimate_smoothness_exponent(&f, 1, 2.0).unwrap(), SmoothnessExponent::AtLeast(1));
    }

    #[test]
    fn identity_exponent_is_one() {
        let f = FunctionOnGrid::from_fn(1, 1025, |x| x[0]).unwrap();
        let e = estimate_smoothness_exponent(&f, 1, f64::INFINITY).unwrap().lower();
        assert!((e - 1.0).abs() <= 0.02, "{e}");
    }

    #[test]
    fn order_is_raised_when_too_small() {
        let f = FunctionOnGrid::from_fn(1, 64, |x| x[0] * x[0]).unwrap();
        let p = BesovParams { alpha: 1.5, p: 2.0, q: 2.0 };
        let s = besov_seminorm_detail(&f, p, Some(1), &default_t_grid(&f)).unwrap();
        assert!(s.raised);
        assert_eq!(s.r, 2);
    }
}
