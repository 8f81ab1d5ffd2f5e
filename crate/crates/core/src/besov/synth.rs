//! Test functions of prescribed smoothness.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grid::FunctionOnGrid;
use crate::error::{Error, Result};
use crate::stats::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `sum_{k<26} a^k cos(b^k pi x)`, `b = 4`, `a = b^-alpha`.
    Weierstrass,
    /// Random cubic B-spline series with level-`j` amplitude `2^(-j alpha)`.
    SplineSeries,
    /// A smooth bump plus a localised `|x - x0|^(alpha / 2)` cusp.
    PiecewiseSpiky,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weierstrass" => Ok(Self::Weierstrass),
            "spline_series" | "spline" => Ok(Self::SplineSeries),
            "piecewise_spiky" | "spiky" => Ok(Self::PiecewiseSpiky),
            other => Err(Error::InvalidArgument(format!("unknown function kind {other:?}"))),
        }
    }
}

pub const WEIERSTRASS_BASE: f64 = 4.0;
pub const WEIERSTRASS_TERMS: i32 = 26;

/// Weierstrass series of Hoelder exponent `alpha`, rescaled from its analytic
/// range `[-A, A]`, `A = sum a^k`, into `[0,1]`.
pub fn weierstrass(alpha: f64, x: f64) -> f64 {
    let a = WEIERSTRASS_BASE.powf(-alpha);
    let mut sum = 0.0;
    let mut bound = 0.0;
    let mut ak = 1.0;
    let mut bk = 1.0;
    for _ in 0..WEIERSTRASS_TERMS {
        sum += ak * (bk * std::f64::consts::PI * x).cos();
        bound += ak;
        ak *= a;
        bk *= WEIERSTRASS_BASE;
    }
    (sum + bound) / (2.0 * bound)
}

/// Default resolution per axis: 2049 nodes in one dimension, 129 in two.
pub fn default_resolution(d: usize) -> usize {
    if d == 1 {
        2049
    } else {
        129
    }
}

pub fn synth_function(kind: SynthKind, target_alpha: f64, d: usize, seed: u64) -> Result<FunctionOnGrid> {
    synth_function_on(kind, target_alpha, d, default_resolution(d), seed)
}

pub fn synth_function_on(
    kind: SynthKind,
    target_alpha: f64,
    d: usize,
    resolution: usize,
    seed: u64,
) -> Result<FunctionOnGrid> {
    if !(d == 1 || d == 2) {
        return Err(Error::Unsupported(format!("{kind:?} functions in dimension {d}")));
    }
    if !(target_alpha > 0.0) || !target_alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("target alpha {target_alpha} must be positive")));
    }
    match kind {
        SynthKind::Weierstrass => {
            if target_alpha > 2.0 {
                return Err(Error::InvalidArgument(format!(
                    "weierstrass functions need alpha in (0, 2], got {target_alpha}"
                )));
            }
            FunctionOnGrid::from_fn(d, resolution, |x| x.iter().map(|v| weierstrass(target_alpha, *v)).product())
        }
        SynthKind::SplineSeries => {
            let axes: Vec<SplineSeries> =
                (0..d).map(|i| SplineSeries::random(target_alpha, resolution, derive_seed(seed, i as u64))).collect();
            let raw =
                FunctionOnGrid::from_fn(d, resolution, |x| axes.iter().zip(x).map(|(s, v)| s.eval(*v)).product())?;
            normalise(&raw)
        }
        SynthKind::PiecewiseSpiky => {
            let mut rng = rng_from_seed(seed);
            let centre: Vec<f64> = (0..d).map(|_| 0.6 + 0.1 * (rng.random::<f64>() - 0.5)).collect();
            let cusp = target_alpha / 2.0;
            let raw = FunctionOnGrid::from_fn(d, resolution, |x| {
                let bump: f64 = x.iter().map(|v| (-(v - 0.25).powi(2) / (2.0 * 0.08 * 0.08)).exp()).product();
                let dist2: f64 = x.iter().zip(&centre).map(|(v, c)| (v - c).powi(2)).sum();
                let window = (-dist2 / (2.0 * 0.05 * 0.05)).exp();
                0.6 * bump + 0.4 * dist2.sqrt().powf(cusp) * window
            })?;
            normalise(&raw)
        }
    }
}

/// Affine rescaling onto `[0,1]` (constant functions map to zero).
fn normalise(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    let lo = f.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    f.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
}

/// Cardinal cubic B-spline supported on `[0, 4]`.
fn cubic_bspline(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        return 0.0;
    }
    let (i, t) = (u.floor(), u - u.floor());
    match i as i32 {
        0 => t * t * t / 6.0,
        1 => (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        2 => (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
        _ => (1.0 - t).powi(3) / 6.0,
    }
}

struct SplineSeries {
    /// `(level, shift, coefficient)`.
    terms: Vec<(i32, i32, f64)>,
}

impl SplineSeries {
    /// Levels `j` with `2^j <= (G - 1) / 8`; level-`j` coefficients are
    /// standard normal times `2^(-j (alpha + 1/2 - 1/p)) 2^(j/2)` with `p = 2`,
    /// i.e. `2^(-j alpha)` on the unnormalised splines `B(2^j x - k)`.
    fn random(alpha: f64, resolution: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut terms = Vec::new();
        let top = (((resolution - 1) as f64 / 8.0).log2().floor() as i32).max(0);
        for j in 0..=top {
            let scale = 2f64.powf(-(j as f64) * alpha);
            for k in -3..(1 << j) {
                let c: f64 = StandardNormal.sample(&mut rng);
                terms.push((j, k, scale * c));
            }
        }
        Self { terms }
    }

    fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|&(j, k, c)| c * cubic_bspline((1 << j) as f64 * x - k as f64)).sum()
    }
}
