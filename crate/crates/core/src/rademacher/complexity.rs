//! Empirical and localized Rademacher averages.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu::{fit_arrays, Architecture, ReluNetwork, TrainConfig};
use crate::stats::{derive_seed, mean, rng_from_seed, std_error, LabRng};

pub const DEFAULT_MU_SAMPLES: usize = 4096;

pub const TRAINED_SUP_NOTE: &str =
    "supremum found by local search over networks; the true supremum can only be larger, so this is a lower estimate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupMethod {
    Exhaustive,
    Trained { restarts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    /// Average over sign draws of the per-draw supremum. Exact suprema of
    /// classes with one member average to a signed mean that can dip below 0.
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub sigma_draws: usize,
    pub method: SupMethod,
    pub bias_note: Option<String>,
    pub diagnostic: Option<String>,
}

/// A class whose supremum of `(1/n) sum sigma_i f(x_i)` can be computed or
/// searched for.
pub trait FunctionClass: Sync {
    fn sup_correlation(&self, xs: &[Vec<f64>], sigma: &[f64], seed: u64) -> Result<f64>;
    fn method(&self) -> SupMethod;
}

/// Finitely many functions, stored as their values at the sample points.
/// A real function of one sample point.
pub type PointFn<'a> = &'a dyn Fn(&[f64]) -> f64;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteClass {
    members: Vec<Vec<f64>>,
}

impl FiniteClass {
    pub fn from_table(members: Vec<Vec<f64>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty function class".into()));
        }
        let n = members[0].len();
        if members.iter().any(|m| m.len() != n) {
            return Err(Error::Shape("class members tabulated at different point counts".into()));
        }
        for (k, m) in members.iter().enumerate() {
            if let Some(i) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("member {k} at point {i}")));
            }
        }
        Ok(Self { members })
    }

    pub fn from_fns(fns: &[PointFn<'_>], xs: &[Vec<f64>]) -> Result<Self> {
        Self::from_table(fns.iter().map(|f| xs.iter().map(|x| f(x)).collect()).collect())
    }

    /// Reads one member per CSV row (no header), one column per point.
    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut members = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("bad number {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            members.push(row);
        }
        Self::from_table(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn points(&self) -> usize {
        self.members[0].len()
    }
}

impl FunctionClass for FiniteClass {
    fn sup_correlation(&self, xs: &[Vec<f64>], sigma: &[f64], _seed: u64) -> Result<f64> {
        if xs.len() != self.points() {
            return Err(Error::Shape(format!("class tabulated at {} points, {} given", self.points(), xs.len())));
        }
        let n = sigma.len() as f64;
        Ok(self
            .members
            .iter()
            .map(|m| m.iter().zip(sigma).map(|(f, s)| f * s).sum::<f64>() / n)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn method(&self) -> SupMethod {
        SupMethod::Exhaustive
    }
}

/// `{2g - 1 : g a feasible network}`, so values lie in `[-1, 1]`. The
/// supremum is searched by least-squares fitting `g` to `(sigma + 1) / 2`.
#[derive(Debug, Clone)]
pub struct NetworkClass {
    pub input_dim: usize,
    pub arch: Architecture,
    pub train: TrainConfig,
}

impl FunctionClass for NetworkClass {
    fn sup_correlation(&self, xs: &[Vec<f64>], sigma: &[f64], seed: u64) -> Result<f64> {
        let flat = flatten(xs, self.input_dim)?;
        let ys: Vec<f64> = sigma.iter().map(|s| (s + 1.0) / 2.0).collect();
        let start = ReluNetwork::zeros(self.input_dim, self.arch)?;
        let cfg = TrainConfig { seed, ..self.train };
        let fit = fit_arrays(&start, &flat, &ys, &cfg)?;
        let n = sigma.len() as f64;
        Ok(xs.iter().zip(sigma).map(|(x, s)| s * (2.0 * fit.net.eval(x) - 1.0)).sum::<f64>() / n)
    }

    fn method(&self) -> SupMethod {
        SupMethod::Trained { restarts: self.train.restarts }
    }
}

/// Settings of the penalised gradient search used for difference classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    /// Weight of the `(||f - g||^2 - r)_+` penalty.
    pub penalty: f64,
    /// Standard deviation of the parameter jitter for restarts after the first.
    pub init_scale: f64,
    /// Steps between accept/reject checks of the current iterate.
    pub check_every: usize,
    pub projection_period: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.05,
            restarts: 3,
            penalty: 10.0,
            init_scale: 0.1,
            check_every: 10,
            projection_period: 50,
        }
    }
}

impl AscentConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.check_every == 0 || self.projection_period == 0 {
            return Err(Error::Config("restarts, check period and projection period must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.penalty >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Config("ascent rates must be positive".into()));
        }
        Ok(())
    }
}

/// `{f - anchor : f a feasible network}` with the anchor frozen.
#[derive(Debug, Clone)]
pub struct DifferenceClass {
    pub anchor: ReluNetwork,
    pub ascent: AscentConfig,
}

impl FunctionClass for DifferenceClass {
    fn sup_correlation(&self, xs: &[Vec<f64>], sigma: &[f64], seed: u64) -> Result<f64> {
        let flat = flatten(xs, self.anchor.input_dim())?;
        Ok(ascend(&self.anchor, &flat, sigma, None, &self.ascent, seed)?.unwrap_or(0.0))
    }

    fn method(&self) -> SupMethod {
        SupMethod::Trained { restarts: self.ascent.restarts }
    }
}

fn flatten(xs: &[Vec<f64>], d: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.len() * d);
    for x in xs {
        if x.len() != d {
            return Err(Error::Shape(format!("point of width {} for a {d}-input class", x.len())));
        }
        out.extend_from_slice(x);
    }
    Ok(out)
}

fn rademacher_signs(rng: &mut LabRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `(1/draws) sum_j sup_f (1/n) sum_i sigma_ij f(x_i)` over independent
/// uniform sign vectors. Draw `j` uses the seed stream `j`.
pub fn empirical_rademacher(
    class: &dyn FunctionClass,
    xs: &[Vec<f64>],
    sigma_draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    if sigma_draws == 0 {
        return Err(Error::InvalidArgument("need at least one sign draw".into()));
    }
    let sups: Vec<f64> = (0..sigma_draws)
        .into_par_iter()
        .map(|j| {
            let s = derive_seed(seed, j as u64);
            let sigma = rademacher_signs(&mut rng_from_seed(s), xs.len());
            let v = class.sup_correlation(xs, &sigma, derive_seed(s, 1))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("supremum for sign draw {j}")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let method = class.method();
    Ok(RademacherEstimate {
        value: mean(&sups),
        stderr: std_error(&sups),
        n: xs.len(),
        sigma_draws,
        method,
        bias_note: matches!(method, SupMethod::Trained { .. }).then(|| TRAINED_SUP_NOTE.to_string()),
        diagnostic: None,
    })
}

/// Evaluations of a frozen anchor, reused across iterates.
struct Anchored<'a> {
    xs: &'a [f64],
    gx: Vec<f64>,
    zs: &'a [f64],
    gz: Vec<f64>,
    d: usize,
}

impl<'a> Anchored<'a> {
    fn new(anchor: &ReluNetwork, xs: &'a [f64], zs: &'a [f64]) -> Self {
        let d = anchor.input_dim();
        let ev = |v: &[f64]| v.chunks(d).map(|x| anchor.eval(x)).collect::<Vec<_>>();
        Self { xs, gx: ev(xs), zs, gz: ev(zs), d }
    }

    fn correlation(&self, f: &ReluNetwork, sigma: &[f64]) -> f64 {
        self.xs.chunks(self.d).zip(&self.gx).zip(sigma).map(|((x, g), s)| s * (f.eval(x) - g)).sum::<f64>()
            / sigma.len() as f64
    }

    fn sq_distance(&self, f: &ReluNetwork) -> f64 {
        if self.gz.is_empty() {
            return 0.0;
        }
        self.zs.chunks(self.d).zip(&self.gz).map(|(z, g)| (f.eval(z) - g).powi(2)).sum::<f64>() / self.gz.len() as f64
    }
}

/// Derivative of the `[0,1]` clamp at the raw output.
fn clamp_slope(net: &ReluNetwork, raw: f64) -> f64 {
    if !net.clamp || (0.0..=1.0).contains(&raw) {
        1.0
    } else {
        0.0
    }
}

/// Penalised gradient ascent on `(1/n) sum sigma_i (f - g)(x_i)`, with
/// `lambda (||f - g||_mu^2 - r)_+` subtracted when a radius is given. Every
/// `check_every` steps the projected iterate is accepted if it satisfies the
/// radius; returns the best accepted correlation, `None` if nothing was.
fn ascend(
    anchor: &ReluNetwork,
    xs: &[f64],
    sigma: &[f64],
    ball: Option<(f64, &[f64])>,
    cfg: &AscentConfig,
    seed: u64,
) -> Result<Option<f64>> {
    cfg.validate()?;
    let zs: &[f64] = ball.map(|b| b.1).unwrap_or(&[]);
    let radius = ball.map(|b| b.0);
    let data = Anchored::new(anchor, xs, zs);
    let n = sigma.len() as f64;
    let d = data.d;
    let mut best: Option<f64> = None;
    let mut rng = rng_from_seed(seed);
    let jitter = Normal::new(0.0, cfg.init_scale.max(f64::MIN_POSITIVE)).expect("positive sd");
    for restart in 0..cfg.restarts {
        let mut f = anchor.clone();
        f.clamp = true;
        if restart > 0 {
            f.params_mut().iter_mut().for_each(|p| *p += jitter.sample(&mut rng));
            f.project_in_place();
        }
        let mut grad = vec![0.0; f.params().len()];
        for step in 0..=cfg.steps {
            if step % cfg.check_every == 0 || step == cfg.steps {
                let p = f.project();
                let admitted = radius.is_none_or(|r| data.sq_distance(&p) <= r);
                if admitted {
                    let c = data.correlation(&p, sigma);
                    if c.is_finite() && best.is_none_or(|b| c > b) {
                        best = Some(c);
                    }
                }
            }
            if step == cfg.steps {
                break;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            // descend on the negated objective
            let cx: Vec<f64> = xs.chunks(d).zip(sigma).map(|(x, s)| -s / n * clamp_slope(&f, f.eval_raw(x))).collect();
            f.output_grad(xs, &cx, &mut grad);
            if let Some(r) = radius {
                if data.sq_distance(&f) > r && cfg.penalty > 0.0 {
                    let m = data.gz.len() as f64;
                    let cz: Vec<f64> = zs
                        .chunks(d)
                        .zip(&data.gz)
                        .map(|(z, g)| {
                            let raw = f.eval_raw(z);
                            cfg.penalty * 2.0 / m * (f.eval(z) - g) * clamp_slope(&f, raw)
                        })
                        .collect();
                    f.output_grad(zs, &cz, &mut grad);
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                break;
            }
            for (p, g) in f.params_mut().iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            if (step + 1) % cfg.projection_period == 0 {
                f.project_in_place();
            }
        }
    }
    Ok(best)
}

/// Rademacher average of `{f - anchor : f feasible, ||f - anchor||_mu^2 <= r}`
/// with the `mu`-norm estimated on `mu_samples`. A draw for which no iterate
/// fits inside the ball contributes 0, and the diagnostic counts such draws.
#[allow(clippy::too_many_arguments)]
pub fn localized_rademacher(
    arch: &Architecture,
    anchor: &ReluNetwork,
    radius: f64,
    xs: &[Vec<f64>],
    mu_samples: &[Vec<f64>],
    sigma_draws: usize,
    ascent: &AscentConfig,
    seed: u64,
) -> Result<RademacherEstimate> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius {radius} must be positive")));
    }
    if anchor.architecture() != *arch {
        return Err(Error::Shape("anchor does not belong to the network class".into()));
    }
    if xs.is_empty() || sigma_draws == 0 || mu_samples.is_empty() {
        return Err(Error::InvalidArgument("need points, mu samples and at least one sign draw".into()));
    }
    let d = anchor.input_dim();
    let flat = flatten(xs, d)?;
    let zs = flatten(mu_samples, d)?;
    let sups: Vec<Option<f64>> = (0..sigma_draws)
        .into_par_iter()
        .map(|j| {
            let s = derive_seed(seed, j as u64);
            let sigma = rademacher_signs(&mut rng_from_seed(s), xs.len());
            ascend(anchor, &flat, &sigma, Some((radius, &zs)), ascent, derive_seed(s, 1))
        })
        .collect::<Result<_>>()?;
    let empty = sups.iter().filter(|s| s.is_none()).count();
    let vals: Vec<f64> = sups.iter().map(|s| s.unwrap_or(0.0)).collect();
    Ok(RademacherEstimate {
        value: mean(&vals),
        stderr: std_error(&vals),
        n: xs.len(),
        sigma_draws,
        method: SupMethod::Trained { restarts: ascent.restarts },
        bias_note: Some(TRAINED_SUP_NOTE.to_string()),
        diagnostic: (empty > 0).then(|| format!("{empty} of {sigma_draws} draws found no network inside the radius")),
    })
}
