//! Projected full-batch least-squares training with restarts.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ReluNetwork;
use crate::error::{Error, Result};
use crate::stats::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient steps `theta -= lr * g`.
    #[default]
    GradientDescent,
    /// Per-coordinate adaptive steps (first and second moment estimates).
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every step.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Steps between sparsity/norm projections.
    pub projection_period: usize,
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            lr_decay: 0.999,
            epochs: 1000,
            projection_period: 50,
            restarts: 3,
            seed: 0,
            optimizer: Optimizer::GradientDescent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning-rate decay must lie in (0, 1]".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one restart is needed".into()));
        }
        if self.projection_period == 0 {
            return Err(Error::Config("projection period must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of [`fit_least_squares`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub net: ReluNetwork,
    /// Mean squared training error of `net` (unclamped output).
    pub loss: f64,
    /// Loss of the winning restart's projected initialisation.
    pub initial_loss: f64,
    pub restart: usize,
    /// Restarts discarded because their loss blew up.
    pub diverged: usize,
}

/// Regression data with duplicate inputs merged: the squared loss splits
/// into a weighted loss on group means plus a constant.
struct Grouped {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
    offset: f64,
    mean_y: f64,
}

impl Grouped {
    fn new(xs: &[f64], ys: &[f64], d: usize) -> Self {
        let n = ys.len();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut gx = Vec::new();
        let mut sum = Vec::new();
        let mut count = Vec::new();
        for (i, &y) in ys.iter().enumerate() {
            let x = &xs[i * d..(i + 1) * d];
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                gx.extend_from_slice(x);
                sum.push(0.0);
                count.push(0usize);
                sum.len() - 1
            });
            sum[g] += y;
            count[g] += 1;
        }
        let gy: Vec<f64> = sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect();
        let mut offset = 0.0;
        for (i, &y) in ys.iter().enumerate() {
            let key: Vec<u64> = xs[i * d..(i + 1) * d].iter().map(|v| v.to_bits()).collect();
            let m = gy[index[&key]];
            offset += (y - m) * (y - m);
        }
        Self {
            xs: gx,
            ws: count.iter().map(|c| *c as f64 / n as f64).collect(),
            ys: gy,
            offset: offset / n as f64,
            mean_y: ys.iter().sum::<f64>() / n as f64,
        }
    }

    fn len(&self) -> usize {
        self.ys.len()
    }
}

const CHUNK: usize = 256;

/// Mean squared error and its gradient, summed chunk by chunk in a fixed
/// order so results do not depend on the thread count.
fn loss_grad(net: &ReluNetwork, data: &Grouped, grad: &mut [f64]) -> f64 {
    let d = net.input_dim();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if data.len() <= CHUNK {
        return net.loss_and_grad(&data.xs, &data.ys, &data.ws, grad) + data.offset;
    }
    let parts: Vec<(f64, Vec<f64>)> = (0..data.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(data.len());
            let mut g = vec![0.0; grad.len()];
            let l = net.loss_and_grad(&data.xs[lo * d..hi * d], &data.ys[lo..hi], &data.ws[lo..hi], &mut g);
            (l, g)
        })
        .collect();
    let mut loss = data.offset;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    loss
}

fn loss_only(net: &ReluNetwork, data: &Grouped) -> f64 {
    let mut total = data.offset;
    for (i, (&y, &w)) in data.ys.iter().zip(&data.ws).enumerate() {
        let d = net.input_dim();
        let r = net.eval_raw(&data.xs[i * d..(i + 1) * d]) - y;
        total += w * r * r;
    }
    total
}

/// He-style random initialisation: weights `N(0, 2 / fan_in)`, hidden biases
/// uniform on `[-0.5, 0.5]`, output bias at the target mean.
fn random_init(template: &ReluNetwork, mean_y: f64, seed: u64) -> ReluNetwork {
    let mut rng = rng_from_seed(seed);
    let mut net = template.clone();
    let dims = net.dims().to_vec();
    let h = dims.len() - 1;
    let mut params = Vec::with_capacity(net.params().len());
    for l in 0..h {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("positive sd");
        for _ in 0..n_out * n_in {
            params.push(normal.sample(&mut rng));
        }
        for _ in 0..n_out {
            params.push(if l + 1 == h { mean_y } else { rng.random_range(-0.5..0.5) });
        }
    }
    net.params_mut().copy_from_slice(&params);
    net
}

enum Outcome {
    Done { net: ReluNetwork, loss: f64, initial: f64 },
    Diverged { initial: f64, current: f64 },
}

fn train_one(start: ReluNetwork, data: &Grouped, cfg: &TrainConfig) -> Outcome {
    let mut net = start.project();
    let initial = loss_only(&net, data);
    let mut best = (initial, net.clone());
    let ceiling = 10.0 * initial.max(1e-12);
    let n_params = net.params().len();
    let mut grad = vec![0.0; n_params];
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut lr = cfg.learning_rate;
    for step in 1..=cfg.epochs {
        let loss = loss_grad(&net, data, &mut grad);
        if !loss.is_finite() || loss > ceiling {
            return Outcome::Diverged { initial, current: loss };
        }
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - b1.powi(step as i32);
                let c2 = 1.0 - b2.powi(step as i32);
                for (i, p) in net.params_mut().iter_mut().enumerate() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        lr *= cfg.lr_decay;
        if step % cfg.projection_period == 0 || step == cfg.epochs {
            net.project_in_place();
            let l = loss_only(&net, data);
            if !l.is_finite() {
                return Outcome::Diverged { initial, current: l };
            }
            if l < best.0 {
                best = (l, net.clone());
            }
        }
    }
    Outcome::Done { net: best.1, loss: best.0, initial }
}

/// Only the output bias is nonzero, so gradients never reach the hidden
/// layers.
fn is_constant(net: &ReluNetwork) -> bool {
    let p = net.params();
    p[..p.len() - 1].iter().all(|v| *v == 0.0)
}

/// Least-squares fit over the constrained class. Restart 0 starts from `net`
/// (projected) unless `net` is constant, the others (and a constant `net`)
/// from seeded random initialisations. Returns the
/// restart with the smallest training loss, always a feasible network whose
/// loss does not exceed that restart's starting loss.
pub fn fit_least_squares(net: &ReluNetwork, data: &[(Vec<f64>, f64)], cfg: &TrainConfig) -> Result<Fit> {
    let d = net.input_dim();
    let mut xs = Vec::with_capacity(data.len() * d);
    for (x, _) in data {
        if x.len() != d {
            return Err(Error::Shape("training input of the wrong width".into()));
        }
        xs.extend_from_slice(x);
    }
    let ys: Vec<f64> = data.iter().map(|p| p.1).collect();
    fit_arrays(net, &xs, &ys, cfg)
}

/// As [`fit_least_squares`] with inputs given row-major in `xs`.
pub fn fit_arrays(net: &ReluNetwork, xs: &[f64], ys: &[f64], cfg: &TrainConfig) -> Result<Fit> {
    cfg.validate()?;
    let d = net.input_dim();
    if ys.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if xs.len() != ys.len() * d {
        return Err(Error::Shape("inputs and targets disagree in length".into()));
    }
    if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFinite(format!("target {i}")));
    }
    let data = Grouped::new(xs, ys, d);
    if cfg.epochs == 0 {
        let p = net.project();
        let loss = loss_only(&p, &data);
        return Ok(Fit { net: p, loss, initial_loss: loss, restart: 0, diverged: 0 });
    }
    let outcomes: Vec<Outcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 && !is_constant(net) {
                net.clone()
            } else {
                random_init(net, data.mean_y, derive_seed(cfg.seed, r as u64))
            };
            train_one(start, &data, cfg)
        })
        .collect();
    let mut best: Option<Fit> = None;
    let mut diverged = 0;
    let mut last_div = (0.0, 0.0);
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Diverged { initial, current } => {
                diverged += 1;
                last_div = (initial, current);
            }
            Outcome::Done { net, loss, initial } => {
                if best.as_ref().is_none_or(|b| loss < b.loss) {
                    best = Some(Fit { net, loss, initial_loss: initial, restart: r, diverged: 0 });
                }
            }
        }
    }
    match best {
        Some(mut f) => {
            f.diverged = diverged;
            Ok(f)
        }
        None => Err(Error::Divergence { initial: last_div.0, current: last_div.1 }),
    }
}
