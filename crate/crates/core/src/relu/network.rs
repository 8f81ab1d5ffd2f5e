use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::QFunction;

/// Size constraints of the class `Phi(L, m, S, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of weight layers `L`.
    pub height: usize,
    /// Hidden width `m`.
    pub width: usize,
    /// Maximum number of nonzero parameters `S`.
    pub sparsity: usize,
    /// Bound `B` on the magnitude of every parameter.
    pub bound: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.sparsity == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return Err(Error::InvalidArgument(format!("norm bound must be positive, got {}", self.bound)));
        }
        Ok(())
    }

    /// Layer widths `d, m, .., m, 1` (`L + 1` entries).
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(self.width, self.height - 1));
        dims.push(1);
        dims
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        self.dims(input_dim).windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// A network `x -> W_L s(... s(W_1 s(x) + b_1) ...) + b_L` with `s` the ReLU,
/// parameters stored flat and layer-major (`W_l` row-major, then `b_l`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    input_dim: usize,
    arch: Architecture,
    /// Clamp outputs into `[0,1]` at evaluation.
    pub clamp: bool,
    params: Vec<f64>,
    dims: Vec<usize>,
    /// Offset of each layer's weight block in `params`.
    offsets: Vec<usize>,
}

const MAGIC: &[u8; 8] = b"RELUNET\0";
const VERSION: u16 = 1;

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl ReluNetwork {
    /// The zero network (outputs 0 everywhere).
    pub fn zeros(input_dim: usize, arch: Architecture) -> Result<Self> {
        Self::from_params(input_dim, arch, vec![0.0; arch.param_count(input_dim)], true)
    }

    pub fn from_params(input_dim: usize, arch: Architecture, params: Vec<f64>, clamp: bool) -> Result<Self> {
        arch.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let dims = arch.dims(input_dim);
        let expected = arch.param_count(input_dim);
        if params.len() != expected {
            return Err(Error::Shape(format!("{} parameters given, architecture needs {expected}", params.len())));
        }
        let mut offsets = Vec::with_capacity(arch.height);
        let mut o = 0;
        for w in dims.windows(2) {
            offsets.push(o);
            o += w[1] * (w[0] + 1);
        }
        Ok(Self { input_dim, arch, clamp, params, dims, offsets })
    }

    /// Builds a network from explicit per-layer `(W, b)` with `W` given as rows.
    pub fn from_layers(layers: &[(Vec<Vec<f64>>, Vec<f64>)], sparsity: usize, bound: f64, clamp: bool) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Shape("no layers".into()))?;
        let input_dim = first.0.first().map(|r| r.len()).unwrap_or(0);
        let width = if layers.len() > 1 { first.1.len() } else { 1 };
        let arch = Architecture { height: layers.len(), width, sparsity, bound };
        let dims = arch.dims(input_dim);
        let mut params = Vec::new();
        for (l, (w, b)) in layers.iter().enumerate() {
            if w.len() != dims[l + 1] || b.len() != dims[l + 1] || w.iter().any(|r| r.len() != dims[l]) {
                return Err(Error::Shape(format!("layer {l} does not match widths {dims:?}")));
            }
            w.iter().for_each(|r| params.extend_from_slice(r));
            params.extend_from_slice(b);
        }
        Self::from_params(input_dim, arch, params, clamp)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `(W_l, b_l)` slices of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let o = self.offsets[l];
        (&self.params[o..o + n_out * n_in], &self.params[o + n_out * n_in..o + n_out * (n_in + 1)])
    }

    pub fn nnz(&self) -> usize {
        self.params.iter().filter(|p| **p != 0.0).count()
    }

    pub fn sup_norm(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    pub fn is_feasible(&self) -> bool {
        self.nnz() <= self.arch.sparsity && self.sup_norm() <= self.arch.bound
    }

    /// Unclamped output; `scratch` must hold at least `2 * max width` values.
    fn raw_into(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let wmax = *self.dims.iter().max().expect("nonempty dims");
        scratch.clear();
        scratch.resize(2 * wmax, 0.0);
        let (cur, nxt) = scratch.split_at_mut(wmax);
        for (c, xi) in cur.iter_mut().zip(x) {
            *c = relu(*xi);
        }
        let (mut cur, mut nxt) = (cur, nxt);
        let last = self.arch.height - 1;
        for l in 0..self.arch.height {
            let (w, b) = self.layer(l);
            let n_in = self.dims[l];
            for (j, out) in nxt[..self.dims[l + 1]].iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = row.iter().zip(&cur[..n_in]).map(|(a, c)| a * c).sum::<f64>() + b[j];
                *out = if l == last { z } else { relu(z) };
            }
            std::mem::swap(&mut cur, &mut nxt);
        }
        cur[0]
    }

    /// Output without the clamp.
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        let mut s = Vec::new();
        self.raw_into(x, &mut s)
    }

    /// Output, clamped into `[0,1]` when `clamp` is set.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = self.eval_raw(x);
        if self.clamp {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    /// Checked evaluation: rejects inputs of the wrong width and non-finite
    /// parameters or outputs.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!("input of width {} for a network on {} inputs", x.len(), self.input_dim)));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        let v = self.eval(x);
        if !v.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(v)
    }

    /// Weighted squared loss `sum_i w_i (f(x_i) - y_i)^2` of the unclamped
    /// output and its gradient, accumulated into `grad`. `xs` is row-major.
    pub(crate) fn loss_and_grad(&self, xs: &[f64], ys: &[f64], ws: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.input_dim;
        let h = self.arch.height;
        // activations a_0..a_{L-1} and pre-activations z_1..z_{L-1}
        let mut acts: Vec<Vec<f64>> = self.dims[..h].iter().map(|&w| vec![0.0; w]).collect();
        let mut pre: Vec<Vec<f64>> = self.dims[1..h].iter().map(|&w| vec![0.0; w]).collect();
        let wmax = *self.dims.iter().max().expect("nonempty dims");
        let mut delta = vec![0.0; wmax];
        let mut delta_prev = vec![0.0; wmax];
        let mut loss = 0.0;
        for (i, (&y, &wt)) in ys.iter().zip(ws).enumerate() {
            let x = &xs[i * d..(i + 1) * d];
            for (a, xi) in acts[0].iter_mut().zip(x) {
                *a = relu(*xi);
            }
            let mut out = 0.0;
            for l in 0..h {
                let (w, b) = self.layer(l);
                let n_in = self.dims[l];
                if l + 1 == h {
                    out = w.iter().zip(&acts[l]).map(|(a, c)| a * c).sum::<f64>() + b[0];
                } else {
                    let (lo, hi) = acts.split_at_mut(l + 1);
                    let input = &lo[l];
                    for j in 0..self.dims[l + 1] {
                        let row = &w[j * n_in..(j + 1) * n_in];
                        let z = row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>() + b[j];
                        pre[l][j] = z;
                        hi[0][j] = relu(z);
                    }
                }
            }
            let r = out - y;
            loss += wt * r * r;
            delta[0] = 2.0 * wt * r;
            for l in (0..h).rev() {
                let n_in = self.dims[l];
                let n_out = self.dims[l + 1];
                let o = self.offsets[l];
                let a = &acts[l];
                for j in 0..n_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    let g = &mut grad[o + j * n_in..o + (j + 1) * n_in];
                    for (gk, ak) in g.iter_mut().zip(a) {
                        *gk += dj * ak;
                    }
                    grad[o + n_out * n_in + j] += dj;
                }
                if l == 0 {
                    break;
                }
                let (w, _) = self.layer(l);
                for k in 0..n_in {
                    let mut s = 0.0;
                    if pre[l - 1][k] > 0.0 {
                        for j in 0..n_out {
                            s += w[j * n_in + k] * delta[j];
                        }
                    }
                    delta_prev[k] = s;
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
        loss
    }

    /// Accumulates `sum_i c_i * grad f_raw(x_i)` into `grad`. Uses the
    /// squared-loss backward pass with targets `f_raw(x_i) - c_i / 2`, whose
    /// residual derivative is exactly `c_i`.
    pub(crate) fn output_grad(&self, xs: &[f64], coeffs: &[f64], grad: &mut [f64]) {
        let d = self.input_dim;
        let ys: Vec<f64> =
            coeffs.iter().enumerate().map(|(i, c)| self.eval_raw(&xs[i * d..(i + 1) * d]) - c / 2.0).collect();
        self.loss_and_grad(xs, &ys, &vec![1.0; coeffs.len()], grad);
    }

    /// Mean squared error `(1/n) sum (f(x_i) - y_i)^2` of the unclamped
    /// output and its exact gradient (ReLU subgradient 0 at the kink).
    pub fn gradient(&self, batch: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut xs = Vec::with_capacity(batch.len() * self.input_dim);
        for (x, _) in batch {
            if x.len() != self.input_dim {
                return Err(Error::Shape("batch input of the wrong width".into()));
            }
            xs.extend_from_slice(x);
        }
        let ys: Vec<f64> = batch.iter().map(|b| b.1).collect();
        let ws = vec![1.0 / batch.len() as f64; batch.len()];
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_and_grad(&xs, &ys, &ws, &mut grad);
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((loss, grad))
    }

    /// Clips every parameter into `[-B, B]`, then keeps only the `S` largest
    /// magnitudes (ties by position). Idempotent.
    pub fn project(&self) -> Self {
        let mut out = self.clone();
        out.project_in_place();
        out
    }

    pub fn project_in_place(&mut self) {
        let b = self.arch.bound;
        for p in &mut self.params {
            *p = p.clamp(-b, b);
        }
        let s = self.arch.sparsity;
        if self.nnz() <= s {
            return;
        }
        let mut idx: Vec<usize> = (0..self.params.len()).filter(|&i| self.params[i] != 0.0).collect();
        idx.sort_by(|&i, &j| self.params[j].abs().total_cmp(&self.params[i].abs()).then(i.cmp(&j)));
        for &i in &idx[s..] {
            self.params[i] = 0.0;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (4 + self.params.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.clamp as u16).to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        for v in [self.arch.height as f64, self.arch.width as f64, self.arch.sparsity as f64, self.arch.bound]
            .iter()
            .chain(&self.params)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::Shape(format!("network record: {reason}"));
        if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let flags = u16::from_le_bytes([bytes[10], bytes[11]]);
        let input_dim = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if !body.len().is_multiple_of(8) {
            return Err(bad("truncated body"));
        }
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let arch = Architecture {
            height: vals[0] as usize,
            width: vals[1] as usize,
            sparsity: vals[2] as usize,
            bound: vals[3],
        };
        Self::from_params(input_dim, arch, vals[4..].to_vec(), flags & 1 == 1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

impl QFunction for ReluNetwork {
    fn value(&self, state: &[f64], action: f64) -> f64 {
        let mut x = Vec::with_capacity(state.len() + 1);
        x.extend_from_slice(state);
        x.push(action);
        self.eval(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hat() -> ReluNetwork {
        // max(0, 1 - |2x - 1|) = relu(2x) - 2 relu(2x - 1) on [0, 1]
        ReluNetwork::from_layers(
            &[(vec![vec![2.0], vec![2.0]], vec![0.0, -1.0]), (vec![vec![1.0, -2.0]], vec![0.0])],
            6,
            2.0,
            false,
        )
        .unwrap()
    }

    #[test]
    fn hat_function_by_hand() {
        let net = hat();
        for (x, want) in [(0.0, 0.0), (0.25, 0.5), (0.5, 1.0), (1.0, 0.0)] {
            assert!((net.forward(&[x]).unwrap() - want).abs() < 1e-15, "x = {x}");
        }
    }

    #[test]
    fn identity_layer() {
        let net = ReluNetwork::from_layers(&[(vec![vec![1.0]], vec![0.0])], 2, 1.0, false).unwrap();
        assert_eq!(net.forward(&[0.37]).unwrap(), 0.37);
    }

    #[test]
    fn forward_rejects_bad_shapes_and_nan() {
        let mut net = hat();
        assert!(matches!(net.forward(&[0.1, 0.2]), Err(Error::Shape(_))));
        net.params_mut()[0] = f64::NAN;
        assert!(matches!(net.forward(&[0.1]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn projection_example() {
        let arch = Architecture { height: 1, width: 1, sparsity: 2, bound: 10.0 };
        let net = ReluNetwork::from_params(3, arch, vec![3.0, -2.0, 1.0, 0.5], false).unwrap();
        assert_eq!(net.project().params(), &[3.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn single_layer_gradient_by_hand() {
        let net = ReluNetwork::from_layers(&[(vec![vec![0.5, -0.3]], vec![0.1])], 3, 1.0, false).unwrap();
        let x = vec![0.4, 0.9];
        let y = 0.7;
        let f = 0.5 * 0.4 - 0.3 * 0.9 + 0.1;
        let (_, g) = net.gradient(&[(x.clone(), y)]).unwrap();
        let r = 2.0 * (f - y);
        let want = [r * 0.4, r * 0.9, r];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_network_gradient_only_on_last_bias() {
        let arch = Architecture { height: 3, width: 4, sparsity: 100, bound: 1.0 };
        let net = ReluNetwork::zeros(2, arch).unwrap();
        let (loss, g) = net.gradient(&[(vec![0.3, 0.6], 0.5)]).unwrap();
        assert_eq!(loss, 0.25);
        let last = g.len() - 1;
        assert_eq!(g[last], -1.0);
        assert!(g[..last].iter().all(|v| *v == 0.0));
        let (_, g) = net.gradient(&[(vec![0.3, 0.6], 0.0)]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let net = hat();
        let back = ReluNetwork::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
        assert_eq!(&net.to_bytes()[..8], MAGIC);
    }
}
