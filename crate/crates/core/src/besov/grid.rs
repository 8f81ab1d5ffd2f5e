use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Values on the uniform tensor grid of `[0,1]^d`, node `i` of an axis with
/// `G` nodes sitting at `i / (G - 1)`. Row-major: the last axis varies
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionOnGrid {
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub const MIN_RESOLUTION: usize = 4;

impl FunctionOnGrid {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("grid needs at least one axis".into()));
        }
        if let Some(g) = shape.iter().find(|g| **g < MIN_RESOLUTION) {
            return Err(Error::Shape(format!("axis resolution {g} is below {MIN_RESOLUTION}")));
        }
        let total: usize = shape.iter().product();
        if values.len() != total {
            return Err(Error::Shape(format!("{} values for a grid of {total} nodes", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at node {i}")));
        }
        Ok(Self { shape, values })
    }

    /// Samples `f` on a `resolution^d` grid.
    pub fn from_fn(d: usize, resolution: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn_shape(vec![resolution; d], f)
    }

    pub fn from_fn_shape(shape: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let total: usize = shape.iter().product();
        let mut x = vec![0.0; shape.len()];
        let mut values = Vec::with_capacity(total);
        for idx in 0..total {
            coords_into(&shape, idx, &mut x);
            values.push(f(&x));
        }
        Self::new(shape, values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid step along `axis`.
    pub fn step(&self, axis: usize) -> f64 {
        1.0 / (self.shape[axis] - 1) as f64
    }

    /// Smallest grid step over all axes.
    pub fn min_step(&self) -> f64 {
        (0..self.dim()).map(|a| self.step(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        coords_into(&self.shape, idx, &mut x);
        x
    }

    /// Stride of `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.values.iter().map(|v| f(*v)).collect())
    }

    /// `a * self + b * other` on the same grid.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape("grids differ".into()));
        }
        Self::new(self.shape.clone(), self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect())
    }

    /// Discrete `p`-norm against the uniform probability measure on the nodes.
    pub fn p_norm(&self, p: f64) -> f64 {
        discrete_p_norm(&self.values, p)
    }

    /// CSV with columns `x0.., value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.coords(i).iter().map(|x| format!("{x:?}")).collect();
            row.push(format!("{v:?}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let d = r.headers()?.len().saturating_sub(1);
        let mut rows = Vec::new();
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
            rows.push(row);
        }
        Self::from_rows(d, rows, path)
    }

    /// Headerless little-endian `f64` rows `x0.., value`.
    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, v) in self.values.iter().enumerate() {
            for x in self.coords(i) {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_bin(path: impl AsRef<Path>, d: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let width = d + 1;
        if d == 0 || bytes.len() % (8 * width) != 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("{} bytes is not a whole number of {width}-column rows", bytes.len()),
            });
        }
        let vals: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::from_rows(d, vals.chunks(width).map(|r| r.to_vec()).collect(), path)
    }

    /// Rebuilds a grid from `(coords, value)` rows in row-major node order.
    fn from_rows(d: usize, rows: Vec<Vec<f64>>, path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        if d == 0 || rows.is_empty() {
            return Err(fmt("no coordinate columns or no rows".into()));
        }
        if rows.iter().any(|r| r.len() != d + 1) {
            return Err(fmt("ragged rows".into()));
        }
        // the last axis runs fastest; count distinct values per axis
        let mut shape = Vec::with_capacity(d);
        for axis in 0..d {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[axis]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            shape.push(vals.len());
        }
        let grid = Self::new(shape, rows.iter().map(|r| r[d]).collect()).map_err(|e| fmt(e.to_string()))?;
        for (i, r) in rows.iter().enumerate() {
            let c = grid.coords(i);
            if c.iter().zip(r).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(fmt(format!("row {i} is not the uniform grid node {c:?}")));
            }
        }
        Ok(grid)
    }
}

fn coords_into(shape: &[usize], mut idx: usize, out: &mut [f64]) {
    for axis in (0..shape.len()).rev() {
        let g = shape[axis];
        out[axis] = (idx % g) as f64 / (g - 1) as f64;
        idx /= g;
    }
}

/// `(mean |v|^p)^(1/p)`, or `max |v|` for `p = inf`.
pub fn discrete_p_norm(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if p.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let s: f64 = values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / values.len() as f64;
    s.powf(1.0 / p)
}
