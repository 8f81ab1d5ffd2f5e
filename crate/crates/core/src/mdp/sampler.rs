//! Exact sampling from the discounted state-action visitation distribution
//! `mu = (1 - gamma) sum_t gamma^t P(s_t, a_t | rho, eta)`, and the flat
//! dataset formats.
//!
//! Each tuple is drawn by the geometric-horizon method: `T ~ Geometric(1 -
//! gamma)` (failures before the first success), roll out `T` steps from
//! `rho` under `eta`, then emit `(s_T, a_T, s', r)`. Since `P(T = t) =
//! (1 - gamma) gamma^t` the emitted `(s_T, a_T)` has law `mu` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::Distribution;
use rand_distr::Geometric;

use super::{sample_action, Policy, SyntheticMdp};
use crate::error::{Error, Result};
use crate::stats::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub next_state: Vec<f64>,
    pub reward: f64,
}

/// `n` logged transitions drawn i.i.d. from the visitation distribution of a
/// behaviour policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub state_dim: usize,
    pub transitions: Vec<Transition>,
    /// Description of the behaviour policy that generated the data.
    pub behavior: String,
    pub seed: u64,
}

pub fn sample_visitation(mdp: &SyntheticMdp, eta: &dyn Policy, n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let gamma = mdp.gamma();
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("geometric horizon needs gamma < 1, got {gamma}")));
    }
    let horizon = Geometric::new(1.0 - gamma).map_err(|e| Error::InvalidArgument(format!("geometric horizon: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let actions = mdp.actions();
    let mut probs = vec![0.0; actions.len()];
    let mut state = Vec::with_capacity(1);
    let mut next = Vec::with_capacity(1);
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let t = horizon.sample(&mut rng);
        mdp.sample_initial(&mut rng, &mut state);
        for _ in 0..t {
            let ai = sample_action(&mut rng, eta, &state, actions, &mut probs);
            mdp.sample_next_state(&mut rng, &state, actions.values()[ai], &mut next);
            std::mem::swap(&mut state, &mut next);
        }
        let ai = sample_action(&mut rng, eta, &state, actions, &mut probs);
        let a = actions.values()[ai];
        let r = mdp.sample_reward(&mut rng, &state, a);
        mdp.sample_next_state(&mut rng, &state, a, &mut next);
        transitions.push(Transition { state: state.clone(), action: a, next_state: next.clone(), reward: r });
    }
    Ok(OfflineDataset { state_dim: mdp.state_dim(), transitions, behavior: eta.describe(), seed })
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Network input `(s, a)` for transition `i`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let t = &self.transitions[i];
        let mut x = t.state.clone();
        x.push(t.action);
        x
    }

    /// Checks the domain invariants: coordinates in `[0,1]`, rewards in `[0,1]`.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for (i, t) in self.transitions.iter().enumerate() {
            if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
                return Err(Error::Shape(format!("transition {i} has the wrong state width")));
            }
            let ok = t.state.iter().chain(&t.next_state).all(|x| unit(*x)) && unit(t.action) && unit(t.reward);
            if !ok {
                return Err(Error::InvalidArgument(format!("transition {i} leaves [0,1]: {t:?}")));
            }
        }
        Ok(())
    }

    fn row(&self, t: &Transition) -> Vec<f64> {
        let mut row = Vec::with_capacity(2 * self.state_dim + 2);
        row.extend_from_slice(&t.state);
        row.push(t.action);
        row.extend_from_slice(&t.next_state);
        row.push(t.reward);
        row
    }

    fn from_rows(state_dim: usize, rows: Vec<Vec<f64>>, path: &Path) -> Result<Self> {
        let width = 2 * state_dim + 2;
        let mut transitions = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != width {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("row of width {} (expected {width})", row.len()),
                });
            }
            transitions.push(Transition {
                state: row[..state_dim].to_vec(),
                action: row[state_dim],
                next_state: row[state_dim + 1..2 * state_dim + 1].to_vec(),
                reward: row[width - 1],
            });
        }
        let ds = Self { state_dim, transitions, behavior: "loaded".into(), seed: 0 };
        ds.validate()?;
        Ok(ds)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.state_dim).map(|i| format!("s{i}")).collect();
        h.push("a".into());
        h.extend((0..self.state_dim).map(|i| format!("next_s{i}")));
        h.push("r".into());
        h
    }

    /// CSV: header row then one row per transition, columns
    /// `s0.., a, next_s0.., r`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for t in &self.transitions {
            w.write_record(self.row(t).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, state_dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
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
        Self::from_rows(state_dim, rows, path)
    }

    /// Headerless binary: rows of little-endian `f64` in CSV column order.
    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.transitions {
            for v in self.row(t) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_bin(path: impl AsRef<Path>, state_dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let width = 2 * state_dim + 2;
        if bytes.len() % (8 * width) != 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("{} bytes is not a whole number of {width}-column rows", bytes.len()),
            });
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let rows = values.chunks(width).map(|r| r.to_vec()).collect();
        Self::from_rows(state_dim, rows, path)
    }
}
