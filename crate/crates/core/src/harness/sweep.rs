use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{audit_with_kappa, decomposition_bound, AuditRecord};
use super::config::{ExperimentConfig, ModeName};
use crate::error::{Error, Result};
use crate::fqi::{measure_bellman_residuals, run_lsvi, state_actions, DataMode, FqiConfig, FqiTrace, Mode};
use crate::mdp::{
    estimate_concentration_on, sample_visitation, BellmanTarget, BiasedPolicy, FixedActionPolicy, GridOracle,
    OfflineDataset, Policy, SyntheticMdp, UniformPolicy, DEFAULT_TOL,
};
use crate::rademacher::{rate_exponent, RateExponents};
use crate::relu::{architecture_for, Architecture};
use crate::stats::{derive_seed, fit_line, mean, rng_from_seed, spearman, std_error};

const RETRY_STREAM: u64 = 0xE7;
const MU_STREAM: u64 = 0x3C;
const PROBE_STREAM: u64 = 0x9B;

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub data_mode: DataMode,
    pub mode: ModeName,
}

/// Cells in a fixed order: mode, data mode, `K`, `n`, seed (fastest).
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let s = &cfg.sweep;
    let mut out = Vec::with_capacity(cfg.cell_count());
    for &mode in &s.mode {
        for &data_mode in &s.data_mode {
            for &k in &s.k {
                for &n in &s.n {
                    for &seed in &s.seeds {
                        out.push(Cell { index: out.len(), n, k, seed, data_mode, mode });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(flatten)]
    pub cell: Cell,
    pub status: CellStatus,
    pub failure: Option<String>,
    /// True when the first attempt failed and a fresh training seed was used.
    pub retried: bool,
    pub train_seed: u64,
    pub arch: Option<Architecture>,
    pub subopt: Option<f64>,
    pub max_residual: Option<f64>,
    pub kappa_hat: f64,
    pub bound_rhs: Option<f64>,
    pub slack: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// Seconds; kept out of the serialised report so reruns compare equal.
    #[serde(skip)]
    pub wallclock: f64,
}

/// Seed-averaged error against `n` for one `(mode, data mode, K)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub mode: ModeName,
    pub data_mode: DataMode,
    pub k: usize,
    pub n_values: Vec<usize>,
    pub mean_subopt: Vec<f64>,
    pub stderr_subopt: Vec<f64>,
    /// Slope of `ln mean_subopt` on `ln n`; absent with fewer than 4 sizes.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub spearman: Option<f64>,
    /// Theoretical exponent of `n` in the error, for comparison only.
    pub theoretical_exponent: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub kappa_hat: f64,
    pub lower_estimate: bool,
    pub probes: Vec<String>,
    pub max_horizon: usize,
    pub diagnostic: Option<String>,
}

/// Constant-free sample size `n` solving
/// `n = (1/eps^2)^(1 + d/alpha) ln^6 n + (1/eps^2)(ln(1/delta) + ln ln n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingHint {
    pub epsilon: f64,
    pub delta: f64,
    pub sample_exponent: f64,
    pub n_hint: f64,
}

pub fn sizing_hint(epsilon: f64, delta: f64, alpha: f64, d: usize) -> Result<SizingHint> {
    let rates = rate_exponent(alpha, d)?;
    let inv = 1.0 / (epsilon * epsilon);
    let lead = inv.powf(rates.sample_exponent);
    let f = |n: f64| {
        let l = n.ln();
        lead * l.powi(6) + inv * ((1.0 / delta).ln() + l.ln().max(0.0))
    };
    let mut n = lead.max(std::f64::consts::E * std::f64::consts::E);
    for _ in 0..500 {
        let next = f(n);
        if !next.is_finite() {
            return Err(Error::NonFinite("sizing iteration overflowed".into()));
        }
        if (next - n).abs() <= 1e-12 * n {
            n = next;
            break;
        }
        n = next;
    }
    Ok(SizingHint { epsilon, delta, sample_exponent: rates.sample_exponent, n_hint: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub gamma: f64,
    pub dim: usize,
    pub alpha: f64,
    pub records: Vec<CellRecord>,
    pub rate_fits: Vec<RateFit>,
    pub theoretical: Option<RateExponents>,
    pub concentration: ConcentrationSummary,
    pub sizing: Option<SizingHint>,
    pub audit: AuditRecord,
    /// Audit repeated with an enlarged probe set, run only after a violation.
    pub reaudit: Option<AuditRecord>,
    pub reaudit_concentration: Option<ConcentrationSummary>,
}

impl ExperimentReport {
    /// Violations that survive the enlarged probe set (or the first audit if
    /// none was needed).
    pub fn persistent_violations(&self) -> usize {
        self.reaudit.as_ref().unwrap_or(&self.audit).violations
    }
}

/// Everything shared by the cells of one sweep.
struct Shared {
    mdp: SyntheticMdp,
    oracle: GridOracle,
    behavior: Arc<dyn Policy>,
    target: Arc<dyn Policy>,
    kappa_hat: f64,
    datasets: HashMap<u64, OfflineDataset>,
    mu: HashMap<u64, Vec<(Vec<f64>, f64)>>,
}

struct Attempt {
    subopt: f64,
    max_residual: f64,
    arch: Architecture,
    final_loss: f64,
    trace: FqiTrace,
}

fn attempt(shared: &Shared, cfg: &ExperimentConfig, cell: &Cell, train_seed: u64) -> Result<Attempt> {
    let arch = match cfg.network.arch {
        Some(a) => a,
        None => architecture_for(cell.n, cfg.network.alpha, cfg.network.p, shared.mdp.dim())?.arch,
    };
    let mode = match cell.mode {
        ModeName::Ope => Mode::Ope(shared.target.clone()),
        ModeName::Opl => Mode::Opl,
    };
    let mut fcfg = FqiConfig::new(cell.k, mode, arch);
    fcfg.data_mode = cell.data_mode;
    fcfg.train = cfg.train;
    fcfg.train.seed = train_seed;
    fcfg.split_seed = cell.seed;
    fcfg.quadrature_resolution = cfg.audit.grid_resolution;
    let full = &shared.datasets[&cell.seed];
    let data = OfflineDataset {
        state_dim: full.state_dim,
        transitions: full.transitions[..cell.n].to_vec(),
        behavior: full.behavior.clone(),
        seed: full.seed,
    };
    let (out, mut trace) = run_lsvi(&shared.mdp, &data, &fcfg)?;
    let subopt = shared.oracle.subopt(out.as_estimate())?;
    let residuals =
        measure_bellman_residuals(&mut trace, &shared.oracle, fcfg.mode.bellman_target(), &shared.mu[&cell.seed])?;
    Ok(Attempt {
        subopt,
        max_residual: residuals.max,
        arch,
        final_loss: trace.per_iter_train_loss.last().copied().unwrap_or(0.0),
        trace,
    })
}

fn run_cell(shared: &Shared, cfg: &ExperimentConfig, cell: &Cell, out: Option<&Path>) -> Result<CellRecord> {
    let start = Instant::now();
    let first = attempt(shared, cfg, cell, cell.seed);
    let (result, retried, train_seed) = match first {
        Ok(a) => (Ok(a), false, cell.seed),
        Err(_) => {
            let s = derive_seed(cell.seed, RETRY_STREAM);
            (attempt(shared, cfg, cell, s), true, s)
        }
    };
    let gamma = shared.mdp.gamma();
    let mut record = CellRecord {
        cell: *cell,
        status: CellStatus::Failed,
        failure: None,
        retried,
        train_seed,
        arch: None,
        subopt: None,
        max_residual: None,
        kappa_hat: shared.kappa_hat,
        bound_rhs: None,
        slack: None,
        final_train_loss: None,
        wallclock: 0.0,
    };
    let mut artifacts = None;
    match result {
        Ok(a) => {
            let rhs = decomposition_bound(cell.mode, gamma, cell.k, shared.kappa_hat, a.max_residual);
            record.status = CellStatus::Ok;
            record.arch = Some(a.arch);
            record.subopt = Some(a.subopt);
            record.max_residual = Some(a.max_residual);
            record.bound_rhs = Some(rhs);
            record.slack = Some(rhs - a.subopt);
            record.final_train_loss = Some(a.final_loss);
            artifacts = Some(a.trace);
        }
        Err(e) => record.failure = Some(e.to_string()),
    }
    record.wallclock = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        write_cell_artifacts(dir, &record, artifacts.as_ref())?;
    }
    Ok(record)
}

#[derive(Serialize)]
struct CellTrace<'a> {
    record: &'a CellRecord,
    wallclock: f64,
    train_loss: &'a [f64],
    bellman_residuals: &'a [f64],
    samples: &'a [usize],
}

fn write_cell_artifacts(dir: &Path, record: &CellRecord, trace: Option<&FqiTrace>) -> Result<()> {
    let cell_dir = dir.join("cells").join(format!("cell_{:04}", record.cell.index));
    std::fs::create_dir_all(&cell_dir)?;
    let empty: (&[f64], &[f64], &[usize]) = (&[], &[], &[]);
    let (loss, res, samples) = trace
        .map(|t| (t.per_iter_train_loss.as_slice(), t.bellman_residuals.as_slice(), t.per_iter_samples.as_slice()))
        .unwrap_or(empty);
    let doc = CellTrace { record, wallclock: record.wallclock, train_loss: loss, bellman_residuals: res, samples };
    std::fs::write(cell_dir.join("trace.json"), serde_json::to_string_pretty(&doc)?)?;
    if let Some(t) = trace {
        t.last().save(cell_dir.join("q_final.bin"))?;
    }
    Ok(())
}

/// Fixed-action policies for every action, the uniform policy and the target
/// policy; the enlarged set adds seeded random stochastic policies.
fn probe_policies(shared: &Shared, extra: usize, seed: u64) -> Result<Vec<Arc<dyn Policy>>> {
    let n_a = shared.mdp.actions().len();
    let mut probes: Vec<Arc<dyn Policy>> =
        (0..n_a).map(|a| Arc::new(FixedActionPolicy(a)) as Arc<dyn Policy>).collect();
    probes.push(Arc::new(UniformPolicy));
    probes.push(shared.target.clone());
    if let Ok(opt) = shared.oracle.optimal_policy() {
        probes.push(Arc::new(opt));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..extra {
        let w: Vec<f64> = (0..n_a).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = w.iter().sum();
        probes.push(Arc::new(BiasedPolicy::new(w.iter().map(|x| x / total).collect())?));
    }
    Ok(probes)
}

fn concentration(shared: &Shared, probes: &[Arc<dyn Policy>], horizon: usize) -> Result<ConcentrationSummary> {
    let refs: Vec<&dyn Policy> = probes.iter().map(|p| p.as_ref()).collect();
    let horizons: Vec<usize> = (0..=horizon).collect();
    let rep = estimate_concentration_on(&shared.oracle, shared.behavior.as_ref(), &refs, &horizons)?;
    Ok(ConcentrationSummary {
        kappa_hat: rep.kappa_hat,
        lower_estimate: rep.lower_estimate,
        probes: rep.probe_policies,
        max_horizon: horizon,
        diagnostic: rep.diagnostic,
    })
}

fn rate_fits(records: &[CellRecord], theory: Option<&RateExponents>) -> Vec<RateFit> {
    let mut groups: BTreeMap<(u8, u8, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut keys: HashMap<(u8, u8, usize), (ModeName, DataMode)> = HashMap::new();
    for r in records {
        let key = (r.cell.mode as u8, r.cell.data_mode as u8, r.cell.k);
        keys.insert(key, (r.cell.mode, r.cell.data_mode));
        let by_n = groups.entry(key).or_default();
        let slot = by_n.entry(r.cell.n).or_default();
        if let Some(s) = r.subopt {
            slot.push(s);
        }
    }
    groups
        .into_iter()
        .map(|(key, by_n)| {
            let (mode, data_mode) = keys[&key];
            let pts: Vec<(usize, f64, f64)> = by_n
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(n, v)| (*n, mean(v), std_error(v)))
                .collect();
            let n_values: Vec<usize> = pts.iter().map(|p| p.0).collect();
            let means: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let mut fit = RateFit {
                mode,
                data_mode,
                k: key.2,
                n_values: n_values.clone(),
                mean_subopt: means.clone(),
                stderr_subopt: pts.iter().map(|p| p.2).collect(),
                slope: None,
                slope_stderr: None,
                spearman: None,
                theoretical_exponent: theory.map(|t| t.stat_exponent),
                note: None,
            };
            if pts.len() < 4 {
                fit.note = Some(format!("{} sample sizes with results; a rate fit needs at least 4", pts.len()));
                return fit;
            }
            let xs: Vec<f64> = n_values.iter().map(|n| (*n as f64).ln()).collect();
            let ys: Vec<f64> = means.iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect();
            if let Some(line) = fit_line(&xs, &ys) {
                fit.slope = Some(line.slope);
                fit.slope_stderr = Some(line.slope_stderr);
            }
            let ns: Vec<f64> = n_values.iter().map(|n| *n as f64).collect();
            fit.spearman = Some(spearman(&ns, &means));
            fit.note = Some(
                "the empirical slope is reported next to the asymptotic exponent; they are not expected to agree at this scale"
                    .into(),
            );
            fit
        })
        .collect()
}

/// Runs every cell of the sweep (in parallel across cells, `cfg.jobs`
/// threads), fits rates, audits the error decomposition and, when
/// `cfg.out_dir` is set, writes per-cell artifacts there. Failed cells are
/// retried once with a fresh training seed and then recorded as failed.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mdp = cfg.mdp.resolve()?;
    let behavior = cfg.policies.behavior.build(mdp.actions())?;
    let target = cfg.policies.target.build(mdp.actions())?;
    let mut oracle = GridOracle::new(&mdp, cfg.audit.grid_resolution, DEFAULT_TOL)?;
    if cfg.sweep.mode.contains(&ModeName::Opl) {
        oracle.ground_truth(BellmanTarget::Optimal)?;
    }
    if cfg.sweep.mode.contains(&ModeName::Ope) {
        oracle.ground_truth(BellmanTarget::Policy(target.as_ref()))?;
    }
    let n_max = *cfg.sweep.n.iter().max().expect("validated nonempty");
    let mut datasets = HashMap::new();
    let mut mu = HashMap::new();
    for &seed in &cfg.sweep.seeds {
        datasets.insert(seed, sample_visitation(&mdp, behavior.as_ref(), n_max, seed)?);
        let fresh = sample_visitation(&mdp, behavior.as_ref(), cfg.audit.mu_samples, derive_seed(seed, MU_STREAM))?;
        mu.insert(seed, state_actions(&fresh));
    }
    let mut shared = Shared { mdp, oracle, behavior, target, kappa_hat: f64::NAN, datasets, mu };
    let probes = probe_policies(&shared, 0, 0)?;
    let conc = concentration(&shared, &probes, cfg.audit.horizon)?;
    shared.kappa_hat = conc.kappa_hat;

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let art_dir = cfg.out_dir.as_deref().filter(|_| cfg.cell_artifacts);
    let cells = sweep_cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<CellRecord> =
        pool.install(|| cells.par_iter().map(|c| run_cell(&shared, cfg, c, art_dir)).collect::<Result<Vec<_>>>())?;

    let dim = shared.mdp.dim();
    let theoretical = rate_exponent(cfg.network.alpha, dim).ok();
    let sizing = sizing_hint(cfg.targets.epsilon, cfg.targets.delta, cfg.network.alpha, dim).ok();
    let mut report = ExperimentReport {
        name: cfg.name.clone(),
        gamma: shared.mdp.gamma(),
        dim,
        alpha: cfg.network.alpha,
        rate_fits: rate_fits(&records, theoretical.as_ref()),
        records,
        theoretical,
        concentration: conc,
        sizing,
        audit: AuditRecord::default(),
        reaudit: None,
        reaudit_concentration: None,
    };
    report.audit = audit_with_kappa(&report, report.concentration.kappa_hat);
    if report.audit.violations > 0 {
        let seed = derive_seed(cfg.sweep.seeds[0], PROBE_STREAM);
        let probes = probe_policies(&shared, cfg.audit.enlarged_probes, seed)?;
        let big = concentration(&shared, &probes, cfg.audit.enlarged_horizon.max(cfg.audit.horizon))?;
        let kappa = big.kappa_hat.max(report.concentration.kappa_hat);
        report.reaudit = Some(audit_with_kappa(&report, kappa));
        report.reaudit_concentration = Some(big);
    }
    Ok(report)
}
