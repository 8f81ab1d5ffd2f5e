use std::path::Path;

use super::sweep::{CellRecord, CellStatus, ExperimentReport};
use crate::error::Result;

/// `(column, description)` of every `report.csv` column, in order.
pub const CSV_COLUMNS: &[(&str, &str)] = &[
    ("cell", "cell index in sweep order (mode, data_mode, k, n, seed)"),
    ("mode", "ope (policy evaluation) or opl (policy learning)"),
    ("data_mode", "reuse: every iteration fits the full dataset; split: iteration k fits fold k"),
    ("k", "number of iterations K"),
    ("n", "number of logged transitions"),
    ("seed", "data seed; also the first training seed"),
    ("status", "ok or failed"),
    ("retried", "true when the first attempt failed and a fresh training seed was used"),
    ("train_seed", "training seed of the reported attempt"),
    ("height", "network depth L"),
    ("width", "network width m"),
    ("sparsity", "nonzero-parameter budget S"),
    ("bound", "parameter magnitude bound B"),
    ("subopt", "sub-optimality against the grid oracle"),
    ("max_residual", "largest Bellman residual ||Q_{k+1} - T Q_k|| in L2(mu)"),
    ("kappa_hat", "concentration-coefficient estimate (a lower estimate)"),
    ("bound_rhs", "error-decomposition bound evaluated with kappa_hat and max_residual"),
    ("slack", "bound_rhs - subopt"),
    ("final_train_loss", "training loss of the last iterate"),
    ("failure", "error message of a failed cell"),
];

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn row(r: &CellRecord) -> Vec<String> {
    let c = &r.cell;
    let arch = r.arch;
    vec![
        c.index.to_string(),
        c.mode.as_str().to_string(),
        match c.data_mode {
            crate::fqi::DataMode::Reuse => "reuse".into(),
            crate::fqi::DataMode::Split => "split".into(),
        },
        c.k.to_string(),
        c.n.to_string(),
        c.seed.to_string(),
        match r.status {
            CellStatus::Ok => "ok".into(),
            CellStatus::Failed => "failed".into(),
        },
        r.retried.to_string(),
        r.train_seed.to_string(),
        arch.map(|a| a.height.to_string()).unwrap_or_default(),
        arch.map(|a| a.width.to_string()).unwrap_or_default(),
        arch.map(|a| a.sparsity.to_string()).unwrap_or_default(),
        num(arch.map(|a| a.bound)),
        num(r.subopt),
        num(r.max_residual),
        format!("{:?}", r.kappa_hat),
        num(r.bound_rhs),
        num(r.slack),
        num(r.final_train_loss),
        r.failure.clone().unwrap_or_default(),
    ]
}

pub fn write_report_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS.iter().map(|c| c.0))?;
    for r in &report.records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schema(path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["column", "description"])?;
    for (name, desc) in CSV_COLUMNS {
        w.write_record([*name, *desc])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.csv`, `report.json` and `report_schema.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_report_csv(report, dir.join("report.csv"))?;
    write_schema(dir.join("report_schema.csv"))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}
