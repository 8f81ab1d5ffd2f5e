//! Seeded experiment sweeps: configuration, cell execution, rate fits,
//! error-decomposition audits and report files.

mod audit;
mod config;
mod output;
mod sweep;

pub use audit::{audit_decomposition, audit_with_kappa, decomposition_bound, AuditEntry, AuditRecord};
pub use config::{
    AuditSettings, ExperimentConfig, MdpSource, ModeName, NetworkSettings, PolicySettings, SweepAxes, Targets,
};
pub use output::{write_report, write_report_csv, write_schema, CSV_COLUMNS};
pub use sweep::{
    run_sweep, sizing_hint, sweep_cells, Cell, CellRecord, CellStatus, ConcentrationSummary, ExperimentReport, RateFit,
    SizingHint,
};
