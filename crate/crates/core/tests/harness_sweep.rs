use std::sync::Arc;

use fqi_lab::fqi::{run_lsvi, FqiConfig, Mode};
use fqi_lab::harness::{
    audit_with_kappa, decomposition_bound, run_sweep, sweep_cells, write_report, CellStatus, ExperimentConfig,
    ModeName, CSV_COLUMNS,
};
use fqi_lab::mdp::{sample_visitation, BellmanTarget, GridOracle, SyntheticMdp, UniformPolicy, DEFAULT_TOL};
use fqi_lab::relu::{Architecture, ReluNetwork, TrainConfig};

const SMALL: &str = r#"
name = "small"
cell_artifacts = false

[mdp]
preset = "chain5"
gamma = 0.8

[sweep]
n = [300]
k = [4]
seeds = [5]
mode = ["ope"]

[network.arch]
height = 2
width = 8
sparsity = 64
bound = 10.0

[train]
epochs = 150

[audit]
mu_samples = 512
horizon = 10
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

#[test]
fn single_cell_sweep_matches_a_direct_run() {
    let cfg = small();
    let report = run_sweep(&cfg).unwrap();
    assert_eq!(report.records.len(), 1);
    let rec = &report.records[0];
    assert_eq!(rec.status, CellStatus::Ok);

    let mdp = SyntheticMdp::chain5(0.8).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 300, 5).unwrap();
    let arch = Architecture { height: 2, width: 8, sparsity: 64, bound: 10.0 };
    let mut fcfg = FqiConfig::new(4, Mode::Ope(Arc::new(UniformPolicy)), arch);
    fcfg.train = TrainConfig { epochs: 150, seed: 5, ..TrainConfig::default() };
    fcfg.split_seed = 5;
    fcfg.quadrature_resolution = cfg.audit.grid_resolution;
    let (out, trace) = run_lsvi(&mdp, &data, &fcfg).unwrap();
    let mut oracle = GridOracle::new(&mdp, cfg.audit.grid_resolution, DEFAULT_TOL).unwrap();
    oracle.ground_truth(BellmanTarget::Policy(&UniformPolicy)).unwrap();
    let subopt = oracle.subopt(out.as_estimate()).unwrap();

    assert_eq!(rec.subopt, Some(subopt));
    assert_eq!(rec.final_train_loss, trace.per_iter_train_loss.last().copied());
    assert_eq!(rec.arch, Some(arch));
    assert_eq!(rec.train_seed, 5);
    assert!(!rec.retried);
}

const GRID: &str = r#"
name = "grid"

[mdp]
preset = "chain5"

[sweep]
n = [200, 400]
k = [2, 3]
seeds = [1, 2]
mode = ["ope", "opl"]
data_mode = ["reuse", "split"]

[network.arch]
height = 2
width = 6
sparsity = 48
bound = 10.0

[train]
epochs = 60
restarts = 1

[audit]
mu_samples = 256
horizon = 5
"#;

#[test]
fn reruns_are_bit_identical_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml_str(GRID).unwrap();
    cfg.jobs = 2;
    cfg.out_dir = Some(dir.path().join("a"));
    let a = run_sweep(&cfg).unwrap();
    write_report(&a, dir.path().join("a")).unwrap();
    cfg.jobs = 1;
    cfg.out_dir = Some(dir.path().join("b"));
    let b = run_sweep(&cfg).unwrap();
    write_report(&b, dir.path().join("b")).unwrap();

    assert_eq!(a.records.len(), cfg.cell_count());
    assert_eq!(cfg.cell_count(), 32);
    for name in ["report.csv", "report.json", "report_schema.csv"] {
        let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between reruns");
    }
    for (r, c) in a.records.iter().zip(sweep_cells(&cfg)) {
        assert_eq!(r.cell, c);
        if r.status == CellStatus::Ok {
            assert!(r.slack.unwrap().is_finite());
        }
    }
    assert!(a.audit.all_slack_finite);

    // per-cell artifacts
    let cell = dir.path().join("a/cells/cell_0000");
    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(cell.join("trace.json")).unwrap()).unwrap();
    assert!(trace["wallclock"].as_f64().unwrap() >= 0.0);
    let q = ReluNetwork::load(cell.join("q_final.bin")).unwrap();
    assert_eq!(q.input_dim(), 2);

    let csv = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, CSV_COLUMNS.iter().map(|c| c.0).collect::<Vec<_>>());
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn zero_residual_injection_leaves_only_the_horizon_term() {
    let mut report = run_sweep(&small()).unwrap();
    for r in &mut report.records {
        r.subopt = Some(0.0);
        r.max_residual = Some(0.0);
    }
    let gamma: f64 = 0.8;
    let audit = audit_with_kappa(&report, report.concentration.kappa_hat);
    let want = gamma.powf(2.0) / (1.0 - gamma).sqrt();
    assert_eq!(audit.entries.len(), 1);
    assert!((audit.entries[0].slack - want).abs() < 1e-15);
    assert!(audit.entries[0].slack > 0.0);
    assert_eq!(audit.violations, 0);
}

#[test]
fn bound_decreases_toward_the_statistical_term() {
    let (gamma, kappa, res): (f64, f64, f64) = (0.9, 4.0, 0.01);
    for mode in [ModeName::Ope, ModeName::Opl] {
        let stat = match mode {
            ModeName::Ope => kappa.sqrt() * res / (1.0 - gamma),
            ModeName::Opl => 4.0 * gamma * kappa.sqrt() * res / (1.0f64 - gamma).powi(2),
        };
        let mut prev = f64::INFINITY;
        for k in [1, 5, 20, 100, 300] {
            let rhs = decomposition_bound(mode, gamma, k, kappa, res);
            assert!(rhs < prev && rhs > stat);
            prev = rhs;
        }
        let far = decomposition_bound(mode, gamma, 1000, kappa, res);
        assert!(far <= prev && (far - stat).abs() < 1e-12 * stat);
    }
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ExperimentConfig::from_toml_str(&format!("{SMALL}\nbogus = 1\n")).is_err());
    let unknown = SMALL.replace("\"chain5\"", "\"nope\"");
    assert!(run_sweep(&ExperimentConfig::from_toml_str(&unknown).unwrap()).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("k = [4]", "k = [0]")).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("epochs = 150", "epochs = 150\nrestarts = 0")).is_err());
}

#[test]
fn relative_mdp_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = fqi_lab::mdp::chain5_config(0.8);
    std::fs::write(dir.path().join("chain.toml"), toml_string(&mdp)).unwrap();
    let text = SMALL.replace("preset = \"chain5\"\ngamma = 0.8", "path = \"chain.toml\"");
    std::fs::write(dir.path().join("exp.toml"), text).unwrap();
    let cfg = ExperimentConfig::load(dir.path().join("exp.toml")).unwrap();
    let via_file = run_sweep(&cfg).unwrap();
    let via_preset = run_sweep(&small()).unwrap();
    assert_eq!(via_file.records[0].subopt, via_preset.records[0].subopt);
}

fn toml_string(cfg: &fqi_lab::mdp::MdpConfig) -> String {
    toml::to_string(cfg).unwrap()
}
