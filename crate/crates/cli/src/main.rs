use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fqi_lab::besov::{
    besov_norm, besov_seminorm_detail, default_t_grid, fit_smoothness_exponent, synth_function, BesovParams,
    FunctionOnGrid, SmoothnessExponent, SynthKind,
};
use fqi_lab::fqi::{greedy_policy, rho_pi_moment, DataMode, OpeReturn};
use fqi_lab::harness::{
    run_sweep, write_report, write_schema, ExperimentConfig, ExperimentReport, MdpSource, ModeName,
};
use fqi_lab::mdp::sample_visitation;
use fqi_lab::rademacher::{
    empirical_rademacher, localized_rademacher, AscentConfig, FiniteClass, NetworkClass, DEFAULT_MU_SAMPLES,
};
use fqi_lab::relu::{Architecture, ReluNetwork, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fqi-lab", version, about = "Fitted Q-iteration with constrained ReLU networks on synthetic MDPs")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed. For sweeps, shifts the seed axis to start here.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads across sweep cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ope,
    Opl,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataModeArg {
    Reuse,
    Split,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an offline dataset from the discounted visitation distribution.
    GenData {
        /// MDP config file, or the preset name `chain5`.
        #[arg(long)]
        mdp: Option<String>,
        /// Discount for a preset.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run one LSVI job and score it against the grid oracle.
    RunFqi {
        #[arg(long)]
        mdp: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long = "K", alias = "k")]
        k: usize,
        #[arg(long, value_enum, default_value = "ope")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "reuse")]
        data_mode: DataModeArg,
        /// Fixed architecture `L,m,S,B`; derived from n otherwise.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the sweep in --config and fit rates.
    MeasureRates,
    /// Estimate smoothness of a tabulated or synthetic function.
    AnalyzeSmoothness {
        /// Grid function (.csv, or .bin with --dim).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Synthetic family: weierstrass, spline_series, piecewise_spiky.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Difference order; floor(alpha) + 1 by default.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value = "inf")]
        p: f64,
        #[arg(long, default_value = "inf")]
        q: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
    /// Estimate an empirical or localized Rademacher average.
    Rademacher {
        /// `finite:<csv>` (one member per row) or `net:d,L,m,S,B`.
        #[arg(long)]
        class: String,
        /// Localization radius (network classes only).
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Sample points for network classes, uniform on the unit cube.
        #[arg(long, default_value_t = 128)]
        points: usize,
        /// Anchor network for localization; the zero network by default.
        #[arg(long)]
        anchor: Option<PathBuf>,
    },
    /// Rebuild report.csv and the schema from report.json and summarise it.
    Report {
        /// Directory holding report.json; --out by default.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

const BASE_CONFIG: &str = r#"
[mdp]
preset = "chain5"
[sweep]
n = [1000]
k = [10]
seeds = [0]
"#;

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::from_toml_str(BASE_CONFIG)?,
    };
    Ok(cfg)
}

fn mdp_source(spec: &str, gamma: Option<f64>) -> MdpSource {
    if Path::new(spec).exists() || spec.ends_with(".toml") {
        MdpSource { path: Some(PathBuf::from(spec)), ..MdpSource::default() }
    } else {
        MdpSource { preset: Some(spec.to_string()), gamma, ..MdpSource::default() }
    }
}

fn parse_arch(s: &str) -> Result<Architecture> {
    let f: Vec<&str> = s.split(',').map(str::trim).collect();
    if f.len() != 4 {
        bail!("architecture must be L,m,S,B, got {s:?}");
    }
    Ok(Architecture { height: f[0].parse()?, width: f[1].parse()?, sparsity: f[2].parse()?, bound: f[3].parse()? })
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn fmt_index(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn summarise(report: &ExperimentReport) {
    let ok = report.records.iter().filter(|r| r.subopt.is_some()).count();
    println!("{}: {} cells, {} ok", report.name, report.records.len(), ok);
    for f in &report.rate_fits {
        let means: Vec<String> = f.mean_subopt.iter().map(|m| format!("{m:.4}")).collect();
        println!(
            "  {} {:?} K={}: n {:?} -> [{}], slope {}, spearman {}, theory -{}",
            f.mode.as_str(),
            f.data_mode,
            f.k,
            f.n_values,
            means.join(", "),
            f.slope.map_or("-".into(), |v| format!("{v:.3}")),
            f.spearman.map_or("-".into(), |v| format!("{v:.2}")),
            f.theoretical_exponent.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    println!(
        "  kappa_hat {:.4} (lower estimate), audit: {} audited, {} violations, {} persistent",
        report.concentration.kappa_hat,
        report.audit.audited,
        report.audit.violations,
        report.persistent_violations()
    );
}

fn write_json(dir: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn gen_data(cli: &Cli, mdp: Option<&str>, gamma: Option<f64>, n: usize, format: Format) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(m) = mdp {
        cfg.mdp = mdp_source(m, gamma);
    }
    let mdp = cfg.mdp.resolve()?;
    let behavior = cfg.policies.behavior.build(mdp.actions())?;
    let data = sample_visitation(&mdp, behavior.as_ref(), n, cli.seed.unwrap_or(0))?;
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)?;
    let path = match format {
        Format::Csv => dir.join("dataset.csv"),
        Format::Bin => dir.join("dataset.bin"),
    };
    match format {
        Format::Csv => data.write_csv(&path)?,
        Format::Bin => data.write_bin(&path)?,
    }
    std::fs::write(dir.join("mdp.toml"), toml::to_string(mdp.config())?)?;
    println!("wrote {} transitions to {}", data.len(), path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_fqi(
    cli: &Cli,
    mdp: Option<&str>,
    gamma: Option<f64>,
    n: usize,
    k: usize,
    mode: ModeArg,
    data_mode: DataModeArg,
    arch: Option<&str>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(m) = mdp {
        cfg.mdp = mdp_source(m, gamma);
    } else if gamma.is_some() {
        cfg.mdp.gamma = gamma;
    }
    let mode = match mode {
        ModeArg::Ope => ModeName::Ope,
        ModeArg::Opl => ModeName::Opl,
    };
    let data_mode = match data_mode {
        DataModeArg::Reuse => DataMode::Reuse,
        DataModeArg::Split => DataMode::Split,
    };
    let seed = cli.seed.unwrap_or(0);
    cfg.sweep.n = vec![n];
    cfg.sweep.k = vec![k];
    cfg.sweep.seeds = vec![seed];
    cfg.sweep.mode = vec![mode];
    cfg.sweep.data_mode = vec![data_mode];
    if let Some(a) = arch {
        cfg.network.arch = Some(parse_arch(a)?);
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let dir = out_dir(cli);
    cfg.out_dir = Some(dir.clone());
    cfg.cell_artifacts = true;
    cfg.validate()?;

    let report = run_sweep(&cfg)?;
    write_report(&report, &dir)?;
    let rec = &report.records[0];
    if let Some(msg) = &rec.failure {
        bail!("run failed: {msg}");
    }
    let cell = dir.join("cells").join("cell_0000");
    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(cell.join("trace.json"))?)?;
    let mut w = String::from("k,train_loss,residual\n");
    let losses = trace["train_loss"].as_array().cloned().unwrap_or_default();
    let residuals = trace["bellman_residuals"].as_array().cloned().unwrap_or_default();
    for (i, loss) in losses.iter().enumerate() {
        let res = residuals.get(i).and_then(|v| v.as_f64()).map_or(String::new(), |v| format!("{v:?}"));
        w.push_str(&format!("{},{:?},{res}\n", i + 1, loss.as_f64().unwrap_or(f64::NAN)));
    }
    std::fs::write(dir.join("trace.csv"), w)?;
    std::fs::copy(cell.join("q_final.bin"), dir.join("q_final.bin"))?;

    let sim = cfg.mdp.resolve()?;
    let q = ReluNetwork::load(dir.join("q_final.bin"))?;
    let estimate = match mode {
        ModeName::Ope => {
            let target = cfg.policies.target.build(sim.actions())?;
            let v = rho_pi_moment(&sim, &q, target.as_ref(), OpeReturn::Mean, cfg.audit.grid_resolution)?;
            json!({ "value_estimate": v })
        }
        ModeName::Opl => {
            let pi = greedy_policy(&q);
            let actions = sim.actions();
            let table: Vec<_> = (0..=10)
                .map(|i| {
                    let s = vec![i as f64 / 10.0; sim.state_dim()];
                    json!({ "state": s, "action": actions.values()[pi.greedy_index(&s, actions)] })
                })
                .collect();
            json!({ "greedy_actions": table })
        }
    };
    let result = json!({
        "mode": mode.as_str(),
        "data_mode": format!("{data_mode:?}").to_lowercase(),
        "n": n,
        "k": k,
        "seed": seed,
        "train_seed": rec.train_seed,
        "retried": rec.retried,
        "arch": rec.arch,
        "subopt": rec.subopt,
        "estimate": estimate,
        "kappa_hat": rec.kappa_hat,
        "kappa_hat_is_lower_estimate": true,
        "max_residual": rec.max_residual,
        "bound_rhs": rec.bound_rhs,
        "slack": rec.slack,
        "final_train_loss": rec.final_train_loss,
    });
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    println!(
        "{} K={k} n={n}: subopt {:.5}, slack {:.5}; wrote {}",
        mode.as_str(),
        rec.subopt.unwrap_or(f64::NAN),
        rec.slack.unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(())
}

fn measure_rates(cli: &Cli) -> Result<()> {
    if cli.config.is_none() {
        bail!("measure-rates needs --config");
    }
    let mut cfg = base_config(cli)?;
    if let Some(start) = cli.seed {
        let len = cfg.sweep.seeds.len() as u64;
        cfg.sweep.seeds = (start..start + len).collect();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    let dir = cli.out.clone().or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.out_dir = Some(dir.clone());
    cfg.validate()?;
    let report = run_sweep(&cfg)?;
    write_report(&report, &dir)?;
    summarise(&report);
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn analyze_smoothness(
    cli: &Cli,
    input: Option<&Path>,
    kind: Option<&str>,
    alpha: f64,
    r: Option<usize>,
    p: f64,
    q: f64,
    dim: usize,
) -> Result<()> {
    let (f, source) = match (input, kind) {
        (Some(path), None) => {
            let f = match path.extension().and_then(|e| e.to_str()) {
                Some("bin") => FunctionOnGrid::read_bin(path, dim)?,
                _ => FunctionOnGrid::read_csv(path)?,
            };
            (f, path.display().to_string())
        }
        (None, Some(k)) => {
            let kind: SynthKind = k.parse()?;
            (synth_function(kind, alpha, dim, cli.seed.unwrap_or(0))?, format!("{k} (target alpha {alpha})"))
        }
        _ => bail!("give exactly one of --input or --kind"),
    };
    let params = BesovParams { alpha, p, q };
    let r = r.unwrap_or_else(|| params.default_order());
    let t_grid = default_t_grid(&f);
    let fit = fit_smoothness_exponent(&f, r, p, &t_grid)?;
    let semi = besov_seminorm_detail(&f, params, Some(r), &t_grid)?;
    let (exponent, at_least) = match fit.exponent {
        SmoothnessExponent::Value(v) => (v, false),
        SmoothnessExponent::AtLeast(r) => (r as f64, true),
    };
    let out = json!({
        "source": source,
        "shape": f.shape(),
        "alpha": alpha,
        "r": r,
        "p": fmt_index(p),
        "q": fmt_index(q),
        "exponent": exponent,
        "exponent_is_lower_bound": at_least,
        "seminorm": semi.value,
        "seminorm_order": semi.r,
        "order_raised": semi.raised,
        "norm": besov_norm(&f, params)?,
        "modulus": { "t": fit.curve.t_values, "omega": fit.curve.omega_values },
        "fit_indices": fit.used,
    });
    if let (Some(dir), Some(_)) = (&cli.out, kind) {
        std::fs::create_dir_all(dir)?;
        f.write_csv(dir.join("function.csv"))?;
    }
    write_json(cli.out.as_deref(), "smoothness.json", &out)
}

fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

fn rademacher(
    cli: &Cli,
    class: &str,
    radius: Option<f64>,
    draws: usize,
    points: usize,
    anchor: Option<&Path>,
) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let est = if let Some(file) = class.strip_prefix("finite:") {
        if radius.is_some() {
            bail!("--radius applies to network classes only");
        }
        let class = FiniteClass::read_csv(file)?;
        let xs: Vec<Vec<f64>> = (0..class.points()).map(|i| vec![i as f64]).collect();
        empirical_rademacher(&class, &xs, draws, seed)?
    } else if let Some(spec) = class.strip_prefix("net:") {
        let (d, arch) = spec.split_once(',').context("network class must be net:d,L,m,S,B")?;
        let d: usize = d.trim().parse()?;
        let arch = parse_arch(arch)?;
        let xs = uniform_points(points, d, seed);
        match radius {
            Some(r) => {
                let anchor = match anchor {
                    Some(p) => ReluNetwork::load(p)?,
                    None => ReluNetwork::zeros(d, arch)?,
                };
                let mu = uniform_points(DEFAULT_MU_SAMPLES, d, seed.wrapping_add(1));
                localized_rademacher(&arch, &anchor, r, &xs, &mu, draws, &AscentConfig::default(), seed)?
            }
            None => {
                let class = NetworkClass { input_dim: d, arch, train: TrainConfig::default() };
                empirical_rademacher(&class, &xs, draws, seed)?
            }
        }
    } else {
        bail!("class must start with finite: or net:");
    };
    write_json(cli.out.as_deref(), "rademacher.json", &serde_json::to_value(&est)?)
}

fn report(cli: &Cli, input: Option<&Path>) -> Result<()> {
    let src = input.map(Path::to_path_buf).or(cli.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let path = src.join("report.json");
    let report: ExperimentReport =
        serde_json::from_slice(&std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?)?;
    let dst = cli.out.clone().unwrap_or(src);
    std::fs::create_dir_all(&dst)?;
    fqi_lab::harness::write_report_csv(&report, dst.join("report.csv"))?;
    write_schema(dst.join("report_schema.csv"))?;
    summarise(&report);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData { mdp, gamma, n, format } => gen_data(&cli, mdp.as_deref(), *gamma, *n, *format),
        Command::RunFqi { mdp, gamma, n, k, mode, data_mode, arch, epochs } => {
            run_fqi(&cli, mdp.as_deref(), *gamma, *n, *k, *mode, *data_mode, arch.as_deref(), *epochs)
        }
        Command::MeasureRates => measure_rates(&cli),
        Command::AnalyzeSmoothness { input, kind, alpha, r, p, q, dim } => {
            analyze_smoothness(&cli, input.as_deref(), kind.as_deref(), *alpha, *r, *p, *q, *dim)
        }
        Command::Rademacher { class, radius, draws, points, anchor } => {
            rademacher(&cli, class, *radius, *draws, *points, anchor.as_deref())
        }
        Command::Report { input } => report(&cli, input.as_deref()),
    }
}
