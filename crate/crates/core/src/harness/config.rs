use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqi::DataMode;
use crate::mdp::{chain5_config, MdpConfig, PolicySpec, SyntheticMdp, DEFAULT_RESOLUTION};
use crate::relu::{Architecture, TrainConfig};

/// Where the MDP comes from: a named preset, a TOML file, or an inline table.
/// Exactly one of `preset`, `path`, `inline` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    /// `"chain5"`: the five-cell chain.
    pub preset: Option<String>,
    /// Discount for the preset.
    pub gamma: Option<f64>,
    pub path: Option<PathBuf>,
    pub inline: Option<MdpConfig>,
}

impl MdpSource {
    pub fn resolve(&self) -> Result<SyntheticMdp> {
        let config = match (&self.preset, &self.path, &self.inline) {
            (Some(name), None, None) => match name.as_str() {
                "chain5" => chain5_config(self.gamma.unwrap_or(0.9)),
                other => return Err(Error::Config(format!("unknown MDP preset {other:?}"))),
            },
            (None, Some(p), None) => MdpConfig::load(p)?,
            (None, None, Some(c)) => c.clone(),
            _ => return Err(Error::Config("the [mdp] table needs exactly one of preset, path or inline".into())),
        };
        SyntheticMdp::new(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Ope,
    Opl,
}

impl ModeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeName::Ope => "ope",
            ModeName::Opl => "opl",
        }
    }
}

fn default_data_modes() -> Vec<DataMode> {
    vec![DataMode::Reuse]
}

fn default_modes() -> Vec<ModeName> {
    vec![ModeName::Ope]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_data_modes")]
    pub data_mode: Vec<DataMode>,
    #[serde(default = "default_modes")]
    pub mode: Vec<ModeName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySettings {
    /// Logging policy that generated the data.
    pub behavior: PolicySpec,
    /// Policy evaluated in `ope` cells.
    pub target: PolicySpec,
}

/// Network sizing: a fixed architecture, or one derived per `n` from the
/// smoothness parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub arch: Option<Architecture>,
    pub alpha: f64,
    pub p: f64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self { arch: None, alpha: 1.0, p: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    /// State-grid resolution of the oracle (continuous layouts).
    pub grid_resolution: usize,
    /// Fresh `mu` draws per seed for measuring Bellman residuals.
    pub mu_samples: usize,
    /// Occupancy horizons `0..=horizon` probed for the concentration estimate.
    pub horizon: usize,
    /// Extra random probe policies used when re-auditing after a violation.
    pub enlarged_probes: usize,
    pub enlarged_horizon: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            grid_resolution: DEFAULT_RESOLUTION,
            mu_samples: 2048,
            horizon: 50,
            enlarged_probes: 16,
            enlarged_horizon: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Targets {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self { epsilon: 0.1, delta: 0.05 }
    }
}

fn default_name() -> String {
    "sweep".into()
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads across cells.
    #[serde(default = "one")]
    pub jobs: usize,
    /// Write per-cell networks and traces under `out_dir/cells`.
    #[serde(default = "yes")]
    pub cell_artifacts: bool,
    pub mdp: MdpSource,
    pub sweep: SweepAxes,
    #[serde(default)]
    pub policies: PolicySettings,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub audit: AuditSettings,
    #[serde(default)]
    pub targets: Targets,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML file; a relative MDP path is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (&cfg.mdp.path, path.parent()) {
            if p.is_relative() {
                cfg.mdp.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.n.is_empty() || s.k.is_empty() || s.seeds.is_empty() || s.data_mode.is_empty() || s.mode.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if s.n.contains(&0) || s.k.contains(&0) {
            return Err(Error::Config("sample sizes and iteration counts must be positive".into()));
        }
        if s.seeds.iter().collect::<HashSet<_>>().len() != s.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.audit.mu_samples == 0 {
            return Err(Error::Config("audit needs at least one mu sample".into()));
        }
        if let Some(a) = self.network.arch {
            a.validate()?;
        }
        if !(self.targets.epsilon > 0.0) || !(self.targets.delta > 0.0 && self.targets.delta <= 1.0) {
            return Err(Error::Config("epsilon must be positive and delta in (0, 1]".into()));
        }
        self.train.validate()
    }

    pub fn cell_count(&self) -> usize {
        let s = &self.sweep;
        s.n.len() * s.k.len() * s.seeds.len() * s.data_mode.len() * s.mode.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mdp]
preset = "chain5"
[sweep]
n = [100]
k = [5]
seeds = [1, 2]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.jobs, 1);
        assert_eq!(cfg.sweep.mode, vec![ModeName::Ope]);
        assert_eq!(cfg.cell_count(), 2);
        assert!(cfg.network.p.is_infinite());
        assert_eq!(cfg.mdp.resolve().unwrap().gamma(), 0.9);
    }

    #[test]
    fn rejects_duplicate_seeds_and_empty_axes() {
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("[1, 2]", "[1, 1]")).is_err());
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("[100]", "[]")).is_err());
    }
}
