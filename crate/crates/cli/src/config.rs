//! Run configuration: one TOML table per subcommand, `-s section.key=value`
//! overrides, and the resolved form echoed next to every output.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use restart_core::experiments::{DecompositionSetup, RecordKey, SyntheticSpec, WindowSampler};
use restart_core::samplers::{Churn, SamplerSpec};
use restart_core::schedule::{edm_time_grid, embed_restart_intervals, EDM_RHO};
use restart_core::score::{PerturbationMode, TrainingConfig};
use restart_core::{RestartConfig, RestartLevel, SolverKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Dataset,
    Train,
    Sample,
    Decompose,
    Sweep,
    Pareto,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Dataset => "dataset",
            CommandName::Train => "train",
            CommandName::Sample => "sample",
            CommandName::Decompose => "decompose",
            CommandName::Sweep => "sweep",
            CommandName::Pareto => "pareto",
        }
    }
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pareto: Option<ParetoSection>,
    #[serde(default, skip_serializing_if = "UnsafeOverride::is_empty")]
    pub unsafe_override: UnsafeOverride,
}

/// Fixed constants that may only be changed deliberately.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsafeOverride {
    /// Exponent of the EDM time discretisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl UnsafeOverride {
    pub fn is_empty(&self) -> bool {
        self.rho.is_none()
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(EDM_RHO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub width: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            dataset: PathBuf::from("dataset.csv"),
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            t_min: t.t_min,
            t_max: t.t_max,
            width: t.width,
            log_every: t.log_every,
        }
    }
}

impl TrainSection {
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            t_min: self.t_min,
            t_max: self.t_max,
            width: self.width,
            log_every: self.log_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Exact score of `N(0, std² I)` in `dim` dimensions.
    Gaussian,
    /// Exact score of the empirical dataset.
    Empirical,
    /// Empirical score plus a perturbation of size `epsilon`.
    Perturbed,
    /// A trained network file.
    Mlp,
}

/// Where the score field comes from. Fields that do not apply to `source`
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    /// Defaults to `gaussian` for `sample` and `empirical` elsewhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<ScoreSource>,
    pub dim: usize,
    pub std: f64,
    pub epsilon: f64,
    pub mode: PerturbationMode,
    pub perturbation_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net: Option<PathBuf>,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            source: None,
            dim: 2,
            std: 1.0,
            epsilon: 0.0,
            mode: PerturbationMode::FixedDirection,
            perturbation_seed: 0,
            net: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ode,
    Sde,
    ImprovedSde,
    Restart,
}

/// A full-range sampler on an EDM grid of `steps` points from `t_max` to
/// `t_min`, followed by a final step to `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub steps: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// ODE solver, and the main-leg solver of Restart.
    pub solver: SolverKind,
    pub restart_solver: SolverKind,
    pub noise_mult: f64,
    pub s_churn: f64,
    pub s_min: f64,
    /// Upper end of the churn range; unbounded when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    pub s_noise: f64,
    pub levels: Vec<RestartLevel>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let churn = Churn::new(0.0);
        Self {
            kind: SamplerKind::Restart,
            steps: 18,
            t_min: 0.002,
            t_max: 80.0,
            solver: SolverKind::Heun,
            restart_solver: SolverKind::Heun,
            noise_mult: 1.0,
            s_churn: 0.0,
            s_min: churn.s_min,
            s_max: None,
            s_noise: churn.s_noise,
            levels: vec![RestartLevel::new(3, 10, 0.06, 0.30)],
        }
    }
}

impl SamplerSection {
    pub fn to_spec(&self, rho: f64) -> Result<SamplerSpec> {
        let grid = || -> Result<_> { Ok(edm_time_grid(self.t_min, self.t_max, self.steps, rho)?.with_terminal_zero()?) };
        let spec = match self.kind {
            SamplerKind::Ode => SamplerSpec::Ode {
                grid: grid()?,
                solver: self.solver,
            },
            SamplerKind::Sde => SamplerSpec::Sde {
                grid: grid()?,
                noise_mult: self.noise_mult,
            },
            SamplerKind::ImprovedSde => SamplerSpec::ImprovedSde {
                grid: grid()?,
                churn: Churn {
                    s_churn: self.s_churn,
                    s_min: self.s_min,
                    s_max: self.s_max.unwrap_or(Churn::new(0.0).s_max),
                    s_noise: self.s_noise,
                },
            },
            SamplerKind::Restart => {
                let mut config = RestartConfig::new(self.steps, self.t_min, self.t_max, self.levels.clone());
                config.rho = rho;
                let main = config.main_grid()?;
                SamplerSpec::Restart {
                    config: embed_restart_intervals(&main, &config)?,
                    main_solver: self.solver,
                    restart_solver: self.restart_solver,
                    churn: None,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    /// Required for the `empirical` and `perturbed` score sources.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub score: ScoreSection,
    pub sampler: SamplerSection,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 1000,
            dataset: None,
            score: ScoreSection::default(),
            sampler: SamplerSection::default(),
        }
    }
}

/// One sampler confined to the decomposition window. "Steps" count grid
/// intervals; `n_restart` counts the points of each backward Restart leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub kind: SamplerKind,
    pub steps: usize,
    pub solver: SolverKind,
    pub noise_mult: f64,
    pub s_churn: f64,
    pub n_restart: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_main: Option<usize>,
    pub restart_solver: SolverKind,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Restart,
            steps: 10,
            solver: SolverKind::Heun,
            noise_mult: 1.0,
            s_churn: 0.0,
            n_restart: 3,
            k: 4,
            n_main: None,
            restart_solver: SolverKind::Heun,
        }
    }
}

impl WindowSection {
    pub fn sampler(&self) -> WindowSampler {
        match self.kind {
            SamplerKind::Ode => WindowSampler::Ode {
                steps: self.steps,
                solver: self.solver,
            },
            SamplerKind::Sde => WindowSampler::Sde {
                steps: self.steps,
                noise_mult: self.noise_mult,
            },
            SamplerKind::ImprovedSde => WindowSampler::ImprovedSde {
                steps: self.steps,
                s_churn: self.s_churn,
            },
            SamplerKind::Restart => WindowSampler::Restart {
                n_restart: self.n_restart,
                k: self.k,
                n_main: self.n_main,
                main_solver: self.solver,
                restart_solver: self.restart_solver,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeSection {
    pub dataset: PathBuf,
    pub score: ScoreSection,
    pub window: WindowSection,
    pub setup: DecompositionSetup,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.csv"),
            score: ScoreSection::default(),
            window: WindowSection::default(),
            setup: DecompositionSetup::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPreset {
    /// The complete hyperparameter grid (113 cells).
    Full,
    /// Three cells per sampler, aligned on window NFE 12, 20 and 36.
    Smoke,
    /// Cells from the list fields below.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub dataset: PathBuf,
    pub score: ScoreSection,
    pub preset: SweepPreset,
    pub ode_steps: Vec<usize>,
    pub sde_steps: Vec<usize>,
    pub noise_mults: Vec<f64>,
    pub restart_n: Vec<usize>,
    pub restart_k: Vec<usize>,
    /// `(steps, s_churn)` pairs of churned-SDE cells.
    pub churn: Vec<(usize, f64)>,
    pub repetitions: usize,
    /// Record wall-clock time per cell (makes outputs non-reproducible).
    pub timing: bool,
    pub setup: DecompositionSetup,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.csv"),
            score: ScoreSection::default(),
            preset: SweepPreset::Smoke,
            ode_steps: Vec::new(),
            sde_steps: Vec::new(),
            noise_mults: Vec::new(),
            restart_n: Vec::new(),
            restart_k: Vec::new(),
            churn: Vec::new(),
            repetitions: restart_core::experiments::DEFAULT_REPETITIONS,
            timing: false,
            setup: DecompositionSetup::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSection {
    pub input: PathBuf,
    pub x: RecordKey,
    pub y: RecordKey,
    /// One frontier per sampler instead of one over all records.
    pub per_sampler: bool,
}

impl Default for ParetoSection {
    fn default() -> Self {
        Self {
            input: PathBuf::from("sweep.csv"),
            x: RecordKey::Nfe,
            y: RecordKey::TotalW1,
            per_sampler: true,
        }
    }
}

/// Parse `a.b.c=value` and store it into `table`. The value is read as a
/// TOML value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override `{assignment}` has an empty key segment");
    }
    if path[0] == "unsafe_override" {
        bail!("`{key}` can only be set with --unsafe-override");
    }
    set_path(table, &path, parse_value(raw.trim()))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for (depth, seg) in parents.iter().enumerate() {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{}` is not a table", path[..=depth].join(".")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse()
        .with_context(|| format!("parsing config {}", path.display()))
}

pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    Ok(RunConfig::deserialize(table)?)
}

/// Make a relative path absolute so the resolved config works from any
/// working directory.
pub fn absolute(path: &mut PathBuf) -> Result<()> {
    if path.is_relative() {
        *path = std::path::absolute(&*path).with_context(|| format!("resolving {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values_are_typed() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "sample.n=50").unwrap();
        apply_override(&mut t, "sample.score.source=mlp").unwrap();
        apply_override(&mut t, "sample.score.net=/tmp/a b.bin").unwrap();
        apply_override(&mut t, "sweep.restart_k=[2, 4]").unwrap();
        let cfg = from_table(t).unwrap();
        let s = cfg.sample.unwrap();
        assert_eq!(s.n, 50);
        assert_eq!(s.score.source, Some(ScoreSource::Mlp));
        assert_eq!(s.score.net.unwrap(), PathBuf::from("/tmp/a b.bin"));
        assert_eq!(cfg.sweep.unwrap().restart_k, vec![2, 4]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "sample.steps=3").unwrap();
        assert!(from_table(t).is_err());
        let mut t = toml::Table::new();
        apply_override(&mut t, "bogus.x=1").unwrap();
        assert!(from_table(t).is_err());
    }

    #[test]
    fn unsafe_keys_need_the_explicit_flag() {
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "unsafe_override.rho=3").is_err());
        assert!(apply_override(&mut t, "noequals").is_err());
    }

    #[test]
    fn default_sampler_is_the_75_nfe_restart_config() {
        let spec = SamplerSection::default().to_spec(EDM_RHO).unwrap();
        assert_eq!(spec.expected_nfe().unwrap(), 75);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig {
            command: Some(CommandName::Sweep),
            seed: 11,
            sweep: Some(SweepSection {
                churn: vec![(40, 2.5)],
                ..SweepSection::default()
            }),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back = from_table(text.parse().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }
}
