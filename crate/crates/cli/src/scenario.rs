//! Scenario files: which network to run on and the experiment parameters.
//!
//! ```toml
//! schema_version = 1
//! experiment = "race"          # optional; must match the subcommand if given
//! seed = 0                     # seed of the synthesized benchmark
//! # network = "net.toml"       # load a network instead (path relative to this file)
//!
//! [benchmark]                  # parameters of the synthesized benchmark
//! horizon = 10
//! target_rho = 0.9
//!
//! [solver]                     # overridden by --eps-max / --sigma-max
//! eps_max = 1e-8
//! sigma_max = 500
//!
//! [race]
//! memory = 15
//! detuned = true
//! ```
//!
//! Every section is optional and every field has a default. Unknown keys are
//! errors, reported with the file path and line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hiercoord::benchmark::{four_subsystem_benchmark, BenchmarkOptions};
use hiercoord::config::{check_schema_version, parse_toml, NetworkConfig};
use serde::Deserialize;

/// The four experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BetaSweep,
    MemorySweep,
    Race,
    ClosedLoop,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::BetaSweep => "beta-sweep",
            Self::MemorySweep => "memory-sweep",
            Self::Race => "race",
            Self::ClosedLoop => "closed-loop",
        }
    }
}

/// Parameters of the synthesized four-subsystem benchmark.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub horizon: usize,
    pub target_rho: f64,
    pub q_weight: f64,
    pub r_weight: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let d = BenchmarkOptions::default();
        Self {
            horizon: d.horizon,
            target_rho: d.target_rho,
            q_weight: d.q_weight,
            r_weight: d.r_weight,
        }
    }
}

/// Stopping parameters. Unset values take the experiment's defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub eps_max: Option<f64>,
    pub sigma_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSweepSection {
    pub betas: Vec<f64>,
}

impl Default for BetaSweepSection {
    fn default() -> Self {
        Self {
            betas: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySweepSection {
    pub memories: Vec<usize>,
    pub regularization: f64,
}

impl Default for MemorySweepSection {
    fn default() -> Self {
        Self {
            memories: vec![1, 3, 5, 10, 15],
            regularization: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceSection {
    /// Anderson memory.
    pub memory: usize,
    /// Filter design weights `Q = filter_q I`, `R = filter_r I`.
    pub filter_q: f64,
    pub filter_r: f64,
    /// Scale the output weight of `detune_subsystem` after the filter design.
    pub detuned: bool,
    pub detune_factor: f64,
    /// Zero-based subsystem index.
    pub detune_subsystem: usize,
}

impl Default for RaceSection {
    fn default() -> Self {
        Self {
            memory: 15,
            filter_q: 1.0,
            filter_r: 1e-6,
            detuned: false,
            detune_factor: 10.0,
            detune_subsystem: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopSection {
    /// Control periods to simulate.
    pub steps: usize,
    /// Period at which the set-points step from zero to `step_scale` times
    /// the configured targets.
    pub step_at: usize,
    pub step_scale: f64,
    /// Input-rate weight `rate_weight I`; defaults to the controller's `R`.
    pub rate_weight: Option<f64>,
    /// Gradient step of the joint iteration.
    pub learning_rate: f64,
    /// Start from the configured initial states instead of the operating point.
    pub use_initial_state: bool,
}

impl Default for ClosedLoopSection {
    fn default() -> Self {
        Self {
            steps: 80,
            step_at: 20,
            step_scale: 1.0,
            rate_weight: None,
            learning_rate: 0.1,
            use_initial_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(default)]
    experiment: Option<Experiment>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    network: Option<PathBuf>,
    #[serde(default)]
    benchmark: BenchmarkSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    beta_sweep: BetaSweepSection,
    #[serde(default)]
    memory_sweep: MemorySweepSection,
    #[serde(default)]
    race: RaceSection,
    #[serde(default)]
    closed_loop: ClosedLoopSection,
}

/// A parsed scenario with the network reference resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scenario {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    /// Network file; the benchmark is synthesized when absent.
    pub network: Option<PathBuf>,
    pub benchmark: BenchmarkSection,
    pub solver: SolverSection,
    pub beta_sweep: BetaSweepSection,
    pub memory_sweep: MemorySweepSection,
    pub race: RaceSection,
    pub closed_loop: ClosedLoopSection,
}

impl Scenario {
    /// Parses a scenario; `label` prefixes error messages and relative
    /// network paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, label: &str, base_dir: &Path) -> Result<Self> {
        let file: ScenarioFile = parse_toml(text, label)?;
        check_schema_version(file.schema_version, text, label)?;
        let network = file.network.map(|p| if p.is_absolute() { p } else { base_dir.join(p) });
        if let Some(path) = &network {
            if !path.exists() {
                let line = text
                    .lines()
                    .position(|l| l.trim_start().starts_with("network"))
                    .map_or(1, |i| i + 1);
                bail!("{label}:{line}: network file {} does not exist", path.display());
            }
        }
        Ok(Self {
            experiment: file.experiment,
            seed: file.seed,
            network,
            benchmark: file.benchmark,
            solver: file.solver,
            beta_sweep: file.beta_sweep,
            memory_sweep: file.memory_sweep,
            race: file.race,
            closed_loop: file.closed_loop,
        })
    }

    /// Reads and parses a scenario file, validating the referenced network.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let scenario = Self::from_toml_str(&text, &path.display().to_string(), base)?;
        scenario.network_config()?.build()?;
        Ok(scenario)
    }

    /// Fails if the scenario names a different experiment.
    pub fn check_experiment(&self, experiment: Experiment) -> Result<()> {
        match self.experiment {
            Some(e) if e != experiment => bail!(
                "scenario is for `{}` but `{}` was requested",
                e.name(),
                experiment.name()
            ),
            _ => Ok(()),
        }
    }

    /// The network to run on, loaded or synthesized from the seed.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        match &self.network {
            Some(path) => Ok(NetworkConfig::load(path)?),
            None => {
                let bench = four_subsystem_benchmark(&BenchmarkOptions {
                    seed: self.seed,
                    horizon: self.benchmark.horizon,
                    target_rho: self.benchmark.target_rho,
                    q_weight: self.benchmark.q_weight,
                    r_weight: self.benchmark.r_weight,
                })?;
                Ok(NetworkConfig::from_benchmark(&bench))
            }
        }
    }

    pub fn eps_max(&self, default: f64) -> f64 {
        self.solver.eps_max.unwrap_or(default)
    }

    pub fn sigma_max(&self, default: usize) -> usize {
        self.solver.sigma_max.unwrap_or(default)
    }
}
