//! TOML description of a network of linear subsystems.
//!
//! ```toml
//! schema_version = 1
//! horizon = 10
//!
//! [[subsystems]]
//! name = "S1"
//! a = { rows = 1, cols = 1, data = [0.5] }
//! b = { rows = 1, cols = 1, data = [1.0] }
//! c_y = { rows = 1, cols = 1, data = [1.0] }
//! x0 = [0.0]
//! controller = { q = { rows = 1, cols = 1, data = [1.0] }, r = { rows = 1, cols = 1, data = [0.1] } }
//!
//! [[edges]]
//! source = 0
//! target = 1
//! dim = 1
//! ```
//!
//! Matrices are row-major. Omitted matrices are zero with the shape implied by
//! the topology; a subsystem is controlled exactly when `b` has columns.
//! Floats are written in shortest round-trip form, so parsing a serialized
//! configuration reproduces it exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmark::Benchmark;
use crate::error::{Error, Result};
use crate::network::{EdgeSpec, NetworkTopology};
use crate::subsystem::{LinearSubsystem, LocalCost, LocalSubsystem, StateSpaceModel, Tracking};

pub const SCHEMA_VERSION: u32 = 1;

/// Dense matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixConfig {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Config(format!(
                "{what}: {} x {} matrix needs {} entries, got {}",
                self.rows,
                self.cols,
                self.rows * self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Weights of the local unconstrained MPC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub q: MatrixConfig,
    pub r: MatrixConfig,
}

/// Local cost terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking_weight: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub a: MatrixConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_v: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_y: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_u: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_v: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub schema_version: u32,
    pub horizon: usize,
    pub subsystems: Vec<SubsystemConfig>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

/// A network built from its configuration.
#[derive(Debug, Clone)]
pub struct BuiltNetwork {
    pub topology: NetworkTopology,
    pub models: Vec<StateSpaceModel>,
    pub subsystems: Vec<LocalSubsystem>,
    pub states: Vec<DVector<f64>>,
    pub names: Vec<String>,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses TOML into `T`, reporting errors as `label:line: message`.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, label: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        Error::Config(format!("{label}:{line}: {}", e.message()))
    })
}

/// Checks the `schema_version` key, reporting the line it is on.
pub fn check_schema_version(version: u32, text: &str, label: &str) -> Result<()> {
    if version == SCHEMA_VERSION {
        return Ok(());
    }
    let line = text
        .lines()
        .position(|l| l.trim_start().starts_with("schema_version"))
        .map_or(1, |i| i + 1);
    Err(Error::Config(format!(
        "{label}:{line}: unsupported schema_version {version} (expected {SCHEMA_VERSION})"
    )))
}

impl NetworkConfig {
    pub fn from_toml_str(text: &str, label: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, label)?;
        check_schema_version(cfg.schema_version, text, label)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates dimensions and builds topology, models, subsystems and states.
    pub fn build(&self) -> Result<BuiltNetwork> {
        let n = self.subsystems.len();
        let nx: Vec<usize> = self.subsystems.iter().map(|s| s.a.rows).collect();
        let controlled: Vec<usize> = self
            .subsystems
            .iter()
            .enumerate()
            .filter(|(_, s)| s.b.as_ref().is_some_and(|b| b.cols > 0))
            .map(|(i, _)| i)
            .collect();
        let topology = NetworkTopology::new(n, self.edges.clone(), &controlled, self.horizon)?;

        let mut models = Vec::with_capacity(n);
        let mut subsystems = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        let mut names = Vec::with_capacity(n);
        for (s, cfg) in self.subsystems.iter().enumerate() {
            let name = cfg.name.clone().unwrap_or_else(|| format!("S{}", s + 1));
            let what = |m: &str| format!("subsystem {name}: {m}");
            let n_s = nx[s];
            let din = topology.incoming_step_dim(s);
            let dout = topology.outgoing_step_dim(s);
            let get = |m: &Option<MatrixConfig>, key: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
                m.as_ref()
                    .map_or_else(|| Ok(DMatrix::zeros(rows, cols)), |m| m.to_matrix(&what(key)))
            };
            let a = cfg.a.to_matrix(&what("a"))?;
            let b = get(&cfg.b, "b", n_s, 0)?;
            let nu = b.ncols();
            let c_y = get(&cfg.c_y, "c_y", 0, n_s)?;
            let mut model = StateSpaceModel::new(
                a,
                b,
                get(&cfg.e, "e", n_s, din)?,
                get(&cfg.c_v, "c_v", dout, n_s)?,
                c_y,
            );
            model = model.with_feedthrough(get(&cfg.d_u, "d_u", dout, nu)?, get(&cfg.d_v, "d_v", dout, din)?);
            let mut sub = LinearSubsystem::new(s, model.clone(), &topology)
                .map_err(|e| Error::Config(format!("{}: {e}", what("model"))))?;
            if let Some(ctrl) = &cfg.controller {
                sub = sub.with_mpc(&ctrl.q.to_matrix(&what("controller.q"))?, &ctrl.r.to_matrix(&what("controller.r"))?)?;
            }
            if let Some(cost) = &cfg.cost {
                sub = sub.with_cost(cost.build(&what("cost"))?)?;
            }
            let x0 = match &cfg.x0 {
                Some(x) if x.len() != n_s => {
                    return Err(Error::Config(format!("{}: expected {n_s} entries, got {}", what("x0"), x.len())))
                }
                Some(x) => DVector::from_vec(x.clone()),
                None => DVector::zeros(n_s),
            };
            models.push(model);
            subsystems.push(sub.into());
            states.push(x0);
            names.push(name);
        }
        Ok(BuiltNetwork {
            topology,
            models,
            subsystems,
            states,
            names,
        })
    }

    /// Configuration reproducing a benchmark network.
    pub fn from_benchmark(bench: &Benchmark) -> Self {
        let subsystems = bench
            .models
            .iter()
            .enumerate()
            .map(|(s, m)| {
                let controlled = m.input_dim() > 0;
                let opt = |m: &DMatrix<f64>| (!m.is_empty()).then(|| MatrixConfig::from_matrix(m));
                SubsystemConfig {
                    name: Some(format!("S{}", s + 1)),
                    a: MatrixConfig::from_matrix(&m.a),
                    b: opt(&m.b),
                    e: opt(&m.e),
                    c_v: opt(&m.c_v),
                    c_y: opt(&m.c_y),
                    d_u: None,
                    d_v: None,
                    x0: Some(bench.x0[s].iter().copied().collect()),
                    controller: controlled.then(|| ControllerConfig {
                        q: MatrixConfig::from_matrix(&bench.output_weights[s]),
                        r: MatrixConfig::from_matrix(&bench.input_weights[s]),
                    }),
                    cost: controlled.then(|| CostConfig::from_cost(&bench.cost(s))),
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            horizon: bench.topology.horizon(),
            subsystems,
            edges: bench.topology.edges().to_vec(),
        }
    }
}

impl CostConfig {
    fn build(&self, what: &str) -> Result<LocalCost> {
        let tracking = match (&self.tracking_weight, &self.target) {
            (Some(w), Some(t)) => Some(Tracking {
                weight: w.to_matrix(&format!("{what}.tracking_weight"))?,
                target: DVector::from_vec(t.clone()),
            }),
            (Some(w), None) => Some(Tracking {
                weight: w.to_matrix(&format!("{what}.tracking_weight"))?,
                target: DVector::zeros(w.rows),
            }),
            (None, Some(_)) => {
                return Err(Error::Config(format!("{what}: target given without tracking_weight")))
            }
            (None, None) => None,
        };
        Ok(LocalCost {
            tracking,
            effort: self
                .effort
                .as_ref()
                .map(|m| m.to_matrix(&format!("{what}.effort")))
                .transpose()?,
            coupling_weight: self.coupling_weight.unwrap_or(0.0),
            ..LocalCost::default()
        })
    }

    fn from_cost(cost: &LocalCost) -> Self {
        Self {
            tracking_weight: cost.tracking.as_ref().map(|t| MatrixConfig::from_matrix(&t.weight)),
            target: cost.tracking.as_ref().map(|t| t.target.iter().copied().collect()),
            effort: cost.effort.as_ref().map(MatrixConfig::from_matrix),
            coupling_weight: (cost.coupling_weight != 0.0).then_some(cost.coupling_weight),
        }
    }
}
