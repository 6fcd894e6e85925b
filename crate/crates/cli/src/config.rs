//! Run configuration: one instance block, one grids block, exactly one
//! experiment block.

use std::collections::BTreeMap;

use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub instance: InstanceConfig,
    #[serde(default)]
    pub grids: GridsConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub x0: Option<f64>,
    pub z0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridsConfig {
    pub t_horizon: f64,
    pub dt: f64,
    /// Window and step of the invariant-density table.
    pub z_window: [f64; 2],
    pub z_step: f64,
    /// Window of the assumption checks in x.
    pub x_window: [f64; 2],
    /// Window covered by occupation-measure cells.
    pub measure_window: [f64; 2],
    pub t_cells: usize,
    pub z_cells: usize,
    pub validation_step: f64,
}

impl Default for GridsConfig {
    fn default() -> Self {
        Self {
            t_horizon: 1.0,
            dt: 1e-3,
            z_window: [-8.0, 8.0],
            z_step: 1e-3,
            x_window: [-5.0, 5.0],
            measure_window: [-6.0, 6.0],
            t_cells: 10,
            z_cells: 60,
            validation_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Crude,
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Averaged flow plus the invariant product measure.
    Averaged,
    /// Tilted flow and kernel shifted by a constant tilt `theta sigma^2/2`.
    Shifted,
}

fn default_bandwidth() -> f64 {
    0.1
}

fn default_theta() -> f64 {
    1.0
}

fn default_alpha_step() -> f64 {
    0.05
}

fn default_lambda_step() -> f64 {
    1e-3
}

fn default_target() -> TargetKind {
    TargetKind::Averaged
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// Assumption validation; writes `report.json`.
    Validate {},
    /// One trajectory of the pair; writes `path.csv`, `measure.csv`,
    /// `density.csv`.
    Simulate { eps: f64 },
    /// Ergodic diagnostic over an eps sweep; writes `report.json`.
    Ergodic { eps_list: Vec<f64>, n: usize },
    /// Rate triple of a stored path/measure pair; writes `rate.json`.
    Rate {
        path_file: String,
        measure_file: String,
        #[serde(default = "default_bandwidth")]
        bandwidth: f64,
        #[serde(default)]
        beta: f64,
    },
    /// Both duality checks on a stored path/measure pair; writes
    /// `report.json`.
    Legendre {
        path_file: String,
        measure_file: String,
        #[serde(default = "default_bandwidth")]
        bandwidth: f64,
        #[serde(default = "default_lambda_step")]
        lambda_step: f64,
        #[serde(default = "default_alpha_step")]
        alpha_step: f64,
    },
    /// Ball-probability estimate; writes `estimates.csv` and `report.json`.
    Estimate {
        eps: f64,
        delta: f64,
        n: usize,
        method: MethodKind,
        #[serde(default)]
        beta: f64,
        #[serde(default = "default_bandwidth")]
        bandwidth: f64,
        #[serde(default = "default_target")]
        target: TargetKind,
        #[serde(default = "default_theta")]
        theta: f64,
    },
    /// Estimates across an eps sweep plus the scaling-slope fit; writes
    /// `estimates.csv` and `slope.json`.
    Slope {
        eps_list: Vec<f64>,
        delta: f64,
        n: usize,
        method: MethodKind,
        #[serde(default)]
        rate_ref: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "default_bandwidth")]
        bandwidth: f64,
        #[serde(default = "default_target")]
        target: TargetKind,
        #[serde(default = "default_theta")]
        theta: f64,
    },
    /// One constrained Hamiltonian solve; writes `report.json`.
    Hxy { y: f64, x: f64 },
}

impl ExperimentConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExperimentConfig::Validate {} => "validate",
            ExperimentConfig::Simulate { .. } => "simulate",
            ExperimentConfig::Ergodic { .. } => "ergodic",
            ExperimentConfig::Rate { .. } => "rate",
            ExperimentConfig::Legendre { .. } => "legendre",
            ExperimentConfig::Estimate { .. } => "estimate",
            ExperimentConfig::Slope { .. } => "slope",
            ExperimentConfig::Hxy { .. } => "hxy",
        }
    }
}
