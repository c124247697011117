//! Scenario file format.
//!
//! ```json
//! {
//!   "source": { "A": { "diag": [2, 3] }, "Q": [[1, 0], [0, 1]] },
//!   "channel": { "gains": [1, 1] },
//!   "power": 12,
//!   "control": { "B": [[1], [0]], "C_cost": { "diag": [1, 1] }, "E_cost": [[1]] },
//!   "simulation": { "T": 10000, "burn_in": 1000, "trials": 4, "seed": 7 },
//!   "solver": { "tolerance": 1e-10, "max_iterations": 100000 }
//! }
//! ```
//!
//! The channel is given either by `gains` or by `H` with an optional `R`
//! (identity when omitted).

use ckf_core::control::ControlSystem;
use ckf_core::linalg::SolverConfig;
use ckf_core::models::{canonicalize_source, diagonalize_channel, CanonicalSource, ChannelModel, DiagonalChannel, Scenario};
use ckf_core::simulation::SimulationConfig;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Dense(Vec<Vec<f64>>),
    Diag {
        diag: Vec<f64>,
    },
}

impl MatrixSpec {
    pub fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>, CliError> {
        match self {
            MatrixSpec::Diag { diag } => {
                if diag.is_empty() {
                    return Err(CliError::Invalid(format!("{name}: empty diagonal")));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
            }
            MatrixSpec::Dense(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if r == 0 || c == 0 {
                    return Err(CliError::Invalid(format!("{name}: empty matrix")));
                }
                if let Some(i) = rows.iter().position(|row| row.len() != c) {
                    return Err(CliError::Invalid(format!(
                        "{name}: row {i} has {} entries, expected {c}",
                        rows[i].len()
                    )));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBlock {
    pub gains: Option<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Option<MatrixSpec>,
    #[serde(rename = "R")]
    pub r: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "C_cost")]
    pub c_cost: MatrixSpec,
    #[serde(rename = "E_cost")]
    pub e_cost: MatrixSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub divergence_trace_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub source: SourceBlock,
    pub channel: ChannelBlock,
    pub power: f64,
    pub control: Option<ControlBlock>,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub solver: SolverBlock,
}

/// A parsed scenario together with the raw bytes it came from.
pub struct Loaded {
    pub file: ScenarioFile,
    pub bytes: Vec<u8>,
}

pub fn load(path: &std::path::Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file = serde_json::from_slice(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(Loaded { file, bytes })
}

impl ScenarioFile {
    pub fn canonical_source(&self) -> Result<CanonicalSource, CliError> {
        let a = self.source.a.to_matrix("source.A")?;
        let q = self.source.q.to_matrix("source.Q")?;
        Ok(canonicalize_source(&a, &q)?)
    }

    pub fn channel(&self) -> Result<DiagonalChannel, CliError> {
        match (&self.channel.gains, &self.channel.h) {
            (Some(g), None) => {
                if self.channel.r.is_some() {
                    return Err(CliError::Invalid("channel: R cannot be combined with gains".into()));
                }
                Ok(DiagonalChannel::from_gains(g)?)
            }
            (None, Some(h)) => {
                let h = h.to_matrix("channel.H")?;
                let r = match &self.channel.r {
                    Some(r) => r.to_matrix("channel.R")?,
                    None => DMatrix::identity(h.nrows(), h.nrows()),
                };
                Ok(diagonalize_channel(&ChannelModel::new(h, r)?)?)
            }
            _ => Err(CliError::Invalid("channel: give exactly one of gains or H".into())),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let source = self.canonical_source()?.source;
        Ok(Scenario::new(source, self.channel()?, self.power)?)
    }

    pub fn control_system(&self) -> Result<Option<ControlSystem>, CliError> {
        let Some(c) = &self.control else {
            return Ok(None);
        };
        Ok(Some(ControlSystem::new(
            self.source.a.to_matrix("source.A")?,
            c.b.to_matrix("control.B")?,
            self.source.q.to_matrix("source.Q")?,
            c.c_cost.to_matrix("control.C_cost")?,
            c.e_cost.to_matrix("control.E_cost")?,
        )?))
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.solver.tolerance {
            cfg.tolerance = t;
        }
        if let Some(m) = self.solver.max_iterations {
            cfg.max_iterations = m;
        }
        if self.solver.divergence_trace_bound.is_some() {
            cfg.divergence_trace_bound = self.solver.divergence_trace_bound;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Simulation settings with command-line overrides applied.
    pub fn simulation(
        &self,
        horizon: Option<usize>,
        trials: Option<usize>,
        seed: Option<u64>,
    ) -> Result<SimulationConfig, CliError> {
        let s = &self.simulation;
        let mut cfg = SimulationConfig::new(
            horizon.or(s.horizon).unwrap_or(10_000),
            trials.or(s.trials).unwrap_or(1),
            seed.or(s.seed).unwrap_or(0),
        );
        // A burn-in from the file only applies to the file's horizon.
        if let (None, Some(b)) = (horizon, s.burn_in) {
            cfg.burn_in = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
