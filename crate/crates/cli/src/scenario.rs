//! Scenario file schema and conversion into core types.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use passlab_core::abstraction::AbstractionParams;
use passlab_core::closedloop::SignalGenerator;
use passlab_core::degradation::FreeParams;
use passlab_core::systems::{LinearSystem, QuadraticStorage, StorageRegularity};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub plant: SystemSpec,
    pub controller: SystemSpec,
    pub storage: StorageSpec,
    pub indices: IndicesSpec,
    pub abstraction: AbstractionSpec,
    #[serde(default)]
    pub free_params: FreeParamsSpec,
    pub regularity: RegularitySpec,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub delta_iss: DeltaIssSpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Either explicit state-space matrices or a named builtin model.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub builtin: Option<String>,
    /// Drag coefficient of the builtin velocity plant.
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub p1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicesSpec {
    pub nu1: f64,
    pub rho1: f64,
    pub nu2: f64,
    pub rho2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSpec {
    pub tau: f64,
    pub mu: f64,
    pub eta: f64,
    pub epsilon: f64,
    /// Per-dimension state truncation box for transition-system builds.
    #[serde(default)]
    pub state_box: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub input_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeParamsSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub ell1: f64,
    pub ell2: f64,
}

impl Default for FreeParamsSpec {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda5: 1.0,
            ell1: 1.0,
            ell2: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySpec {
    pub l: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSpec {
    /// Reference rate gains; when absent they are estimated by the
    /// frequency sweep with the configured safety factor.
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DeltaIssMode {
    #[default]
    Lyapunov,
    Tangent,
    Explicit,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DeltaIssSpec {
    pub mode: DeltaIssMode,
    pub c: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSpec {
    /// Detectability window length.
    pub n0: usize,
    /// Bound on the reference-input norm per step.
    pub b1: f64,
    /// Bound on the initial aggregate state norm; defaults to the norm of
    /// the simulation initial state.
    pub b2: Option<f64>,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            n0: 5,
            b1: 0.0,
            b2: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Semidefiniteness tolerance for all certificate verdicts.
    pub tol_psd: f64,
    /// Multiplicative inflation of measured gain peaks.
    pub gain_safety: f64,
    /// Largest admissible dissipation residual along simulated traces.
    pub residual_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_psd: 1e-9,
            gain_safety: 1.01,
            residual_tol: 1e-7,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub x1_initial: Vec<f64>,
    /// Controller initial state as lattice indices (multiples of eta).
    pub controller_initial_lattice: Vec<i64>,
    pub w1: SignalSpec,
    pub w2: SignalSpec,
    pub horizon: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant { value: Vec<f64> },
    Samples { values: Vec<Vec<f64>> },
}

impl SignalSpec {
    pub fn build(&self) -> SignalGenerator {
        match self {
            SignalSpec::Zero => SignalGenerator::Zero,
            SignalSpec::Constant { value } => {
                SignalGenerator::Constant(DVector::from_vec(value.clone()))
            }
            SignalSpec::Samples { values } => SignalGenerator::Samples(
                values.iter().map(|v| DVector::from_vec(v.clone())).collect(),
            ),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Input(format!("{what}: matrix has no rows")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Input(format!("{what}: ragged or empty matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn build(&self, what: &str) -> Result<LinearSystem, CliError> {
        if let Some(name) = &self.builtin {
            if self.a.is_some() || self.b.is_some() || self.c.is_some() || self.d.is_some() {
                return Err(CliError::Input(format!(
                    "{what}: give either a builtin name or matrices, not both"
                )));
            }
            return match name.as_str() {
                "cruise_control" => {
                    let c0 = self.c0.unwrap_or(0.01);
                    if !c0.is_finite() {
                        return Err(CliError::Input(format!("{what}: c0 must be finite")));
                    }
                    LinearSystem::from_rows(1, 1, &[-c0], &[1.0], &[1.0], &[0.0])
                        .map_err(CliError::Core)
                }
                other => Err(CliError::Input(format!(
                    "{what}: unknown builtin model \"{other}\""
                ))),
            };
        }
        if self.c0.is_some() {
            return Err(CliError::Input(format!(
                "{what}: c0 only applies to the cruise_control builtin"
            )));
        }
        let (a, b, c, d) = match (&self.a, &self.b, &self.c, &self.d) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => {
                return Err(CliError::Input(format!(
                    "{what}: need all of a, b, c, d (or a builtin name)"
                )))
            }
        };
        LinearSystem::new(
            matrix_from_rows(a, what)?,
            matrix_from_rows(b, what)?,
            matrix_from_rows(c, what)?,
            matrix_from_rows(d, what)?,
        )
        .map_err(CliError::Core)
    }
}

/// Scenario with everything converted and validated, ready for commands.
pub struct Context {
    pub name: String,
    pub plant: LinearSystem,
    pub controller: LinearSystem,
    pub v1: QuadraticStorage,
    pub v2: QuadraticStorage,
    pub indices: IndicesSpec,
    pub params: AbstractionParams,
    pub free_params: FreeParams,
    pub regularity: StorageRegularity,
    pub gains: GainsSpec,
    pub delta_iss: DeltaIssSpec,
    pub bound: BoundSpec,
    pub tolerances: Tolerances,
    pub simulation: SimulationSpec,
    pub state_box: Option<Vec<(f64, f64)>>,
    pub input_box: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Input(format!("scenario {} is invalid: {e}", path.display()))
        })
    }

    pub fn into_context(self, path: &Path, seed_flag: Option<u64>) -> Result<Context, CliError> {
        let plant = self.plant.build("plant")?;
        let controller = self.controller.build("controller")?;
        let v1 = QuadraticStorage::new(matrix_from_rows(&self.storage.p1, "storage.p1")?)
            .map_err(CliError::Core)?;
        let v2 = QuadraticStorage::new(matrix_from_rows(&self.storage.p2, "storage.p2")?)
            .map_err(CliError::Core)?;
        if v1.dim() != plant.state_dim() {
            return Err(CliError::Input(
                "storage.p1 dimension does not match the plant state".into(),
            ));
        }
        if v2.dim() != controller.state_dim() {
            return Err(CliError::Input(
                "storage.p2 dimension does not match the controller state".into(),
            ));
        }
        if plant.io_dim() != controller.io_dim() {
            return Err(CliError::Input(
                "plant and controller must have the same signal width".into(),
            ));
        }
        let params = AbstractionParams {
            tau: self.abstraction.tau,
            mu: self.abstraction.mu,
            eta: self.abstraction.eta,
            epsilon: self.abstraction.epsilon,
        };
        let fp = FreeParams {
            lambda1: self.free_params.lambda1,
            lambda2: self.free_params.lambda2,
            lambda3: self.free_params.lambda3,
            lambda4: self.free_params.lambda4,
            lambda5: self.free_params.lambda5,
            ell1: self.free_params.ell1,
            ell2: self.free_params.ell2,
        };
        fp.validate().map_err(CliError::Core)?;
        let regularity =
            StorageRegularity::new(self.regularity.l, self.regularity.theta, params.epsilon)
                .map_err(CliError::Core)?;
        if self.simulation.x1_initial.len() != plant.state_dim() {
            return Err(CliError::Input(
                "simulation.x1_initial does not match the plant state dimension".into(),
            ));
        }
        if self.simulation.controller_initial_lattice.len() != controller.state_dim() {
            return Err(CliError::Input(
                "simulation.controller_initial_lattice does not match the controller state"
                    .into(),
            ));
        }
        let boxes = |b: &Option<Vec<[f64; 2]>>, what: &str, dim: usize| match b {
            None => Ok(None),
            Some(v) => {
                if v.len() != dim {
                    return Err(CliError::Input(format!(
                        "{what} must have one [lo, hi] entry per dimension ({dim})"
                    )));
                }
                Ok(Some(v.iter().map(|&[lo, hi]| (lo, hi)).collect()))
            }
        };
        let state_box = boxes(
            &self.abstraction.state_box,
            "abstraction.state_box",
            controller.state_dim(),
        )?;
        let input_box = boxes(
            &self.abstraction.input_box,
            "abstraction.input_box",
            controller.io_dim(),
        )?;
        let name = self
            .name
            .unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "scenario".into())
            });
        Ok(Context {
            name,
            plant,
            controller,
            v1,
            v2,
            indices: self.indices,
            params,
            free_params: fp,
            regularity,
            gains: self.gains,
            delta_iss: self.delta_iss,
            bound: self.bound,
            tolerances: self.tolerances,
            simulation: self.simulation,
            state_box,
            input_box,
            seed: seed_flag.or(self.seed).unwrap_or(42),
        })
    }
}

impl Context {
    /// Aggregate initial state of a simulation run, plant then controller.
    pub fn initial_aggregate_state(&self) -> DVector<f64> {
        let n1 = self.plant.state_dim();
        let n2 = self.controller.state_dim();
        let mut x = DVector::zeros(n1 + n2);
        for (i, v) in self.simulation.x1_initial.iter().enumerate() {
            x[i] = *v;
        }
        for (i, k) in self.simulation.controller_initial_lattice.iter().enumerate() {
            x[n1 + i] = *k as f64 * self.params.eta;
        }
        x
    }

    pub fn symbolic_controller(
        &self,
    ) -> Result<Arc<passlab_core::abstraction::SymbolicModel>, CliError> {
        passlab_core::abstraction::SymbolicModel::new(
            Arc::new(self.controller.clone()),
            self.params,
        )
        .map(Arc::new)
        .map_err(CliError::Core)
    }
}
