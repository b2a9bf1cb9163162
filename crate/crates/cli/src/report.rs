use std::collections::BTreeMap;

use serde::Serialize;
use thermopt_core::assembly::{norms, w1inf_norm, JouleForm};
use thermopt_core::control::{ObjectiveValue, OptimizeResult, OptimizerRecord, OptimizerStatus};
use thermopt_core::materials::ConductivityModel;
use thermopt_core::mesh::{BoundaryTag, Mesh};
use thermopt_core::state::{subcritical_margin, IterateRecord, StateSolution};
use thermopt_core::transform::{BoundCertificate, CertificateCheck, EnergyDiagnostic, IdentityCheck};
use thermopt_core::verify::{ConvergenceTable, SuiteReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct MeshSummary {
    pub dim: usize,
    pub vertices: usize,
    pub cells: usize,
    pub facets: usize,
    pub robin_facets: usize,
    pub measure: f64,
    pub dirichlet_measure: f64,
    pub robin_measure: f64,
    pub h: f64,
}

impl MeshSummary {
    pub fn of(mesh: &Mesh) -> Self {
        Self {
            dim: mesh.dim(),
            vertices: mesh.num_vertices(),
            cells: mesh.num_cells(),
            facets: mesh.num_facets(),
            robin_facets: mesh.robin_facets().len(),
            measure: mesh.measure(),
            dirichlet_measure: mesh.boundary_measure(BoundaryTag::DirichletTemperature),
            robin_measure: mesh.boundary_measure(BoundaryTag::RobinTemperature),
            h: mesh.max_cell_diameter(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StateSummary {
    pub iterations: usize,
    pub residual_u: f64,
    pub residual_phi: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub max_phi: f64,
    pub min_phi: f64,
    /// u_* − max u; absent for a conductivity that never vanishes.
    pub subcritical_margin: Option<f64>,
    pub truncation_level: Option<f64>,
    pub u_h1_norm: f64,
    /// max(‖φ‖_∞, largest cell gradient of φ).
    pub phi_w1inf_proxy: f64,
    pub sigma_clamp_count: usize,
    pub joule_form: JouleForm,
    pub history: Vec<IterateRecord>,
}

impl StateSummary {
    pub fn of(sol: &StateSolution, mesh: &Mesh, model: &ConductivityModel) -> Self {
        let margin = subcritical_margin(sol, model);
        Self {
            iterations: sol.iterations,
            residual_u: sol.residual_u,
            residual_phi: sol.residual_phi,
            max_u: sol.u.max(),
            min_u: sol.u.min(),
            max_phi: sol.phi.max(),
            min_phi: sol.phi.min(),
            subcritical_margin: margin.is_finite().then_some(margin),
            truncation_level: sol.truncation_used,
            u_h1_norm: norms(mesh, &sol.u.values).h1,
            phi_w1inf_proxy: w1inf_norm(mesh, &sol.phi.values),
            sigma_clamp_count: sol.sigma_clamp_count,
            joule_form: sol.joule_form,
            history: sol.history.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OptimizerSummary {
    pub status: OptimizerStatus,
    pub objective: ObjectiveValue,
    pub optimality_residual: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub adjoint_residual: f64,
    pub history: Vec<OptimizerRecord>,
}

impl OptimizerSummary {
    pub fn of(r: &OptimizeResult) -> Self {
        let values = r.beta.values();
        let (beta_min, beta_max) = if values.is_empty() {
            (0.0, 0.0)
        } else {
            (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        Self {
            status: r.status,
            objective: r.objective,
            optimality_residual: r.optimality_residual,
            beta_min,
            beta_max,
            adjoint_residual: r.adjoint.residual,
            history: r.history.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CertificateSummary {
    pub certificate: BoundCertificate,
    pub check: CertificateCheck,
    pub identity: IdentityCheck,
    pub energy: EnergyDiagnostic,
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<SuiteReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub exit_code: i32,
    pub timings: Timings,
    /// Files written next to the report, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config,
            mesh: None,
            state: None,
            optimizer: None,
            verification: None,
            convergence: None,
            certificate: None,
            error: None,
            exit_code: 0,
            timings: Timings { total_seconds: 0.0 },
            artifacts: Vec::new(),
        }
    }
}
