use std::path::Path;

use thermopt_core::assembly::{Field, UnknownKind};
use thermopt_core::control::Control;
use thermopt_core::mesh::{build_rectangle_mesh, Mesh};
use thermopt_core::mesh_io::{parse_mesh, parse_nodal_values};
use thermopt_core::state::ProblemSpec;
use thermopt_core::{Error, Result};

use crate::config::{DataSource, Geometry, ProblemConfig};
use crate::error::{CliError, CliResult};

/// Boundary data either as expressions or as nodal values on the base mesh.
enum Data {
    Expr(crate::expr::Expr),
    Nodal(Vec<f64>),
}

pub struct Problem {
    pub mesh: Mesh,
    config: ProblemConfig,
    u0: Data,
    u1: Data,
    phi0: Data,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load(source: &DataSource, mesh: &Mesh) -> CliResult<Data> {
    Ok(match source {
        DataSource::Expr(e) => Data::Expr(e.clone()),
        DataSource::Nodal(path) => Data::Nodal(parse_nodal_values(&read(path)?, mesh.num_vertices())?),
    })
}

impl Data {
    fn on(&self, mesh: &Mesh, name: &str, base_vertices: usize) -> Result<Vec<f64>> {
        match self {
            Data::Expr(e) => Ok(Field::interpolate(mesh, UnknownKind::Data, |p| e.eval(p)).values),
            Data::Nodal(v) if mesh.num_vertices() == base_vertices => Ok(v.clone()),
            Data::Nodal(_) => Err(Error::Config(format!(
                "{name} is given as nodal values and cannot follow mesh refinement; use an expression"
            ))),
        }
    }
}

impl Problem {
    pub fn build(config: &ProblemConfig) -> CliResult<Self> {
        let mesh = match &config.geometry {
            Geometry::Box {
                extents,
                divisions,
                rule,
                ..
            } => build_rectangle_mesh(extents, divisions, rule)?,
            Geometry::File(path) => {
                let mesh = parse_mesh(&read(path)?).map_err(|e| match e {
                    Error::MeshFormat { line, message } => CliError::Config {
                        path: path.display().to_string(),
                        line,
                        column: 1,
                        message,
                    },
                    other => other.into(),
                })?;
                if let Some(d) = config.expected_dim {
                    if d != mesh.dim() {
                        return Err(CliError::Usage(format!(
                            "problem.dim = {d} but {} holds a {}-dimensional mesh",
                            path.display(),
                            mesh.dim()
                        )));
                    }
                }
                mesh
            }
        };
        let u0 = load(&config.u0, &mesh)?;
        let u1 = load(&config.u1, &mesh)?;
        let phi0 = load(&config.phi0, &mesh)?;
        for (name, d) in [("problem.u0", &u0), ("problem.u1", &u1), ("problem.phi0", &phi0)] {
            if let Data::Expr(e) = d {
                if e.dims_used() > mesh.dim() {
                    return Err(CliError::Usage(format!(
                        "{name} = `{}` uses a coordinate beyond dimension {}",
                        e.text(),
                        mesh.dim()
                    )));
                }
            }
        }
        Ok(Self {
            mesh,
            config: config.clone(),
            u0,
            u1,
            phi0,
        })
    }

    /// The problem on the configured mesh.
    pub fn spec(&self) -> CliResult<ProblemSpec> {
        Ok(self.spec_on(self.mesh.clone())?)
    }

    /// The problem with its data evaluated on another mesh.
    pub fn spec_on(&self, mesh: Mesh) -> Result<ProblemSpec> {
        let nv = self.mesh.num_vertices();
        let u0 = self.u0.on(&mesh, "problem.u0", nv)?;
        let u1 = self.u1.on(&mesh, "problem.u1", nv)?;
        let phi0 = self.phi0.on(&mesh, "problem.phi0", nv)?;
        ProblemSpec::new(mesh, self.config.model.clone(), u0, u1, phi0, self.config.beta_max)
    }

    /// The constant control `problem.beta`.
    pub fn control(&self, spec: &ProblemSpec) -> CliResult<Control> {
        Ok(Control::constant(&spec.mesh, self.config.beta, spec.m_cap)?)
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }
}
