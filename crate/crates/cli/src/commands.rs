use std::path::{Path, PathBuf};

use clap::ValueEnum;
use thermopt_core::control::{optimize, Control, OptimizerStatus};
use thermopt_core::materials::ConductivityModel;
use thermopt_core::mesh::refine_uniform;
use thermopt_core::state::{solve_state, SolverOptions};
use thermopt_core::transform::{
    check_certificate, compute_certificate, energy_diagnostic, psi_identity_check, transform,
};
use thermopt_core::verify::{
    conductivity_suite, gradient_suite, max_principle_suite, self_convergence, substitution_suite,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::export;
use crate::problem::Problem;
use crate::report::{CertificateSummary, MeshSummary, OptimizerSummary, Report, StateSummary};

/// Random samples drawn by the conductivity suite.
pub const CONDUCTIVITY_SAMPLES: usize = 100;
/// Random directions probed by the gradient suite.
pub const GRADIENT_DIRECTIONS: usize = 5;
/// Picard tolerance used by the gradient suite when the configured one is looser.
pub const GRADIENT_SOLVER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradient,
    Maxprinciple,
    Substitution,
    Lemma1,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::Maxprinciple => "maxprinciple",
            Suite::Substitution => "substitution",
            Suite::Lemma1 => "lemma1",
        }
    }
}

/// Collects files written into the output directory.
pub struct Outputs {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub problem: &'a Problem,
    pub report: &'a mut Report,
    pub out: &'a mut Outputs,
}

pub fn solve(ctx: Context) -> CliResult<()> {
    let spec = ctx.problem.spec()?;
    ctx.report.mesh = Some(MeshSummary::of(&spec.mesh));
    let beta = ctx.problem.control(&spec)?;
    let sol = solve_state(&spec, &beta, &ctx.cfg.solver)?;
    ctx.report.state = Some(StateSummary::of(&sol, &spec.mesh, &spec.model));
    if ctx.cfg.output.vtk {
        ctx.out.write("u.vtk", &export::vtk(&spec.mesh, "temperature", &[("u", &sol.u.values)]))?;
        ctx.out.write("phi.vtk", &export::vtk(&spec.mesh, "potential", &[("phi", &sol.phi.values)]))?;
    }
    println!(
        "solve: converged in {} iterations, max u = {}, residuals u {:.3e} phi {:.3e}",
        sol.iterations,
        sol.u.max(),
        sol.residual_u,
        sol.residual_phi
    );
    Ok(())
}

pub fn optimize_control(ctx: Context) -> CliResult<()> {
    let spec = ctx.problem.spec()?;
    ctx.report.mesh = Some(MeshSummary::of(&spec.mesh));
    let initial = Control::constant(&spec.mesh, ctx.cfg.initial_beta, spec.m_cap)?;
    let r = optimize(&spec, Some(initial), &ctx.cfg.solver, &ctx.cfg.optimizer)?;
    ctx.report.state = Some(StateSummary::of(&r.state, &spec.mesh, &spec.model));
    ctx.report.optimizer = Some(OptimizerSummary::of(&r));
    if ctx.cfg.output.csv {
        ctx.out.write("beta.csv", &export::beta_csv(&spec.mesh, &r.beta))?;
    }
    if ctx.cfg.output.vtk {
        ctx.out.write("u.vtk", &export::vtk(&spec.mesh, "temperature", &[("u", &r.state.u.values)]))?;
        ctx.out.write("phi.vtk", &export::vtk(&spec.mesh, "potential", &[("phi", &r.state.phi.values)]))?;
        ctx.out.write(
            "adjoint.vtk",
            &export::vtk(&spec.mesh, "adjoint", &[("p", &r.adjoint.p.values), ("q", &r.adjoint.q.values)]),
        )?;
    }
    println!(
        "optimize: {:?} after {} iterations, J = {}, optimality residual {:.3e}",
        r.status,
        r.history.len(),
        r.objective.total,
        r.optimality_residual
    );
    if r.status == OptimizerStatus::NotConverged {
        return Err(CliError::OptimizerStalled(format!(
            "optimality residual {:.3e} after {} iterations",
            r.optimality_residual,
            r.history.len()
        )));
    }
    Ok(())
}

pub fn verify(ctx: Context, suite: Suite) -> CliResult<()> {
    let spec = ctx.problem.spec()?;
    ctx.report.mesh = Some(MeshSummary::of(&spec.mesh));
    let solver = &ctx.cfg.solver;
    let result = match suite {
        Suite::Lemma1 => conductivity_suite(&spec.model, ctx.cfg.seed, CONDUCTIVITY_SAMPLES),
        Suite::Maxprinciple => max_principle_suite(&spec, &ctx.problem.control(&spec)?, solver)?,
        Suite::Gradient => {
            let tight = SolverOptions {
                tol: solver.tol.min(GRADIENT_SOLVER_TOL),
                ..solver.clone()
            };
            gradient_suite(&spec, &tight, ctx.cfg.seed, GRADIENT_DIRECTIONS)?
        }
        Suite::Substitution => {
            let fine = ctx.problem.spec_on(refine_uniform(&spec.mesh)?)?;
            substitution_suite(&spec, &fine, ctx.problem.beta(), solver)?
        }
    };
    for p in &result.properties {
        println!(
            "{} {}: measured {:.6e}, tolerance {:.6e}",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.measured,
            p.tolerance
        );
    }
    let failures: Vec<String> = result
        .failures()
        .iter()
        .map(|p| format!("{} (measured {:.6e}, tolerance {:.6e})", p.name, p.measured, p.tolerance))
        .collect();
    ctx.report.verification = Some(result);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("suite {}: {}", suite.name(), failures.join("; "))))
    }
}

pub fn convergence(ctx: Context, levels: usize) -> CliResult<()> {
    if levels < 2 {
        return Err(CliError::Usage(format!("--levels must be at least 2, got {levels}")));
    }
    let base = ctx.problem.mesh.clone();
    ctx.report.mesh = Some(MeshSummary::of(&base));
    let problem = ctx.problem;
    let table = self_convergence(base, levels, problem.beta(), &ctx.cfg.solver, |m| problem.spec_on(m))?;
    let csv = export::convergence_csv(&table);
    print!("{csv}");
    if ctx.cfg.output.csv {
        ctx.out.write("convergence.csv", &csv)?;
    }
    let failure = table.failure.clone();
    ctx.report.convergence = Some(table);
    match failure {
        None => Ok(()),
        Some(f) => Err(CliError::Study {
            level: f.level,
            message: f.message,
            criticality: f.criticality,
        }),
    }
}

pub fn certificate(ctx: Context) -> CliResult<()> {
    let spec = ctx.problem.spec()?;
    ctx.report.mesh = Some(MeshSummary::of(&spec.mesh));
    if matches!(spec.model, ConductivityModel::Constant { .. }) && !ctx.cfg.certificate.allow_constant_model {
        return Err(CliError::Usage(
            "the constant model has no finite u_*; set certificate.allow_constant_model = true to certify it anyway".into(),
        ));
    }
    let cert = compute_certificate(&spec, ctx.cfg.certificate.eps, ctx.cfg.certificate.c1)?;
    let sol = solve_state(&spec, &ctx.problem.control(&spec)?, &ctx.cfg.solver)?;
    ctx.report.state = Some(StateSummary::of(&sol, &spec.mesh, &spec.model));
    let check = check_certificate(&sol, &cert, &spec.model)?;
    let ts = transform(&sol, &spec.model, &spec.phi0, cert.m, &spec.mesh)?;
    let identity = psi_identity_check(&ts, &spec.model, &spec, &sol.phi.values)?;
    let energy = energy_diagnostic(&ts, &cert, &spec.mesh, identity.defect);
    let summary = CertificateSummary {
        certificate: cert,
        check,
        identity,
        energy,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    ctx.out.write("certificate.json", &json)?;
    let passed = summary.check.passed;
    let margins = (summary.check.v_margin, summary.check.u_margin);
    ctx.report.certificate = Some(summary);
    if passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "computed solution exceeds the certificate (margins v {:.3e}, u {:.3e})",
            margins.0, margins.1
        )))
    }
}
