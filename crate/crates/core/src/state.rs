//! The coupled state system: damped Picard iteration on the truncated
//! conductivity, a posteriori criticality check, weak residuals and the
//! exact Jacobian of the discrete residual.

use serde::Serialize;

use crate::assembly::{
    self, apply_dirichlet, assemble_joule, assemble_robin, cell_gradient, dirichlet_pairs, dot3,
    eval_at, facet_mass_local, mass, sigma_stiffness, stiffness, DualNorm, Field, JouleForm, LinearSystem,
    UnknownKind,
};
use crate::control::Control;
use crate::error::{Error, Result};
use crate::linalg::{self, BandCholesky, CsrMatrix};
use crate::materials::ConductivityModel;
use crate::mesh::Mesh;
use crate::quadrature::simplex_rule;

/// Mesh, conductivity, boundary data (as nodal extensions) and control bound.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mesh: Mesh,
    pub model: ConductivityModel,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub phi0: Vec<f64>,
    pub m_cap: f64,
}

impl ProblemSpec {
    pub fn new(
        mesh: Mesh,
        model: ConductivityModel,
        u0: Vec<f64>,
        u1: Vec<f64>,
        phi0: Vec<f64>,
        m_cap: f64,
    ) -> Result<Self> {
        let n = mesh.num_vertices();
        for (name, f) in [("u0", &u0), ("u1", &u1), ("phi0", &phi0)] {
            if f.len() != n {
                return Err(Error::Config(format!(
                    "{name} has {} values for {n} vertices",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} has non-finite values")));
            }
        }
        for (name, f) in [("u0", &u0), ("u1", &u1)] {
            if f.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
            let sup = linalg::norm_inf(f);
            if sup >= model.u_star() {
                return Err(Error::Config(format!(
                    "boundary data not subcritical: ‖{name}‖_∞ = {sup} >= u_* = {}",
                    model.u_star()
                )));
            }
        }
        if !(m_cap >= 0.0 && m_cap.is_finite()) {
            return Err(Error::Config(format!(
                "control bound must be finite and nonnegative, got {m_cap}"
            )));
        }
        Ok(Self {
            mesh,
            model,
            u0,
            u1,
            phi0,
            m_cap,
        })
    }

    pub fn u0_sup(&self) -> f64 {
        linalg::norm_inf(&self.u0)
    }

    pub fn u1_sup(&self) -> f64 {
        linalg::norm_inf(&self.u1)
    }

    pub fn phi0_sup(&self) -> f64 {
        linalg::norm_inf(&self.phi0)
    }

    /// Default truncation level n = u* − 0.1·(u* − ‖u0‖_∞), or `None` when σ
    /// never vanishes.
    pub fn default_truncation(&self) -> Option<f64> {
        let u_star = self.model.u_star();
        u_star
            .is_finite()
            .then(|| u_star - 0.1 * (u_star - self.u0_sup()))
    }

    /// Same problem on another mesh with new nodal data.
    pub fn with_mesh(&self, mesh: Mesh, u0: Vec<f64>, u1: Vec<f64>, phi0: Vec<f64>) -> Result<Self> {
        Self::new(mesh, self.model.clone(), u0, u1, phi0, self.m_cap)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub joule_form: JouleForm,
    /// Explicit truncation level; the default rule is used when `None`.
    pub truncation: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            damping: 0.7,
            max_iter: 200,
            joule_form: JouleForm::Weak,
            truncation: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("solver tolerance must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("iteration cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub max_change: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub sigma_clamps: usize,
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: Field,
    pub phi: Field,
    pub iterations: usize,
    pub residual_u: f64,
    pub residual_phi: f64,
    pub sigma_clamp_count: usize,
    pub truncation_used: Option<f64>,
    pub joule_form: JouleForm,
    pub history: Vec<IterateRecord>,
}

impl StateSolution {
    pub fn max_u(&self) -> f64 {
        self.u.max()
    }
}

/// Homogeneous Dirichlet corrections for a fixed matrix, factored once.
struct ConstrainedSolver {
    matrix: CsrMatrix,
    factor: BandCholesky,
    fixed: Vec<bool>,
}

impl ConstrainedSolver {
    fn new(mesh: &Mesh, raw: &CsrMatrix, fixed: Vec<bool>) -> Result<Self> {
        let n = raw.n_rows();
        let bc = dirichlet_pairs(&fixed, &vec![0.0; n]);
        let sys = apply_dirichlet(mesh, &LinearSystem::new(raw.clone(), vec![0.0; n]), &bc)?;
        let factor = BandCholesky::factor(&sys.matrix)?;
        Ok(Self {
            matrix: sys.matrix,
            factor,
            fixed,
        })
    }

    /// Solves in correction form around `current`, which must already carry
    /// the boundary values; a zero residual returns `current` unchanged.
    fn solve_from(&self, current: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
        let residual: Vec<f64> = (0..residual.len())
            .map(|i| if self.fixed[i] { 0.0 } else { residual[i] })
            .collect();
        if residual.iter().all(|&r| r == 0.0) {
            return Ok(current.to_vec());
        }
        let delta = linalg::refine(&self.matrix, &residual, |r| self.factor.solve(r))?;
        Ok(current.iter().zip(&delta).map(|(c, d)| c + d).collect())
    }
}

/// Joule load minus ∫∇u·∇λ_i + ∫_{Γ_R} β(u − u1)λ_i, written with vertex
/// differences so that data reproduced by `u` gives an exactly zero residual.
fn heat_residual(mesh: &Mesh, beta: &Control, u1: &[f64], u: &[f64], mut r: Vec<f64>) -> Vec<f64> {
    for c in 0..mesh.num_cells() {
        let geo = mesh.geometry(c);
        let cell = mesh.cell(c);
        let base = u[cell[0]];
        let mut g = [0.0; 3];
        for (k, &v) in cell.iter().enumerate().skip(1) {
            let du = u[v] - base;
            for a in 0..3 {
                g[a] += du * geo.grads[k][a];
            }
        }
        for (k, &v) in cell.iter().enumerate() {
            r[v] -= geo.volume * dot3(&g, &geo.grads[k]);
        }
    }
    for (&f, &b) in mesh.robin_facets().iter().zip(beta.values()) {
        if b == 0.0 {
            continue;
        }
        let m = facet_mass_local(mesh, f);
        let verts = mesh.facet(f);
        for (a, &i) in verts.iter().enumerate() {
            for (k, &j) in verts.iter().enumerate() {
                r[i] += b * m[a][k] * (u1[j] - u[j]);
            }
        }
    }
    r
}

/// Solves the φ-equation ∇·(σ(u)∇φ) = 0 with φ = φ0 on the whole boundary.
pub fn solve_potential(mesh: &Mesh, model: &ConductivityModel, u: &[f64], phi0: &[f64]) -> Result<Vec<f64>> {
    let k = sigma_stiffness(mesh, model, u)?;
    let bc = dirichlet_pairs(&mesh.boundary_vertices(), phi0);
    let sys = apply_dirichlet(mesh, &LinearSystem::new(k, vec![0.0; mesh.num_vertices()]), &bc)?;
    assembly::solve_spd(&sys)
}

fn count_negative_points(mesh: &Mesh, u: &[f64]) -> usize {
    let rule = simplex_rule(mesh.dim());
    (0..mesh.num_cells())
        .map(|c| rule.iter().filter(|q| eval_at(mesh, u, c, q) < 0.0).count())
        .sum()
}

/// Damped Picard iteration on σₙ followed by the check max u < n.
pub fn solve_state(spec: &ProblemSpec, beta: &Control, opts: &SolverOptions) -> Result<StateSolution> {
    opts.validate()?;
    let mesh = &spec.mesh;
    let level = match opts.truncation {
        Some(n) => Some(n),
        None => spec.default_truncation(),
    };
    let model = match level {
        Some(n) => spec.model.truncate(n)?,
        None => spec.model.clone(),
    };

    let (robin_matrix, _) = assemble_robin(mesh, beta, &spec.u1)?;
    let u_matrix = stiffness(mesh).add_scaled(1.0, &robin_matrix);
    let u_solver = ConstrainedSolver::new(mesh, &u_matrix, mesh.dirichlet_vertices())?;

    let mut u = spec.u0.clone();
    let mut history = Vec::new();
    let mut clamps = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut u_new = Vec::new();
    for it in 1..=opts.max_iter {
        let phi = solve_potential(mesh, &model, &u, &spec.phi0)?;
        let joule = assemble_joule(opts.joule_form, mesh, &model, &u, &phi, &spec.phi0);
        let residual = heat_residual(mesh, beta, &spec.u1, &u, joule);
        u_new = u_solver.solve_from(&u, &residual)?;
        let change = u_new
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                last_change: change,
                history,
            });
        }
        let negative = count_negative_points(mesh, &u);
        clamps += negative;
        for (ui, ni) in u.iter_mut().zip(&u_new) {
            *ui += opts.damping * (ni - *ui);
        }
        last_change = change;
        history.push(IterateRecord {
            iteration: it,
            max_change: change,
            max_u: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_u: u.iter().copied().fold(f64::INFINITY, f64::min),
            sigma_clamps: negative,
        });
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: opts.max_iter,
            last_change,
            history,
        });
    }
    // finish on the undamped iterate with a consistent potential
    u = u_new;
    let phi = solve_potential(mesh, &model, &u, &spec.phi0)?;
    let max_u = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(n) = level {
        if max_u >= n {
            return Err(Error::Criticality {
                max_u,
                level: n,
                history,
            });
        }
    }
    let mut sol = StateSolution {
        u: Field::new(mesh, UnknownKind::Temperature, u)?,
        phi: Field::new(mesh, UnknownKind::Potential, phi)?,
        iterations: history.len(),
        residual_u: f64::NAN,
        residual_phi: f64::NAN,
        sigma_clamp_count: clamps,
        truncation_used: level,
        joule_form: opts.joule_form,
        history,
    };
    let res = weak_residual(spec, beta, &sol)?;
    sol.residual_u = res.r_u;
    sol.residual_phi = res.r_phi;
    Ok(sol)
}

/// Residual vectors of the discrete weak form at (u, φ); rows of constrained
/// dofs are zeroed.
pub fn residual_vectors(
    spec: &ProblemSpec,
    beta: &Control,
    model: &ConductivityModel,
    form: JouleForm,
    u: &[f64],
    phi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mesh = &spec.mesh;
    let (robin_matrix, robin_load) = assemble_robin(mesh, beta, &spec.u1)?;
    let ku = stiffness(mesh).add_scaled(1.0, &robin_matrix).mul_vec(u);
    let joule = assemble_joule(form, mesh, model, u, phi, &spec.phi0);
    let dir = mesh.dirichlet_vertices();
    let bnd = mesh.boundary_vertices();
    let r_u = (0..mesh.num_vertices())
        .map(|i| {
            if dir[i] {
                0.0
            } else {
                ku[i] - robin_load[i] - joule[i]
            }
        })
        .collect();
    let kphi = sigma_stiffness(mesh, model, u)?.mul_vec(phi);
    let r_phi = (0..mesh.num_vertices())
        .map(|i| if bnd[i] { 0.0 } else { kphi[i] })
        .collect();
    Ok((r_u, r_phi))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeakResidual {
    /// Scaled dual norms: raw dual norm over max(1, dual norm of the data).
    pub r_u: f64,
    pub r_phi: f64,
    pub raw_u: f64,
    pub raw_phi: f64,
}

/// Weak residuals with the original conductivity.
pub fn weak_residual(spec: &ProblemSpec, beta: &Control, sol: &StateSolution) -> Result<WeakResidual> {
    weak_residual_with(spec, beta, sol, &spec.model)
}

pub fn weak_residual_with(
    spec: &ProblemSpec,
    beta: &Control,
    sol: &StateSolution,
    model: &ConductivityModel,
) -> Result<WeakResidual> {
    let mesh = &spec.mesh;
    let (r_u, r_phi) = residual_vectors(spec, beta, model, sol.joule_form, &sol.u.values, &sol.phi.values)?;
    let dn_u = DualNorm::new(mesh, &mesh.dirichlet_vertices())?;
    let bnd = mesh.boundary_vertices();
    let dn_phi = DualNorm::new(mesh, &bnd)?;

    let (_, robin_load) = assemble_robin(mesh, beta, &spec.u1)?;
    let joule = assemble_joule(sol.joule_form, mesh, model, &sol.u.values, &sol.phi.values, &spec.phi0);
    let load_u: Vec<f64> = joule.iter().zip(&robin_load).map(|(a, b)| a + b).collect();
    let lifted: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| if bnd[i] { spec.phi0[i] } else { 0.0 })
        .collect();
    let load_phi = sigma_stiffness(mesh, model, &sol.u.values)?.mul_vec(&lifted);

    let raw_u = dn_u.eval(&r_u);
    let raw_phi = dn_phi.eval(&r_phi);
    Ok(WeakResidual {
        r_u: raw_u / dn_u.eval(&load_u).max(1.0),
        r_phi: raw_phi / dn_phi.eval(&load_phi).max(1.0),
        raw_u,
        raw_phi,
    })
}

/// u* − max u, or +∞ when σ never vanishes.
pub fn subcritical_margin(sol: &StateSolution, model: &ConductivityModel) -> f64 {
    let u_star = model.u_star();
    if u_star.is_finite() {
        u_star - sol.max_u()
    } else {
        f64::INFINITY
    }
}

/// Interleaved dof index of the temperature at vertex `i`.
pub fn u_dof(i: usize) -> usize {
    2 * i
}

/// Interleaved dof index of the potential at vertex `i`.
pub fn phi_dof(i: usize) -> usize {
    2 * i + 1
}

/// Free interleaved dofs: u off Γ_D, φ off the boundary.
pub fn free_dofs(mesh: &Mesh) -> Vec<usize> {
    let dir = mesh.dirichlet_vertices();
    let bnd = mesh.boundary_vertices();
    let mut out = Vec::new();
    for i in 0..mesh.num_vertices() {
        if !dir[i] {
            out.push(u_dof(i));
        }
        if !bnd[i] {
            out.push(phi_dof(i));
        }
    }
    out
}

/// Jacobian of the unconstrained residual (R_u, R_φ) with respect to the
/// interleaved unknowns (u_i, φ_i).
pub fn state_jacobian(
    spec: &ProblemSpec,
    beta: &Control,
    model: &ConductivityModel,
    form: JouleForm,
    u: &[f64],
    phi: &[f64],
) -> Result<CsrMatrix> {
    let mesh = &spec.mesh;
    let n = mesh.num_vertices();
    let rule = simplex_rule(mesh.dim());
    let mut t: Vec<(usize, usize, f64)> = Vec::new();

    let (robin_matrix, _) = assemble_robin(mesh, beta, &spec.u1)?;
    for (i, j, v) in stiffness(mesh).add_scaled(1.0, &robin_matrix).triplets() {
        t.push((u_dof(i), u_dof(j), v));
    }
    for c in 0..mesh.num_cells() {
        let geo = mesh.geometry(c);
        let cell = mesh.cell(c);
        let gphi = cell_gradient(mesh, phi, c);
        let gphi0 = cell_gradient(mesh, &spec.phi0, c);
        let cross = dot3(&gphi, &gphi0);
        let gsq = dot3(&gphi, &gphi);
        for q in rule {
            let wq = geo.volume * q.weight;
            let uq = eval_at(mesh, u, c, q);
            let s = model.sigma(uq);
            let ds = if uq < 0.0 { 0.0 } else { model.sigma_prime(uq) };
            let d = eval_at(mesh, &spec.phi0, c, q) - eval_at(mesh, phi, c, q);
            for (a, &i) in cell.iter().enumerate() {
                let gi = &geo.grads[a];
                let phi_gi = dot3(&gphi, gi);
                for (b, &j) in cell.iter().enumerate() {
                    let gj = &geo.grads[b];
                    let (lj, li) = (q.bary[b], q.bary[a]);
                    // φ-equation
                    t.push((phi_dof(i), u_dof(j), wq * ds * lj * phi_gi));
                    t.push((phi_dof(i), phi_dof(j), wq * s * dot3(gj, gi)));
                    // minus the Joule derivative in the u-equation
                    let (du, dphi) = match form {
                        JouleForm::Weak => (
                            ds * lj * (d * phi_gi + cross * li),
                            -lj * s * phi_gi + d * s * dot3(gj, gi) + s * dot3(gj, &gphi0) * li,
                        ),
                        JouleForm::Direct => {
                            (ds * lj * gsq * li, 2.0 * s * dot3(&gphi, gj) * li)
                        }
                    };
                    t.push((u_dof(i), u_dof(j), -wq * du));
                    t.push((u_dof(i), phi_dof(j), -wq * dphi));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(2 * n, 2 * n, &t))
}

/// ∂R_u/∂β_f as interleaved vectors, one per Robin facet: ∫_f (u − u1) λ_i.
pub fn control_derivative_columns(spec: &ProblemSpec, u: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let mesh = &spec.mesh;
    let diff: Vec<f64> = u.iter().zip(&spec.u1).map(|(a, b)| a - b).collect();
    mesh.robin_facets()
        .into_iter()
        .map(|f| {
            let m = assembly::facet_moments(mesh, f, &diff);
            mesh.facet(f)
                .iter()
                .enumerate()
                .map(|(a, &i)| (u_dof(i), m[a]))
                .collect()
        })
        .collect()
}

/// ∫_Ω λ_i as an interleaved vector on the u rows; the derivative of ∫u.
pub fn objective_state_gradient(mesh: &Mesh) -> Vec<f64> {
    let ones = vec![1.0; mesh.num_vertices()];
    let m1 = mass(mesh).mul_vec(&ones);
    let mut out = vec![0.0; 2 * mesh.num_vertices()];
    for (i, v) in m1.into_iter().enumerate() {
        out[u_dof(i)] = v;
    }
    out
}
