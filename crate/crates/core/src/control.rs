//! Robin controls, the objective, adjoint and sensitivity solves, and the
//! optimizers for the boundary heat-transfer coefficient.

use serde::Serialize;

use crate::assembly::{self, Field, UnknownKind};
use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix};
use crate::mesh::Mesh;
use crate::state::{
    control_derivative_columns, free_dofs, objective_state_gradient, phi_dof, solve_state,
    state_jacobian, u_dof, ProblemSpec, SolverOptions, StateSolution,
};

/// Piecewise-constant β on the Robin facets, in `Mesh::robin_facets` order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Control {
    values: Vec<f64>,
    m_cap: f64,
}

impl Control {
    /// Admissible control: every value in [0, m_cap].
    pub fn new(mesh: &Mesh, values: Vec<f64>, m_cap: f64) -> Result<Self> {
        let expected = mesh.robin_facets().len();
        if values.len() != expected {
            return Err(Error::Config(format!(
                "control has {} values for {expected} Robin facets",
                values.len()
            )));
        }
        let c = Self { values, m_cap };
        c.check_admissible()?;
        Ok(c)
    }

    pub fn constant(mesh: &Mesh, value: f64, m_cap: f64) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.robin_facets().len()], m_cap)
    }

    /// A variation ℓ or any other facet vector without the box invariant.
    pub fn unchecked(values: Vec<f64>, m_cap: f64) -> Self {
        Self { values, m_cap }
    }

    pub fn check_admissible(&self) -> Result<()> {
        if !(self.m_cap >= 0.0 && self.m_cap.is_finite()) {
            return Err(Error::Domain(format!(
                "control bound must be finite and nonnegative, got {}",
                self.m_cap
            )));
        }
        if let Some((k, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=self.m_cap).contains(&v))
        {
            return Err(Error::Domain(format!(
                "control value {v} on Robin facet {k} outside [0, {}]",
                self.m_cap
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m_cap(&self) -> f64 {
        self.m_cap
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub integral_u: f64,
    pub integral_beta_sq: f64,
    pub total: f64,
}

/// J = ∫_Ω u + ∫_{Γ_R} β².
pub fn objective(mesh: &Mesh, u: &[f64], beta: &Control) -> ObjectiveValue {
    let integral_u = assembly::integral(mesh, u);
    let integral_beta_sq = mesh
        .robin_facets()
        .iter()
        .zip(beta.values())
        .map(|(&f, b)| mesh.facet_measure(f) * b * b)
        .sum();
    ObjectiveValue {
        integral_u,
        integral_beta_sq,
        total: integral_u + integral_beta_sq,
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub p: Field,
    pub q: Field,
    /// Relative residual of the transposed linearized system.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SensitivityPair {
    pub psi1: Field,
    pub psi2: Field,
    pub direction: Control,
    pub residual: f64,
}

fn linearized_system(spec: &ProblemSpec, beta: &Control, state: &StateSolution) -> Result<(CsrMatrix, Vec<usize>)> {
    let jac = state_jacobian(
        spec,
        beta,
        &spec.model,
        state.joule_form,
        &state.u.values,
        &state.phi.values,
    )?;
    let free = free_dofs(&spec.mesh);
    Ok((jac.submatrix(&free, &free), free))
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bn = linalg::norm2(b);
    if bn == 0.0 {
        linalg::norm2(&r)
    } else {
        linalg::norm2(&r) / bn
    }
}

fn split_fields(mesh: &Mesh, free: &[usize], x: &[f64], kinds: (UnknownKind, UnknownKind)) -> (Field, Field) {
    let n = mesh.num_vertices();
    let mut full = vec![0.0; 2 * n];
    for (&k, &v) in free.iter().zip(x) {
        full[k] = v;
    }
    let a = (0..n).map(|i| full[u_dof(i)]).collect();
    let b = (0..n).map(|i| full[phi_dof(i)]).collect();
    (
        Field {
            kind: kinds.0,
            values: a,
        },
        Field {
            kind: kinds.1,
            values: b,
        },
    )
}

fn adjoint_error(e: Error) -> Error {
    match e {
        Error::LinearSolver {
            message,
            relative_residual,
        } => Error::Adjoint(format!(
            "{message} (relative residual {relative_residual:e}); σ(u) may be degenerate"
        )),
        other => other,
    }
}

/// Solves the transposed linearized state system with the derivative of ∫u
/// as source: p = 0 on Γ_D and q = 0 on the whole boundary.
pub fn solve_adjoint(spec: &ProblemSpec, beta: &Control, state: &StateSolution) -> Result<AdjointSolution> {
    let (a, free) = linearized_system(spec, beta, state)?;
    let at = a.transpose();
    let c = objective_state_gradient(&spec.mesh);
    let rhs: Vec<f64> = free.iter().map(|&k| -c[k]).collect();
    let x = linalg::solve_general(&at, &rhs).map_err(adjoint_error)?;
    let residual = relative_residual(&at, &x, &rhs);
    let (p, q) = split_fields(&spec.mesh, &free, &x, (UnknownKind::AdjointP, UnknownKind::AdjointQ));
    Ok(AdjointSolution { p, q, residual })
}

/// Directional derivative (ψ₁, ψ₂) of the state in the control direction ℓ.
pub fn solve_sensitivity(
    spec: &ProblemSpec,
    beta: &Control,
    state: &StateSolution,
    ell: &Control,
) -> Result<SensitivityPair> {
    if ell.len() != beta.len() {
        return Err(Error::Adjoint(format!(
            "direction has {} values for {} Robin facets",
            ell.len(),
            beta.len()
        )));
    }
    let (a, free) = linearized_system(spec, beta, state)?;
    let n = spec.mesh.num_vertices();
    let mut forcing = vec![0.0; 2 * n];
    for (col, &l) in control_derivative_columns(spec, &state.u.values).iter().zip(ell.values()) {
        for &(k, v) in col {
            forcing[k] -= l * v;
        }
    }
    let rhs: Vec<f64> = free.iter().map(|&k| forcing[k]).collect();
    let x = linalg::solve_general(&a, &rhs).map_err(adjoint_error)?;
    let residual = relative_residual(&a, &x, &rhs);
    let (psi1, psi2) = split_fields(
        &spec.mesh,
        &free,
        &x,
        (UnknownKind::Sensitivity1, UnknownKind::Sensitivity2),
    );
    Ok(SensitivityPair {
        psi1,
        psi2,
        direction: ell.clone(),
        residual,
    })
}

/// Facet averages (1/|f|)∫_f (u − u1)·p over the Robin facets.
pub fn facet_adjoint_products(spec: &ProblemSpec, state: &StateSolution, adjoint: &AdjointSolution) -> Vec<f64> {
    let mesh = &spec.mesh;
    let diff: Vec<f64> = state.u.values.iter().zip(&spec.u1).map(|(a, b)| a - b).collect();
    mesh.robin_facets()
        .into_iter()
        .map(|f| assembly::facet_product_integral(mesh, f, &diff, &adjoint.p.values) / mesh.facet_measure(f))
        .collect()
}

/// L²(Γ_R) gradient of J per Robin facet: 2β + avg((u − u1)·p).
pub fn gradient(spec: &ProblemSpec, state: &StateSolution, adjoint: &AdjointSolution, beta: &Control) -> Vec<f64> {
    facet_adjoint_products(spec, state, adjoint)
        .into_iter()
        .zip(beta.values())
        .map(|(w, b)| 2.0 * b + w)
        .collect()
}

/// β = min(max(−avg((u − u1)·p)/2, 0), 𝓜) per Robin facet.
pub fn project_control(
    spec: &ProblemSpec,
    state: &StateSolution,
    adjoint: &AdjointSolution,
    m_cap: f64,
) -> Control {
    project_products(&facet_adjoint_products(spec, state, adjoint), m_cap)
}

/// Projection formula applied to given facet values of (u − u1)·p.
pub fn project_products(products: &[f64], m_cap: f64) -> Control {
    Control::unchecked(
        products.iter().map(|w| (-0.5 * w).max(0.0).min(m_cap)).collect(),
        m_cap,
    )
}

/// ∫_{Γ_R} a·b for facet-constant a and b.
pub fn boundary_pairing(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.robin_facets()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&f, (x, y))| mesh.facet_measure(f) * x * y)
        .sum()
}

/// dJ[ℓ] = ∫_Ω ψ₁ + ∫_{Γ_R} 2βℓ.
pub fn sensitivity_derivative(mesh: &Mesh, beta: &Control, pair: &SensitivityPair) -> f64 {
    let twice: Vec<f64> = beta.values().iter().map(|b| 2.0 * b).collect();
    assembly::integral(mesh, &pair.psi1.values) + boundary_pairing(mesh, &twice, pair.direction.values())
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMode {
    Sweep,
    ProjectedGradient,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerOptions {
    pub mode: OptimizerMode,
    pub relaxation: f64,
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            mode: OptimizerMode::Sweep,
            relaxation: 0.5,
            tol: 1e-7,
            max_outer: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerRecord {
    pub iteration: usize,
    pub objective: f64,
    pub optimality_residual: f64,
    /// Relaxation weight (sweep) or accepted step length (projected gradient).
    pub step: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatus {
    Converged,
    /// Iteration cap or stalled line search; the best iterate is returned.
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub beta: Control,
    pub state: StateSolution,
    pub adjoint: AdjointSolution,
    pub objective: ObjectiveValue,
    pub optimality_residual: f64,
    pub history: Vec<OptimizerRecord>,
    pub status: OptimizerStatus,
}

struct Evaluation {
    beta: Control,
    state: StateSolution,
    adjoint: AdjointSolution,
    objective: ObjectiveValue,
    projection: Control,
    gradient: Vec<f64>,
}

impl Evaluation {
    fn new(spec: &ProblemSpec, beta: Control, solver: &SolverOptions) -> Result<Self> {
        let state = solve_state(spec, &beta, solver)?;
        let adjoint = solve_adjoint(spec, &beta, &state)?;
        let objective = objective(&spec.mesh, &state.u.values, &beta);
        let projection = project_control(spec, &state, &adjoint, beta.m_cap());
        let gradient = gradient(spec, &state, &adjoint, &beta);
        Ok(Self {
            beta,
            state,
            adjoint,
            objective,
            projection,
            gradient,
        })
    }

    fn optimality_residual(&self) -> f64 {
        sup_distance(self.beta.values(), self.projection.values())
    }

    fn finish(self, history: Vec<OptimizerRecord>, status: OptimizerStatus) -> OptimizeResult {
        let optimality_residual = self.optimality_residual();
        OptimizeResult {
            beta: self.beta,
            state: self.state,
            adjoint: self.adjoint,
            objective: self.objective,
            optimality_residual,
            history,
            status,
        }
    }
}

/// Solves the optimality system starting from `initial` (β ≡ 0 when `None`).
pub fn optimize(
    spec: &ProblemSpec,
    initial: Option<Control>,
    solver: &SolverOptions,
    opts: &OptimizerOptions,
) -> Result<OptimizeResult> {
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::Config(format!(
            "relaxation must lie in (0, 1], got {}",
            opts.relaxation
        )));
    }
    if !(opts.tol > 0.0) || opts.max_outer == 0 {
        return Err(Error::Config("optimizer tolerance and iteration cap must be positive".into()));
    }
    let beta = match initial {
        Some(b) => {
            b.check_admissible()?;
            b
        }
        None => Control::constant(&spec.mesh, 0.0, spec.m_cap)?,
    };
    match opts.mode {
        OptimizerMode::Sweep => sweep(spec, beta, solver, opts),
        OptimizerMode::ProjectedGradient => projected_gradient(spec, beta, solver, opts),
    }
}

fn sweep(spec: &ProblemSpec, beta: Control, solver: &SolverOptions, opts: &OptimizerOptions) -> Result<OptimizeResult> {
    let w = opts.relaxation;
    let mut current = Evaluation::new(spec, beta, solver)?;
    let mut best: Option<Evaluation> = None;
    let mut history = Vec::new();
    for it in 0..opts.max_outer {
        let residual = current.optimality_residual();
        let change = w * residual;
        history.push(OptimizerRecord {
            iteration: it,
            objective: current.objective.total,
            optimality_residual: residual,
            step: w,
            max_change: change,
        });
        if change <= opts.tol {
            return Ok(current.finish(history, OptimizerStatus::Converged));
        }
        let next: Vec<f64> = current
            .beta
            .values()
            .iter()
            .zip(current.projection.values())
            .map(|(b, p)| ((1.0 - w) * b + w * p).clamp(0.0, spec.m_cap))
            .collect();
        let next = Evaluation::new(spec, Control::unchecked(next, spec.m_cap), solver)?;
        let previous = std::mem::replace(&mut current, next);
        if best
            .as_ref()
            .is_none_or(|b| previous.objective.total < b.objective.total)
        {
            best = Some(previous);
        }
    }
    let last = current;
    let chosen = match best {
        Some(b) if b.objective.total < last.objective.total => b,
        _ => last,
    };
    Ok(chosen.finish(history, OptimizerStatus::NotConverged))
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

fn projected_gradient(
    spec: &ProblemSpec,
    beta: Control,
    solver: &SolverOptions,
    opts: &OptimizerOptions,
) -> Result<OptimizeResult> {
    let mesh = &spec.mesh;
    let mut current = Evaluation::new(spec, beta, solver)?;
    let mut history = Vec::new();
    let mut step = 0.0;
    let mut change = 0.0;
    for it in 0..opts.max_outer {
        let residual = current.optimality_residual();
        history.push(OptimizerRecord {
            iteration: it,
            objective: current.objective.total,
            optimality_residual: residual,
            step,
            max_change: change,
        });
        if residual <= opts.tol {
            return Ok(current.finish(history, OptimizerStatus::Converged));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = current
                .beta
                .values()
                .iter()
                .zip(&current.gradient)
                .map(|(b, g)| (b - t * g).clamp(0.0, spec.m_cap))
                .collect();
            let delta: Vec<f64> = trial.iter().zip(current.beta.values()).map(|(a, b)| a - b).collect();
            let decrease = boundary_pairing(mesh, &current.gradient, &delta);
            let candidate = Evaluation::new(spec, Control::unchecked(trial, spec.m_cap), solver)?;
            if candidate.objective.total <= current.objective.total + ARMIJO_C * decrease
                && candidate.objective.total <= current.objective.total
            {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                change = sup_distance(next.beta.values(), current.beta.values());
                step = t;
                current = next;
            }
            None => return Ok(current.finish(history, OptimizerStatus::NotConverged)),
        }
    }
    let residual = current.optimality_residual();
    history.push(OptimizerRecord {
        iteration: opts.max_outer,
        objective: current.objective.total,
        optimality_residual: residual,
        step,
        max_change: change,
    });
    let status = if residual <= opts.tol {
        OptimizerStatus::Converged
    } else {
        OptimizerStatus::NotConverged
    };
    Ok(current.finish(history, status))
}

/// ∫_{Γ_R} (β′ − β)·g; nonnegative for every admissible β′ at an optimum.
pub fn variational_inequality(mesh: &Mesh, beta: &Control, gradient: &[f64], other: &Control) -> f64 {
    let delta: Vec<f64> = other.values().iter().zip(beta.values()).map(|(a, b)| a - b).collect();
    boundary_pairing(mesh, &delta, gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::ConductivityModel;
    use crate::mesh::{build_rectangle_mesh, BoxFace, Side, TagRule};
    use approx::assert_relative_eq;

    fn heated_spec(n: usize, u1: f64) -> ProblemSpec {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        let mesh = build_rectangle_mesh(&[1.0, 1.0], &[n, n], &rule).unwrap();
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.6 * p[0] + 0.2 * p[1] * p[1]).values;
        let nv = mesh.num_vertices();
        let model = ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap();
        ProblemSpec::new(mesh, model, vec![0.0; nv], vec![u1; nv], phi0, 2.0).unwrap()
    }

    fn constant_spec(m_cap: f64) -> ProblemSpec {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        let mesh = build_rectangle_mesh(&[1.0, 1.0], &[4, 4], &rule).unwrap();
        let nv = mesh.num_vertices();
        let model = ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap();
        ProblemSpec::new(mesh, model, vec![0.2; nv], vec![0.2; nv], vec![0.3; nv], m_cap).unwrap()
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            tol: 1e-13,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn objective_of_constants() {
        let spec = constant_spec(3.0);
        let beta = Control::constant(&spec.mesh, 1.5, 3.0).unwrap();
        let u = vec![0.2; spec.mesh.num_vertices()];
        let j = objective(&spec.mesh, &u, &beta);
        assert_relative_eq!(j.integral_u, 0.2, epsilon = 1e-14);
        assert_relative_eq!(j.integral_beta_sq, 1.5 * 1.5 * 3.0, epsilon = 1e-13);
        assert_eq!(j.total, j.integral_u + j.integral_beta_sq);
        let zero = Control::constant(&spec.mesh, 0.0, 3.0).unwrap();
        assert_eq!(objective(&spec.mesh, &u, &zero).total, objective(&spec.mesh, &u, &zero).integral_u);
        let double = Control::constant(&spec.mesh, 3.0, 3.0).unwrap();
        assert_eq!(
            objective(&spec.mesh, &u, &double).integral_beta_sq,
            4.0 * j.integral_beta_sq
        );
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_products(&[-2.0], 3.0).values(), &[1.0]);
        assert_eq!(project_products(&[2.0], 3.0).values(), &[0.0]);
        assert_eq!(project_products(&[-10.0], 3.0).values(), &[3.0]);
    }

    #[test]
    fn adjoint_without_current_is_poisson() {
        // Γ_D = {x=0} ∪ {x=1}, β = 0: p = x(x−1)/2 solves Δp = 1
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low), BoxFace::new(0, Side::High)]);
        let mut errors = Vec::new();
        for n in [4, 8, 16] {
            let mesh = build_rectangle_mesh(&[1.0, 1.0], &[n, n], &rule).unwrap();
            let nv = mesh.num_vertices();
            let model = ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap();
            let spec = ProblemSpec::new(mesh, model, vec![0.0; nv], vec![0.0; nv], vec![0.4; nv], 1.0).unwrap();
            let beta = Control::constant(&spec.mesh, 0.0, 1.0).unwrap();
            let state = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
            let adj = solve_adjoint(&spec, &beta, &state).unwrap();
            assert!(adj.q.values.iter().all(|&v| v.abs() < 1e-14));
            assert!(adj.residual <= 1e-9);
            let exact = Field::interpolate(&spec.mesh, UnknownKind::AdjointP, |p| 0.5 * p[0] * (p[0] - 1.0));
            let diff: Vec<f64> = adj.p.values.iter().zip(&exact.values).map(|(a, b)| a - b).collect();
            errors.push(assembly::norms(&spec.mesh, &diff).l2);
        }
        // within O(h²); the profile is in fact reproduced at the nodes
        for (e, n) in errors.iter().zip([4.0, 8.0, 16.0]) {
            assert!(*e <= 0.1 / (n * n), "{errors:?}");
        }
    }

    #[test]
    fn adjoint_satisfies_transposed_system() {
        let spec = heated_spec(6, 0.0);
        let beta = Control::constant(&spec.mesh, 0.8, 2.0).unwrap();
        let state = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let adj = solve_adjoint(&spec, &beta, &state).unwrap();
        assert!(adj.residual <= 1e-9);
        let dir = spec.mesh.dirichlet_vertices();
        let bnd = spec.mesh.boundary_vertices();
        for i in 0..spec.mesh.num_vertices() {
            if dir[i] {
                assert_eq!(adj.p.values[i], 0.0);
            }
            if bnd[i] {
                assert_eq!(adj.q.values[i], 0.0);
            }
        }
        assert!(adj.p.max() <= 0.0);
    }

    #[test]
    fn zero_direction_gives_zero_sensitivity() {
        let spec = heated_spec(4, 0.0);
        let beta = Control::constant(&spec.mesh, 0.5, 2.0).unwrap();
        let state = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let ell = Control::unchecked(vec![0.0; beta.len()], 2.0);
        let s = solve_sensitivity(&spec, &beta, &state, &ell).unwrap();
        assert!(s.psi1.values.iter().all(|&v| v == 0.0));
        assert!(s.psi2.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_data_has_zero_forcing_and_gradient_two_beta() {
        let spec = constant_spec(3.0);
        let beta = Control::constant(&spec.mesh, 0.7, 3.0).unwrap();
        let state = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let ell = Control::unchecked(vec![1.0; beta.len()], 3.0);
        let s = solve_sensitivity(&spec, &beta, &state, &ell).unwrap();
        assert!(s.psi1.values.iter().all(|&v| v.abs() < 1e-14));
        let adj = solve_adjoint(&spec, &beta, &state).unwrap();
        for g in gradient(&spec, &state, &adj, &beta) {
            assert!((g - 1.4).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_control_and_zero_adjoint_give_zero_gradient() {
        let spec = constant_spec(3.0);
        let beta = Control::constant(&spec.mesh, 0.0, 3.0).unwrap();
        let state = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let zero = AdjointSolution {
            p: Field::constant(&spec.mesh, UnknownKind::AdjointP, 0.0),
            q: Field::constant(&spec.mesh, UnknownKind::AdjointQ, 0.0),
            residual: 0.0,
        };
        assert!(gradient(&spec, &state, &zero, &beta).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let spec = heated_spec(4, 0.0);
        let k = spec.mesh.robin_facets().len();
        let beta = Control::new(&spec.mesh, (0..k).map(|i| 0.5 + 0.1 * i as f64).collect(), 2.0).unwrap();
        let state = solve_state(&spec, &beta, &tight()).unwrap();
        let adj = solve_adjoint(&spec, &beta, &state).unwrap();
        let g = gradient(&spec, &state, &adj, &beta);
        let ell: Vec<f64> = (0..k).map(|i| ((i * 7 % 5) as f64 - 2.0) / 2.0).collect();
        let pairing = boundary_pairing(&spec.mesh, &g, &ell);
        let eps = 1e-4;
        let j_at = |s: f64| {
            let b: Vec<f64> = beta.values().iter().zip(&ell).map(|(b, l)| b + s * l).collect();
            let b = Control::new(&spec.mesh, b, 2.0).unwrap();
            let st = solve_state(&spec, &b, &tight()).unwrap();
            objective(&spec.mesh, &st.u.values, &b).total
        };
        let fd = (j_at(eps) - j_at(-eps)) / (2.0 * eps);
        assert!((fd - pairing).abs() <= 1e-6 * pairing.abs().max(1e-3), "fd {fd} adjoint {pairing}");
        let s = solve_sensitivity(&spec, &beta, &state, &Control::unchecked(ell.clone(), 2.0)).unwrap();
        let sens = sensitivity_derivative(&spec.mesh, &beta, &s);
        assert!((sens - pairing).abs() <= 1e-9 * pairing.abs().max(1e-3));
    }

    #[test]
    fn sensitivity_matches_state_differences() {
        let spec = heated_spec(4, 0.0);
        let beta = Control::constant(&spec.mesh, 0.6, 2.0).unwrap();
        let state = solve_state(&spec, &beta, &tight()).unwrap();
        let ell = Control::unchecked(vec![1.0; beta.len()], 2.0);
        let s = solve_sensitivity(&spec, &beta, &state, &ell).unwrap();
        let mut errors = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            let b = Control::constant(&spec.mesh, 0.6 + eps, 2.0).unwrap();
            let st = solve_state(&spec, &b, &tight()).unwrap();
            let diff: Vec<f64> = st
                .u
                .values
                .iter()
                .zip(&state.u.values)
                .zip(&s.psi1.values)
                .map(|((a, b), p)| (a - b) / eps - p)
                .collect();
            errors.push(assembly::norms(&spec.mesh, &diff).l2);
        }
        assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
    }

    #[test]
    fn zero_cap_is_immediate() {
        let spec = heated_spec(4, 0.0);
        let spec = ProblemSpec { m_cap: 0.0, ..spec };
        for mode in [OptimizerMode::Sweep, OptimizerMode::ProjectedGradient] {
            let opts = OptimizerOptions { mode, ..OptimizerOptions::default() };
            let r = optimize(&spec, None, &SolverOptions::default(), &opts).unwrap();
            assert!(r.beta.values().iter().all(|&b| b == 0.0));
            assert_eq!(r.optimality_residual, 0.0);
            assert_eq!(r.status, OptimizerStatus::Converged);
        }
    }

    #[test]
    fn constant_data_optimum_is_zero() {
        let spec = constant_spec(3.0);
        for mode in [OptimizerMode::Sweep, OptimizerMode::ProjectedGradient] {
            let opts = OptimizerOptions { mode, ..OptimizerOptions::default() };
            let start = Control::constant(&spec.mesh, 1.0, 3.0).unwrap();
            let r = optimize(&spec, Some(start), &SolverOptions::default(), &opts).unwrap();
            assert_eq!(r.status, OptimizerStatus::Converged);
            assert!(r.beta.values().iter().all(|&b| b.abs() <= 1e-6), "{mode:?}");
        }
    }

    #[test]
    fn both_modes_reach_the_same_interior_optimum() {
        let spec = heated_spec(6, 0.0);
        let solver = SolverOptions::default();
        let sweep = optimize(&spec, None, &solver, &OptimizerOptions::default()).unwrap();
        let pg = optimize(
            &spec,
            None,
            &solver,
            &OptimizerOptions {
                mode: OptimizerMode::ProjectedGradient,
                ..OptimizerOptions::default()
            },
        )
        .unwrap();
        assert_eq!(sweep.status, OptimizerStatus::Converged);
        assert_eq!(pg.status, OptimizerStatus::Converged);
        assert!(sweep.optimality_residual <= 1e-6 && pg.optimality_residual <= 1e-6);
        assert!(sweep.beta.values().iter().any(|&b| b > 1e-4));
        assert!(sup_distance(sweep.beta.values(), pg.beta.values()) < 1e-5);
        for w in pg.history.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        for b in sweep.beta.values().iter().chain(pg.beta.values()) {
            assert!((0.0..=spec.m_cap).contains(b));
        }
    }
}
