//! Property suites with measured values, tolerances and pass flags.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{norms, stiffness};
use crate::control::{
    boundary_pairing, gradient, objective, sensitivity_derivative, solve_adjoint, solve_sensitivity,
    Control,
};
use crate::error::{Error, Result};
use crate::materials::ConductivityModel;
use crate::mesh::{refine_uniform_with_parents, prolongate, Mesh};
use crate::state::{solve_state, ProblemSpec, SolverOptions, StateSolution};
use crate::transform::{psi_identity_check, transform, transformed_residual};

pub const RATIO_SLACK: f64 = 1e-12;
pub const MAX_PRINCIPLE_TOL: f64 = 1e-10;
pub const ROUND_TRIP_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyResult {
    /// Passes when `measured ≤ tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// Passes when `measured ≥ tolerance`.
    pub fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured >= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    fn new(suite: &str, properties: Vec<PropertyResult>) -> Self {
        Self {
            suite: suite.to_string(),
            passed: properties.iter().all(|p| p.passed),
            properties,
        }
    }

    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.properties.iter().filter(|p| !p.passed).collect()
    }
}

/// Bounds e^{−μ|y|} ≤ a(v+y)/a(v) ≤ e^{μ|y|} on seeded pairs with v, v+y in
/// [0, 50], monotone decay of a, and g(v) ≤ 1/v on a log grid in [1, 10⁴].
pub fn conductivity_suite(model: &ConductivityModel, seed: u64, samples: usize) -> SuiteReport {
    let mu = model.lipschitz_mu();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..samples {
        let v: f64 = rng.random_range(0.0..=50.0);
        let w: f64 = rng.random_range(0.0..=50.0);
        let y = w - v;
        let ratio = model.a(w) / model.a(v);
        let bound = (mu * y.abs()).exp();
        worst = worst.max(1.0 / bound - ratio).max(ratio - bound);
    }

    let grid: Vec<f64> = (0..=200).map(|k| 10f64.powf(4.0 * k as f64 / 200.0)).collect();
    let mut decay_excess: f64 = f64::NEG_INFINITY;
    for p in [2.0, 3.0] {
        for &v in &grid {
            decay_excess = decay_excess.max(model.decay_ratio(v, p) * v - 1.0);
        }
    }
    let mut increase: f64 = f64::NEG_INFINITY;
    let mut min_a = f64::INFINITY;
    for pair in grid.windows(2) {
        increase = increase.max(model.a(pair[1]) - model.a(pair[0]));
        min_a = min_a.min(model.a(pair[1]));
    }

    SuiteReport::new(
        "lemma1",
        vec![
            PropertyResult::at_most("ratio_bounds_violation", worst, RATIO_SLACK),
            PropertyResult::at_most("decay_ratio_times_v_minus_one", decay_excess, RATIO_SLACK),
            PropertyResult::at_most("a_increase_on_grid", increase, 0.0),
            PropertyResult::at_least("a_min_on_grid", min_a, f64::MIN_POSITIVE),
        ],
    )
}

/// Discrete maximum principles of a state solve: φ between the extreme
/// boundary values of φ0, u above min(u0, u1, 0), and nonpositive
/// off-diagonal stiffness entries.
pub fn max_principle_suite(spec: &ProblemSpec, beta: &Control, opts: &SolverOptions) -> Result<SuiteReport> {
    let sol = solve_state(spec, beta, opts)?;
    Ok(max_principle_report(spec, &sol))
}

pub fn max_principle_report(spec: &ProblemSpec, sol: &StateSolution) -> SuiteReport {
    let mesh = &spec.mesh;
    let bnd = mesh.boundary_vertices();
    let (lo, hi) = (0..mesh.num_vertices())
        .filter(|&i| bnd[i])
        .map(|i| spec.phi0[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let floor = spec
        .u0
        .iter()
        .chain(&spec.u1)
        .copied()
        .fold(0.0f64, f64::min);
    let k = stiffness(mesh);
    let mut offdiag: f64 = f64::NEG_INFINITY;
    for i in 0..k.n_rows() {
        let (cols, vals) = k.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                offdiag = offdiag.max(v);
            }
        }
    }
    SuiteReport::new(
        "maxprinciple",
        vec![
            PropertyResult::at_most("phi_below_boundary_min", lo - sol.phi.min(), MAX_PRINCIPLE_TOL),
            PropertyResult::at_most("phi_above_boundary_max", sol.phi.max() - hi, MAX_PRINCIPLE_TOL),
            PropertyResult::at_most("u_below_data_min", floor - sol.u.min(), MAX_PRINCIPLE_TOL),
            PropertyResult::at_most("stiffness_offdiagonal_max", offdiag, 1e-14),
        ],
    )
}

/// Substitution diagnostics on a mesh pair: a coarse problem and the same
/// problem after one uniform refinement.
#[derive(Debug, Clone, Serialize)]
pub struct SubstitutionLevel {
    pub r_v: f64,
    pub r_phi: f64,
    pub identity_defect: f64,
    pub inequality_min_corrected: f64,
    pub round_trip: f64,
}

fn substitution_level(spec: &ProblemSpec, beta: f64, opts: &SolverOptions) -> Result<SubstitutionLevel> {
    let control = Control::constant(&spec.mesh, beta, spec.m_cap)?;
    let sol = solve_state(spec, &control, opts)?;
    let model = spec.model.original();
    let max_u = sol.max_u();
    let m = if model.u_star().is_finite() { model.f(max_u)? + 1.0 } else { max_u + 1.0 };
    let ts = transform(&sol, model, &spec.phi0, m, &spec.mesh)?;
    let res = transformed_residual(&ts, model, spec, &control, &sol.phi.values)?;
    let id = psi_identity_check(&ts, model, spec, &sol.phi.values)?;
    let mut round_trip: f64 = 0.0;
    for (u, v) in sol.u.values.iter().zip(&ts.v.values) {
        round_trip = round_trip.max((model.f_inv(*v)? - u.max(0.0)).abs());
    }
    Ok(SubstitutionLevel {
        r_v: res.r_v,
        r_phi: res.r_phi,
        identity_defect: id.defect,
        inequality_min_corrected: id.inequality_min_corrected,
        round_trip,
    })
}

pub fn substitution_levels(
    coarse: &ProblemSpec,
    fine: &ProblemSpec,
    beta: f64,
    opts: &SolverOptions,
) -> Result<(SubstitutionLevel, SubstitutionLevel)> {
    Ok((
        substitution_level(coarse, beta, opts)?,
        substitution_level(fine, beta, opts)?,
    ))
}

/// Transformed residuals and the ψ identity defect decrease under one
/// refinement; F⁻¹(F(u)) recovers u; the ψ inequality holds up to the defect.
pub fn substitution_suite(
    coarse: &ProblemSpec,
    fine: &ProblemSpec,
    beta: f64,
    opts: &SolverOptions,
) -> Result<SuiteReport> {
    let (a, b) = substitution_levels(coarse, fine, beta, opts)?;
    let ratio = |x: f64, y: f64| if x > 0.0 { y / x } else { 0.0 };
    Ok(SuiteReport::new(
        "substitution",
        vec![
            PropertyResult::at_most("r_v_refinement_ratio", ratio(a.r_v, b.r_v), 1.0 - 1e-12),
            PropertyResult::at_most("r_phi_refinement_ratio", ratio(a.r_phi, b.r_phi), 1.0 - 1e-12),
            PropertyResult::at_most(
                "identity_defect_refinement_ratio",
                ratio(a.identity_defect, b.identity_defect),
                1.0 - 1e-12,
            ),
            PropertyResult::at_most("round_trip", a.round_trip.max(b.round_trip), ROUND_TRIP_TOL),
            PropertyResult::at_least(
                "inequality_slack_with_defect",
                a.inequality_min_corrected.min(b.inequality_min_corrected),
                -1e-12,
            ),
        ],
    ))
}

/// The three directional derivatives of J at one control and direction.
#[derive(Debug, Clone, Serialize)]
pub struct GradientTriple {
    pub adjoint: f64,
    pub sensitivity: f64,
    pub finite_difference: f64,
}

impl GradientTriple {
    /// Largest pairwise relative disagreement.
    pub fn max_relative_gap(&self) -> f64 {
        let v = [self.adjoint, self.sensitivity, self.finite_difference];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in i + 1..3 {
                let scale = v[i].abs().max(v[j].abs());
                if scale > 0.0 {
                    worst = worst.max((v[i] - v[j]).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Seeded interior control with values in [𝓜/4, 3𝓜/4].
pub fn random_interior_control(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Result<Control> {
    let n = spec.mesh.robin_facets().len();
    let m = spec.m_cap;
    Control::new(
        &spec.mesh,
        (0..n).map(|_| rng.random_range(0.25 * m..=0.75 * m)).collect(),
        m,
    )
}

/// Seeded admissible control with values in [0, 𝓜].
pub fn random_admissible_control(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Result<Control> {
    let n = spec.mesh.robin_facets().len();
    let m = spec.m_cap;
    Control::new(&spec.mesh, (0..n).map(|_| rng.random_range(0.0..=m)).collect(), m)
}

/// Adjoint pairing ∫g·ℓ, sensitivity value ∫ψ₁ + ∫2βℓ and the central
/// difference of J with step `step`, for every direction in `directions`.
pub fn gradient_triangle(
    spec: &ProblemSpec,
    beta: &Control,
    directions: &[Control],
    step: f64,
    opts: &SolverOptions,
) -> Result<Vec<GradientTriple>> {
    let state = solve_state(spec, beta, opts)?;
    let adjoint = solve_adjoint(spec, beta, &state)?;
    let g = gradient(spec, &state, &adjoint, beta);
    let mut shifted = Vec::with_capacity(2 * directions.len());
    for ell in directions {
        for sign in [1.0, -1.0] {
            let values = beta
                .values()
                .iter()
                .zip(ell.values())
                .map(|(b, l)| b + sign * step * l)
                .collect();
            shifted.push(Control::new(&spec.mesh, values, beta.m_cap())?);
        }
    }
    let objectives = shifted
        .par_iter()
        .map(|c| solve_state(spec, c, opts).map(|s| objective(&spec.mesh, &s.u.values, c).total))
        .collect::<Result<Vec<f64>>>()?;
    directions
        .iter()
        .enumerate()
        .map(|(k, ell)| {
            let pair = solve_sensitivity(spec, beta, &state, ell)?;
            Ok(GradientTriple {
                adjoint: boundary_pairing(&spec.mesh, &g, ell.values()),
                sensitivity: sensitivity_derivative(&spec.mesh, beta, &pair),
                finite_difference: (objectives[2 * k] - objectives[2 * k + 1]) / (2.0 * step),
            })
        })
        .collect()
}

/// Gradient triangle at a seeded interior control along seeded directions
/// with entries in [−1, 1].
pub fn gradient_suite(spec: &ProblemSpec, opts: &SolverOptions, seed: u64, count: usize) -> Result<SuiteReport> {
    if !(spec.m_cap > 0.0) {
        return Err(Error::Config(
            "the gradient suite needs a positive control bound".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = random_interior_control(spec, &mut rng)?;
    let n = beta.len();
    let directions: Vec<Control> = (0..count)
        .map(|_| Control::unchecked((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(), spec.m_cap))
        .collect();
    let triples = gradient_triangle(spec, &beta, &directions, FD_STEP, opts)?;
    let properties = triples
        .iter()
        .enumerate()
        .map(|(k, t)| PropertyResult::at_most(&format!("direction_{k}_relative_gap"), t.max_relative_gap(), GRADIENT_TOL))
        .collect();
    Ok(SuiteReport::new("gradient", properties))
}

/// Successive differences below this are treated as exact agreement.
pub const EXACT_DIFFERENCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceLevel {
    pub level: usize,
    pub vertices: usize,
    pub h: f64,
    pub iterations: usize,
    /// Norms of (previous level prolongated) − (this level); absent on level 0.
    pub u_l2_diff: Option<f64>,
    pub u_h1_diff: Option<f64>,
    pub phi_l2_diff: Option<f64>,
    pub phi_h1_diff: Option<f64>,
    pub u_l2_rate: Option<f64>,
    pub u_h1_rate: Option<f64>,
    pub phi_l2_rate: Option<f64>,
    pub phi_h1_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub levels: Vec<ConvergenceLevel>,
    /// Every difference fell below the exactness threshold.
    pub exact: bool,
    /// Set when a level failed to solve; the table then holds the levels before it.
    pub failure: Option<LevelFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelFailure {
    pub level: usize,
    pub message: String,
    /// The solve stopped at the truncation level rather than failing to converge.
    pub criticality: bool,
}

fn rate(prev: Option<f64>, cur: f64) -> Option<f64> {
    match prev {
        Some(p) if p > EXACT_DIFFERENCE && cur > EXACT_DIFFERENCE => Some((p / cur).log2()),
        _ => None,
    }
}

/// Self-convergence study: solves on `levels` successive uniform refinements
/// of `base` and measures the difference between consecutive levels after
/// prolongation; rates are log₂ of ratios of consecutive differences.
pub fn self_convergence<B>(base: Mesh, levels: usize, beta: f64, opts: &SolverOptions, build: B) -> Result<ConvergenceTable>
where
    B: Fn(Mesh) -> Result<ProblemSpec>,
{
    if levels < 2 {
        return Err(Error::Config(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    let mut rows: Vec<ConvergenceLevel> = Vec::with_capacity(levels);
    let mut mesh = base;
    let mut parents: Option<Vec<[usize; 2]>> = None;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut all_exact = true;
    for level in 0..levels {
        let spec = build(mesh.clone())?;
        let control = Control::constant(&spec.mesh, beta, spec.m_cap)?;
        let sol = match solve_state(&spec, &control, opts) {
            Ok(s) => s,
            Err(e) => {
                return Ok(ConvergenceTable {
                    levels: rows,
                    exact: false,
                    failure: Some(LevelFailure {
                        level,
                        message: e.to_string(),
                        criticality: matches!(e, Error::Criticality { .. }),
                    }),
                })
            }
        };
        let mut row = ConvergenceLevel {
            level,
            vertices: spec.mesh.num_vertices(),
            h: spec.mesh.max_cell_diameter(),
            iterations: sol.iterations,
            u_l2_diff: None,
            u_h1_diff: None,
            phi_l2_diff: None,
            phi_h1_diff: None,
            u_l2_rate: None,
            u_h1_rate: None,
            phi_l2_rate: None,
            phi_h1_rate: None,
        };
        if let (Some((pu, pphi)), Some(par)) = (&previous, &parents) {
            let du: Vec<f64> = prolongate(pu, par).iter().zip(&sol.u.values).map(|(a, b)| a - b).collect();
            let dphi: Vec<f64> = prolongate(pphi, par).iter().zip(&sol.phi.values).map(|(a, b)| a - b).collect();
            let nu = norms(&spec.mesh, &du);
            let nphi = norms(&spec.mesh, &dphi);
            let before = rows.last();
            row.u_l2_rate = rate(before.and_then(|r| r.u_l2_diff), nu.l2);
            row.u_h1_rate = rate(before.and_then(|r| r.u_h1_diff), nu.h1);
            row.phi_l2_rate = rate(before.and_then(|r| r.phi_l2_diff), nphi.l2);
            row.phi_h1_rate = rate(before.and_then(|r| r.phi_h1_diff), nphi.h1);
            all_exact &= nu.h1.max(nphi.h1) <= EXACT_DIFFERENCE;
            row.u_l2_diff = Some(nu.l2);
            row.u_h1_diff = Some(nu.h1);
            row.phi_l2_diff = Some(nphi.l2);
            row.phi_h1_diff = Some(nphi.h1);
        }
        rows.push(row);
        previous = Some((sol.u.values, sol.phi.values));
        if level + 1 < levels {
            let (fine, par) = refine_uniform_with_parents(&mesh)?;
            mesh = fine;
            parents = Some(par);
        }
    }
    Ok(ConvergenceTable {
        levels: rows,
        exact: all_exact,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{Field, UnknownKind};
    use crate::mesh::{build_rectangle_mesh, BoxFace, Side, TagRule};

    fn model() -> ConductivityModel {
        ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap()
    }

    fn spec(n: usize, u1: f64, slope: f64) -> ProblemSpec {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        let mesh = build_rectangle_mesh(&[1.0, 1.0], &[n, n], &rule).unwrap();
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| slope * p[0] + 0.2 * p[1] * p[1]).values;
        let nv = mesh.num_vertices();
        ProblemSpec::new(mesh, model(), vec![0.0; nv], vec![u1; nv], phi0, 2.0).unwrap()
    }

    #[test]
    fn lemma1_passes_for_the_power_model() {
        let r = conductivity_suite(&model(), 7, 100);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.properties.len(), 4);
    }

    #[test]
    fn max_principle_on_right_triangles() {
        let s = spec(8, 0.0, 0.6);
        let beta = Control::constant(&s.mesh, 1.0, 2.0).unwrap();
        let r = max_principle_suite(&s, &beta, &SolverOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn max_principle_flags_a_violation() {
        let s = spec(4, 0.0, 0.6);
        let beta = Control::constant(&s.mesh, 1.0, 2.0).unwrap();
        let mut sol = solve_state(&s, &beta, &SolverOptions::default()).unwrap();
        sol.phi.values[12] = 5.0;
        let r = max_principle_report(&s, &sol);
        assert!(!r.passed);
        assert_eq!(r.failures()[0].name, "phi_above_boundary_max");
    }

    #[test]
    fn substitution_suite_passes() {
        let r = substitution_suite(&spec(6, 0.05, 0.1), &spec(12, 0.05, 0.1), 1.0, &SolverOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gradient_suite_passes_and_is_deterministic() {
        let opts = SolverOptions {
            tol: 1e-13,
            ..SolverOptions::default()
        };
        let s = spec(6, 0.0, 0.6);
        let a = gradient_suite(&s, &opts, 3, 2).unwrap();
        let b = gradient_suite(&s, &opts, 3, 2).unwrap();
        assert!(a.passed, "{a:?}");
        for (x, y) in a.properties.iter().zip(&b.properties) {
            assert_eq!(x.measured.to_bits(), y.measured.to_bits());
        }
    }

    #[test]
    fn gradient_suite_needs_room_to_perturb() {
        let mut s = spec(4, 0.0, 0.6);
        s.m_cap = 0.0;
        assert!(matches!(gradient_suite(&s, &SolverOptions::default(), 1, 1), Err(Error::Config(_))));
    }

    fn smooth_constant_spec(mesh: Mesh) -> Result<ProblemSpec> {
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.5 * p[0].exp() * p[1].sin()).values;
        let u0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.1 + 0.05 * p[1] * p[1]).values;
        let nv = mesh.num_vertices();
        ProblemSpec::new(mesh, ConductivityModel::constant(1.0)?, u0, vec![0.2; nv], phi0, 2.0)
    }

    #[test]
    fn self_convergence_rates_of_p1() {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        let base = build_rectangle_mesh(&[1.0, 1.0], &[4, 4], &rule).unwrap();
        let table = self_convergence(base, 4, 1.0, &SolverOptions::default(), smooth_constant_spec).unwrap();
        assert!(table.failure.is_none() && !table.exact);
        for row in &table.levels[2..] {
            for r in [row.u_l2_rate, row.phi_l2_rate] {
                assert!((1.7..=2.3).contains(&r.unwrap()), "{row:?}");
            }
            for r in [row.u_h1_rate, row.phi_h1_rate] {
                assert!((0.7..=1.3).contains(&r.unwrap()), "{row:?}");
            }
        }
    }

    #[test]
    fn constant_solution_converges_exactly() {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        let base = build_rectangle_mesh(&[1.0, 1.0], &[2, 2], &rule).unwrap();
        let table = self_convergence(base, 3, 1.0, &SolverOptions::default(), |mesh| {
            let nv = mesh.num_vertices();
            ProblemSpec::new(mesh, model(), vec![0.2; nv], vec![0.2; nv], vec![0.3; nv], 2.0)
        })
        .unwrap();
        assert!(table.exact);
        assert!(table.levels.iter().all(|r| r.u_l2_rate.is_none()));
    }

    #[test]
    fn relative_gap() {
        let t = GradientTriple {
            adjoint: 1.0,
            sensitivity: 1.0005,
            finite_difference: 0.999,
        };
        assert!((t.max_relative_gap() - 0.0015 / 1.0005).abs() < 1e-12);
    }
}
