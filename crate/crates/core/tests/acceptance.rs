//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermopt_core::assembly::{Field, UnknownKind};
use thermopt_core::control::{
    objective, optimize, project_control, solve_sensitivity, Control, OptimizerMode, OptimizerOptions,
    OptimizerStatus,
};
use thermopt_core::materials::ConductivityModel;
use thermopt_core::mesh::{build_rectangle_mesh, BoxFace, Mesh, Side, TagRule};
use thermopt_core::state::{solve_state, weak_residual, ProblemSpec, SolverOptions};
use thermopt_core::transform::{
    check_certificate, compute_certificate, richardson, smallest_dirichlet_eigenvalue, EpsChoice,
};
use thermopt_core::verify::{
    conductivity_suite, gradient_suite, max_principle_suite, random_admissible_control,
    self_convergence, substitution_suite,
};
use thermopt_core::Result;

const SEED: u64 = 20240601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn power_model() -> ConductivityModel {
    ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap()
}

fn left_dirichlet_square(n: usize) -> Mesh {
    let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
    build_rectangle_mesh(&[1.0, 1.0], &[n, n], &rule).unwrap()
}

/// φ0 = 0.1x, u0 = 0 on x = 0, ambient temperature `u1`, 𝓜 = 2.
fn benchmark(n: usize, u1: f64) -> ProblemSpec {
    let mesh = left_dirichlet_square(n);
    let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.1 * p[0]).values;
    let nv = mesh.num_vertices();
    ProblemSpec::new(mesh, power_model(), vec![0.0; nv], vec![u1; nv], phi0, 2.0).unwrap()
}

fn unit_beta(spec: &ProblemSpec) -> Control {
    Control::constant(&spec.mesh, 1.0, spec.m_cap).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let model = power_model();
    let report = conductivity_suite(&model, SEED, 100);
    let mu = model.lipschitz_mu();
    let elapsed = start.elapsed();
    let fail: Vec<String> = report.failures().iter().map(|p| p.name.clone()).collect();
    Ok(Outcome {
        passed: report.passed && mu == 2.0 && within(elapsed, 1.0),
        detail: format!(
            "mu = {mu}, worst ratio violation {:.3e} (slack 1e-12), max v*g(v) - 1 = {:.3e}, failures {fail:?}, {:.2}s",
            report.properties[0].measured,
            report.properties[1].measured,
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_2() -> Result<Outcome> {
    let start = Instant::now();
    let spec = benchmark(16, 0.0);
    let beta = unit_beta(&spec);
    let sol = solve_state(&spec, &beta, &SolverOptions::default())?;
    let suite = max_principle_suite(&spec, &beta, &SolverOptions::default())?;
    let (min_phi, max_phi, min_u) = (sol.phi.min(), sol.phi.max(), sol.u.min());
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: min_phi >= -1e-10 && max_phi <= 0.1 + 1e-10 && min_u >= -1e-10 && suite.passed && within(elapsed, 5.0),
        detail: format!(
            "min phi {min_phi:.3e}, max phi {max_phi:.12}, min u {min_u:.3e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_3() -> Result<Outcome> {
    let start = Instant::now();
    let spec = benchmark(16, 0.0);
    let beta = unit_beta(&spec);
    let opts = SolverOptions::default();
    let sol = solve_state(&spec, &beta, &opts)?;
    let level = sol.truncation_used.expect("finite critical temperature");
    let res = weak_residual(&spec, &beta, &sol)?;
    let max_u = sol.max_u();
    let other_level = 0.5 * (level + max_u).max(max_u + 1e-3).min(level);
    let other = solve_state(
        &spec,
        &beta,
        &SolverOptions {
            truncation: Some(other_level),
            ..opts.clone()
        },
    )?;
    let agreement = sol
        .u
        .values
        .iter()
        .zip(&other.u.values)
        .chain(sol.phi.values.iter().zip(&other.phi.values))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: sol.iterations <= 200
            && max_u < level
            && other_level != level
            && other_level > max_u
            && res.r_u <= 1e-8
            && res.r_phi <= 1e-8
            && agreement <= 1e-9
            && within(elapsed, 30.0),
        detail: format!(
            "{} Picard iterations, max u {max_u:.4e} < n = {level}, scaled residuals u {:.2e} phi {:.2e}, levels {level} vs {other_level:.4}: agreement {agreement:.2e}, {:.2}s",
            sol.iterations,
            res.r_u,
            res.r_phi,
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_4() -> Result<Outcome> {
    let start = Instant::now();
    let report = substitution_suite(&benchmark(16, 0.05), &benchmark(32, 0.05), 1.0, &SolverOptions::default())?;
    let elapsed = start.elapsed();
    let parts: Vec<String> = report
        .properties
        .iter()
        .map(|p| format!("{} {:.3e}", p.name, p.measured))
        .collect();
    Ok(Outcome {
        passed: report.passed && within(elapsed, 60.0),
        detail: format!("{}, {:.2}s", parts.join(", "), elapsed.as_secs_f64()),
    })
}

fn criterion_5() -> Result<Outcome> {
    let start = Instant::now();
    let spec = benchmark(16, 0.05);
    let cert = compute_certificate(&spec, EpsChoice::Fixed(0.01), 1.0)?;
    let sol = solve_state(&spec, &unit_beta(&spec), &SolverOptions::default())?;
    let check = check_certificate(&sol, &cert, &spec.model)?;
    let t = &cert.thresholds;
    let exceeds = cert.m > 1.0 && cert.m > t.c_eps && cert.m > t.inv_eps && cert.m > t.data_u0 && cert.m > t.data_u1;

    let lambdas = [8, 16, 32]
        .iter()
        .map(|&n| {
            let mesh = build_rectangle_mesh(&[1.0, 1.0], &[n, n], &TagRule::all_dirichlet(2))?;
            smallest_dirichlet_eigenvalue(&mesh)
        })
        .collect::<Result<Vec<f64>>>()?;
    let c_d = richardson(&lambdas).map(|l| 1.0 / l.sqrt()).unwrap_or(f64::NAN);
    let target = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
    let poincare_error = (c_d / target - 1.0).abs();
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: exceeds
            && cert.denominator > 0.0
            && cert.n.is_finite()
            && cert.n < 1.0
            && check.passed
            && check.v_margin > 0.0
            && check.u_margin > 0.0
            && poincare_error < 0.02
            && within(elapsed, 60.0),
        detail: format!(
            "C {:.4}, M {}, C2 {:.4}, N {:.6} < 1, denominator {:.6}, margins v {:.3e} u {:.3e}, C_D extrapolated {c_d:.5} vs {target:.5} ({:.3}%), {:.2}s",
            cert.c,
            cert.m,
            cert.c2,
            cert.n,
            cert.denominator,
            check.v_margin,
            check.u_margin,
            100.0 * poincare_error,
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_6() -> Result<Outcome> {
    let start = Instant::now();
    let spec = benchmark(16, 0.05);
    let opts = SolverOptions {
        tol: 1e-12,
        ..SolverOptions::default()
    };
    let report = gradient_suite(&spec, &opts, SEED, 5)?;
    let worst = report.properties.iter().map(|p| p.measured).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: report.passed && report.properties.len() == 5 && within(elapsed, 300.0),
        detail: format!(
            "5 directions, worst pairwise relative gap {worst:.3e} (tol 1e-3), {:.2}s",
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_7() -> Result<Outcome> {
    let start = Instant::now();
    let spec = benchmark(16, 0.05);
    let solver = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let competitors = (0..20)
        .map(|_| random_admissible_control(&spec, &mut rng))
        .collect::<Result<Vec<Control>>>()?;
    let competitor_j = competitors
        .iter()
        .map(|b| solve_state(&spec, b, &solver).map(|s| objective(&spec.mesh, &s.u.values, b).total))
        .collect::<Result<Vec<f64>>>()?;
    let best_other = competitor_j.iter().copied().fold(f64::INFINITY, f64::min);

    let mut passed = true;
    let mut parts = Vec::new();
    for mode in [OptimizerMode::Sweep, OptimizerMode::ProjectedGradient] {
        let opts = OptimizerOptions {
            mode,
            ..OptimizerOptions::default()
        };
        let r = optimize(&spec, None, &solver, &opts)?;
        let proj = project_control(&spec, &r.state, &r.adjoint, spec.m_cap);
        let fixed_point = r
            .beta
            .values()
            .iter()
            .zip(proj.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let monotone = r.history.windows(2).all(|w| w[1].objective <= w[0].objective);
        let j = r.objective.total;
        let optimal = competitor_j.iter().all(|&o| j <= o + 1e-8);
        passed &= r.status == OptimizerStatus::Converged && fixed_point <= 1e-6 && optimal;
        if mode == OptimizerMode::ProjectedGradient {
            passed &= monotone;
        }
        parts.push(format!(
            "{mode:?}: {} iterations, fixed-point residual {fixed_point:.2e}, J {j:.6e}, J nonincreasing {monotone}",
            r.history.len()
        ));
    }
    let elapsed = start.elapsed();
    passed &= within(elapsed, 300.0);
    Ok(Outcome {
        passed,
        detail: format!(
            "{}; best of 20 random controls J {best_other:.6e}, {:.2}s",
            parts.join("; "),
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_8() -> Result<Outcome> {
    let start = Instant::now();
    let solver = SolverOptions::default();

    let capped = ProblemSpec {
        m_cap: 0.0,
        ..benchmark(8, 0.05)
    };
    let mut zero_cap = true;
    for mode in [OptimizerMode::Sweep, OptimizerMode::ProjectedGradient] {
        let opts = OptimizerOptions {
            mode,
            ..OptimizerOptions::default()
        };
        let r = optimize(&capped, None, &solver, &opts)?;
        zero_cap &= r.beta.values().iter().all(|&b| b == 0.0);
    }

    let mesh = left_dirichlet_square(8);
    let nv = mesh.num_vertices();
    let constant = ProblemSpec::new(mesh, power_model(), vec![0.2; nv], vec![0.2; nv], vec![0.3; nv], 2.0)?;
    let mut constant_zero = true;
    let mut constant_u = true;
    for mode in [OptimizerMode::Sweep, OptimizerMode::ProjectedGradient] {
        let opts = OptimizerOptions {
            mode,
            ..OptimizerOptions::default()
        };
        let r = optimize(&constant, None, &solver, &opts)?;
        constant_zero &= r.beta.values().iter().all(|&b| b == 0.0);
        constant_u &= r.state.u.values.iter().all(|&u| u == 0.2);
    }

    let spec = benchmark(8, 0.05);
    let beta = unit_beta(&spec);
    let state = solve_state(&spec, &beta, &solver)?;
    let ell = Control::unchecked(vec![0.0; beta.len()], spec.m_cap);
    let pair = solve_sensitivity(&spec, &beta, &state, &ell)?;
    let zero_sensitivity = pair.psi1.values.iter().chain(&pair.psi2.values).all(|&v| v == 0.0);
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: zero_cap && constant_zero && constant_u && zero_sensitivity && within(elapsed, 10.0),
        detail: format!(
            "cap 0 gives beta = 0: {zero_cap}; constant data gives beta = 0: {constant_zero}, u = u0: {constant_u}; zero direction gives psi = 0: {zero_sensitivity}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    })
}

fn criterion_9() -> Result<Outcome> {
    let start = Instant::now();
    let build = |mesh: Mesh| {
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.5 * p[0].exp() * p[1].sin()).values;
        let u0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.1 + 0.05 * p[1] * p[1]).values;
        let nv = mesh.num_vertices();
        ProblemSpec::new(mesh, ConductivityModel::constant(1.0)?, u0, vec![0.2; nv], phi0, 2.0)
    };
    let table = self_convergence(left_dirichlet_square(4), 4, 1.0, &SolverOptions::default(), build)?;
    let mut passed = table.failure.is_none() && table.levels.len() == 4;
    let mut parts = Vec::new();
    for row in table.levels.iter().skip(2) {
        let l2 = [row.u_l2_rate, row.phi_l2_rate];
        let h1 = [row.u_h1_rate, row.phi_h1_rate];
        passed &= l2.iter().all(|r| r.is_some_and(|r| (1.7..=2.3).contains(&r)));
        passed &= h1.iter().all(|r| r.is_some_and(|r| (0.7..=1.3).contains(&r)));
        parts.push(format!(
            "level {}: u L2 {:.3} H1 {:.3}, phi L2 {:.3} H1 {:.3}",
            row.level,
            row.u_l2_rate.unwrap_or(f64::NAN),
            row.u_h1_rate.unwrap_or(f64::NAN),
            row.phi_l2_rate.unwrap_or(f64::NAN),
            row.phi_h1_rate.unwrap_or(f64::NAN)
        ));
    }
    let elapsed = start.elapsed();
    passed &= within(elapsed, 120.0);
    Ok(Outcome {
        passed,
        detail: format!("{}; {:.2}s", parts.join("; "), elapsed.as_secs_f64()),
    })
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 9] = [
        ("transformed conductivity bounds", criterion_1),
        ("maximum principles", criterion_2),
        ("subcritical existence via truncation", criterion_3),
        ("substitution consistency", criterion_4),
        ("certificate chain", criterion_5),
        ("gradient triangle", criterion_6),
        ("optimality fixed point", criterion_7),
        ("degenerate cases", criterion_8),
        ("self-convergence", criterion_9),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = run().unwrap_or_else(|e| Outcome {
            passed: false,
            detail: format!("error: {e}"),
        });
        if !outcome.passed {
            failures += 1;
        }
        println!(
            "criterion {} [{}] {name}: {}",
            k + 1,
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
