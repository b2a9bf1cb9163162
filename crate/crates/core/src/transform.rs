//! The substitution v = F(u), ψ = (φ − φ0)² + v, residuals of the
//! transformed system and the a-priori L∞ bound certificate.

use serde::Serialize;

use crate::assembly::{
    self, cell_gradient, dot3, eval_at, load_vector, mass, stiffness, DualNorm, Field, UnknownKind,
};
use crate::control::Control;
use crate::error::{Error, Result};
use crate::linalg::BandCholesky;
use crate::materials::ConductivityModel;
use crate::mesh::Mesh;
use crate::quadrature::{simplex_rule, QuadPoint};
use crate::state::{ProblemSpec, StateSolution};

const C_EPS_GRID: usize = 2048;
const C_EPS_LO: f64 = 1e-6;
const C_EPS_HI: f64 = 1e6;
const C_EPS_SLACK: f64 = 1.05;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 500;
const DEFAULT_EPS: f64 = 0.01;
const AUTO_DENOMINATOR: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct TransformedState {
    pub v: Field,
    pub psi: Field,
    pub psi_m: Field,
    pub m: f64,
    /// Boundary facets on which the facet average of ψ exceeds M.
    pub gamma_m: Vec<usize>,
}

/// Nodewise v = F(u), ψ = (φ − φ0)² + v and ψ_M = max(M, ψ).
pub fn transform(sol: &StateSolution, model: &ConductivityModel, phi0: &[f64], m: f64, mesh: &Mesh) -> Result<TransformedState> {
    let u_star = model.u_star();
    if let Some(i) = sol.u.values.iter().position(|&u| !(u < u_star)) {
        return Err(Error::Domain(format!(
            "u = {} at vertex {i} is not below u_* = {u_star}",
            sol.u.values[i]
        )));
    }
    let v = sol
        .u
        .values
        .iter()
        .map(|&u| model.f(u))
        .collect::<Result<Vec<f64>>>()?;
    let psi: Vec<f64> = v
        .iter()
        .zip(sol.phi.values.iter().zip(phi0))
        .map(|(v, (p, p0))| (p - p0).powi(2) + v)
        .collect();
    let psi_m: Vec<f64> = psi.iter().map(|&p| p.max(m)).collect();
    let gamma_m = (0..mesh.num_facets())
        .filter(|&f| {
            let verts = mesh.facet(f);
            verts.iter().map(|&i| psi[i]).sum::<f64>() / verts.len() as f64 > m
        })
        .collect();
    Ok(TransformedState {
        v: Field::new(mesh, UnknownKind::Data, v)?,
        psi: Field::new(mesh, UnknownKind::Data, psi)?,
        psi_m: Field::new(mesh, UnknownKind::Data, psi_m)?,
        m,
        gamma_m,
    })
}

/// b_i = ∫ G·∇λ_i for a vector field G sampled at the quadrature nodes.
fn gradient_load<G>(mesh: &Mesh, field: G) -> Vec<f64>
where
    G: Fn(usize, &QuadPoint) -> [f64; 3],
{
    let rule = simplex_rule(mesh.dim());
    let mut out = vec![0.0; mesh.num_vertices()];
    for c in 0..mesh.num_cells() {
        let geo = mesh.geometry(c);
        let mut avg = [0.0; 3];
        for q in rule {
            let g = field(c, q);
            for k in 0..3 {
                avg[k] += q.weight * g[k];
            }
        }
        for (a, &i) in mesh.cell(c).iter().enumerate() {
            out[i] += geo.volume * dot3(&avg, &geo.grads[a]);
        }
    }
    out
}

/// Points (local barycentric weights) and weights of a degree-2 rule on a
/// boundary facet with `k` vertices.
fn facet_rule(k: usize) -> Vec<([f64; 3], f64)> {
    if k == 2 {
        let s = 0.5 / 3f64.sqrt();
        vec![([0.5 + s, 0.5 - s, 0.0], 0.5), ([0.5 - s, 0.5 + s, 0.0], 0.5)]
    } else {
        vec![
            ([0.5, 0.5, 0.0], 1.0 / 3.0),
            ([0.0, 0.5, 0.5], 1.0 / 3.0),
            ([0.5, 0.0, 0.5], 1.0 / 3.0),
        ]
    }
}

/// Scaled dual-norm residuals of the transformed system.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransformedResidual {
    pub r_v: f64,
    pub r_phi: f64,
}

/// Weak residuals of the a(v)-weighted system at (v_h, φ_h): the v equation
/// with the nonlinear Robin term β(F⁻¹(v) − u1) and the potential equation,
/// each measured in the dual norm and divided by max(1, dual norm of its data).
pub fn transformed_residual(
    ts: &TransformedState,
    model: &ConductivityModel,
    spec: &ProblemSpec,
    beta: &Control,
    phi: &[f64],
) -> Result<TransformedResidual> {
    let mesh = &spec.mesh;
    let v = &ts.v.values;
    let a_at = |c: usize, q: &QuadPoint| model.a(eval_at(mesh, v, c, q));

    let flux_v = gradient_load(mesh, |c, q| {
        let g = cell_gradient(mesh, v, c);
        let a = a_at(c, q);
        [a * g[0], a * g[1], a * g[2]]
    });
    let joule = load_vector(mesh, |c, q| {
        let g = cell_gradient(mesh, phi, c);
        a_at(c, q) * dot3(&g, &g)
    });
    let mut robin = vec![0.0; mesh.num_vertices()];
    let mut robin_data = vec![0.0; mesh.num_vertices()];
    for (&f, &b) in mesh.robin_facets().iter().zip(beta.values()) {
        let verts = mesh.facet(f);
        let measure = mesh.facet_measure(f);
        for (bary, w) in facet_rule(verts.len()) {
            let vq: f64 = verts.iter().enumerate().map(|(a, &i)| bary[a] * v[i]).sum();
            let u1q: f64 = verts.iter().enumerate().map(|(a, &i)| bary[a] * spec.u1[i]).sum();
            let uq = model.f_inv(vq.max(0.0))?;
            for (a, &i) in verts.iter().enumerate() {
                robin[i] += measure * w * b * uq * bary[a];
                robin_data[i] += measure * w * b * u1q * bary[a];
            }
        }
    }
    let dir = mesh.dirichlet_vertices();
    let r_v: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| {
            if dir[i] {
                0.0
            } else {
                flux_v[i] + robin[i] - robin_data[i] - joule[i]
            }
        })
        .collect();
    let load_v: Vec<f64> = joule.iter().zip(&robin_data).map(|(a, b)| a + b).collect();

    let bnd = mesh.boundary_vertices();
    let flux_phi = gradient_load(mesh, |c, q| {
        let g = cell_gradient(mesh, phi, c);
        let a = a_at(c, q);
        [a * g[0], a * g[1], a * g[2]]
    });
    let r_phi: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| if bnd[i] { 0.0 } else { flux_phi[i] })
        .collect();
    let lifted: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| if bnd[i] { spec.phi0[i] } else { 0.0 })
        .collect();
    let load_phi = gradient_load(mesh, |c, q| {
        let g = cell_gradient(mesh, &lifted, c);
        let a = a_at(c, q);
        [a * g[0], a * g[1], a * g[2]]
    });

    let dn_v = DualNorm::new(mesh, &dir)?;
    let dn_phi = DualNorm::new(mesh, &bnd)?;
    Ok(TransformedResidual {
        r_v: dn_v.eval(&r_v) / dn_v.eval(&load_v).max(1.0),
        r_phi: dn_phi.eval(&r_phi) / dn_phi.eval(&load_phi).max(1.0),
    })
}

/// Weak defect of the ψ identity and the slack of the companion inequality.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityCheck {
    /// Scaled dual norm of the identity defect over interior test functions.
    pub defect: f64,
    /// Smallest (right − left) of the inequality tested with each interior
    /// hat function, divided by the sum of the magnitudes of its terms.
    pub inequality_min_slack: f64,
    /// The same slack bound with the local identity defect added back; it is
    /// nonnegative whenever the inequality holds up to the defect.
    pub inequality_min_corrected: f64,
}

/// Tests ∇·(a∇ψ) = a|∇φ|² − 2∇·((φ−φ0)a∇φ0) − 2a∇φ·∇φ0 and
/// −∇·(a∇ψ) ≤ a|∇φ0|² + 2∇·((φ−φ0)a∇φ0) against interior hat functions.
pub fn psi_identity_check(ts: &TransformedState, model: &ConductivityModel, spec: &ProblemSpec, phi: &[f64]) -> Result<IdentityCheck> {
    let mesh = &spec.mesh;
    let v = &ts.v.values;
    let psi = &ts.psi.values;
    let phi0 = &spec.phi0;
    let a_at = |c: usize, q: &QuadPoint| model.a(eval_at(mesh, v, c, q));

    // ∫ a∇ψ·∇λ_i
    let flux_psi = gradient_load(mesh, |c, q| {
        let g = cell_gradient(mesh, psi, c);
        let a = a_at(c, q);
        [a * g[0], a * g[1], a * g[2]]
    });
    // ∫ (φ−φ0) a ∇φ0·∇λ_i
    let cross_flux = gradient_load(mesh, |c, q| {
        let g0 = cell_gradient(mesh, phi0, c);
        let s = (eval_at(mesh, phi, c, q) - eval_at(mesh, phi0, c, q)) * a_at(c, q);
        [s * g0[0], s * g0[1], s * g0[2]]
    });
    let joule = load_vector(mesh, |c, q| {
        let g = cell_gradient(mesh, phi, c);
        a_at(c, q) * dot3(&g, &g)
    });
    let mixed = load_vector(mesh, |c, q| {
        let g = cell_gradient(mesh, phi, c);
        let g0 = cell_gradient(mesh, phi0, c);
        a_at(c, q) * dot3(&g, &g0)
    });
    let data = load_vector(mesh, |c, q| {
        let g0 = cell_gradient(mesh, phi0, c);
        a_at(c, q) * dot3(&g0, &g0)
    });

    let bnd = mesh.boundary_vertices();
    let n = mesh.num_vertices();
    // weak form: −∫a∇ψ·∇w = ∫a|∇φ|²w + 2∫(φ−φ0)a∇φ0·∇w − 2∫a∇φ·∇φ0 w
    let defect: Vec<f64> = (0..n)
        .map(|i| {
            if bnd[i] {
                0.0
            } else {
                flux_psi[i] + joule[i] + 2.0 * cross_flux[i] - 2.0 * mixed[i]
            }
        })
        .collect();
    let source: Vec<f64> = (0..n)
        .map(|i| {
            if bnd[i] {
                0.0
            } else {
                joule[i] + 2.0 * cross_flux[i] - 2.0 * mixed[i]
            }
        })
        .collect();
    let dn = DualNorm::new(mesh, &bnd)?;
    let scaled_defect = dn.eval(&defect) / dn.eval(&source).max(1.0);

    // weak inequality with w ≥ 0: ∫a∇ψ·∇w ≤ ∫a|∇φ0|²w − 2∫(φ−φ0)a∇φ0·∇w
    let mut min_slack = f64::INFINITY;
    let mut min_corrected = f64::INFINITY;
    for i in (0..n).filter(|&i| !bnd[i]) {
        let slack = data[i] - 2.0 * cross_flux[i] - flux_psi[i];
        let scale = (data[i].abs() + 2.0 * cross_flux[i].abs() + flux_psi[i].abs()).max(f64::MIN_POSITIVE);
        min_slack = min_slack.min(slack / scale);
        min_corrected = min_corrected.min((slack + defect[i].abs()) / scale);
    }
    Ok(IdentityCheck {
        defect: scaled_defect,
        inequality_min_slack: min_slack,
        inequality_min_corrected: min_corrected,
    })
}

/// C_ε = 1.05·max(0, sup_v [a(v)∫₀ᵛ s^{p−2}/a(s) ds − ε vᵖ]) over a
/// log-spaced grid on [1e−6, 1e6].
pub fn compute_c_eps(model: &ConductivityModel, eps: f64, p: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("ε must be positive, got {eps}")));
    }
    if !(p >= 2.0) {
        return Err(Error::Domain(format!("exponent p must be at least 2, got {p}")));
    }
    let ratio = (C_EPS_HI / C_EPS_LO).ln() / (C_EPS_GRID - 1) as f64;
    let mut prev = C_EPS_LO;
    let mut cumulative = model.weighted_inverse_integral(C_EPS_LO, p);
    let mut sup: f64 = 0.0;
    for k in 0..C_EPS_GRID {
        let v = C_EPS_LO * (ratio * k as f64).exp();
        if k > 0 {
            cumulative += model.weighted_inverse_integral_between(prev, v, p);
        }
        prev = v;
        sup = sup.max(model.a(v) * cumulative - eps * v.powf(p));
    }
    Ok(C_EPS_SLACK * sup)
}

/// C_D = 1/√λ_min for the Laplacian with homogeneous Dirichlet data on the
/// Dirichlet-tagged vertices, by inverse power iteration.
pub fn estimate_poincare(mesh: &Mesh) -> Result<f64> {
    smallest_dirichlet_eigenvalue(mesh).map(|l| 1.0 / l.sqrt())
}

/// Smallest generalized eigenvalue of K x = λ M x on the non-Dirichlet vertices.
pub fn smallest_dirichlet_eigenvalue(mesh: &Mesh) -> Result<f64> {
    let dir = mesh.dirichlet_vertices();
    if !dir.iter().any(|&d| d) {
        return Err(Error::Estimation("no Dirichlet vertices: Poincaré constant undefined".into()));
    }
    let free: Vec<usize> = (0..mesh.num_vertices()).filter(|&i| !dir[i]).collect();
    if free.is_empty() {
        return Err(Error::Estimation("no free vertices".into()));
    }
    let k = stiffness(mesh).submatrix(&free, &free);
    let m = mass(mesh).submatrix(&free, &free);
    let factor = BandCholesky::factor(&k)?;
    let mut x = vec![1.0; free.len()];
    let mut lambda = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let mx = m.mul_vec(&x);
        let y = factor.solve(&mx);
        let norm = m.bilinear(&y, &y).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Estimation("inverse iteration collapsed".into()));
        }
        x = y.into_iter().map(|v| v / norm).collect();
        let next = k.bilinear(&x, &x) / m.bilinear(&x, &x);
        if (next - lambda).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::Estimation(format!(
        "inverse iteration did not converge in {POWER_MAX_ITER} iterations"
    )))
}

/// Richardson extrapolation of a sequence from successive uniform
/// refinements, with the order estimated from the last three terms.
pub fn richardson(values: &[f64]) -> Option<f64> {
    let [.., a, b, c] = values else {
        return None;
    };
    let (d1, d2) = (a - b, b - c);
    if d2 == 0.0 {
        return Some(*c);
    }
    let order = (d1 / d2).abs().log2();
    if !order.is_finite() || order <= 0.0 {
        return None;
    }
    Some(c - d2 / (2f64.powf(order) - 1.0))
}

/// ε for the certificate: an explicit value or automatic halving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsChoice {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub dim: usize,
    pub mu: f64,
    pub phi0_inf: f64,
    pub phi0_w1inf: f64,
    #[serde(rename = "F_u0")]
    pub f_u0: f64,
    #[serde(rename = "F_u1")]
    pub f_u1: f64,
    pub eps: f64,
    #[serde(rename = "C_eps")]
    pub c_eps: f64,
    /// 1 − 2ε e^{8μ‖φ0‖²_∞}‖φ0‖²_{W1,∞}
    pub denominator: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// The four lower bounds M has to exceed besides 1.
    pub thresholds: Thresholds,
    #[serde(rename = "C_D")]
    pub c_d: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub measure: f64,
    pub psi_m_l2_bound: f64,
    pub moser_factor: f64,
    pub psi_m_inf_bound: f64,
    pub v_inf_bound: f64,
    #[serde(rename = "N")]
    pub n: f64,
    pub u_star: Option<f64>,
    pub r: f64,
    /// 2(d−1)/(d−2); absent for d = 2.
    pub s: Option<f64>,
    pub conditional_on_c1: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    pub c_eps: f64,
    pub inv_eps: f64,
    pub data_u0: f64,
    pub data_u1: f64,
}

impl BoundCertificate {
    /// Whether M exceeds 1, C_ε, 1/ε and both data thresholds.
    pub fn thresholds_hold(&self) -> bool {
        let t = &self.thresholds;
        self.m > 1.0 && self.m > t.c_eps && self.m > t.inv_eps && self.m > t.data_u0 && self.m > t.data_u1
    }
}

/// Factor relating ‖ψ_M‖_∞ to ‖ψ_M‖₂.
pub fn moser_factor(c2: f64, dim: usize) -> f64 {
    if dim <= 2 {
        2.0 * c2
    } else {
        let d = dim as f64;
        (2.0 * c2).powf(d / 2.0) * (d / (d - 2.0)).powf(d * (d - 2.0) / 4.0)
    }
}

struct DataNorms {
    mu: f64,
    phi0_inf: f64,
    phi0_w1inf: f64,
}

impl DataNorms {
    fn of(spec: &ProblemSpec) -> Self {
        Self {
            mu: spec.model.original().lipschitz_mu(),
            phi0_inf: spec.phi0_sup(),
            phi0_w1inf: assembly::w1inf_norm(&spec.mesh, &spec.phi0),
        }
    }

    /// e^{8μ‖φ0‖²_∞}‖φ0‖²_{W1,∞}
    fn growth(&self) -> f64 {
        (8.0 * self.mu * self.phi0_inf.powi(2)).exp() * self.phi0_w1inf.powi(2)
    }
}

/// Halves ε from 0.01 until 1 − 2ε e^{8μ‖φ0‖²}‖φ0‖²_{W1,∞} and 1 − 2εCC_D²
/// both exceed one half.
pub fn choose_eps(spec: &ProblemSpec, c_d: f64) -> Result<f64> {
    let growth = DataNorms::of(spec).growth();
    let mut eps = DEFAULT_EPS;
    for _ in 0..200 {
        let denom = 1.0 - 2.0 * eps * growth;
        if denom > AUTO_DENOMINATOR {
            let c = 8.0 * growth / denom;
            if 1.0 - 2.0 * eps * c * c_d * c_d > AUTO_DENOMINATOR {
                return Ok(eps);
            }
        }
        eps *= 0.5;
    }
    Err(Error::CertificateInfeasible(
        "no admissible ε found by halving; reduce ‖φ0‖".into(),
    ))
}

/// Evaluates the chain μ → C → C_ε → M → C_D → C2 → ‖ψ_M‖₂ → ‖ψ_M‖_∞ →
/// ‖v‖_∞ → N for the original (untruncated) conductivity of `spec`.
pub fn compute_certificate(spec: &ProblemSpec, eps: EpsChoice, c1: f64) -> Result<BoundCertificate> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::Config(format!("Sobolev constant C1 must be positive, got {c1}")));
    }
    let mesh = &spec.mesh;
    let model = spec.model.original();
    let norms = DataNorms::of(spec);
    let c_d = estimate_poincare(mesh)?;
    let eps = match eps {
        EpsChoice::Auto => choose_eps(spec, c_d)?,
        EpsChoice::Fixed(e) => {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("ε must be positive, got {e}")));
            }
            e
        }
    };
    let growth = norms.growth();
    let denominator = 1.0 - 2.0 * eps * growth;
    if denominator <= 0.0 {
        return Err(Error::CertificateInfeasible(format!(
            "1 − 2ε e^(8μ‖φ0‖²)‖φ0‖²_W1,∞ = {denominator} ≤ 0 for ε = {eps}; reduce ε or φ0"
        )));
    }
    let c = 8.0 * growth / denominator;
    let c_eps = compute_c_eps(model, eps, 2.0)?;
    let f_u0 = model.f(spec.u0_sup())?;
    let f_u1 = model.f(spec.u1_sup())?;
    let shift = 4.0 * norms.phi0_inf.powi(2);
    let thresholds = Thresholds {
        c_eps,
        inv_eps: 1.0 / eps,
        data_u0: shift + f_u0,
        data_u1: shift + f_u1,
    };
    let m = 1.0_f64
        .max(thresholds.c_eps)
        .max(thresholds.inv_eps)
        .max(thresholds.data_u0)
        .max(thresholds.data_u1)
        + 1.0;

    let measure = mesh.measure();
    let poincare_denominator = 1.0 - 2.0 * eps * c * c_d * c_d;
    if poincare_denominator <= 0.0 {
        return Err(Error::CertificateInfeasible(format!(
            "1 − 2εC C_D² = {poincare_denominator} ≤ 0 for ε = {eps}; reduce ε"
        )));
    }
    let psi_m_l2_sq = 2.0 * measure / poincare_denominator
        * (c * c_d * c_d * (c_eps + 1.0 / eps) + m * m * measure);
    let psi_m_l2_bound = psi_m_l2_sq.sqrt();
    let c2 = 0.5 * c1 * (1.0 + c.sqrt() * (m + eps).sqrt());
    let dim = mesh.dim();
    let factor = moser_factor(c2, dim);
    let psi_m_inf_bound = factor * psi_m_l2_bound;
    let v_inf_bound = shift + m.max(psi_m_inf_bound);
    let n = model.f_inv(v_inf_bound).map_err(|e| {
        Error::CertificateInfeasible(format!("bound on ‖v‖_∞ = {v_inf_bound} cannot be mapped back: {e}"))
    })?;
    let d = dim as f64;
    let u_star = model.u_star();
    Ok(BoundCertificate {
        dim,
        mu: norms.mu,
        phi0_inf: norms.phi0_inf,
        phi0_w1inf: norms.phi0_w1inf,
        f_u0,
        f_u1,
        eps,
        c_eps,
        denominator,
        c,
        m,
        thresholds,
        c_d,
        c1,
        c2,
        measure,
        psi_m_l2_bound,
        moser_factor: factor,
        psi_m_inf_bound,
        v_inf_bound,
        n,
        u_star: u_star.is_finite().then_some(u_star),
        r: 2.0 * (d - 1.0),
        s: (dim > 2).then(|| 2.0 * (d - 1.0) / (d - 2.0)),
        conditional_on_c1: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateCheck {
    pub max_v: f64,
    pub v_margin: f64,
    pub max_u: f64,
    pub u_margin: f64,
    pub passed: bool,
    pub note: Option<String>,
}

/// Compares a solution against the certificate; a violation is a finding.
pub fn check_certificate(sol: &StateSolution, cert: &BoundCertificate, model: &ConductivityModel) -> Result<CertificateCheck> {
    let model = model.original();
    let max_u = sol.max_u();
    let max_v = sol
        .u
        .values
        .iter()
        .map(|&u| model.f(u))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let v_margin = cert.v_inf_bound - max_v;
    let u_margin = cert.n - max_u;
    let passed = v_margin > 0.0 && u_margin > 0.0;
    let note = (!passed).then(|| {
        format!(
            "bound violated; the certificate is conditional on the user-supplied Sobolev constant C1 = {}",
            cert.c1
        )
    });
    Ok(CertificateCheck {
        max_v,
        v_margin,
        max_u,
        u_margin,
        passed,
        note,
    })
}

/// Discrete check of ∫|∇ψ_M|² ≤ C∫(εψ_M² + C_ε + 1/ε) and of the side
/// condition v > F(‖u1‖_∞) on the facets where ψ > M.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyDiagnostic {
    pub lhs: f64,
    pub rhs: f64,
    pub within_slack: bool,
    pub gamma_m_facets: usize,
    pub side_condition_holds: bool,
}

pub fn energy_diagnostic(ts: &TransformedState, cert: &BoundCertificate, mesh: &Mesh, defect: f64) -> EnergyDiagnostic {
    let n = assembly::norms(mesh, &ts.psi_m.values);
    let lhs = n.h1_semi.powi(2);
    let rhs = cert.c * (cert.eps * n.l2.powi(2) + (cert.c_eps + 1.0 / cert.eps) * mesh.measure());
    let side_condition_holds = ts.gamma_m.iter().all(|&f| {
        let verts = mesh.facet(f);
        verts.iter().map(|&i| ts.v.values[i]).sum::<f64>() / verts.len() as f64 > cert.f_u1
    });
    EnergyDiagnostic {
        lhs,
        rhs,
        within_slack: lhs <= 1.1 * rhs + defect,
        gamma_m_facets: ts.gamma_m.len(),
        side_condition_holds,
    }
}

/// Constants entering the smallness condition for differentiability of the
/// control-to-state map. Only μ and ‖∇φ0‖_∞ are computable from the data;
/// the others are user inputs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct K1Inputs {
    pub k: f64,
    pub m_tilde: f64,
    pub big_k: f64,
    pub m1: f64,
    pub phi: f64,
    pub mu: f64,
    pub c6: f64,
    /// C1(u) = σ(N)
    pub c1_u: f64,
    pub grad_phi0_inf: f64,
}

/// k1 = k − 2M̃KM1Φ − 2M̃μKM1Φ/C1(u) − μC6KM1Φ²/C1(u) − K‖∇φ0‖_∞M1Φ
/// − μ‖∇φ0‖_∞KM1Φ/C1(u); positive k1 is the smallness condition.
pub fn compute_k1(c: &K1Inputs) -> f64 {
    let kmp = c.big_k * c.m1 * c.phi;
    c.k - 2.0 * c.m_tilde * kmp
        - 2.0 * c.m_tilde * c.mu * kmp / c.c1_u
        - c.mu * c.c6 * kmp * c.phi / c.c1_u
        - c.grad_phi0_inf * kmp
        - c.mu * c.grad_phi0_inf * kmp / c.c1_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::JouleForm;
    use crate::mesh::{build_rectangle_mesh, BoxFace, Side, TagRule};
    use crate::state::{solve_state, SolverOptions};
    use proptest::prelude::*;

    fn model() -> ConductivityModel {
        ConductivityModel::truncated_power(1.0, 1.0, 2.0).unwrap()
    }

    fn left_dirichlet(n: usize) -> Mesh {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        build_rectangle_mesh(&[1.0, 1.0], &[n, n], &rule).unwrap()
    }

    fn spec_with(n: usize, model: ConductivityModel, slope: f64, u1: f64) -> ProblemSpec {
        let mesh = left_dirichlet(n);
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| slope * p[0]).values;
        let nv = mesh.num_vertices();
        ProblemSpec::new(mesh, model, vec![0.0; nv], vec![u1; nv], phi0, 2.0).unwrap()
    }

    fn benchmark_spec(n: usize) -> ProblemSpec {
        spec_with(n, model(), 0.1, 0.05)
    }

    fn heated_spec(n: usize) -> ProblemSpec {
        let mesh = left_dirichlet(n);
        let phi0 = Field::interpolate(&mesh, UnknownKind::Data, |p| 0.6 * p[0] + 0.2 * p[1] * p[1]).values;
        let nv = mesh.num_vertices();
        ProblemSpec::new(mesh, model(), vec![0.0; nv], vec![0.0; nv], phi0, 2.0).unwrap()
    }

    fn fake_solution(mesh: &Mesh, u: Vec<f64>, phi: Vec<f64>) -> StateSolution {
        StateSolution {
            u: Field::new(mesh, UnknownKind::Temperature, u).unwrap(),
            phi: Field::new(mesh, UnknownKind::Potential, phi).unwrap(),
            iterations: 0,
            residual_u: 0.0,
            residual_phi: 0.0,
            sigma_clamp_count: 0,
            truncation_used: None,
            joule_form: JouleForm::Weak,
            history: Vec::new(),
        }
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            tol: 1e-12,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn zero_temperature_transforms_to_zero() {
        let spec = benchmark_spec(4);
        let nv = spec.mesh.num_vertices();
        let sol = fake_solution(&spec.mesh, vec![0.0; nv], spec.phi0.clone());
        let ts = transform(&sol, &spec.model, &spec.phi0, 7.0, &spec.mesh).unwrap();
        assert!(ts.v.values.iter().all(|&v| v == 0.0));
        assert!(ts.psi.values.iter().all(|&v| v == 0.0));
        assert!(ts.psi_m.values.iter().all(|&v| v == 7.0));
        assert!(ts.gamma_m.is_empty());
    }

    #[test]
    fn half_critical_temperature_maps_to_one() {
        let spec = benchmark_spec(4);
        let nv = spec.mesh.num_vertices();
        let sol = fake_solution(&spec.mesh, vec![0.5; nv], spec.phi0.clone());
        let ts = transform(&sol, &spec.model, &spec.phi0, 0.5, &spec.mesh).unwrap();
        for (v, p) in ts.v.values.iter().zip(&ts.psi.values) {
            assert!((v - 1.0).abs() < 1e-14);
            assert!((p - 1.0).abs() < 1e-14);
        }
        assert_eq!(ts.gamma_m.len(), spec.mesh.num_facets());
    }

    #[test]
    fn critical_temperature_is_a_domain_error() {
        let spec = benchmark_spec(2);
        let nv = spec.mesh.num_vertices();
        let mut u = vec![0.1; nv];
        u[3] = 1.0;
        let sol = fake_solution(&spec.mesh, u, spec.phi0.clone());
        assert!(matches!(
            transform(&sol, &spec.model, &spec.phi0, 1.0, &spec.mesh),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn transform_round_trip_on_a_solve() {
        let spec = heated_spec(8);
        let beta = Control::constant(&spec.mesh, 1.0, 2.0).unwrap();
        let sol = solve_state(&spec, &beta, &tight()).unwrap();
        let ts = transform(&sol, &spec.model, &spec.phi0, 1.0, &spec.mesh).unwrap();
        for (u, v) in sol.u.values.iter().zip(&ts.v.values) {
            assert!((spec.model.f_inv(*v).unwrap() - u.max(0.0)).abs() <= 1e-8);
        }
        for ((v, p), pm) in ts.v.values.iter().zip(&ts.psi.values).zip(&ts.psi_m.values) {
            assert!(*v >= 0.0 && p >= v && *pm >= 1.0);
        }
    }

    #[test]
    fn constant_solution_has_vanishing_transformed_residual() {
        let mesh = left_dirichlet(4);
        let nv = mesh.num_vertices();
        let spec = ProblemSpec::new(mesh, model(), vec![0.2; nv], vec![0.2; nv], vec![0.3; nv], 2.0).unwrap();
        let beta = Control::constant(&spec.mesh, 1.0, 2.0).unwrap();
        let sol = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let ts = transform(&sol, &spec.model, &spec.phi0, 2.0, &spec.mesh).unwrap();
        let r = transformed_residual(&ts, &spec.model, &spec, &beta, &sol.phi.values).unwrap();
        assert!(r.r_v <= 1e-9 && r.r_phi <= 1e-9, "{r:?}");
        let id = psi_identity_check(&ts, &spec.model, &spec, &sol.phi.values).unwrap();
        assert!(id.defect <= 1e-9);
    }

    fn residuals_at(spec: &ProblemSpec) -> (TransformedResidual, IdentityCheck) {
        let beta = Control::constant(&spec.mesh, 1.0, 2.0).unwrap();
        let sol = solve_state(spec, &beta, &tight()).unwrap();
        let ts = transform(&sol, &spec.model, &spec.phi0, 1.0, &spec.mesh).unwrap();
        (
            transformed_residual(&ts, &spec.model, spec, &beta, &sol.phi.values).unwrap(),
            psi_identity_check(&ts, &spec.model, spec, &sol.phi.values).unwrap(),
        )
    }

    #[test]
    fn substitution_residuals_decrease_under_refinement() {
        for build in [benchmark_spec as fn(usize) -> ProblemSpec, heated_spec] {
            let (r8, i8) = residuals_at(&build(8));
            let (r16, i16) = residuals_at(&build(16));
            assert!(r16.r_v < r8.r_v, "{r8:?} {r16:?}");
            assert!(r16.r_phi < r8.r_phi, "{r8:?} {r16:?}");
            assert!(i16.defect < i8.defect, "{i8:?} {i16:?}");
            assert!(r8.r_v < 1e-2 && i8.defect < 1e-2);
        }
    }

    #[test]
    fn inequality_holds_up_to_the_identity_defect() {
        for spec in [benchmark_spec(8), heated_spec(8)] {
            let (_, id) = residuals_at(&spec);
            assert!(id.inequality_min_corrected >= -1e-12, "{id:?}");
        }
    }

    #[test]
    fn constant_potential_reduces_identity_to_temperature_equation() {
        let mesh = left_dirichlet(8);
        let nv = mesh.num_vertices();
        let spec = ProblemSpec::new(mesh, model(), vec![0.0; nv], vec![0.3; nv], vec![0.2; nv], 2.0).unwrap();
        let beta = Control::constant(&spec.mesh, 1.0, 2.0).unwrap();
        let sol = solve_state(&spec, &beta, &tight()).unwrap();
        let ts = transform(&sol, &spec.model, &spec.phi0, 1.0, &spec.mesh).unwrap();
        let r = transformed_residual(&ts, &spec.model, &spec, &beta, &sol.phi.values).unwrap();
        let id = psi_identity_check(&ts, &spec.model, &spec, &sol.phi.values).unwrap();
        assert!(id.defect <= r.r_v * (1.0 + 1e-9) + 1e-15, "{id:?} {r:?}");
    }

    #[test]
    fn c_eps_of_constant_model_is_quarter_inverse_eps() {
        let m = ConductivityModel::constant(1.0).unwrap();
        for eps in [0.01, 0.1, 1.0] {
            let c = compute_c_eps(&m, eps, 2.0).unwrap();
            let exact = 1.0 / (4.0 * eps);
            assert!(c >= exact * (1.0 - 1e-6) && c <= 1.05 * exact * (1.0 + 1e-9), "{eps}: {c}");
        }
    }

    #[test]
    fn c_eps_of_power_model_matches_closed_form_supremum() {
        // a(v) = (1+v)^-2, a(v)∫₀ᵛ 1/a = ((1+v)³ − 1)/(3(1+v)²)
        let eps = 0.01;
        let g = |v: f64| ((1.0 + v).powi(3) - 1.0) / (3.0 * (1.0 + v).powi(2)) - eps * v * v;
        let mut best: f64 = 0.0;
        for k in 0..=200_000 {
            best = best.max(g(k as f64 * 1e-3));
        }
        let c = compute_c_eps(&model(), eps, 2.0).unwrap() / 1.05;
        assert!(c <= best * (1.0 + 1e-9) && c >= best - 1e-3, "{c} vs {best}");
    }

    #[test]
    fn c_eps_small_for_large_eps() {
        let c = compute_c_eps(&model(), 1e3, 2.0).unwrap();
        // near zero the product behaves like v, so the supremum is about 1/(4ε)
        assert!(c >= 0.0 && c <= 1.05 / 4e3, "{c}");
    }

    #[test]
    fn poincare_constant_of_the_unit_square() {
        let lambdas: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let mesh = build_rectangle_mesh(&[1.0, 1.0], &[n, n], &TagRule::all_dirichlet(2)).unwrap();
                smallest_dirichlet_eigenvalue(&mesh).unwrap()
            })
            .collect();
        let exact = 2.0 * std::f64::consts::PI.powi(2);
        assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
        assert!(lambdas.iter().all(|&l| l > exact));
        let extrapolated = 1.0 / richardson(&lambdas).unwrap().sqrt();
        let target = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
        assert!((extrapolated / target - 1.0).abs() < 0.02, "{extrapolated}");
    }

    #[test]
    fn smaller_dirichlet_part_gives_larger_poincare_constant() {
        let full = build_rectangle_mesh(&[1.0, 1.0], &[8, 8], &TagRule::all_dirichlet(2)).unwrap();
        let cd_full = estimate_poincare(&full).unwrap();
        let cd_left = estimate_poincare(&left_dirichlet(8)).unwrap();
        assert!(cd_left > cd_full);
        // one Dirichlet side: λ = π²/4
        assert!((cd_left - 2.0 / std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn moser_factor_by_dimension() {
        assert_eq!(moser_factor(1.5, 2), 3.0);
        let expected = 3f64.powf(1.5) * 3f64.powf(0.75);
        assert!((moser_factor(1.5, 3) - expected).abs() < 1e-12);
    }

    #[test]
    fn benchmark_certificate_chain() {
        let spec = benchmark_spec(16);
        let cert = compute_certificate(&spec, EpsChoice::Fixed(0.01), 1.0).unwrap();
        assert!(cert.thresholds_hold());
        assert!(cert.denominator > 0.0);
        assert_eq!(cert.mu, 2.0);
        assert!((cert.phi0_w1inf - 0.1).abs() < 1e-12);
        assert_eq!(cert.m, 101.0);
        let growth = (0.16f64).exp() * 0.01;
        assert!((cert.c - 8.0 * growth / (1.0 - 0.02 * growth)).abs() < 1e-12);
        assert!((cert.c2 - 0.5 * (1.0 + (cert.c * 101.01).sqrt())).abs() < 1e-12);
        assert!(cert.n.is_finite() && cert.n < 1.0);
        assert!((cert.n - cert.v_inf_bound / (1.0 + cert.v_inf_bound)).abs() < 1e-14);
        assert_eq!(cert.r, 2.0);
        assert!(cert.s.is_none());

        let beta = Control::constant(&spec.mesh, 1.0, 2.0).unwrap();
        let sol = solve_state(&spec, &beta, &SolverOptions::default()).unwrap();
        let check = check_certificate(&sol, &cert, &spec.model).unwrap();
        assert!(check.passed && check.v_margin > 0.0 && check.u_margin > 0.0);

        let ts = transform(&sol, &spec.model, &spec.phi0, cert.m, &spec.mesh).unwrap();
        let energy = energy_diagnostic(&ts, &cert, &spec.mesh, 0.0);
        assert!(energy.within_slack && energy.side_condition_holds);
    }

    #[test]
    fn zero_potential_gives_zero_growth_constant() {
        let spec = spec_with(4, model(), 0.0, 0.05);
        let cert = compute_certificate(&spec, EpsChoice::Fixed(0.01), 1.0).unwrap();
        assert_eq!(cert.c, 0.0);
        assert_eq!(cert.c2, 0.5);
        let l2 = (2.0 * cert.m * cert.m).sqrt();
        assert!((cert.psi_m_l2_bound - l2).abs() < 1e-9 * l2);
        assert_eq!(cert.v_inf_bound, cert.m.max(l2));
    }

    #[test]
    fn oversized_eps_is_infeasible_and_auto_recovers() {
        let spec = benchmark_spec(4);
        assert!(matches!(
            compute_certificate(&spec, EpsChoice::Fixed(100.0), 1.0),
            Err(Error::CertificateInfeasible(_))
        ));
        let strong = spec_with(4, model(), 2.0, 0.05);
        let cert = compute_certificate(&strong, EpsChoice::Auto, 1.0).unwrap();
        assert!(cert.denominator > 0.5 && cert.eps < 0.01);
    }

    #[test]
    fn bound_is_monotone_in_data_and_mu() {
        let by_slope: Vec<f64> = [0.05, 0.1, 0.15]
            .iter()
            .map(|&s| compute_certificate(&spec_with(4, model(), s, 0.05), EpsChoice::Fixed(0.01), 1.0).unwrap().v_inf_bound)
            .collect();
        assert!(by_slope.windows(2).all(|w| w[1] >= w[0]), "{by_slope:?}");
        let by_mu: Vec<f64> = [2.0, 3.0, 4.0]
            .iter()
            .map(|&p| {
                let m = ConductivityModel::truncated_power(1.0, 1.0, p).unwrap();
                compute_certificate(&spec_with(4, m, 0.1, 0.05), EpsChoice::Fixed(0.01), 1.0).unwrap().v_inf_bound
            })
            .collect();
        assert!(by_mu.windows(2).all(|w| w[1] >= w[0]), "{by_mu:?}");
    }

    #[test]
    fn tiny_sobolev_constant_shrinks_the_bound() {
        let spec = benchmark_spec(4);
        let a = compute_certificate(&spec, EpsChoice::Fixed(0.01), 1.0).unwrap();
        let b = compute_certificate(&spec, EpsChoice::Fixed(0.01), 1e-6).unwrap();
        assert!(b.psi_m_inf_bound < 1e-3 * a.psi_m_inf_bound);
        assert!(b.v_inf_bound <= a.v_inf_bound);
    }

    #[test]
    fn k1_is_k_when_couplings_vanish() {
        let base = K1Inputs {
            k: 2.0,
            m_tilde: 1.0,
            big_k: 0.0,
            m1: 1.0,
            phi: 1.0,
            mu: 2.0,
            c6: 1.0,
            c1_u: 0.5,
            grad_phi0_inf: 0.1,
        };
        assert_eq!(compute_k1(&base), 2.0);
        let k1 = compute_k1(&K1Inputs { big_k: 1.0, ..base });
        assert!((k1 - (2.0 - 2.0 - 8.0 - 4.0 - 0.1 - 0.4)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn substitution_invariants(
            u in proptest::collection::vec(0.0f64..0.99, 25),
            phi in proptest::collection::vec(-1.0f64..1.0, 25),
            m in 0.1f64..50.0,
        ) {
            let spec = benchmark_spec(4);
            let sol = fake_solution(&spec.mesh, u.clone(), phi);
            let ts = transform(&sol, &spec.model, &spec.phi0, m, &spec.mesh).unwrap();
            for i in 0..25 {
                prop_assert!(ts.v.values[i] >= 0.0);
                prop_assert!(ts.psi.values[i] >= ts.v.values[i]);
                prop_assert!(ts.psi_m.values[i] >= m);
                let back = spec.model.f_inv(ts.v.values[i]).unwrap();
                prop_assert!((back - u[i]).abs() <= 1e-8);
            }
        }
    }
}
