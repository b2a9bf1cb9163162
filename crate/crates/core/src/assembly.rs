//! P1 finite-element assembly on simplicial meshes.
//!
//! Coefficients are evaluated pointwise at the quadrature nodes of
//! [`simplex_rule`] from the P1 interpolant of the nodal data.

use rayon::prelude::*;
use serde::Serialize;

use crate::control::Control;
use crate::error::{Error, Result};
use crate::linalg::{self, BandCholesky, CsrMatrix};
use crate::materials::ConductivityModel;
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::{simplex_rule, QuadPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnknownKind {
    Temperature,
    Potential,
    AdjointP,
    AdjointQ,
    Sensitivity1,
    Sensitivity2,
    Data,
}

/// Nodal values of a P1 function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub kind: UnknownKind,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(mesh: &Mesh, kind: UnknownKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::Assembly(format!(
                "field has {} values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Assembly(format!("non-finite field value at vertex {i}")));
        }
        Ok(Self { kind, values })
    }

    pub fn constant(mesh: &Mesh, kind: UnknownKind, value: f64) -> Self {
        Self {
            kind,
            values: vec![value; mesh.num_vertices()],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, kind: UnknownKind, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            kind,
            values: (0..mesh.num_vertices()).map(|i| f(mesh.point(i))).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        linalg::norm_inf(&self.values)
    }
}

/// Assembled operator with right-hand side and the Dirichlet constraints
/// already applied to it.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained: Vec<(usize, f64)>,
}

impl LinearSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            constrained: Vec::new(),
        }
    }
}

/// Value of the P1 function `f` at a quadrature point of cell `c`.
pub fn eval_at(mesh: &Mesh, f: &[f64], c: usize, q: &QuadPoint) -> f64 {
    mesh.cell(c)
        .iter()
        .enumerate()
        .map(|(k, &v)| q.bary[k] * f[v])
        .sum()
}

/// Constant gradient of the P1 function `f` on cell `c`.
pub fn cell_gradient(mesh: &Mesh, f: &[f64], c: usize) -> [f64; 3] {
    let g = &mesh.geometry(c).grads;
    let mut out = [0.0; 3];
    for (k, &v) in mesh.cell(c).iter().enumerate() {
        for a in 0..3 {
            out[a] += f[v] * g[k][a];
        }
    }
    out
}

pub fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn collect_triplets<F>(mesh: &Mesh, local: F) -> Vec<(usize, usize, f64)>
where
    F: Fn(usize) -> Vec<(usize, usize, f64)> + Sync + Send,
{
    (0..mesh.num_cells())
        .into_par_iter()
        .flat_map_iter(&local)
        .collect()
}

fn collect_vector<F>(mesh: &Mesh, local: F) -> Vec<f64>
where
    F: Fn(usize) -> Vec<(usize, f64)> + Sync + Send,
{
    let parts: Vec<Vec<(usize, f64)>> = (0..mesh.num_cells()).into_par_iter().map(&local).collect();
    let mut out = vec![0.0; mesh.num_vertices()];
    for part in parts {
        for (i, v) in part {
            out[i] += v;
        }
    }
    out
}

/// A_ij = ∫ w ∇λ_i·∇λ_j with `weight(cell, point)` evaluated at the quadrature nodes.
pub fn assemble_weighted_stiffness<W>(mesh: &Mesh, weight: W) -> Result<CsrMatrix>
where
    W: Fn(usize, &QuadPoint) -> f64 + Sync,
{
    let rule = simplex_rule(mesh.dim());
    let n = mesh.num_vertices();
    let bad = (0..mesh.num_cells()).into_par_iter().filter_map(|c| {
        rule.iter()
            .map(|q| weight(c, q))
            .find(|w| !(*w >= 0.0) || !w.is_finite())
            .map(|w| (c, w))
    });
    if let Some((c, w)) = bad.find_first(|_| true) {
        return Err(Error::Assembly(format!(
            "negative or non-finite weight {w} at a quadrature point of cell {c}"
        )));
    }
    let t = collect_triplets(mesh, |c| {
        let geo = mesh.geometry(c);
        let avg: f64 = rule.iter().map(|q| q.weight * weight(c, q)).sum::<f64>() * geo.volume;
        let cell = mesh.cell(c);
        let mut out = Vec::with_capacity(cell.len() * cell.len());
        for (a, &i) in cell.iter().enumerate() {
            for (b, &j) in cell.iter().enumerate() {
                out.push((i, j, avg * dot3(&geo.grads[a], &geo.grads[b])));
            }
        }
        out
    });
    Ok(CsrMatrix::from_triplets(n, n, &t))
}

/// Unweighted stiffness (Laplacian) matrix.
pub fn stiffness(mesh: &Mesh) -> CsrMatrix {
    assemble_weighted_stiffness(mesh, |_, _| 1.0).expect("unit weight is admissible")
}

/// Stiffness weighted with σ(u_h) at the quadrature nodes.
pub fn sigma_stiffness(mesh: &Mesh, model: &ConductivityModel, u: &[f64]) -> Result<CsrMatrix> {
    assemble_weighted_stiffness(mesh, |c, q| model.sigma(eval_at(mesh, u, c, q)))
}

/// Consistent mass matrix ∫ λ_i λ_j.
pub fn mass(mesh: &Mesh) -> CsrMatrix {
    let d = mesh.dim() as f64;
    let n = mesh.num_vertices();
    let t = collect_triplets(mesh, |c| {
        let vol = mesh.cell_volume(c);
        let cell = mesh.cell(c);
        let base = vol / ((d + 1.0) * (d + 2.0));
        let mut out = Vec::with_capacity(cell.len() * cell.len());
        for &i in cell {
            for &j in cell {
                out.push((i, j, if i == j { 2.0 * base } else { base }));
            }
        }
        out
    });
    CsrMatrix::from_triplets(n, n, &t)
}

/// ∫ w λ_i λ_j with `weight` at the quadrature nodes.
pub fn weighted_mass<W>(mesh: &Mesh, weight: W) -> CsrMatrix
where
    W: Fn(usize, &QuadPoint) -> f64 + Sync,
{
    let rule = simplex_rule(mesh.dim());
    let n = mesh.num_vertices();
    let t = collect_triplets(mesh, |c| {
        let vol = mesh.cell_volume(c);
        let cell = mesh.cell(c);
        let mut out = Vec::with_capacity(cell.len() * cell.len());
        for (a, &i) in cell.iter().enumerate() {
            for (b, &j) in cell.iter().enumerate() {
                let v: f64 = rule
                    .iter()
                    .map(|q| q.weight * weight(c, q) * q.bary[a] * q.bary[b])
                    .sum();
                out.push((i, j, vol * v));
            }
        }
        out
    });
    CsrMatrix::from_triplets(n, n, &t)
}

/// b_i = ∫ f λ_i with `f` evaluated at the quadrature nodes.
pub fn load_vector<F>(mesh: &Mesh, f: F) -> Vec<f64>
where
    F: Fn(usize, &QuadPoint) -> f64 + Sync,
{
    let rule = simplex_rule(mesh.dim());
    collect_vector(mesh, |c| {
        let vol = mesh.cell_volume(c);
        let values: Vec<f64> = rule.iter().map(|q| f(c, q)).collect();
        mesh.cell(c)
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                let s: f64 = rule
                    .iter()
                    .zip(&values)
                    .map(|(q, v)| q.weight * v * q.bary[a])
                    .sum();
                (i, vol * s)
            })
            .collect()
    })
}

/// b_i = ∫ λ_i.
pub fn basis_integrals(mesh: &Mesh) -> Vec<f64> {
    let share = 1.0 / (mesh.dim() as f64 + 1.0);
    collect_vector(mesh, |c| {
        let vol = mesh.cell_volume(c);
        mesh.cell(c).iter().map(|&i| (i, share * vol)).collect()
    })
}

/// ∫_f λ_i λ_j over a boundary facet, local to the facet's vertex order.
pub fn facet_mass_local(mesh: &Mesh, f: usize) -> [[f64; 3]; 3] {
    let d = mesh.dim() as f64;
    let base = mesh.facet_measure(f) / (d * (d + 1.0));
    let mut m = [[0.0; 3]; 3];
    for (a, row) in m.iter_mut().enumerate().take(mesh.dim()) {
        for (b, entry) in row.iter_mut().enumerate().take(mesh.dim()) {
            *entry = if a == b { 2.0 * base } else { base };
        }
    }
    m
}

/// ∫_f w λ_i for the vertices of facet `f` (P1 `w`, exact).
pub fn facet_moments(mesh: &Mesh, f: usize, w: &[f64]) -> [f64; 3] {
    let m = facet_mass_local(mesh, f);
    let verts = mesh.facet(f);
    let mut out = [0.0; 3];
    for a in 0..verts.len() {
        for (b, &j) in verts.iter().enumerate() {
            out[a] += m[a][b] * w[j];
        }
    }
    out
}

/// ∫_f w for a P1 function `w`.
pub fn facet_integral(mesh: &Mesh, f: usize, w: &[f64]) -> f64 {
    facet_moments(mesh, f, w).iter().sum()
}

/// ∫_f w·z for P1 functions `w` and `z`.
pub fn facet_product_integral(mesh: &Mesh, f: usize, w: &[f64], z: &[f64]) -> f64 {
    let verts = mesh.facet(f);
    let m = facet_moments(mesh, f, w);
    verts.iter().enumerate().map(|(a, &i)| m[a] * z[i]).sum()
}

/// Robin terms on Γ_R: matrix Σ_f β_f ∫_f λ_i λ_j and load Σ_f β_f ∫_f u1 λ_i.
pub fn assemble_robin(mesh: &Mesh, beta: &Control, u1: &[f64]) -> Result<(CsrMatrix, Vec<f64>)> {
    let facets = mesh.robin_facets();
    if beta.len() != facets.len() {
        return Err(Error::Assembly(format!(
            "control has {} values for {} Robin facets",
            beta.len(),
            facets.len()
        )));
    }
    beta.check_admissible()?;
    let n = mesh.num_vertices();
    let mut t = Vec::new();
    let mut rhs = vec![0.0; n];
    for (&f, &b) in facets.iter().zip(beta.values()) {
        if b == 0.0 {
            continue;
        }
        let m = facet_mass_local(mesh, f);
        let verts = mesh.facet(f);
        for (a, &i) in verts.iter().enumerate() {
            for (c, &j) in verts.iter().enumerate() {
                t.push((i, j, b * m[a][c]));
                rhs[i] += b * m[a][c] * u1[j];
            }
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, &t), rhs))
}

/// b_i = ∫ σ(u_h)|∇φ_h|² λ_i.
pub fn assemble_joule_rhs_direct(
    mesh: &Mesh,
    model: &ConductivityModel,
    u: &[f64],
    phi: &[f64],
) -> Vec<f64> {
    load_vector(mesh, |c, q| {
        let g = cell_gradient(mesh, phi, c);
        model.sigma(eval_at(mesh, u, c, q)) * dot3(&g, &g)
    })
}

/// b_i = ∫ (φ0 − φ_h) σ(u_h) ∇φ_h·∇λ_i + ∫ σ(u_h) (∇φ_h·∇φ0) λ_i.
pub fn assemble_joule_rhs_weak(
    mesh: &Mesh,
    model: &ConductivityModel,
    u: &[f64],
    phi: &[f64],
    phi0: &[f64],
) -> Vec<f64> {
    let rule = simplex_rule(mesh.dim());
    collect_vector(mesh, |c| {
        let geo = mesh.geometry(c);
        let gphi = cell_gradient(mesh, phi, c);
        let gphi0 = cell_gradient(mesh, phi0, c);
        let cross = dot3(&gphi, &gphi0);
        let mut out: Vec<(usize, f64)> = mesh.cell(c).iter().map(|&i| (i, 0.0)).collect();
        for q in rule {
            let s = model.sigma(eval_at(mesh, u, c, q));
            let d = eval_at(mesh, phi0, c, q) - eval_at(mesh, phi, c, q);
            for (a, entry) in out.iter_mut().enumerate() {
                entry.1 += geo.volume
                    * q.weight
                    * (d * s * dot3(&gphi, &geo.grads[a]) + s * cross * q.bary[a]);
            }
        }
        out
    })
}

/// Joule right-hand side variant used by the state solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JouleForm {
    Weak,
    Direct,
}

pub fn assemble_joule(
    form: JouleForm,
    mesh: &Mesh,
    model: &ConductivityModel,
    u: &[f64],
    phi: &[f64],
    phi0: &[f64],
) -> Vec<f64> {
    match form {
        JouleForm::Weak => assemble_joule_rhs_weak(mesh, model, u, phi, phi0),
        JouleForm::Direct => assemble_joule_rhs_direct(mesh, model, u, phi),
    }
}

/// Symmetric elimination of Dirichlet constraints; applying the same
/// constraints twice gives the same system.
pub fn apply_dirichlet(mesh: &Mesh, system: &LinearSystem, bc: &[(usize, f64)]) -> Result<LinearSystem> {
    let boundary = mesh.boundary_vertices();
    let n = system.matrix.n_rows();
    let mut fixed = vec![false; n];
    let mut values = vec![0.0; n];
    for &(v, val) in bc {
        if v >= n || !boundary[v] {
            return Err(Error::Assembly(format!(
                "Dirichlet constraint on vertex {v}, which is not on the boundary"
            )));
        }
        fixed[v] = true;
        values[v] = val;
    }
    let mut rhs = system.rhs.clone();
    for i in 0..n {
        let (cols, vals) = system.matrix.row(i);
        if fixed[i] {
            continue;
        }
        for (&j, &a) in cols.iter().zip(vals) {
            if fixed[j] {
                rhs[i] -= a * values[j];
            }
        }
    }
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            rhs[i] = values[i];
        }
    }
    let mut matrix = system.matrix.clone();
    matrix.constrain_symmetric(&fixed, 1.0);
    let mut constrained = system.constrained.clone();
    for &(v, val) in bc {
        match constrained.iter_mut().find(|(w, _)| *w == v) {
            Some(entry) => entry.1 = val,
            None => constrained.push((v, val)),
        }
    }
    Ok(LinearSystem {
        matrix,
        rhs,
        constrained,
    })
}

/// Dirichlet pairs (vertex, value) for every vertex flagged in `mask`.
pub fn dirichlet_pairs(mask: &[bool], data: &[f64]) -> Vec<(usize, f64)> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i, data[i]))
        .collect()
}

/// Solves a constrained system whose matrix is symmetric positive definite.
pub fn solve_spd(system: &LinearSystem) -> Result<Vec<f64>> {
    linalg::solve_spd(&system.matrix, &system.rhs)
}

/// L², H¹-seminorm, H¹ and L∞ norms of a P1 function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    pub h1: f64,
    pub linf: f64,
}

pub fn norms(mesh: &Mesh, f: &[f64]) -> Norms {
    let d = mesh.dim() as f64;
    let parts: Vec<(f64, f64)> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let vol = mesh.cell_volume(c);
            let cell = mesh.cell(c);
            let sum: f64 = cell.iter().map(|&i| f[i]).sum();
            let sq: f64 = cell.iter().map(|&i| f[i] * f[i]).sum();
            // ∫ f² = vol·(Σf_i² + (Σf_i)²)/((d+1)(d+2))
            let l2 = vol * (sq + sum * sum) / ((d + 1.0) * (d + 2.0));
            let g = cell_gradient(mesh, f, c);
            (l2, vol * dot3(&g, &g))
        })
        .collect();
    // summed in cell order so repeated runs agree bitwise
    let (l2sq, semisq) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Norms {
        l2: l2sq.sqrt(),
        h1_semi: semisq.sqrt(),
        h1: (l2sq + semisq).sqrt(),
        linf: linalg::norm_inf(f),
    }
}

/// ‖f‖_{L²(Γ)} over facets with `tag`, or the whole boundary for `None`.
pub fn boundary_l2(mesh: &Mesh, f: &[f64], tag: Option<BoundaryTag>) -> f64 {
    (0..mesh.num_facets())
        .filter(|&k| tag.is_none_or(|t| mesh.facet_tag(k) == t))
        .map(|k| facet_product_integral(mesh, k, f, f))
        .sum::<f64>()
        .sqrt()
}

/// ∫_Ω f for a P1 function.
pub fn integral(mesh: &Mesh, f: &[f64]) -> f64 {
    let share = 1.0 / (mesh.dim() as f64 + 1.0);
    (0..mesh.num_cells())
        .map(|c| mesh.cell_volume(c) * share * mesh.cell(c).iter().map(|&i| f[i]).sum::<f64>())
        .sum()
}

/// Largest cellwise |∇f|.
pub fn max_gradient(mesh: &Mesh, f: &[f64]) -> f64 {
    (0..mesh.num_cells())
        .map(|c| {
            let g = cell_gradient(mesh, f, c);
            dot3(&g, &g).sqrt()
        })
        .fold(0.0, f64::max)
}

/// W^{1,∞} norm of a P1 function as max(‖f‖_∞, max|∇f|).
pub fn w1inf_norm(mesh: &Mesh, f: &[f64]) -> f64 {
    linalg::norm_inf(f).max(max_gradient(mesh, f))
}

/// Dual norm sqrt(rᵀ G⁻¹ r) of a residual over the free dofs, with G the
/// H¹ Gram matrix K + M restricted to the free dofs.
#[derive(Debug, Clone)]
pub struct DualNorm {
    free: Vec<usize>,
    factor: BandCholesky,
}

impl DualNorm {
    pub fn new(mesh: &Mesh, fixed: &[bool]) -> Result<Self> {
        let gram = stiffness(mesh).add_scaled(1.0, &mass(mesh));
        let free: Vec<usize> = (0..mesh.num_vertices()).filter(|&i| !fixed[i]).collect();
        let factor = BandCholesky::factor(&gram.submatrix(&free, &free))?;
        Ok(Self { free, factor })
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        if self.free.is_empty() {
            return 0.0;
        }
        let rf: Vec<f64> = self.free.iter().map(|&i| r[i]).collect();
        let z = self.factor.solve(&rf);
        linalg::dot(&rf, &z).max(0.0).sqrt()
    }
}
