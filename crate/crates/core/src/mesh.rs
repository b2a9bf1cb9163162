//! Conforming simplicial meshes of boxes in two and three dimensions.
//!
//! Cells are triangles (d = 2) or tetrahedra (d = 3) stored as flat index
//! arrays. Every boundary facet carries a [`BoundaryTag`]; the temperature
//! Dirichlet part is the union of `DirichletTemperature` facets, the Robin
//! part the union of `RobinTemperature` facets. The potential is prescribed
//! on every boundary facet regardless of its tag.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    DirichletTemperature,
    RobinTemperature,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::DirichletTemperature => "dirichlet",
            BoundaryTag::RobinTemperature => "robin",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "dirichlet" | "dirichlettemperature" | "d" => Some(BoundaryTag::DirichletTemperature),
            "robin" | "robintemperature" | "r" => Some(BoundaryTag::RobinTemperature),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

/// One face of an axis-aligned box, e.g. `x = 0` is `BoxFace { axis: 0, side: Low }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxFace {
    pub axis: usize,
    pub side: Side,
}

impl BoxFace {
    pub const fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    /// Parses `x0`, `x1`, `y0`, `y1`, `z0`, `z1`.
    pub fn parse(token: &str) -> Option<Self> {
        let mut chars = token.trim().chars();
        let axis = match chars.next()? {
            'x' | 'X' => 0,
            'y' | 'Y' => 1,
            'z' | 'Z' => 2,
            _ => return None,
        };
        let side = match chars.next()? {
            '0' => Side::Low,
            '1' => Side::High,
            _ => return None,
        };
        if chars.next().is_some() {
            return None;
        }
        Some(Self { axis, side })
    }

    pub fn label(&self) -> String {
        let axis = ["x", "y", "z"][self.axis.min(2)];
        let side = match self.side {
            Side::Low => "0",
            Side::High => "1",
        };
        format!("{axis}{side}")
    }
}

/// Assigns box faces to the temperature Dirichlet part; everything else is Robin.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagRule {
    pub dirichlet: Vec<BoxFace>,
}

impl TagRule {
    pub fn dirichlet_on(faces: &[BoxFace]) -> Self {
        Self {
            dirichlet: faces.to_vec(),
        }
    }

    /// Whole boundary is Dirichlet.
    pub fn all_dirichlet(dim: usize) -> Self {
        let mut dirichlet = Vec::new();
        for axis in 0..dim {
            dirichlet.push(BoxFace::new(axis, Side::Low));
            dirichlet.push(BoxFace::new(axis, Side::High));
        }
        Self { dirichlet }
    }

    /// Parses a comma separated list like `x0,y1`; `all` selects every face.
    pub fn parse(spec: &str, dim: usize) -> Option<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("all") {
            return Some(Self::all_dirichlet(dim));
        }
        let mut dirichlet = Vec::new();
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let face = BoxFace::parse(token)?;
            if face.axis >= dim {
                return None;
            }
            dirichlet.push(face);
        }
        Some(Self { dirichlet })
    }

    fn tag_for(&self, faces: &[BoxFace]) -> BoundaryTag {
        if faces.iter().any(|f| self.dirichlet.contains(f)) {
            BoundaryTag::DirichletTemperature
        } else {
            BoundaryTag::RobinTemperature
        }
    }
}

/// Volume and constant barycentric gradients of one cell.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub volume: f64,
    /// `grads[k]` is the gradient of the k-th barycentric coordinate; unused
    /// trailing components are zero.
    pub grads: [[f64; 3]; 4],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<[f64; 3]>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<BoundaryTag>,
    facet_cells: Vec<usize>,
    geometry: Vec<CellGeometry>,
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant.
    ///
    /// `vertices` holds `dim` coordinates per vertex (trailing entries of the
    /// 3-array are ignored), `cells` holds `dim + 1` indices per cell and
    /// `facets` holds `dim` indices per boundary facet.
    pub fn new(
        dim: usize,
        vertices: Vec<[f64; 3]>,
        cells: Vec<usize>,
        facets: Vec<usize>,
        facet_tags: Vec<BoundaryTag>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Config(format!(
                "dimension {dim} is not supported (only 2 and 3)"
            )));
        }
        let nv = dim + 1;
        if cells.is_empty() || cells.len() % nv != 0 {
            return Err(Error::InvalidMesh("cell array is empty or ragged".into()));
        }
        if facets.len() % dim != 0 || facets.len() / dim != facet_tags.len() {
            return Err(Error::InvalidMesh(
                "facet array and tag list do not match".into(),
            ));
        }
        let mut vertices = vertices;
        for v in &mut vertices {
            for c in v.iter_mut().skip(dim) {
                *c = 0.0;
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
            }
        }
        if let Some(&bad) = cells.iter().chain(facets.iter()).find(|&&i| i >= vertices.len()) {
            return Err(Error::InvalidMesh(format!(
                "vertex index {bad} out of range ({} vertices)",
                vertices.len()
            )));
        }

        let mut mesh = Mesh {
            dim,
            vertices,
            cells,
            facets,
            facet_tags,
            facet_cells: Vec::new(),
            geometry: Vec::new(),
        };
        mesh.geometry = (0..mesh.num_cells())
            .map(|c| mesh.compute_geometry(c))
            .collect::<Result<_>>()?;
        mesh.facet_cells = mesh.match_facets()?;
        if !mesh
            .facet_tags
            .iter()
            .any(|&t| t == BoundaryTag::DirichletTemperature)
        {
            return Err(Error::Config(
                "the Dirichlet temperature boundary is empty".into(),
            ));
        }
        Ok(mesh)
    }

    fn compute_geometry(&self, c: usize) -> Result<CellGeometry> {
        let cell = self.cell(c);
        let x0 = self.vertices[cell[0]];
        let d = self.dim;
        // rows of b are the edge vectors x_k - x_0
        let mut b = [[0.0; 3]; 3];
        for k in 0..d {
            let xk = self.vertices[cell[k + 1]];
            for a in 0..d {
                b[k][a] = xk[a] - x0[a];
            }
        }
        let (det, inv) = if d == 2 {
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            let inv = [
                [b[1][1] / det, -b[0][1] / det, 0.0],
                [-b[1][0] / det, b[0][0] / det, 0.0],
                [0.0; 3],
            ];
            (det, inv)
        } else {
            let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let mut inv = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                    let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                    // cofactor of b[j][i] divided by det gives inverse entry (i, j)
                    inv[i][j] = (b[j1][i1] * b[j2][i2] - b[j1][i2] * b[j2][i1]) / det;
                }
            }
            (det, inv)
        };
        let factorial = if d == 2 { 2.0 } else { 6.0 };
        let volume = det / factorial;
        let scale = (0..d)
            .map(|k| (0..d).map(|a| b[k][a].abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if !(volume > 1e-14 * scale.powi(d as i32)) {
            return Err(Error::InvalidMesh(format!(
                "cell {c} has non-positive signed volume {volume:e}"
            )));
        }
        // lambda = B^{-T}-style: with b rows = edges, grad lambda_k = column k of b^{-1}
        let mut grads = [[0.0; 3]; 4];
        for k in 0..d {
            for a in 0..d {
                grads[k + 1][a] = inv[a][k];
            }
        }
        for a in 0..d {
            grads[0][a] = -(1..=d).map(|k| grads[k][a]).sum::<f64>();
        }
        Ok(CellGeometry { volume, grads })
    }

    /// Checks conformity and that the facet list partitions the topological
    /// boundary; returns the owning cell of every facet.
    fn match_facets(&self) -> Result<Vec<usize>> {
        let mut faces: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
        for c in 0..self.num_cells() {
            for face in local_faces(self.cell(c)) {
                let entry = faces.entry(sorted(&face)).or_insert((0, c));
                entry.0 += 1;
                if entry.0 > 2 {
                    return Err(Error::InvalidMesh(format!(
                        "face {face:?} is shared by more than two cells"
                    )));
                }
            }
        }
        let mut owners = Vec::with_capacity(self.num_facets());
        let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
        for f in 0..self.num_facets() {
            let key = sorted(self.facet(f));
            match faces.get(&key) {
                Some(&(1, c)) => owners.push(c),
                Some(_) => {
                    return Err(Error::InvalidMesh(format!(
                        "facet {f} ({key:?}) is an interior face"
                    )))
                }
                None => {
                    return Err(Error::InvalidMesh(format!(
                        "facet {f} ({key:?}) is not a face of any cell"
                    )))
                }
            }
            if let Some(prev) = seen.insert(key.clone(), f) {
                return Err(Error::InvalidMesh(format!(
                    "facets {prev} and {f} coincide ({key:?})"
                )));
            }
        }
        let boundary_faces = faces.values().filter(|(n, _)| *n == 1).count();
        if boundary_faces != self.num_facets() {
            return Err(Error::InvalidMesh(format!(
                "{boundary_faces} boundary faces but {} tagged facets",
                self.num_facets()
            )));
        }
        Ok(owners)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn num_facets(&self) -> usize {
        self.facet_tags.len()
    }

    /// Coordinates of vertex `i` (length `dim`).
    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i][..self.dim]
    }

    /// Padded coordinates of vertex `i`; components beyond `dim` are zero.
    pub fn point(&self, i: usize) -> [f64; 3] {
        self.vertices[i]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[c * nv..(c + 1) * nv]
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    pub fn facet_tag(&self, f: usize) -> BoundaryTag {
        self.facet_tags[f]
    }

    pub fn facet_cell(&self, f: usize) -> usize {
        self.facet_cells[f]
    }

    pub fn geometry(&self, c: usize) -> &CellGeometry {
        &self.geometry[c]
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.geometry[c].volume
    }

    /// Total volume mes(Ω).
    pub fn measure(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    pub fn facet_measure(&self, f: usize) -> f64 {
        let v = self.facet(f);
        let p0 = self.vertices[v[0]];
        let p1 = self.vertices[v[1]];
        if self.dim == 2 {
            ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt()
        } else {
            let p2 = self.vertices[v[2]];
            let e1 = sub(p1, p0);
            let e2 = sub(p2, p0);
            0.5 * norm(cross(e1, e2))
        }
    }

    pub fn facet_centroid(&self, f: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for &v in self.facet(f) {
            for a in 0..3 {
                c[a] += self.vertices[v][a];
            }
        }
        c.map(|x| x / self.dim as f64)
    }

    /// Outward unit normal of a boundary facet.
    pub fn facet_normal(&self, f: usize) -> [f64; 3] {
        let v = self.facet(f);
        let p0 = self.vertices[v[0]];
        let mut n = if self.dim == 2 {
            let t = sub(self.vertices[v[1]], p0);
            [t[1], -t[0], 0.0]
        } else {
            cross(
                sub(self.vertices[v[1]], p0),
                sub(self.vertices[v[2]], p0),
            )
        };
        let opposite = self
            .cell(self.facet_cells[f])
            .iter()
            .copied()
            .find(|i| !v.contains(i))
            .expect("owning cell has a vertex off the facet");
        let inward = sub(self.vertices[opposite], p0);
        if dot(n, inward) > 0.0 {
            n = n.map(|x| -x);
        }
        let len = norm(n);
        n.map(|x| x / len)
    }

    /// Sum of measures of facets carrying `tag`.
    pub fn boundary_measure(&self, tag: BoundaryTag) -> f64 {
        (0..self.num_facets())
            .filter(|&f| self.facet_tags[f] == tag)
            .map(|f| self.facet_measure(f))
            .sum()
    }

    pub fn total_boundary_measure(&self) -> f64 {
        (0..self.num_facets()).map(|f| self.facet_measure(f)).sum()
    }

    /// Indices of Robin facets in mesh order; a control value is attached to each.
    pub fn robin_facets(&self) -> Vec<usize> {
        (0..self.num_facets())
            .filter(|&f| self.facet_tags[f] == BoundaryTag::RobinTemperature)
            .collect()
    }

    /// Vertices lying on a Dirichlet temperature facet.
    pub fn dirichlet_vertices(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices()];
        for f in 0..self.num_facets() {
            if self.facet_tags[f] == BoundaryTag::DirichletTemperature {
                for &v in self.facet(f) {
                    mask[v] = true;
                }
            }
        }
        mask
    }

    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices()];
        for &v in &self.facets {
            mask[v] = true;
        }
        mask
    }

    /// Largest cell diameter.
    pub fn max_cell_diameter(&self) -> f64 {
        let mut h: f64 = 0.0;
        for c in 0..self.num_cells() {
            let cell = self.cell(c);
            for i in 0..cell.len() {
                for j in i + 1..cell.len() {
                    h = h.max(norm(sub(self.vertices[cell[i]], self.vertices[cell[j]])));
                }
            }
        }
        h
    }

    /// Vertex-to-vertex adjacency through cells (including self loops omitted).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for c in 0..self.num_cells() {
            let cell = self.cell(c);
            for &a in cell {
                for &b in cell {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

}

/// Box faces on which every vertex of `face` lies.
fn box_faces_containing(vertices: &[[f64; 3]], face: &[usize], extents: &[f64]) -> Vec<BoxFace> {
    let mut out = Vec::new();
    for (axis, &ext) in extents.iter().enumerate() {
        let tol = 1e-10 * ext;
        let on = |target: f64| face.iter().all(|&v| (vertices[v][axis] - target).abs() <= tol);
        if on(0.0) {
            out.push(BoxFace::new(axis, Side::Low));
        }
        if on(ext) {
            out.push(BoxFace::new(axis, Side::High));
        }
    }
    out
}

fn local_faces(cell: &[usize]) -> Vec<Vec<usize>> {
    (0..cell.len())
        .map(|skip| {
            cell.iter()
                .enumerate()
                .filter(|&(k, _)| k != skip)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect()
}

fn sorted(face: &[usize]) -> Vec<usize> {
    let mut key = face.to_vec();
    key.sort_unstable();
    key
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn signed_volume(vertices: &[[f64; 3]], cell: &[usize]) -> f64 {
    let x0 = vertices[cell[0]];
    if cell.len() == 3 {
        let e1 = sub(vertices[cell[1]], x0);
        let e2 = sub(vertices[cell[2]], x0);
        0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
    } else {
        let e1 = sub(vertices[cell[1]], x0);
        let e2 = sub(vertices[cell[2]], x0);
        let e3 = sub(vertices[cell[3]], x0);
        dot(e1, cross(e2, e3)) / 6.0
    }
}

fn push_oriented(vertices: &[[f64; 3]], cells: &mut Vec<usize>, mut cell: Vec<usize>) {
    if signed_volume(vertices, &cell) < 0.0 {
        let n = cell.len();
        cell.swap(n - 2, n - 1);
    }
    cells.extend(cell);
}

/// Boundary faces of a cell list in deterministic (first-seen) order.
fn boundary_faces(cells: &[usize], nv: usize) -> Vec<Vec<usize>> {
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut order = Vec::new();
    for cell in cells.chunks(nv) {
        for face in local_faces(cell) {
            let key = sorted(&face);
            let n = counts.entry(key).or_insert(0);
            if *n == 0 {
                order.push(face);
            }
            *n += 1;
        }
    }
    order
        .into_iter()
        .filter(|f| counts[&sorted(f)] == 1)
        .collect()
}

/// Structured right-simplex mesh of the box `[0, e_0] x ... x [0, e_{d-1}]`.
///
/// In 2D every grid square is cut along its `(0,0)-(1,1)` diagonal, so all
/// triangles are right triangles. In 3D every cube is split into the six
/// Kuhn tetrahedra sharing the main diagonal.
pub fn build_rectangle_mesh(extents: &[f64], divisions: &[usize], rule: &TagRule) -> Result<Mesh> {
    let dim = extents.len();
    if !(2..=3).contains(&dim) {
        return Err(Error::Config(format!(
            "dimension {dim} is not supported (only 2 and 3)"
        )));
    }
    if divisions.len() != dim {
        return Err(Error::Config(format!(
            "{} extents but {} division counts",
            dim,
            divisions.len()
        )));
    }
    if extents.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Config("box extents must be positive".into()));
    }
    if divisions.contains(&0) {
        return Err(Error::Config("division counts must be at least 1".into()));
    }
    if rule.dirichlet.is_empty() {
        return Err(Error::Config(
            "tag rule assigns no facet to the Dirichlet boundary".into(),
        ));
    }
    if let Some(f) = rule.dirichlet.iter().find(|f| f.axis >= dim) {
        return Err(Error::Config(format!(
            "tag rule face {} does not exist in {dim}D",
            f.label()
        )));
    }

    let n = [
        divisions[0],
        divisions[1],
        if dim == 3 { divisions[2] } else { 0 },
    ];
    let index = |i: usize, j: usize, k: usize| (k * (n[1] + 1) + j) * (n[0] + 1) + i;
    let mut vertices = Vec::new();
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let z = if dim == 3 {
                    extents[2] * k as f64 / n[2] as f64
                } else {
                    0.0
                };
                vertices.push([
                    extents[0] * i as f64 / n[0] as f64,
                    extents[1] * j as f64 / n[1] as f64,
                    z,
                ]);
            }
        }
    }

    let mut cells = Vec::new();
    if dim == 2 {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let v00 = index(i, j, 0);
                let v10 = index(i + 1, j, 0);
                let v11 = index(i + 1, j + 1, 0);
                let v01 = index(i, j + 1, 0);
                push_oriented(&vertices, &mut cells, vec![v00, v10, v11]);
                push_oriented(&vertices, &mut cells, vec![v00, v11, v01]);
            }
        }
    } else {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    for perm in PERMS {
                        let mut pos = [i, j, k];
                        let mut tet = vec![index(pos[0], pos[1], pos[2])];
                        for &axis in &perm {
                            pos[axis] += 1;
                            tet.push(index(pos[0], pos[1], pos[2]));
                        }
                        push_oriented(&vertices, &mut cells, tet);
                    }
                }
            }
        }
    }

    let faces = boundary_faces(&cells, dim + 1);
    let mut facets = Vec::with_capacity(faces.len() * dim);
    let mut tags = Vec::with_capacity(faces.len());
    for face in &faces {
        let on = box_faces_containing(&vertices, face, extents);
        tags.push(rule.tag_for(&on));
        facets.extend_from_slice(face);
    }
    Mesh::new(dim, vertices, cells, facets, tags)
}

/// Uniform red refinement; see [`refine_uniform_with_parents`].
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    refine_uniform_with_parents(mesh).map(|(m, _)| m)
}

/// Splits every edge at its midpoint and every cell into `2^d` children.
///
/// Returns the refined mesh together with the parent edge of every new
/// vertex: vertex `mesh.num_vertices() + k` is the midpoint of `parents[k]`.
/// Old vertices keep their indices.
pub fn refine_uniform_with_parents(mesh: &Mesh) -> Result<(Mesh, Vec<[usize; 2]>)> {
    let dim = mesh.dim;
    let mut vertices = mesh.vertices.clone();
    let mut parents = Vec::new();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([
                0.5 * (pa[0] + pb[0]),
                0.5 * (pa[1] + pb[1]),
                0.5 * (pa[2] + pb[2]),
            ]);
            parents.push([key.0, key.1]);
            vertices.len() - 1
        })
    };

    let mut cells = Vec::with_capacity(mesh.cells.len() << dim);
    for c in 0..mesh.num_cells() {
        let x = mesh.cell(c).to_vec();
        if dim == 2 {
            let m01 = mid(x[0], x[1], &mut vertices);
            let m12 = mid(x[1], x[2], &mut vertices);
            let m02 = mid(x[0], x[2], &mut vertices);
            for child in [
                vec![x[0], m01, m02],
                vec![m01, x[1], m12],
                vec![m02, m12, x[2]],
                vec![m01, m12, m02],
            ] {
                push_oriented(&vertices, &mut cells, child);
            }
        } else {
            let m01 = mid(x[0], x[1], &mut vertices);
            let m02 = mid(x[0], x[2], &mut vertices);
            let m03 = mid(x[0], x[3], &mut vertices);
            let m12 = mid(x[1], x[2], &mut vertices);
            let m13 = mid(x[1], x[3], &mut vertices);
            let m23 = mid(x[2], x[3], &mut vertices);
            for child in [
                vec![x[0], m01, m02, m03],
                vec![m01, x[1], m12, m13],
                vec![m02, m12, x[2], m23],
                vec![m03, m13, m23, x[3]],
            ] {
                push_oriented(&vertices, &mut cells, child);
            }
            // inner octahedron, cut along its shortest diagonal
            let pairs = [(m01, m23), (m02, m13), (m03, m12)];
            let len = |(a, b): (usize, usize)| norm(sub(vertices[a], vertices[b]));
            let mut best = 0;
            for k in 1..3 {
                if len(pairs[k]) < len(pairs[best]) - 1e-14 * len(pairs[best]) {
                    best = k;
                }
            }
            let (p, q) = pairs[best];
            let (a, a2) = pairs[(best + 1) % 3];
            let (b, b2) = pairs[(best + 2) % 3];
            for (s, t) in [(a, b), (b, a2), (a2, b2), (b2, a)] {
                push_oriented(&vertices, &mut cells, vec![p, q, s, t]);
            }
        }
    }

    let mut facets = Vec::with_capacity(mesh.facets.len() << (dim - 1));
    let mut tags = Vec::new();
    for f in 0..mesh.num_facets() {
        let x = mesh.facet(f).to_vec();
        let tag = mesh.facet_tags[f];
        let children: Vec<Vec<usize>> = if dim == 2 {
            let m = mid(x[0], x[1], &mut vertices);
            vec![vec![x[0], m], vec![m, x[1]]]
        } else {
            let m01 = mid(x[0], x[1], &mut vertices);
            let m12 = mid(x[1], x[2], &mut vertices);
            let m02 = mid(x[0], x[2], &mut vertices);
            vec![
                vec![x[0], m01, m02],
                vec![m01, x[1], m12],
                vec![m02, m12, x[2]],
                vec![m01, m12, m02],
            ]
        };
        for child in children {
            facets.extend(child);
            tags.push(tag);
        }
    }
    let refined = Mesh::new(dim, vertices, cells, facets, tags)?;
    Ok((refined, parents))
}

/// Interpolates a P1 field from a mesh onto its uniform refinement.
pub fn prolongate(coarse: &[f64], parents: &[[usize; 2]]) -> Vec<f64> {
    let mut fine = coarse.to_vec();
    fine.extend(parents.iter().map(|&[a, b]| 0.5 * (coarse[a] + coarse[b])));
    fine
}
