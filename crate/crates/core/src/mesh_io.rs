//! Plain-text mesh and nodal-data files.
//!
//! ```text
//! # comment
//! DIM 2
//! VERTICES 4
//! 0 0
//! 1 0
//! 0 1
//! 1 1
//! CELLS 2
//! 0 1 3
//! 0 3 2
//! FACETS 4
//! 0 1 robin
//! 1 3 robin
//! 3 2 robin
//! 2 0 dirichlet
//! ```
//!
//! Indices are zero-based. Cells may be listed in either orientation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank line with comments stripped, with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let body = line.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((i + 1, tokens));
            }
        }
        None
    }

    fn expect(&mut self, what: &str, last_line: usize) -> Result<(usize, Vec<&'a str>)> {
        self.next_content().ok_or_else(|| Error::MeshFormat {
            line: last_line + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::MeshFormat {
        line,
        message: message.into(),
    }
}

fn header(lines: &mut Lines, keyword: &str, last: usize) -> Result<(usize, usize)> {
    let (line, tokens) = lines.expect(keyword, last)?;
    if tokens.len() != 2 || !tokens[0].eq_ignore_ascii_case(keyword) {
        return Err(format_err(line, format!("expected `{keyword} <count>`")));
    }
    let count = tokens[1]
        .parse::<usize>()
        .map_err(|_| format_err(line, format!("invalid count `{}`", tokens[1])))?;
    Ok((line, count))
}

fn parse_index(token: &str, line: usize, limit: usize) -> Result<usize> {
    let i = token
        .parse::<usize>()
        .map_err(|_| format_err(line, format!("invalid vertex index `{token}`")))?;
    if i >= limit {
        return Err(format_err(line, format!("vertex index {i} out of range ({limit} vertices)")));
    }
    Ok(i)
}

fn signed_measure(dim: usize, vertices: &[[f64; 3]], cell: &[usize]) -> f64 {
    let x0 = vertices[cell[0]];
    let e: Vec<[f64; 3]> = cell[1..]
        .iter()
        .map(|&i| {
            let x = vertices[i];
            [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]]
        })
        .collect();
    if dim == 2 {
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    } else {
        e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
            + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
    }
}

/// Parses the mesh file format; structural errors carry the line number.
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = Lines::new(text);
    let (line, tokens) = lines.expect("DIM", 0)?;
    if tokens.len() != 2 || !tokens[0].eq_ignore_ascii_case("DIM") {
        return Err(format_err(line, "expected `DIM <2|3>`"));
    }
    let dim: usize = match tokens[1] {
        "2" => 2,
        "3" => 3,
        other => return Err(format_err(line, format!("unsupported dimension `{other}`"))),
    };

    let (mut last, nv) = header(&mut lines, "VERTICES", line)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, tokens) = lines.expect("a vertex", last)?;
        last = line;
        if tokens.len() != dim {
            return Err(format_err(line, format!("expected {dim} coordinates, found {}", tokens.len())));
        }
        let mut x = [0.0; 3];
        for (k, t) in tokens.iter().enumerate() {
            x[k] = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(line, format!("invalid coordinate `{t}`")))?;
        }
        vertices.push(x);
    }

    let (l, nc) = header(&mut lines, "CELLS", last)?;
    last = l;
    let mut cells = Vec::with_capacity(nc * (dim + 1));
    for _ in 0..nc {
        let (line, tokens) = lines.expect("a cell", last)?;
        last = line;
        if tokens.len() != dim + 1 {
            return Err(format_err(line, format!("expected {} vertex indices, found {}", dim + 1, tokens.len())));
        }
        let mut cell = tokens
            .iter()
            .map(|t| parse_index(t, line, nv))
            .collect::<Result<Vec<usize>>>()?;
        let measure = signed_measure(dim, &vertices, &cell);
        if measure == 0.0 {
            return Err(format_err(line, "degenerate cell"));
        }
        if measure < 0.0 {
            cell.swap(dim - 1, dim);
        }
        cells.extend(cell);
    }

    let (l, nf) = header(&mut lines, "FACETS", last)?;
    last = l;
    let mut facets = Vec::with_capacity(nf * dim);
    let mut tags = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, tokens) = lines.expect("a facet", last)?;
        last = line;
        if tokens.len() != dim + 1 {
            return Err(format_err(line, format!("expected {dim} vertex indices and a tag, found {} fields", tokens.len())));
        }
        for t in &tokens[..dim] {
            facets.push(parse_index(t, line, nv)?);
        }
        let tag = BoundaryTag::from_name(tokens[dim])
            .ok_or_else(|| format_err(line, format!("unknown boundary tag `{}`", tokens[dim])))?;
        tags.push(tag);
    }
    if let Some((line, _)) = lines.next_content() {
        return Err(format_err(line, "unexpected content after the facet list"));
    }
    Mesh::new(dim, vertices, cells, facets, tags)
}

/// Writes a mesh in the format read by [`parse_mesh`].
pub fn write_mesh(mesh: &Mesh) -> String {
    let d = mesh.dim();
    let mut out = String::new();
    let _ = writeln!(out, "DIM {d}");
    let _ = writeln!(out, "VERTICES {}", mesh.num_vertices());
    for i in 0..mesh.num_vertices() {
        let coords: Vec<String> = mesh.vertex(i).iter().map(|c| format!("{c:?}")).collect();
        let _ = writeln!(out, "{}", coords.join(" "));
    }
    let _ = writeln!(out, "CELLS {}", mesh.num_cells());
    for c in 0..mesh.num_cells() {
        let idx: Vec<String> = mesh.cell(c).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}", idx.join(" "));
    }
    let _ = writeln!(out, "FACETS {}", mesh.num_facets());
    for f in 0..mesh.num_facets() {
        let idx: Vec<String> = mesh.facet(f).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{} {}", idx.join(" "), mesh.facet_tag(f).name());
    }
    out
}

/// One value per vertex, whitespace separated, `#` comments allowed.
pub fn parse_nodal_values(text: &str, expected: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for t in body.split_whitespace() {
            let v = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(i + 1, format!("invalid value `{t}`")))?;
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(Error::Config(format!(
            "nodal data has {} values for {expected} vertices",
            values.len()
        )));
    }
    Ok(values)
}
