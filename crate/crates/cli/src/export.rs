//! Legacy ASCII VTK and CSV writers.

use std::fmt::Write as _;

use thermopt_core::control::Control;
use thermopt_core::mesh::Mesh;
use thermopt_core::verify::{ConvergenceTable, EXACT_DIFFERENCE};

/// Unstructured grid with one POINT_DATA scalar per `(name, values)` pair.
pub fn vtk(mesh: &Mesh, title: &str, fields: &[(&str, &[f64])]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let nv = mesh.num_vertices();
    let _ = writeln!(out, "POINTS {nv} double");
    for i in 0..nv {
        let p = mesh.point(i);
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    let nc = mesh.num_cells();
    let k = mesh.dim() + 1;
    let _ = writeln!(out, "CELLS {nc} {}", nc * (k + 1));
    for c in 0..nc {
        let idx: Vec<String> = mesh.cell(c).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{k} {}", idx.join(" "));
    }
    let cell_type = if mesh.dim() == 2 { 5 } else { 10 };
    let _ = writeln!(out, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(out, "{cell_type}");
    }
    let _ = writeln!(out, "POINT_DATA {nv}");
    for (name, values) in fields {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values.iter() {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

/// One row per Robin facet: index, centroid coordinates, control value.
pub fn beta_csv(mesh: &Mesh, beta: &Control) -> String {
    let axes = ["x", "y", "z"];
    let d = mesh.dim();
    let mut out = format!("facet,{},beta\n", axes[..d].join(","));
    for (&f, b) in mesh.robin_facets().iter().zip(beta.values()) {
        let c = mesh.facet_centroid(f);
        let coords: Vec<String> = c[..d].iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{f},{},{b}", coords.join(","));
    }
    out
}

fn cell(diff: Option<f64>, rate: Option<f64>) -> String {
    match (diff, rate) {
        (_, Some(r)) => format!("{r:.4}"),
        (Some(d), None) if d <= EXACT_DIFFERENCE => "exact".into(),
        _ => String::new(),
    }
}

/// Self-convergence table with rates; tiny differences are reported as `exact`.
pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut out = String::from(
        "level,vertices,h,iterations,u_l2_diff,u_h1_diff,phi_l2_diff,phi_h1_diff,u_l2_rate,u_h1_rate,phi_l2_rate,phi_h1_rate\n",
    );
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6e}"));
    for r in &table.levels {
        let _ = writeln!(
            out,
            "{},{},{:.6e},{},{},{},{},{},{},{},{},{}",
            r.level,
            r.vertices,
            r.h,
            r.iterations,
            opt(r.u_l2_diff),
            opt(r.u_h1_diff),
            opt(r.phi_l2_diff),
            opt(r.phi_h1_diff),
            cell(r.u_l2_diff, r.u_l2_rate),
            cell(r.u_h1_diff, r.u_h1_rate),
            cell(r.phi_l2_diff, r.phi_l2_rate),
            cell(r.phi_h1_diff, r.phi_h1_rate),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermopt_core::mesh::{build_rectangle_mesh, BoxFace, Side, TagRule};

    fn mesh(dim: usize) -> Mesh {
        let rule = TagRule::dirichlet_on(&[BoxFace::new(0, Side::Low)]);
        build_rectangle_mesh(&vec![1.0; dim], &vec![2; dim], &rule).unwrap()
    }

    #[test]
    fn vtk_sections_have_consistent_counts() {
        for dim in [2, 3] {
            let m = mesh(dim);
            let values: Vec<f64> = (0..m.num_vertices()).map(|i| i as f64).collect();
            let text = vtk(&m, "u", &[("u", &values)]);
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines[0], "# vtk DataFile Version 3.0");
            let points = lines.iter().position(|l| l.starts_with("POINTS")).unwrap();
            let cells = lines.iter().position(|l| l.starts_with("CELLS")).unwrap();
            assert_eq!(cells - points - 1, m.num_vertices());
            let types = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
            assert_eq!(types - cells - 1, m.num_cells());
            let data = lines.iter().position(|l| l.starts_with("POINT_DATA")).unwrap();
            assert_eq!(lines.len() - data - 3, m.num_vertices());
            assert!(lines[cells + 1].starts_with(&format!("{} ", dim + 1)));
        }
    }

    #[test]
    fn beta_csv_has_one_row_per_robin_facet() {
        let m = mesh(2);
        let beta = Control::constant(&m, 0.5, 1.0).unwrap();
        let text = beta_csv(&m, &beta);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("facet,x,y,beta"));
        assert_eq!(lines.count(), m.robin_facets().len());
        assert!(text.lines().skip(1).all(|l| l.ends_with(",0.5")));
    }
}
