//! Quadrature rules: simplex rules for assembly and adaptive Gauss-Kronrod
//! integration on intervals.

/// A quadrature point in barycentric coordinates with its weight relative to
/// the cell volume (weights sum to one).
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub bary: [f64; 4],
    pub weight: f64,
}

const TRI_EDGE_MIDPOINTS: [QuadPoint; 3] = [
    QuadPoint {
        bary: [0.5, 0.5, 0.0, 0.0],
        weight: 1.0 / 3.0,
    },
    QuadPoint {
        bary: [0.0, 0.5, 0.5, 0.0],
        weight: 1.0 / 3.0,
    },
    QuadPoint {
        bary: [0.5, 0.0, 0.5, 0.0],
        weight: 1.0 / 3.0,
    },
];

const TET_A: f64 = 0.585_410_196_624_968_5;
const TET_B: f64 = 0.138_196_601_125_010_5;

const TET_DEGREE2: [QuadPoint; 4] = [
    QuadPoint {
        bary: [TET_A, TET_B, TET_B, TET_B],
        weight: 0.25,
    },
    QuadPoint {
        bary: [TET_B, TET_A, TET_B, TET_B],
        weight: 0.25,
    },
    QuadPoint {
        bary: [TET_B, TET_B, TET_A, TET_B],
        weight: 0.25,
    },
    QuadPoint {
        bary: [TET_B, TET_B, TET_B, TET_A],
        weight: 0.25,
    },
];

/// Degree-2 rule on the reference simplex of dimension `dim`: the edge
/// midpoint rule for triangles, the symmetric 4-point rule for tetrahedra.
pub fn simplex_rule(dim: usize) -> &'static [QuadPoint] {
    match dim {
        2 => &TRI_EDGE_MIDPOINTS,
        3 => &TET_DEGREE2,
        _ => panic!("no simplex rule for dimension {dim}"),
    }
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = half * XGK[j];
        let s = f(center - x) + f(center + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]` to relative
/// tolerance `rel_tol` (with a tiny absolute floor).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (value, err) = gk15(&f, a, b);
    let mut total = value;
    let mut total_err = err;
    let mut pieces = vec![(a, b, value, err)];
    let mut iterations = 0;
    while total_err > rel_tol * total.abs().max(1e-300) && iterations < 2000 {
        iterations += 1;
        // split the worst interval
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one interval");
        let (lo, hi, v, e) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            pieces.push((lo, hi, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        total += v1 + v2 - v;
        total_err += e1 + e2 - e;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // re-sum to shed accumulated cancellation
    pieces.iter().map(|p| p.2).sum()
}
