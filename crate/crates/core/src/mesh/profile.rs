//! Cell and edge averages of spatial profiles, and projection between nested meshes.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::{CellField, CellShape, Edge, Mesh, MeshError};

/// Closed axis-aligned box. In 1D only the `x` range matters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxRegion {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl BoxRegion {
    pub fn interval(a: f64, b: f64) -> Self {
        BoxRegion {
            x: (a, b),
            y: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        BoxRegion {
            x: (x0, x1),
            y: (y0, y1),
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        self.x.0 <= p[0] && p[0] <= self.x.1 && self.y.0 <= p[1] && p[1] <= self.y.1
    }
}

/// A function of space with an exact (or quadrature) mean over cells and edges.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// `value + grad . x`
    Affine {
        value: f64,
        grad: [f64; 2],
    },
    /// `default` outside the boxes; boxes are disjoint (checked by [`Profile::piecewise`]).
    Piecewise {
        default: f64,
        boxes: Vec<(BoxRegion, f64)>,
    },
    /// Evaluated by composite Gauss quadrature.
    Function(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "Constant({c})"),
            Profile::Affine { value, grad } => write!(f, "Affine({value} + {grad:?}.x)"),
            Profile::Piecewise { default, boxes } => write!(f, "Piecewise({default}, {boxes:?})"),
            Profile::Function(_) => write!(f, "Function(..)"),
        }
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

impl Profile {
    /// Affine interpolant in `x` through `(x0, v0)` and `(x1, v1)`.
    pub fn affine_x(x0: f64, v0: f64, x1: f64, v1: f64) -> Self {
        let slope = (v1 - v0) / (x1 - x0);
        Profile::Affine {
            value: v0 - slope * x0,
            grad: [slope, 0.0],
        }
    }

    /// Affine interpolant in `y` through `(y0, v0)` and `(y1, v1)`.
    pub fn affine_y(y0: f64, v0: f64, y1: f64, v1: f64) -> Self {
        let slope = (v1 - v0) / (y1 - y0);
        Profile::Affine {
            value: v0 - slope * y0,
            grad: [0.0, slope],
        }
    }

    pub fn piecewise(default: f64, boxes: Vec<(BoxRegion, f64)>) -> Result<Self, MeshError> {
        for (i, (a, _)) in boxes.iter().enumerate() {
            if !(a.x.0 < a.x.1) || !(a.y.0 < a.y.1) {
                return Err(MeshError::InvalidProfile(format!("box {i} is empty")));
            }
            for (j, (b, _)) in boxes.iter().enumerate().skip(i + 1) {
                if overlap(a.x, b.x) > 0.0 && overlap(a.y, b.y) > 0.0 {
                    return Err(MeshError::InvalidProfile(format!("boxes {i} and {j} overlap")));
                }
            }
        }
        Ok(Profile::Piecewise { default, boxes })
    }

    /// Point value; on a box boundary the first box containing the point wins.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Affine { value, grad } => value + grad[0] * p[0] + grad[1] * p[1],
            Profile::Piecewise { default, boxes } => {
                boxes.iter().find(|(b, _)| b.contains(p)).map_or(*default, |(_, v)| *v)
            }
            Profile::Function(f) => f(p),
        }
    }

    /// `(1 / m(K)) int_K f`.
    pub fn cell_average(&self, shape: &CellShape) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Affine { .. } => self.eval(shape.centroid()),
            Profile::Piecewise { default, boxes } => {
                let total = shape_measure(shape);
                let mut acc = 0.0;
                let mut covered = 0.0;
                for (b, v) in boxes {
                    let part = intersection_measure(shape, b);
                    acc += v * part;
                    covered += part;
                }
                (acc + default * (total - covered).max(0.0)) / total
            }
            Profile::Function(f) => quadrature_average(shape, f.as_ref()),
        }
    }

    /// `(1 / m(sigma)) int_sigma f`; the point value in 1D.
    pub fn edge_average(&self, edge: &Edge) -> f64 {
        let [a, b] = edge.endpoints;
        if a == b {
            return self.eval(a);
        }
        match self {
            Profile::Constant(c) => *c,
            Profile::Affine { .. } => self.eval(edge.midpoint()),
            Profile::Piecewise { default, boxes } => {
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                let mut acc = 0.0;
                let mut covered = 0.0;
                for (bx, v) in boxes {
                    let frac = segment_fraction_in_box(a, b, bx);
                    acc += v * frac * len;
                    covered += frac * len;
                }
                (acc + default * (len - covered).max(0.0)) / len
            }
            Profile::Function(f) => {
                let (nodes, weights) = gauss8();
                let mut acc = 0.0;
                for (t, w) in nodes.iter().zip(weights) {
                    let s = 0.5 * (t + 1.0);
                    acc += 0.5 * w * f([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                }
                acc
            }
        }
    }
}

fn shape_measure(shape: &CellShape) -> f64 {
    match *shape {
        CellShape::Interval { a, b } => b - a,
        CellShape::Rect { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
        CellShape::Triangle(p) => polygon_area(&p),
    }
}

fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Sutherland-Hodgman clipping of a convex polygon against one half-plane.
fn clip(poly: &[[f64; 2]], inside: impl Fn([f64; 2]) -> f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let (fp, fq) = (inside(p), inside(q));
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp >= 0.0) != (fq >= 0.0) {
            let t = fp / (fp - fq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn intersection_measure(shape: &CellShape, b: &BoxRegion) -> f64 {
    match *shape {
        CellShape::Interval { a, b: e } => overlap((a, e), b.x),
        CellShape::Rect { x0, x1, y0, y1 } => overlap((x0, x1), b.x) * overlap((y0, y1), b.y),
        CellShape::Triangle(p) => {
            let mut poly = p.to_vec();
            let bounds: [(usize, f64, f64); 4] = [(0, b.x.0, 1.0), (0, b.x.1, -1.0), (1, b.y.0, 1.0), (1, b.y.1, -1.0)];
            for (axis, v, sign) in bounds {
                if !v.is_finite() {
                    continue;
                }
                poly = clip(&poly, |q| sign * (q[axis] - v));
                if poly.len() < 3 {
                    return 0.0;
                }
            }
            polygon_area(&poly)
        }
    }
}

/// Fraction of the segment `[a, b]` inside the box (Liang-Barsky).
fn segment_fraction_in_box(a: [f64; 2], b: [f64; 2], bx: &BoxRegion) -> f64 {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        let (lo, hi) = if axis == 0 { bx.x } else { bx.y };
        let d = b[axis] - a[axis];
        if d == 0.0 {
            if a[axis] < lo || a[axis] > hi {
                return 0.0;
            }
        } else {
            let (ta, tb) = ((lo - a[axis]) / d, (hi - a[axis]) / d);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t1 - t0).max(0.0)
}

fn gauss8() -> ([f64; 8], [f64; 8]) {
    (
        [
            -0.960_289_856_497_536_2,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_2,
        ],
        [
            0.101_228_536_290_376_26,
            0.222_381_034_453_374_47,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362,
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_47,
            0.101_228_536_290_376_26,
        ],
    )
}

fn quadrature_average(shape: &CellShape, f: &(dyn Fn([f64; 2]) -> f64 + Send + Sync)) -> f64 {
    let (nodes, weights) = gauss8();
    match *shape {
        CellShape::Interval { a, b } => nodes
            .iter()
            .zip(weights)
            .map(|(t, w)| 0.5 * w * f([0.5 * (a + b) + 0.5 * (b - a) * t, 0.0]))
            .sum(),
        CellShape::Rect { x0, x1, y0, y1 } => {
            let mut acc = 0.0;
            for (tx, wx) in nodes.iter().zip(weights) {
                for (ty, wy) in nodes.iter().zip(weights) {
                    let p = [
                        0.5 * (x0 + x1) + 0.5 * (x1 - x0) * tx,
                        0.5 * (y0 + y1) + 0.5 * (y1 - y0) * ty,
                    ];
                    acc += 0.25 * wx * wy * f(p);
                }
            }
            acc
        }
        CellShape::Triangle(p) => {
            // Duffy-collapsed tensor Gauss rule on the reference triangle
            let mut acc = 0.0;
            for (tu, wu) in nodes.iter().zip(weights) {
                let u = 0.5 * (tu + 1.0);
                for (tv, wv) in nodes.iter().zip(weights) {
                    let v = 0.5 * (tv + 1.0) * (1.0 - u);
                    let w = 0.25 * wu * wv * (1.0 - u);
                    let q = [
                        p[0][0] + u * (p[1][0] - p[0][0]) + v * (p[2][0] - p[0][0]),
                        p[0][1] + u * (p[1][1] - p[0][1]) + v * (p[2][1] - p[0][1]),
                    ];
                    acc += w * f(q);
                }
            }
            2.0 * acc
        }
    }
}

/// Cell means of `profile` on `mesh`.
pub fn project_cell_averages(mesh: &Mesh, profile: &Profile) -> CellField {
    mesh.cells().iter().map(|c| profile.cell_average(&c.shape)).collect()
}

/// For every fine cell, the coarse cell containing it.
pub fn nesting_map(coarse: &Mesh, fine: &Mesh) -> Result<Vec<usize>, MeshError> {
    let not_nested = |msg: String| MeshError::NotNested(msg);
    if coarse.dimension() != fine.dimension() {
        return Err(not_nested("dimensions differ".into()));
    }
    let scale = coarse.size();
    let tol = 1e-9 * scale;
    let mut breaks_x: Vec<f64> = Vec::new();
    let mut breaks_y: Vec<f64> = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let key = |v: f64, breaks: &[f64]| -> usize { breaks.partition_point(|&b| b < v).saturating_sub(1) };
    for c in coarse.cells() {
        match c.shape {
            CellShape::Interval { a, .. } => breaks_x.push(a),
            CellShape::Rect { x0, y0, .. } => {
                breaks_x.push(x0);
                breaks_y.push(y0);
            }
            CellShape::Triangle(_) => return Err(not_nested("triangle meshes are not supported".into())),
        }
    }
    let dedup = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    };
    dedup(&mut breaks_x);
    dedup(&mut breaks_y);
    for c in coarse.cells() {
        let k = match c.shape {
            CellShape::Interval { a, .. } => (key(a + tol, &breaks_x), 0),
            CellShape::Rect { x0, y0, .. } => (key(x0 + tol, &breaks_x), key(y0 + tol, &breaks_y)),
            CellShape::Triangle(_) => unreachable!(),
        };
        lookup.insert(k, c.id);
    }
    let within = |inner: (f64, f64), outer: (f64, f64)| inner.0 >= outer.0 - tol && inner.1 <= outer.1 + tol;
    fine.cells()
        .iter()
        .map(|f| {
            let (k, xr, yr) = match f.shape {
                CellShape::Interval { a, b } => ((key(f.center[0], &breaks_x), 0), (a, b), None),
                CellShape::Rect { x0, x1, y0, y1 } => (
                    (key(f.center[0], &breaks_x), key(f.center[1], &breaks_y)),
                    (x0, x1),
                    Some((y0, y1)),
                ),
                CellShape::Triangle(_) => return Err(not_nested("triangle meshes are not supported".into())),
            };
            let cid = *lookup
                .get(&k)
                .ok_or_else(|| not_nested(format!("fine cell {} lies outside the coarse mesh", f.id)))?;
            let ok = match (&coarse.cell(cid).shape, yr) {
                (CellShape::Interval { a, b }, None) => within(xr, (*a, *b)),
                (CellShape::Rect { x0, x1, y0, y1 }, Some(yr)) => within(xr, (*x0, *x1)) && within(yr, (*y0, *y1)),
                _ => false,
            };
            if ok {
                Ok(cid)
            } else {
                Err(not_nested(format!("fine cell {} straddles coarse cell {cid}", f.id)))
            }
        })
        .collect()
}

/// Measure-weighted means of a fine field over the cells of a coarse mesh nesting it.
pub fn project_nested(coarse: &Mesh, fine: &Mesh, fine_field: &[f64]) -> Result<CellField, MeshError> {
    if fine_field.len() != fine.n_cells() {
        return Err(MeshError::FieldSize {
            what: "cell",
            got: fine_field.len(),
            expected: fine.n_cells(),
        });
    }
    let map = nesting_map(coarse, fine)?;
    let mut acc = vec![0.0; coarse.n_cells()];
    let mut mass = vec![0.0; coarse.n_cells()];
    for (f, &c) in map.iter().enumerate() {
        let m = fine.cell(f).measure;
        acc[c] += m * fine_field[f];
        mass[c] += m;
    }
    for (c, (a, m)) in acc.iter_mut().zip(&mass).enumerate() {
        let expected = coarse.cell(c).measure;
        if ((m - expected) / expected).abs() > 1e-9 {
            return Err(MeshError::NotNested(format!(
                "fine cells cover {m} of coarse cell {c} with measure {expected}"
            )));
        }
        *a /= m;
    }
    Ok(CellField(acc))
}
