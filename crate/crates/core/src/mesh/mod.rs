//! Admissible two-point-flux meshes.
//!
//! A [`Mesh`] is a set of control volumes with one "center" point each and a set of
//! edges carrying the transmissibility `tau = m(sigma) / d_sigma`. The segment joining
//! the centers of two neighbouring cells is orthogonal to their common edge, which is
//! what makes the two-point flux consistent.
//!
//! In one dimension edges are points and carry the measure 1, so `tau = 1 / d_sigma`.

mod builders;
pub(crate) mod field;
mod profile;
mod triangle;

pub use builders::{build_1d, build_1d_uniform, build_2d_rect, BoundarySegment, BoundarySpec, Side, SideSpec};
pub use field::{edge_trace, h1_seminorm_sq, AugmentedField, CellField};
pub use profile::{nesting_map, project_cell_averages, project_nested, BoxRegion, Profile};
pub use triangle::{load_triangle_mesh, parse_triangle_mesh};

use thiserror::Error;

/// Relative tolerance of the orthogonality test `|(x_L - x_K) . t| / |x_L - x_K|`.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Below this value of the regularity constant a mesh is reported as poorly shaped.
pub const XI_WARNING_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("a mesh needs at least 2 cells in each direction, got {0}")]
    TooFewCells(usize),
    #[error("domain extent must be positive and finite, got {0}")]
    BadExtent(f64),
    #[error("mesh has no Dirichlet boundary edge")]
    NoDirichletEdge,
    #[error("boundary segment endpoint {coordinate} on the {side} side falls inside boundary edge #{edge} spanning [{from}, {to}]")]
    MisalignedSegment {
        side: &'static str,
        coordinate: f64,
        edge: usize,
        from: f64,
        to: f64,
    },
    #[error("boundary segment [{from}, {to}] on the {side} side is invalid")]
    BadSegment { side: &'static str, from: f64, to: f64 },
    #[error("cell {cell} is not admissible: {reason}")]
    NotAdmissible { cell: usize, reason: String },
    #[error("edge {edge} is inconsistent: {reason}")]
    BadEdge { edge: usize, reason: String },
    #[error("mesh file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("non-conforming triangulation: {0}")]
    NonConforming(String),
    #[error("could not read mesh file: {0}")]
    Io(String),
    #[error("edge {edge} is not incident to cell {cell}")]
    NotIncident { cell: usize, edge: usize },
    #[error("field has {got} {what} values, mesh expects {expected}")]
    FieldSize {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("meshes are not nested: {0}")]
    NotNested(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Geometry of a control volume, kept for exact cell averages and nesting tests.
#[derive(Clone, Debug, PartialEq)]
pub enum CellShape {
    Interval { a: f64, b: f64 },
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    Triangle([[f64; 2]; 3]),
}

impl CellShape {
    pub fn centroid(&self) -> [f64; 2] {
        match *self {
            CellShape::Interval { a, b } => [0.5 * (a + b), 0.0],
            CellShape::Rect { x0, x1, y0, y1 } => [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
            CellShape::Triangle(p) => [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: usize,
    /// Length (1D) or area (2D).
    pub measure: f64,
    /// The point `x_K` used by the two-point fluxes.
    pub center: [f64; 2],
    pub diameter: f64,
    pub shape: CellShape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Interior {
        k: usize,
        l: usize,
    },
    /// `boundary` indexes the Dirichlet trace vectors (`u_{E^D}`).
    Dirichlet {
        k: usize,
        boundary: usize,
    },
    Neumann {
        k: usize,
    },
}

impl EdgeKind {
    /// The first (or only) cell of the edge.
    pub fn owner(&self) -> usize {
        match *self {
            EdgeKind::Interior { k, .. } | EdgeKind::Dirichlet { k, .. } | EdgeKind::Neumann { k } => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub id: usize,
    pub measure: f64,
    pub d_sigma: f64,
    pub tau: f64,
    pub kind: EdgeKind,
    /// Segment end points; both equal in 1D.
    pub endpoints: [[f64; 2]; 2],
}

impl Edge {
    pub fn midpoint(&self) -> [f64; 2] {
        [
            0.5 * (self.endpoints[0][0] + self.endpoints[1][0]),
            0.5 * (self.endpoints[0][1] + self.endpoints[1][1]),
        ]
    }
}

/// An immutable admissible mesh.
#[derive(Clone, Debug)]
pub struct Mesh {
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    cell_edges: Vec<Vec<usize>>,
    dirichlet_edges: Vec<usize>,
    dimension: usize,
    size: f64,
    xi: f64,
    max_orthogonality_residual: f64,
}

impl Mesh {
    /// Assembles a mesh from cells and edges and checks every structural invariant.
    ///
    /// Dirichlet edges must be numbered `0..n_D` through their `boundary` field, in the
    /// order they appear in `edges`.
    pub fn from_parts(cells: Vec<Cell>, edges: Vec<Edge>, dimension: usize) -> Result<Mesh, MeshError> {
        let n = cells.len();
        let mut cell_edges = vec![Vec::new(); n];
        let mut dirichlet_edges = Vec::new();
        for (i, c) in cells.iter().enumerate() {
            if c.id != i {
                return Err(MeshError::NotAdmissible {
                    cell: i,
                    reason: format!("cell id {} does not match its position", c.id),
                });
            }
            if !(c.measure > 0.0) || !(c.diameter > 0.0) {
                return Err(MeshError::NotAdmissible {
                    cell: i,
                    reason: "nonpositive measure or diameter".into(),
                });
            }
        }
        let mut max_orth: f64 = 0.0;
        for (i, e) in edges.iter().enumerate() {
            let bad = |reason: String| MeshError::BadEdge { edge: i, reason };
            if e.id != i {
                return Err(bad(format!("edge id {} does not match its position", e.id)));
            }
            if !(e.measure > 0.0) || !(e.d_sigma > 0.0) || !(e.tau > 0.0) {
                return Err(bad("nonpositive measure, distance or transmissibility".into()));
            }
            if ((e.tau - e.measure / e.d_sigma) / e.tau).abs() > 1e-14 {
                return Err(bad("tau differs from m(sigma)/d_sigma".into()));
            }
            match e.kind {
                EdgeKind::Interior { k, l } => {
                    if k == l || k >= n || l >= n {
                        return Err(bad(format!("invalid interior cells ({k}, {l})")));
                    }
                    let (xk, xl) = (cells[k].center, cells[l].center);
                    let dx = [xl[0] - xk[0], xl[1] - xk[1]];
                    let dist = dx[0].hypot(dx[1]);
                    if dist <= 0.0 {
                        return Err(MeshError::NotAdmissible {
                            cell: k,
                            reason: format!("center coincides with the center of cell {l}"),
                        });
                    }
                    if ((dist - e.d_sigma) / dist).abs() > 1e-10 {
                        return Err(bad(format!(
                            "d_sigma {} differs from center distance {dist}",
                            e.d_sigma
                        )));
                    }
                    if dimension == 2 {
                        let t = [
                            e.endpoints[1][0] - e.endpoints[0][0],
                            e.endpoints[1][1] - e.endpoints[0][1],
                        ];
                        let tn = t[0].hypot(t[1]);
                        let r = (dx[0] * t[0] + dx[1] * t[1]).abs() / (dist * tn);
                        if r > ORTHOGONALITY_TOL {
                            return Err(MeshError::NotAdmissible {
                                cell: k,
                                reason: format!(
                                    "center segment to cell {l} is not orthogonal to edge {i} (residual {r:e})"
                                ),
                            });
                        }
                        max_orth = max_orth.max(r);
                    }
                    cell_edges[k].push(i);
                    cell_edges[l].push(i);
                }
                EdgeKind::Dirichlet { k, boundary } => {
                    if k >= n {
                        return Err(bad(format!("invalid cell {k}")));
                    }
                    if boundary != dirichlet_edges.len() {
                        return Err(bad(format!("Dirichlet index {boundary} out of order")));
                    }
                    dirichlet_edges.push(i);
                    cell_edges[k].push(i);
                }
                EdgeKind::Neumann { k } => {
                    if k >= n {
                        return Err(bad(format!("invalid cell {k}")));
                    }
                    cell_edges[k].push(i);
                }
            }
        }
        if dirichlet_edges.is_empty() {
            return Err(MeshError::NoDirichletEdge);
        }
        let mut xi = f64::INFINITY;
        for (k, c) in cells.iter().enumerate() {
            if cell_edges[k].is_empty() {
                return Err(MeshError::NotAdmissible {
                    cell: k,
                    reason: "cell has no edges".into(),
                });
            }
            for &s in &cell_edges[k] {
                let d = signed_distance_to_edge(c, &edges[s], dimension);
                if !(d > 0.0) {
                    return Err(MeshError::NotAdmissible {
                        cell: k,
                        reason: format!("distance from the cell center to edge {s} is {d:e} (must be > 0)"),
                    });
                }
                xi = xi.min(d / c.diameter);
            }
        }
        let size = cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
        Ok(Mesh {
            cells,
            edges,
            cell_edges,
            dirichlet_edges,
            dimension,
            size,
            xi,
            max_orthogonality_residual: max_orth,
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell(&self, k: usize) -> &Cell {
        &self.cells[k]
    }

    pub fn edge(&self, s: usize) -> &Edge {
        &self.edges[s]
    }

    /// Edge ids incident to cell `k`.
    pub fn cell_edges(&self, k: usize) -> &[usize] {
        &self.cell_edges[k]
    }

    /// Edge ids of the Dirichlet edges, in trace-vector order.
    pub fn dirichlet_edges(&self) -> &[usize] {
        &self.dirichlet_edges
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_dirichlet(&self) -> usize {
        self.dirichlet_edges.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `size(T)`, the largest cell diameter.
    pub fn size(&self) -> f64 {
        self.size
    }

    /// Regularity constant: `min d(x_K, sigma) / diam(K)` over cells and their edges.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn max_orthogonality_residual(&self) -> f64 {
        self.max_orthogonality_residual
    }

    pub fn domain_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    pub fn measures(&self) -> CellField {
        self.cells.iter().map(|c| c.measure).collect()
    }

    pub fn regularity_warning(&self) -> Option<String> {
        (self.xi < XI_WARNING_THRESHOLD).then(|| {
            format!(
                "mesh regularity constant xi = {:.3e} is below {XI_WARNING_THRESHOLD}",
                self.xi
            )
        })
    }

    /// Largest number of neighbours sharing an interior edge with one cell.
    pub fn max_edges_per_cell(&self) -> usize {
        self.cell_edges.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn count_edges(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for e in &self.edges {
            match e.kind {
                EdgeKind::Interior { .. } => counts.0 += 1,
                EdgeKind::Dirichlet { .. } => counts.1 += 1,
                EdgeKind::Neumann { .. } => counts.2 += 1,
            }
        }
        counts
    }

    /// Multi-line admissibility report.
    pub fn report(&self) -> String {
        let (ni, nd, nn) = self.count_edges();
        let mut s = format!(
            "dimension      {}\ncells          {}\nedges          {} interior, {} Dirichlet, {} Neumann\n\
             domain measure {:.12}\nsize(T)        {:.6e}\nxi             {:.6e}\n\
             max |cos(center segment, edge)| {:.3e}\n",
            self.dimension,
            self.n_cells(),
            ni,
            nd,
            nn,
            self.domain_measure(),
            self.size,
            self.xi,
            self.max_orthogonality_residual,
        );
        if let Some(w) = self.regularity_warning() {
            s.push_str("warning: ");
            s.push_str(&w);
            s.push('\n');
        }
        s
    }
}

/// Distance from `x_K` to the edge line, positive on the side of the cell interior.
fn signed_distance_to_edge(cell: &Cell, edge: &Edge, dimension: usize) -> f64 {
    let x = cell.center;
    let [a, b] = edge.endpoints;
    if dimension == 1 {
        return (x[0] - a[0]).abs();
    }
    let t = [b[0] - a[0], b[1] - a[1]];
    let len = t[0].hypot(t[1]);
    let normal = [-t[1] / len, t[0] / len];
    let side = |p: [f64; 2]| (p[0] - a[0]) * normal[0] + (p[1] - a[1]) * normal[1];
    let inside = side(cell.shape.centroid());
    let d = side(x);
    if inside >= 0.0 {
        d
    } else {
        -d
    }
}
