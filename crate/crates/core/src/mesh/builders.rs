use super::{BoundaryKind, Cell, CellShape, Edge, EdgeKind, Mesh, MeshError};

/// Uniform mesh of `(0, length)` with Dirichlet conditions at both ends.
pub fn build_1d_uniform(n_cells: usize, length: f64) -> Result<Mesh, MeshError> {
    build_1d(n_cells, length, BoundaryKind::Dirichlet, BoundaryKind::Dirichlet)
}

/// Uniform mesh of `(0, length)`. Edge `i` sits at `x = i * length / n_cells`.
pub fn build_1d(n_cells: usize, length: f64, left: BoundaryKind, right: BoundaryKind) -> Result<Mesh, MeshError> {
    if n_cells < 2 {
        return Err(MeshError::TooFewCells(n_cells));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(MeshError::BadExtent(length));
    }
    let h = length / n_cells as f64;
    let node = |i: usize| {
        if i == n_cells {
            length
        } else {
            i as f64 * h
        }
    };
    let cells = (0..n_cells)
        .map(|k| {
            let (a, b) = (node(k), node(k + 1));
            Cell {
                id: k,
                measure: b - a,
                center: [0.5 * (a + b), 0.0],
                diameter: b - a,
                shape: CellShape::Interval { a, b },
            }
        })
        .collect::<Vec<_>>();

    let mut edges = Vec::with_capacity(n_cells + 1);
    let mut n_dir = 0;
    let mut boundary = |id: usize, k: usize, kind: BoundaryKind, x: f64, d: f64| {
        let kind = match kind {
            BoundaryKind::Dirichlet => {
                n_dir += 1;
                EdgeKind::Dirichlet { k, boundary: n_dir - 1 }
            }
            BoundaryKind::Neumann => EdgeKind::Neumann { k },
        };
        Edge {
            id,
            measure: 1.0,
            d_sigma: d,
            tau: 1.0 / d,
            kind,
            endpoints: [[x, 0.0], [x, 0.0]],
        }
    };
    edges.push(boundary(0, 0, left, 0.0, cells[0].center[0]));
    for i in 1..n_cells {
        let d = cells[i].center[0] - cells[i - 1].center[0];
        let x = node(i);
        edges.push(Edge {
            id: i,
            measure: 1.0,
            d_sigma: d,
            tau: 1.0 / d,
            kind: EdgeKind::Interior { k: i - 1, l: i },
            endpoints: [[x, 0.0], [x, 0.0]],
        });
    }
    let last = n_cells - 1;
    edges.push(boundary(n_cells, last, right, length, length - cells[last].center[0]));
    Mesh::from_parts(cells, edges, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `y = 0`, parametrised by `x`.
    Bottom,
    /// `y = Ly`, parametrised by `x`.
    Top,
    /// `x = 0`, parametrised by `y`.
    Left,
    /// `x = Lx`, parametrised by `y`.
    Right,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Top => "top",
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySegment {
    pub from: f64,
    pub to: f64,
    pub kind: BoundaryKind,
}

/// Boundary kind along one side: a default plus sub-intervals that override it.
#[derive(Clone, Debug, PartialEq)]
pub struct SideSpec {
    pub default: BoundaryKind,
    pub segments: Vec<BoundarySegment>,
}

impl SideSpec {
    pub fn uniform(kind: BoundaryKind) -> Self {
        SideSpec {
            default: kind,
            segments: Vec::new(),
        }
    }

    fn kind_at(&self, s: f64) -> BoundaryKind {
        self.segments
            .iter()
            .find(|seg| seg.from <= s && s <= seg.to)
            .map_or(self.default, |seg| seg.kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    pub bottom: SideSpec,
    pub top: SideSpec,
    pub left: SideSpec,
    pub right: SideSpec,
}

impl BoundarySpec {
    pub fn uniform(kind: BoundaryKind) -> Self {
        BoundarySpec {
            bottom: SideSpec::uniform(kind),
            top: SideSpec::uniform(kind),
            left: SideSpec::uniform(kind),
            right: SideSpec::uniform(kind),
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut SideSpec {
        match side {
            Side::Bottom => &mut self.bottom,
            Side::Top => &mut self.top,
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    pub fn side(&self, side: Side) -> &SideSpec {
        match side {
            Side::Bottom => &self.bottom,
            Side::Top => &self.top,
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn with_default(mut self, side: Side, kind: BoundaryKind) -> Self {
        self.side_mut(side).default = kind;
        self
    }

    pub fn with_segment(mut self, side: Side, from: f64, to: f64, kind: BoundaryKind) -> Self {
        self.side_mut(side).segments.push(BoundarySegment { from, to, kind });
        self
    }
}

/// Checks that every segment end point lies on a grid line of its side.
fn check_alignment(
    spec: &SideSpec,
    side: Side,
    n: usize,
    h: f64,
    extent: f64,
    first_edge_id: impl Fn(usize) -> usize,
) -> Result<(), MeshError> {
    let tol = 1e-9 * extent;
    for seg in &spec.segments {
        if !(seg.from < seg.to) || seg.from < -tol || seg.to > extent + tol {
            return Err(MeshError::BadSegment {
                side: side.name(),
                from: seg.from,
                to: seg.to,
            });
        }
        for s in [seg.from, seg.to] {
            let i = (s / h).round();
            if (s - i * h).abs() > tol {
                let cell = ((s / h).floor() as usize).min(n - 1);
                return Err(MeshError::MisalignedSegment {
                    side: side.name(),
                    coordinate: s,
                    edge: first_edge_id(cell),
                    from: cell as f64 * h,
                    to: (cell + 1) as f64 * h,
                });
            }
        }
    }
    Ok(())
}

/// Uniform `nx` x `ny` rectangular mesh of `(0, lx) x (0, ly)`; cell `(i, j)` has id `j * nx + i`.
///
/// Vertical edges come first (row by row, `x = i * hx`), then horizontal edges.
pub fn build_2d_rect(nx: usize, ny: usize, lx: f64, ly: f64, boundary: &BoundarySpec) -> Result<Mesh, MeshError> {
    for n in [nx, ny] {
        if n < 2 {
            return Err(MeshError::TooFewCells(n));
        }
    }
    for l in [lx, ly] {
        if !(l > 0.0) || !l.is_finite() {
            return Err(MeshError::BadExtent(l));
        }
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let n_vertical = (nx + 1) * ny;
    check_alignment(&boundary.bottom, Side::Bottom, nx, hx, lx, |i| n_vertical + i)?;
    check_alignment(&boundary.top, Side::Top, nx, hx, lx, |i| n_vertical + ny * nx + i)?;
    check_alignment(&boundary.left, Side::Left, ny, hy, ly, |j| j * (nx + 1))?;
    check_alignment(&boundary.right, Side::Right, ny, hy, ly, |j| j * (nx + 1) + nx)?;

    let xs = |i: usize| if i == nx { lx } else { i as f64 * hx };
    let ys = |j: usize| if j == ny { ly } else { j as f64 * hy };
    let diam = hx.hypot(hy);
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x0, x1, y0, y1) = (xs(i), xs(i + 1), ys(j), ys(j + 1));
            cells.push(Cell {
                id: j * nx + i,
                measure: (x1 - x0) * (y1 - y0),
                center: [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
                diameter: diam,
                shape: CellShape::Rect { x0, x1, y0, y1 },
            });
        }
    }

    let mut edges = Vec::with_capacity(n_vertical + nx * (ny + 1));
    let mut n_dir = 0usize;
    let mut classify = |kind: BoundaryKind, k: usize| match kind {
        BoundaryKind::Dirichlet => {
            n_dir += 1;
            EdgeKind::Dirichlet { k, boundary: n_dir - 1 }
        }
        BoundaryKind::Neumann => EdgeKind::Neumann { k },
    };
    for j in 0..ny {
        let (y0, y1) = (ys(j), ys(j + 1));
        let ymid = 0.5 * (y0 + y1);
        for i in 0..=nx {
            let x = xs(i);
            let (kind, d) = if i == 0 {
                (classify(boundary.left.kind_at(ymid), j * nx), 0.5 * hx)
            } else if i == nx {
                (classify(boundary.right.kind_at(ymid), j * nx + nx - 1), 0.5 * hx)
            } else {
                (
                    EdgeKind::Interior {
                        k: j * nx + i - 1,
                        l: j * nx + i,
                    },
                    hx,
                )
            };
            let measure = y1 - y0;
            edges.push(Edge {
                id: edges.len(),
                measure,
                d_sigma: d,
                tau: measure / d,
                kind,
                endpoints: [[x, y0], [x, y1]],
            });
        }
    }
    for j in 0..=ny {
        let y = ys(j);
        for i in 0..nx {
            let (x0, x1) = (xs(i), xs(i + 1));
            let xmid = 0.5 * (x0 + x1);
            let (kind, d) = if j == 0 {
                (classify(boundary.bottom.kind_at(xmid), i), 0.5 * hy)
            } else if j == ny {
                (classify(boundary.top.kind_at(xmid), (ny - 1) * nx + i), 0.5 * hy)
            } else {
                (
                    EdgeKind::Interior {
                        k: (j - 1) * nx + i,
                        l: j * nx + i,
                    },
                    hy,
                )
            };
            let measure = x1 - x0;
            edges.push(Edge {
                id: edges.len(),
                measure,
                d_sigma: d,
                tau: measure / d,
                kind,
                endpoints: [[x0, y], [x1, y]],
            });
        }
    }
    Mesh::from_parts(cells, edges, 2)
}
