//! Import of conforming triangulations in the `tri-mesh v1` text format:
//!
//! ```text
//! tri-mesh v1
//! vertices <n>
//! x y            (n lines)
//! triangles <m>
//! i j k          (m lines, 0-based vertex indices)
//! boundary <b>
//! i j D|N        (b lines, one per boundary segment)
//! ```
//!
//! Cell centers are circumcenters; a triangle whose circumcenter is not strictly inside
//! it (right or obtuse) is rejected.

use std::collections::HashMap;
use std::path::Path;

use super::{BoundaryKind, Cell, CellShape, Edge, EdgeKind, Mesh, MeshError};

pub fn load_triangle_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| MeshError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_triangle_mesh(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Result<(usize, Vec<&'a str>), MeshError> {
        for (i, line) in self.inner.by_ref() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                self.last = i + 1;
                return Ok((i + 1, line.split_whitespace().collect()));
            }
        }
        Err(MeshError::Parse {
            line: self.last + 1,
            reason: "unexpected end of file".into(),
        })
    }

    fn header(&mut self, keyword: &str) -> Result<usize, MeshError> {
        let (line, tokens) = self.next_content()?;
        match tokens.as_slice() {
            [k, n] if *k == keyword => n.parse().map_err(|_| MeshError::Parse {
                line,
                reason: format!("bad count '{n}'"),
            }),
            _ => Err(MeshError::Parse {
                line,
                reason: format!("expected '{keyword} <count>'"),
            }),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, MeshError> {
    tok.parse().map_err(|_| MeshError::Parse {
        line,
        reason: format!("cannot parse '{tok}'"),
    })
}

pub fn parse_triangle_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, tokens) = lines.next_content()?;
    if tokens != ["tri-mesh", "v1"] {
        return Err(MeshError::Parse {
            line,
            reason: "expected header 'tri-mesh v1'".into(),
        });
    }
    let nv = lines.header("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, t) = lines.next_content()?;
        if t.len() != 2 {
            return Err(MeshError::Parse {
                line,
                reason: "expected 'x y'".into(),
            });
        }
        let p = [parse_num::<f64>(t[0], line)?, parse_num::<f64>(t[1], line)?];
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(MeshError::Parse {
                line,
                reason: "non-finite coordinate".into(),
            });
        }
        vertices.push(p);
    }
    let nt = lines.header("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, t) = lines.next_content()?;
        if t.len() != 3 {
            return Err(MeshError::Parse {
                line,
                reason: "expected 'i j k'".into(),
            });
        }
        let mut tri = [0usize; 3];
        for (slot, tok) in tri.iter_mut().zip(&t) {
            *slot = parse_num(tok, line)?;
            if *slot >= nv {
                return Err(MeshError::Parse {
                    line,
                    reason: format!("vertex index {slot} out of range"),
                });
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(MeshError::Parse {
                line,
                reason: "repeated vertex in triangle".into(),
            });
        }
        triangles.push(tri);
    }
    let nb = lines.header("boundary")?;
    let mut boundary: HashMap<(usize, usize), (BoundaryKind, usize)> = HashMap::new();
    for _ in 0..nb {
        let (line, t) = lines.next_content()?;
        if t.len() != 3 {
            return Err(MeshError::Parse {
                line,
                reason: "expected 'i j D|N'".into(),
            });
        }
        let (i, j): (usize, usize) = (parse_num(t[0], line)?, parse_num(t[1], line)?);
        let kind = match t[2] {
            "D" => BoundaryKind::Dirichlet,
            "N" => BoundaryKind::Neumann,
            other => {
                return Err(MeshError::Parse {
                    line,
                    reason: format!("boundary kind must be D or N, got '{other}'"),
                })
            }
        };
        if boundary.insert((i.min(j), i.max(j)), (kind, line)).is_some() {
            return Err(MeshError::Parse {
                line,
                reason: format!("boundary segment {i}-{j} listed twice"),
            });
        }
    }
    build_from_triangles(&vertices, &triangles, &boundary)
}

fn circumcenter(p: [[f64; 2]; 3]) -> [f64; 2] {
    let (ax, ay) = (p[0][0], p[0][1]);
    let (bx, by) = (p[1][0] - ax, p[1][1] - ay);
    let (cx, cy) = (p[2][0] - ax, p[2][1] - ay);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [ax + (cy * b2 - by * c2) / d, ay + (bx * c2 - cx * b2) / d]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn build_from_triangles(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    boundary: &HashMap<(usize, usize), (BoundaryKind, usize)>,
) -> Result<Mesh, MeshError> {
    let mut cells = Vec::with_capacity(triangles.len());
    for (id, tri) in triangles.iter().enumerate() {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        if area2.abs() <= f64::EPSILON * dist(p[0], p[1]).max(dist(p[0], p[2])).powi(2) {
            return Err(MeshError::NotAdmissible {
                cell: id,
                reason: "degenerate triangle".into(),
            });
        }
        let center = circumcenter(p);
        // the circumcenter must lie strictly inside, i.e. on the inner side of all three edges
        for e in 0..3 {
            let (a, b, c) = (p[e], p[(e + 1) % 3], p[(e + 2) % 3]);
            let t = [b[0] - a[0], b[1] - a[1]];
            let side = |q: [f64; 2]| t[0] * (q[1] - a[1]) - t[1] * (q[0] - a[0]);
            let len = t[0].hypot(t[1]);
            let d = side(center) * side(c).signum() / len;
            if d <= 1e-12 * len {
                return Err(MeshError::NotAdmissible {
                    cell: id,
                    reason: format!(
                        "circumcenter distance to edge {}-{} is {d:e}; the triangle is not acute",
                        tri[e],
                        tri[(e + 1) % 3]
                    ),
                });
            }
        }
        let diameter = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[0], p[2]));
        cells.push(Cell {
            id,
            measure: 0.5 * area2.abs(),
            center,
            diameter,
            shape: CellShape::Triangle(p),
        });
    }

    // edge -> incident triangles, in first-seen order for deterministic numbering
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut incident: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (id, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let (i, j) = (tri[e], tri[(e + 1) % 3]);
            let key = (i.min(j), i.max(j));
            let list = incident.entry(key).or_insert_with(|| {
                order.push(key);
                Vec::new()
            });
            list.push(id);
        }
    }
    for key in boundary.keys() {
        match incident.get(key).map(Vec::len) {
            Some(1) => {}
            _ => {
                return Err(MeshError::NonConforming(format!(
                    "segment {}-{} (line {}) is listed as boundary but is not a boundary edge",
                    key.0, key.1, boundary[key].1
                )))
            }
        }
    }

    let mut edges = Vec::with_capacity(order.len());
    let mut n_dir = 0;
    for key in order {
        let tris = &incident[&key];
        let endpoints = [vertices[key.0], vertices[key.1]];
        let measure = dist(endpoints[0], endpoints[1]);
        let id = edges.len();
        let (kind, d) = match tris.as_slice() {
            [k, l] => (
                EdgeKind::Interior { k: *k, l: *l },
                dist(cells[*k].center, cells[*l].center),
            ),
            [k] => {
                let kind = match boundary.get(&key) {
                    Some((BoundaryKind::Dirichlet, _)) => {
                        n_dir += 1;
                        EdgeKind::Dirichlet {
                            k: *k,
                            boundary: n_dir - 1,
                        }
                    }
                    Some((BoundaryKind::Neumann, _)) => EdgeKind::Neumann { k: *k },
                    None => {
                        return Err(MeshError::NonConforming(format!(
                            "boundary edge {}-{} of triangle {k} has no boundary marking",
                            key.0, key.1
                        )))
                    }
                };
                let mid = [
                    0.5 * (endpoints[0][0] + endpoints[1][0]),
                    0.5 * (endpoints[0][1] + endpoints[1][1]),
                ];
                (kind, dist(cells[*k].center, mid))
            }
            _ => {
                return Err(MeshError::NonConforming(format!(
                    "edge {}-{} is shared by {} triangles",
                    key.0,
                    key.1,
                    tris.len()
                )))
            }
        };
        edges.push(Edge {
            id,
            measure,
            d_sigma: d,
            tau: measure / d,
            kind,
            endpoints,
        });
    }
    Mesh::from_parts(cells, edges, 2)
}
