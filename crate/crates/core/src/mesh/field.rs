use std::ops::{Deref, DerefMut};

use super::{EdgeKind, Mesh, MeshError};

/// One real value per cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellField(pub Vec<f64>);

impl CellField {
    pub fn constant(n: usize, value: f64) -> Self {
        CellField(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_K |self_K - other_K|`
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl Deref for CellField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for CellField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for CellField {
    fn from(v: Vec<f64>) -> Self {
        CellField(v)
    }
}

impl FromIterator<f64> for CellField {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        CellField(iter.into_iter().collect())
    }
}

/// Cell values together with values on the Dirichlet edges, `u_M = (u_T, u_{E^D})`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedField {
    cell_values: CellField,
    dirichlet_values: Vec<f64>,
}

impl AugmentedField {
    pub fn new(mesh: &Mesh, cell_values: CellField, dirichlet_values: Vec<f64>) -> Result<Self, MeshError> {
        if cell_values.len() != mesh.n_cells() {
            return Err(MeshError::FieldSize {
                what: "cell",
                got: cell_values.len(),
                expected: mesh.n_cells(),
            });
        }
        if dirichlet_values.len() != mesh.n_dirichlet() {
            return Err(MeshError::FieldSize {
                what: "Dirichlet",
                got: dirichlet_values.len(),
                expected: mesh.n_dirichlet(),
            });
        }
        Ok(AugmentedField {
            cell_values,
            dirichlet_values,
        })
    }

    pub fn cells(&self) -> &[f64] {
        &self.cell_values
    }

    pub fn dirichlet(&self) -> &[f64] {
        &self.dirichlet_values
    }

    /// Value across edge `s` as seen from cell `k` (`u_{K,sigma}`); `s` must be incident to `k`.
    #[inline]
    pub fn across(&self, mesh: &Mesh, k: usize, s: usize) -> f64 {
        trace_value(&self.cell_values, &self.dirichlet_values, mesh.edge(s).kind, k)
    }
}

/// `u_{K,sigma}` for edge kind `kind`: the neighbour value, the Dirichlet value, or `u_K`.
#[inline]
pub(crate) fn trace_value(cells: &[f64], dirichlet: &[f64], kind: EdgeKind, k: usize) -> f64 {
    match kind {
        EdgeKind::Interior { k: a, l: b } => {
            if a == k {
                cells[b]
            } else {
                cells[a]
            }
        }
        EdgeKind::Dirichlet { boundary, .. } => dirichlet[boundary],
        EdgeKind::Neumann { .. } => cells[k],
    }
}

/// Returns `(u_{K,sigma}, D u_{K,sigma} = u_{K,sigma} - u_K)`.
pub fn edge_trace(mesh: &Mesh, u: &AugmentedField, k: usize, s: usize) -> Result<(f64, f64), MeshError> {
    if k >= mesh.n_cells() || s >= mesh.edges().len() || !mesh.cell_edges(k).contains(&s) {
        return Err(MeshError::NotIncident { cell: k, edge: s });
    }
    let uks = u.across(mesh, k, s);
    let du = match mesh.edge(s).kind {
        EdgeKind::Neumann { .. } => 0.0,
        _ => uks - u.cells()[k],
    };
    Ok((uks, du))
}

/// Discrete H1 seminorm squared, `sum_sigma tau_sigma (D_sigma u)^2`.
pub fn h1_seminorm_sq(mesh: &Mesh, u: &AugmentedField) -> f64 {
    h1_seminorm_sq_parts(mesh, u.cells(), u.dirichlet())
}

pub(crate) fn h1_seminorm_sq_parts(mesh: &Mesh, cells: &[f64], dirichlet: &[f64]) -> f64 {
    mesh.edges()
        .iter()
        .map(|e| match e.kind {
            EdgeKind::Interior { k, l } => e.tau * (cells[l] - cells[k]).powi(2),
            EdgeKind::Dirichlet { k, boundary } => e.tau * (dirichlet[boundary] - cells[k]).powi(2),
            EdgeKind::Neumann { .. } => 0.0,
        })
        .sum()
}
