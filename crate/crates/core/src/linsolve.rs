//! Assembly and solution of the linear systems of one fixed-point iteration.
//!
//! All systems have one row per cell. Dirichlet data enter the right-hand side; Neumann
//! edges contribute nothing.

use std::io::{self, Write};

use thiserror::Error;

use crate::flux::{bernoulli, effective_diffusion, Species};
use crate::mesh::{EdgeKind, Mesh};

pub const DEFAULT_LIN_TOL: f64 = 1e-12;

/// Largest system the dense fallback factorizes.
pub const DENSE_FALLBACK_MAX: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsolveError {
    #[error("lambda^2 must be positive for the Poisson system, got {0}")]
    NonPositiveLambda(f64),
    #[error("the mesh has no Dirichlet edge; the potential system is singular")]
    NoDirichlet,
    #[error("density must be positive, got {value} at {location}")]
    NonPositiveDensity { location: String, value: f64 },
    #[error("invalid stabilization: {0}")]
    InvalidStabilization(String),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("{what} has length {got}, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("matrix is singular at row {0}")]
    Singular(usize),
    #[error("{method} did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
}

/// Square sparse system with deduplicated coordinate entries sorted by (row, col).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystem {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl SparseSystem {
    /// Sums duplicate `(row, col)` triplets. Panics on out-of-range indices.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>, rhs: Vec<f64>) -> Self {
        assert_eq!(rhs.len(), n, "rhs length");
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "entry ({i}, {j}) outside a {n}x{n} system");
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        SparseSystem { n, entries, rhs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(i, j), |&(r, c, _)| (r, c))
            .map_or(0.0, |p| self.entries[p].2)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    /// `||A x - b|| / ||b||` (absolute when `b = 0`).
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let r = norm2_diff(&ax, &self.rhs);
        let b = norm2(&self.rhs);
        if b > 0.0 {
            r / b
        } else {
            r
        }
    }

    /// Sums over each column, i.e. `1^T A`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(_, j, v) in &self.entries {
            s[j] += v;
        }
        s
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max(|a_ij|, |a_ji|)`.
    pub fn max_asymmetry(&self) -> f64 {
        self.entries
            .iter()
            .filter(|&&(i, j, _)| i < j)
            .map(|&(i, j, v)| {
                let w = self.get(j, i);
                let scale = v.abs().max(w.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (v - w).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        self.entries.iter().fold((0, 0), |(kl, ku), &(i, j, _)| {
            if i > j {
                (kl.max(i - j), ku)
            } else {
                (kl, ku.max(j - i))
            }
        })
    }

    /// Writes the matrix as `row col value` lines followed by `rhs row value` lines.
    pub fn write_coordinates<W: Write>(&self, mut w: W) -> io::Result<()> {
        for &(i, j, v) in &self.entries {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        for (i, b) in self.rhs.iter().enumerate() {
            writeln!(w, "rhs {i} {b:e}")?;
        }
        Ok(())
    }

    fn to_csr(&self) -> Csr {
        let mut row_ptr = vec![0usize; self.n + 1];
        for &(i, _, _) in &self.entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            n: self.n,
            row_ptr,
            col: self.entries.iter().map(|e| e.1).collect(),
            val: self.entries.iter().map(|e| e.2).collect(),
        }
    }
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn norm2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), LinsolveError> {
    if got == expected {
        Ok(())
    } else {
        Err(LinsolveError::SizeMismatch { what, got, expected })
    }
}

/// Weighted two-point Laplacian: row `K` gets `w_sigma tau_sigma` on the diagonal for each
/// non-Neumann edge and `-w_sigma tau_sigma` towards interior neighbours; Dirichlet edges add
/// `w_sigma tau_sigma u^D_sigma` to the rhs.
fn weighted_laplacian(
    mesh: &Mesh,
    weight: impl Fn(usize, EdgeKind) -> f64,
    dirichlet: &[f64],
    mut rhs: Vec<f64>,
) -> SparseSystem {
    let mut t = Vec::with_capacity(mesh.n_cells() + 4 * mesh.edges().len());
    for e in mesh.edges() {
        let w = weight(e.id, e.kind) * e.tau;
        match e.kind {
            EdgeKind::Interior { k, l } => {
                t.push((k, k, w));
                t.push((l, l, w));
                t.push((k, l, -w));
                t.push((l, k, -w));
            }
            EdgeKind::Dirichlet { k, boundary } => {
                t.push((k, k, w));
                rhs[k] += w * dirichlet[boundary];
            }
            EdgeKind::Neumann { .. } => {}
        }
    }
    SparseSystem::from_triplets(mesh.n_cells(), t, rhs)
}

/// `-lambda^2 sum tau D Psi = m(K) (P - N + C)`.
pub fn assemble_poisson(
    mesh: &Mesh,
    lambda_sq: f64,
    n: &[f64],
    p: &[f64],
    c: &[f64],
    psi_d: &[f64],
) -> Result<SparseSystem, LinsolveError> {
    if !(lambda_sq > 0.0) {
        return Err(LinsolveError::NonPositiveLambda(lambda_sq));
    }
    if mesh.n_dirichlet() == 0 {
        return Err(LinsolveError::NoDirichlet);
    }
    let nc = mesh.n_cells();
    check_len("N", n.len(), nc)?;
    check_len("P", p.len(), nc)?;
    check_len("C", c.len(), nc)?;
    check_len("Psi^D", psi_d.len(), mesh.n_dirichlet())?;
    let rhs = mesh
        .cells()
        .iter()
        .map(|cell| cell.measure * (p[cell.id] - n[cell.id] + c[cell.id]))
        .collect();
    Ok(weighted_laplacian(mesh, |_, _| lambda_sq, psi_d, rhs))
}

/// `-sum tau D Psi (N_K + N_{K,sigma}) = 0`, the potential equation of the quasi-neutral limit.
pub fn assemble_qn_potential(
    mesh: &Mesh,
    n: &[f64],
    n_d: &[f64],
    psi_d: &[f64],
) -> Result<SparseSystem, LinsolveError> {
    if mesh.n_dirichlet() == 0 {
        return Err(LinsolveError::NoDirichlet);
    }
    check_len("N", n.len(), mesh.n_cells())?;
    check_len("N^D", n_d.len(), mesh.n_dirichlet())?;
    check_len("Psi^D", psi_d.len(), mesh.n_dirichlet())?;
    if let Some((k, &v)) = n.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(LinsolveError::NonPositiveDensity {
            location: format!("cell {k}"),
            value: v,
        });
    }
    if let Some((i, &v)) = n_d.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(LinsolveError::NonPositiveDensity {
            location: format!("Dirichlet edge {i}"),
            value: v,
        });
    }
    let weight = |_, kind: EdgeKind| match kind {
        EdgeKind::Interior { k, l } => n[k] + n[l],
        EdgeKind::Dirichlet { k, boundary } => n[k] + n_d[boundary],
        EdgeKind::Neumann { .. } => 0.0,
    };
    Ok(weighted_laplacian(mesh, weight, psi_d, vec![0.0; mesh.n_cells()]))
}

/// Time-implicit term of the linearized density equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stabilization {
    /// Plain implicit Euler: `m/dt (u_hat - u^n)`.
    None,
    /// `m/dt ((1 + mu/lambda^2) u_hat - (mu/lambda^2) u - u^n)`.
    MuOverLambdaSq { mu: f64, lambda_sq: f64 },
    /// Zero-Debye-length form: symmetric diffusion with coefficient `(B(x) + B(-x)) / 2`.
    QuasiNeutral,
}

impl Stabilization {
    fn ratio(&self) -> Result<f64, LinsolveError> {
        match *self {
            Stabilization::None | Stabilization::QuasiNeutral => Ok(0.0),
            Stabilization::MuOverLambdaSq { mu, lambda_sq } => {
                if !(mu > 0.0) || !(lambda_sq > 0.0) || !mu.is_finite() {
                    Err(LinsolveError::InvalidStabilization(format!(
                        "mu = {mu} and lambda^2 = {lambda_sq} must both be positive"
                    )))
                } else {
                    Ok(mu / lambda_sq)
                }
            }
        }
    }
}

/// Linearized density system of one species for a given potential.
///
/// `psi` and `psi_d` are the potential cell values and Dirichlet traces; `relaxation` is the
/// current fixed-point iterate (only used by [`Stabilization::MuOverLambdaSq`]).
#[allow(clippy::too_many_arguments)]
pub fn assemble_linearized_density(
    mesh: &Mesh,
    species: Species,
    psi: &[f64],
    psi_d: &[f64],
    dt: f64,
    stabilization: Stabilization,
    previous: &[f64],
    relaxation: &[f64],
    u_d: &[f64],
) -> Result<SparseSystem, LinsolveError> {
    if !(dt > 0.0) {
        return Err(LinsolveError::BadTimeStep(dt));
    }
    let a = stabilization.ratio()?;
    let nc = mesh.n_cells();
    check_len("Psi", psi.len(), nc)?;
    check_len("Psi^D", psi_d.len(), mesh.n_dirichlet())?;
    check_len("previous density", previous.len(), nc)?;
    check_len("Dirichlet density", u_d.len(), mesh.n_dirichlet())?;
    if a > 0.0 {
        check_len("relaxation density", relaxation.len(), nc)?;
    }
    let s = species.drift_sign();
    // coefficient on u_K and on u_{K,sigma} in the flux out of K, given D Psi_{K,sigma}
    let coeffs = |dpsi: f64| -> (f64, f64) {
        match stabilization {
            Stabilization::QuasiNeutral => {
                let d = effective_diffusion(dpsi);
                (d, d)
            }
            _ => (bernoulli(-s * dpsi), bernoulli(s * dpsi)),
        }
    };
    let mut t = Vec::with_capacity(nc + 4 * mesh.edges().len());
    let mut rhs = Vec::with_capacity(nc);
    for cell in mesh.cells() {
        let k = cell.id;
        let md = cell.measure / dt;
        t.push((k, k, md * (1.0 + a)));
        let relax = if a > 0.0 { a * relaxation[k] } else { 0.0 };
        rhs.push(md * (previous[k] + relax));
    }
    for e in mesh.edges() {
        match e.kind {
            EdgeKind::Interior { k, l } => {
                let (own, other) = coeffs(psi[l] - psi[k]);
                // flux out of K: tau (own u_K - other u_L); out of L: the negative
                t.push((k, k, e.tau * own));
                t.push((k, l, -e.tau * other));
                t.push((l, l, e.tau * other));
                t.push((l, k, -e.tau * own));
            }
            EdgeKind::Dirichlet { k, boundary } => {
                let (own, other) = coeffs(psi_d[boundary] - psi[k]);
                t.push((k, k, e.tau * own));
                rhs[k] += e.tau * other * u_d[boundary];
            }
            EdgeKind::Neumann { .. } => {}
        }
    }
    Ok(SparseSystem::from_triplets(nc, t, rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final `||Ax - b|| / ||b||`.
    pub residual: f64,
    pub method: SolveMethod,
    pub algorithm: &'static str,
}

/// Solves `sys`, choosing banded elimination for tridiagonal systems and a preconditioned
/// Krylov iteration otherwise, with a direct fallback.
pub fn solve(sys: &SparseSystem, tol: f64, symmetric_hint: bool) -> Result<(Vec<f64>, SolveReport), LinsolveError> {
    let n = sys.n();
    if n == 0 {
        return Ok((
            Vec::new(),
            SolveReport {
                iterations: 0,
                residual: 0.0,
                method: SolveMethod::Direct,
                algorithm: "empty",
            },
        ));
    }
    let (kl, ku) = sys.bandwidth();
    if kl.max(ku) <= 2 {
        return solve_banded(sys, tol);
    }
    let csr = sys.to_csr();
    let mut last_err = None;
    if let Ok(ilu) = Ilu0::new(&csr) {
        let attempts: &[bool] = if symmetric_hint { &[true, false] } else { &[false] };
        for &use_cg in attempts {
            let result = if use_cg {
                pcg(&csr, &ilu, sys.rhs(), tol, n.max(1000))
            } else {
                bicgstab(&csr, &ilu, sys.rhs(), tol, n.max(1000))
            };
            match result {
                Ok((x, iterations)) => {
                    let residual = sys.relative_residual(&x);
                    if residual <= tol {
                        let algorithm = if use_cg { "pcg-ilu0" } else { "bicgstab-ilu0" };
                        return Ok((
                            x,
                            SolveReport {
                                iterations,
                                residual,
                                method: SolveMethod::Iterative,
                                algorithm,
                            },
                        ));
                    }
                    last_err = Some(LinsolveError::NotConverged {
                        method: if use_cg { "pcg" } else { "bicgstab" },
                        iterations,
                        residual,
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    // direct fallbacks
    if n <= DENSE_FALLBACK_MAX || n.saturating_mul(kl).saturating_mul(kl + ku) <= 400_000_000 {
        return solve_banded(sys, tol);
    }
    Err(last_err.unwrap_or(LinsolveError::Singular(0)))
}

fn solve_banded(sys: &SparseSystem, tol: f64) -> Result<(Vec<f64>, SolveReport), LinsolveError> {
    let lu = BandedLu::factor(sys)?;
    let mut x = lu.solve(sys.rhs());
    let mut residual = sys.relative_residual(&x);
    let mut iterations = 1;
    // iterative refinement
    while residual > tol && iterations < 4 {
        let ax = sys.matvec(&x);
        let r: Vec<f64> = sys.rhs().iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = lu.solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        residual = sys.relative_residual(&x);
        iterations += 1;
    }
    if residual > tol {
        return Err(LinsolveError::NotConverged {
            method: "banded LU",
            iterations,
            residual,
        });
    }
    Ok((
        x,
        SolveReport {
            iterations,
            residual,
            method: SolveMethod::Direct,
            algorithm: "banded-lu",
        },
    ))
}

/// LU factorization with partial pivoting of a band matrix, in column-major band storage.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(sys: &SparseSystem) -> Result<Self, LinsolveError> {
        let (kl, ku) = sys.bandwidth();
        Self::factor_entries(sys.n(), kl, ku, sys.entries().iter().copied())
    }

    /// Factors the matrix given by `entries` (duplicates are summed) with declared bandwidths.
    pub fn factor_entries(
        n: usize,
        kl: usize,
        ku: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, LinsolveError> {
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for (i, j, v) in entries {
            assert!(i + ku >= j && j + kl >= i, "entry ({i}, {j}) outside the declared band");
            ab[j * ldab + kv + i - j] += v;
        }
        let mut piv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            // pivot search in column j, rows j..=j+km
            let mut p = 0;
            let mut best = ab[col].abs();
            for r in 1..=km {
                let v = ab[col + r].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[j] = j + p;
            if best == 0.0 || !best.is_finite() {
                return Err(LinsolveError::Singular(j));
            }
            let last = (j + kv).min(n - 1);
            if p != 0 {
                for c in j..=last {
                    let base = c * ldab + kv - c;
                    ab.swap(base + j, base + j + p);
                }
            }
            let inv = 1.0 / ab[col];
            for r in 1..=km {
                ab[col + r] *= inv;
            }
            if km == 0 {
                continue;
            }
            for c in j + 1..=last {
                let base = c * ldab + kv - c;
                let f = ab[base + j];
                if f != 0.0 {
                    let (head, tail) = ab.split_at_mut(base + j + 1);
                    let l = &head[col + 1..col + 1 + km];
                    for (t, li) in tail[..km].iter_mut().zip(l) {
                        *t -= li * f;
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            piv,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                x.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let xj = x[j];
            if xj != 0.0 {
                let col = j * ldab + kv;
                for r in 1..=km {
                    x[j + r] -= self.ab[col + r] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let base = j * ldab + kv - j;
            x[j] /= self.ab[base + j];
            let xj = x[j];
            if xj != 0.0 {
                let first = j.saturating_sub(kv);
                for i in first..j {
                    x[i] -= self.ab[base + i] * xj;
                }
            }
        }
    }
}

struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[p] * x[self.col[p]];
            }
            *yi = s;
        }
    }
}

/// Incomplete LU with the sparsity pattern of the matrix.
struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &Csr) -> Result<Self, LinsolveError> {
        let n = a.n;
        let mut val = a.val.clone();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                if a.col[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(LinsolveError::Singular(i));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (a.row_ptr[i], a.row_ptr[i + 1]);
            for p in start..end {
                pos[a.col[p]] = p;
            }
            for p in start..end {
                let k = a.col[p];
                if k >= i {
                    break;
                }
                let pivot = val[diag[k]];
                if pivot == 0.0 {
                    return Err(LinsolveError::Singular(k));
                }
                val[p] /= pivot;
                let lik = val[p];
                for q in diag[k] + 1..a.row_ptr[k + 1] {
                    let target = pos[a.col[q]];
                    if target != usize::MAX {
                        val[target] -= lik * val[q];
                    }
                }
            }
            for p in start..end {
                pos[a.col[p]] = usize::MAX;
            }
            if val[diag[i]] == 0.0 {
                return Err(LinsolveError::Singular(i));
            }
        }
        Ok(Ilu0 {
            n,
            row_ptr: a.row_ptr.clone(),
            col: a.col.clone(),
            val,
            diag,
        })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for i in 0..self.n {
            let mut s = r[i];
            for p in self.row_ptr[i]..self.diag[i] {
                s -= self.val[p] * z[self.col[p]];
            }
            z[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = z[i];
            for p in self.diag[i] + 1..self.row_ptr[i + 1] {
                s -= self.val[p] * z[self.col[p]];
            }
            z[i] = s / self.val[self.diag[i]];
        }
    }
}

fn pcg(a: &Csr, m: &Ilu0, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinsolveError> {
    let n = a.n;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    // aim a little below tol: the recurrence residual drifts from the true one
    let target = 0.1 * tol * bnorm;
    for it in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinsolveError::NotConverged {
                method: "pcg (indefinite direction)",
                iterations: it,
                residual: norm2(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= target {
            return Ok((x, it));
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinsolveError::NotConverged {
        method: "pcg",
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// Right-preconditioned BiCGSTAB.
fn bicgstab(a: &Csr, m: &Ilu0, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinsolveError> {
    let n = a.n;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let target = 0.1 * tol * bnorm;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(LinsolveError::NotConverged {
                method: "bicgstab (breakdown)",
                iterations: it,
                residual: norm2(&r) / bnorm,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut y);
        a.matvec_into(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        m.apply(&s, &mut z);
        a.matvec_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= target {
            return Ok((x, it));
        }
    }
    Err(LinsolveError::NotConverged {
        method: "bicgstab",
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// Column diagonal dominance of one column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dominance {
    /// `a_jj > sum_{i != j} |a_ij|`
    Strict,
    /// Equality up to rounding.
    Weak,
    Violated,
}

/// Structural facts about a candidate M-matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MMatrixReport {
    /// Rows whose diagonal is not positive.
    pub nonpositive_diagonal: Vec<usize>,
    /// Off-diagonal entries that are positive, as `(row, col, value)`.
    pub positive_offdiagonal: Vec<(usize, usize, f64)>,
    pub columns: Vec<Dominance>,
}

impl MMatrixReport {
    pub fn sign_pattern_holds(&self) -> bool {
        self.nonpositive_diagonal.is_empty() && self.positive_offdiagonal.is_empty()
    }

    pub fn strictly_column_dominant(&self) -> bool {
        self.columns.iter().all(|&d| d == Dominance::Strict)
    }

    pub fn is_m_matrix(&self) -> bool {
        self.sign_pattern_holds() && self.strictly_column_dominant()
    }

    /// Sign pattern, no violated column and at least one strict column. On a connected
    /// mesh the matrix is then irreducibly dominant, hence still an M-matrix.
    pub fn irreducibly_dominant(&self) -> bool {
        self.sign_pattern_holds() && self.count(Dominance::Violated) == 0 && self.count(Dominance::Strict) > 0
    }

    pub fn count(&self, d: Dominance) -> usize {
        self.columns.iter().filter(|&&c| c == d).count()
    }
}

/// Reports sign pattern and column dominance; a column whose excess is within
/// `1e-13` of its diagonal counts as weakly dominant.
pub fn check_m_matrix(sys: &SparseSystem) -> MMatrixReport {
    let n = sys.n();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut positive_offdiagonal = Vec::new();
    for &(i, j, v) in sys.entries() {
        if i == j {
            diag[j] = v;
        } else {
            off[j] += v.abs();
            if v > 0.0 {
                positive_offdiagonal.push((i, j, v));
            }
        }
    }
    let nonpositive_diagonal = (0..n).filter(|&i| !(diag[i] > 0.0)).collect();
    let columns = (0..n)
        .map(|j| {
            let excess = diag[j] - off[j];
            let slack = 1e-13 * diag[j].abs().max(off[j]);
            if excess > slack {
                Dominance::Strict
            } else if excess >= -slack {
                Dominance::Weak
            } else {
                Dominance::Violated
            }
        })
        .collect();
    MMatrixReport {
        nonpositive_diagonal,
        positive_offdiagonal,
        columns,
    }
}
