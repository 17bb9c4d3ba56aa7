//! Discrete entropy, entropy production, a priori sums and bound monitors.

use thiserror::Error;

use crate::mesh::field::{h1_seminorm_sq_parts, trace_value};
use crate::mesh::{EdgeKind, Mesh};
use crate::scheme::{Observer, ProblemData, SchemeParams, State, StepContext};

/// Absolute slack of the per-step entropy inequality.
pub const ENTROPY_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("{what} must be positive, got {value} at index {index}")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },
}

fn positive(what: &'static str, values: &[f64]) -> Result<(), DiagnosticsError> {
    match values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        Some((index, &value)) => Err(DiagnosticsError::NonPositive { what, index, value }),
        None => Ok(()),
    }
}

/// `H(x) = x log x - x + 1`.
pub fn entropy_h(x: f64) -> Result<f64, DiagnosticsError> {
    if !(x > 0.0) {
        return Err(DiagnosticsError::NonPositive {
            what: "entropy argument",
            index: 0,
            value: x,
        });
    }
    Ok(x * x.ln() - x + 1.0)
}

/// `H(u) - H(v) - log(v) (u - v) = u log(u/v) - u + v`, clamped at 0 against rounding.
fn relative_h(u: f64, v: f64) -> f64 {
    (u * ((u - v) / v).ln_1p() - (u - v)).max(0.0)
}

/// Relative entropy of the state with respect to the boundary-data extension, plus
/// `lambda^2 / 2 |Psi - Psi^D|_{1,M}^2`.
pub fn discrete_entropy(
    mesh: &Mesh,
    data: &ProblemData,
    lambda_sq: f64,
    state: &State,
) -> Result<f64, DiagnosticsError> {
    positive("N", &state.n)?;
    positive("P", &state.p)?;
    positive("N^D cell average", &data.nd_cells)?;
    positive("P^D cell average", &data.pd_cells)?;
    let mut e = 0.0;
    for (k, cell) in mesh.cells().iter().enumerate() {
        e += cell.measure * (relative_h(state.n[k], data.nd_cells[k]) + relative_h(state.p[k], data.pd_cells[k]));
    }
    if lambda_sq > 0.0 {
        // Psi - Psi^D has zero traces on the Dirichlet edges
        let diff: Vec<f64> = state
            .psi
            .iter()
            .zip(data.psid_cells.iter())
            .map(|(a, b)| a - b)
            .collect();
        e += 0.5 * lambda_sq * h1_seminorm_sq_parts(mesh, &diff, &vec![0.0; mesh.n_dirichlet()]);
    }
    Ok(e)
}

/// `sum tau [min(N_K, N_Ks) (D(log N - Psi))^2 + min(P_K, P_Ks) (D(log P + Psi))^2]`.
pub fn discrete_production(mesh: &Mesh, data: &ProblemData, state: &State) -> Result<f64, DiagnosticsError> {
    positive("N", &state.n)?;
    positive("P", &state.p)?;
    positive("N^D", &data.nd)?;
    positive("P^D", &data.pd)?;
    let mut total = 0.0;
    for e in mesh.edges() {
        let k = e.kind.owner();
        if let EdgeKind::Neumann { .. } = e.kind {
            continue;
        }
        let n_ks = trace_value(&state.n, &data.nd, e.kind, k);
        let p_ks = trace_value(&state.p, &data.pd, e.kind, k);
        let dpsi = trace_value(&state.psi, &data.psid, e.kind, k) - state.psi[k];
        let gn = (n_ks / state.n[k]).ln() - dpsi;
        let gp = (p_ks / state.p[k]).ln() + dpsi;
        total += e.tau * (state.n[k].min(n_ks) * gn * gn + state.p[k].min(p_ks) * gp * gp);
    }
    Ok(total)
}

/// `|log N^D - Psi^D|_{1,M}^2 + |log P^D + Psi^D|_{1,M}^2` from cell averages and traces.
pub fn boundary_seminorm_sum(mesh: &Mesh, data: &ProblemData) -> Result<f64, DiagnosticsError> {
    positive("N^D", &data.nd)?;
    positive("P^D", &data.pd)?;
    positive("N^D cell average", &data.nd_cells)?;
    positive("P^D cell average", &data.pd_cells)?;
    let field = |u_cells: &[f64], u_traces: &[f64], s: f64| -> (Vec<f64>, Vec<f64>) {
        (
            u_cells
                .iter()
                .zip(data.psid_cells.iter())
                .map(|(u, p)| u.ln() + s * p)
                .collect(),
            u_traces.iter().zip(&data.psid).map(|(u, p)| u.ln() + s * p).collect(),
        )
    };
    let (nc, nt) = field(&data.nd_cells, &data.nd, -1.0);
    let (pc, pt) = field(&data.pd_cells, &data.pd, 1.0);
    Ok(h1_seminorm_sq_parts(mesh, &nc, &nt) + h1_seminorm_sq_parts(mesh, &pc, &pt))
}

/// Right-hand side of the per-step entropy inequality, `M^2/(2m)` times
/// [`boundary_seminorm_sum`].
pub fn entropy_rhs_constant(mesh: &Mesh, data: &ProblemData, lower: f64, upper: f64) -> Result<f64, DiagnosticsError> {
    Ok(upper * upper / (2.0 * lower) * boundary_seminorm_sum(mesh, data)?)
}

/// Diagnostics of one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub n: usize,
    pub t: f64,
    pub entropy: f64,
    pub production: f64,
    pub min_n: f64,
    pub max_n: f64,
    pub min_p: f64,
    pub max_p: f64,
    pub h1_n: f64,
    pub h1_p: f64,
    pub h1_psi: f64,
    /// `sum tau |D Psi| ((D N)^2 + (D P)^2)` at this level.
    pub weak_bv_increment: f64,
    /// Entropy inequality bound for the step ending at this level. The data bounds are
    /// widened to the range actually attained, which only matters with doping.
    pub entropy_rhs_bound: f64,
    pub fp_iters: usize,
}

pub fn diagnostics_record(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    state: &State,
    fp_iters: usize,
    boundary_sum: f64,
) -> Result<DiagnosticsRecord, DiagnosticsError> {
    let entropy = discrete_entropy(mesh, data, params.lambda_sq, state)?;
    let production = discrete_production(mesh, data, state)?;
    let h1_n = h1_seminorm_sq_parts(mesh, &state.n, &data.nd);
    let h1_p = h1_seminorm_sq_parts(mesh, &state.p, &data.pd);
    let h1_psi = h1_seminorm_sq_parts(mesh, &state.psi, &data.psid);
    let mut weak_bv = 0.0;
    for e in mesh.edges() {
        if let EdgeKind::Neumann { .. } = e.kind {
            continue;
        }
        let k = e.kind.owner();
        let jump = |cells: &[f64], traces: &[f64]| trace_value(cells, traces, e.kind, k) - cells[k];
        let (dn, dp, dpsi) = (
            jump(&state.n, &data.nd),
            jump(&state.p, &data.pd),
            jump(&state.psi, &data.psid),
        );
        weak_bv += e.tau * dpsi.abs() * (dn * dn + dp * dp);
    }
    let (min_n, max_n, min_p, max_p) = (state.n.min(), state.n.max(), state.p.min(), state.p.max());
    let lower = params.lower_bound.min(min_n).min(min_p);
    let upper = params.upper_bound.max(max_n).max(max_p);
    Ok(DiagnosticsRecord {
        n: state.step,
        t: state.t,
        entropy,
        production,
        min_n,
        max_n,
        min_p,
        max_p,
        h1_n,
        h1_p,
        h1_psi,
        weak_bv_increment: weak_bv,
        entropy_rhs_bound: upper * upper / (2.0 * lower) * boundary_sum,
        fp_iters,
    })
}

/// Observer collecting one [`DiagnosticsRecord`] per time level.
#[derive(Clone, Debug, Default)]
pub struct DiagnosticsRecorder {
    pub records: Vec<DiagnosticsRecord>,
    boundary_sum: Option<f64>,
}

impl DiagnosticsRecorder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Observer for DiagnosticsRecorder {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<(), String> {
        let boundary_sum = match self.boundary_sum {
            Some(b) => b,
            None => {
                let b = boundary_seminorm_sum(ctx.mesh, ctx.data).map_err(|e| e.to_string())?;
                self.boundary_sum = Some(b);
                b
            }
        };
        let iters = ctx.report.map_or(0, |r| r.iterations);
        let rec = diagnostics_record(ctx.mesh, ctx.data, ctx.params, ctx.state, iters, boundary_sum)
            .map_err(|e| e.to_string())?;
        self.records.push(rec);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyCheck {
    pub steps: usize,
    /// Steps `n + 1` at which the inequality fails by more than the slack.
    pub violations: Vec<usize>,
    /// Largest `(E^{n+1} - E^n)/dt + I^{n+1}/2 - bound` over the run.
    pub max_excess: f64,
    pub entropy_nonnegative: bool,
    pub production_nonnegative: bool,
    /// `sum_n dt I^{n+1}`.
    pub summed_production: f64,
    /// `summed_production / (K_E (1 + lambda^2))` with `K_E` the first record's bound;
    /// reported, not asserted.
    pub empirical_constant: f64,
}

impl EntropyCheck {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.entropy_nonnegative && self.production_nonnegative
    }
}

/// Checks `(E^{n+1} - E^n)/dt + I^{n+1}/2 <= K_E + 1e-9` between consecutive records.
pub fn check_entropy_inequality(records: &[DiagnosticsRecord], dt: f64, lambda_sq: f64) -> EntropyCheck {
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    let mut summed = 0.0;
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let lhs = (b.entropy - a.entropy) / dt + 0.5 * b.production;
        let excess = lhs - b.entropy_rhs_bound;
        max_excess = max_excess.max(excess);
        if excess > ENTROPY_SLACK {
            violations.push(b.n);
        }
        summed += dt * b.production;
    }
    let k_e = records.first().map_or(0.0, |r| r.entropy_rhs_bound);
    EntropyCheck {
        steps: records.len().saturating_sub(1),
        violations,
        max_excess,
        entropy_nonnegative: records.iter().all(|r| r.entropy >= 0.0),
        production_nonnegative: records.iter().all(|r| r.production >= 0.0),
        summed_production: summed,
        empirical_constant: if k_e > 0.0 {
            summed / (k_e * (1.0 + lambda_sq))
        } else {
            f64::NAN
        },
    }
}

/// Time-integrated a priori quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AprioriSums {
    pub weak_bv: f64,
    pub l2h1_n: f64,
    pub l2h1_p: f64,
    pub l2h1_psi: f64,
}

impl AprioriSums {
    pub fn as_array(&self) -> [f64; 4] {
        [self.weak_bv, self.l2h1_n, self.l2h1_p, self.l2h1_psi]
    }
}

/// `sum_{n=0}^{N_T - 1} dt (.)^{n+1}` over the records after the initial one.
pub fn apriori_sums(records: &[DiagnosticsRecord], dt: f64) -> AprioriSums {
    let mut s = AprioriSums {
        weak_bv: 0.0,
        l2h1_n: 0.0,
        l2h1_p: 0.0,
        l2h1_psi: 0.0,
    };
    for r in records.iter().skip(1) {
        s.weak_bv += dt * r.weak_bv_increment;
        s.l2h1_n += dt * r.h1_n;
        s.l2h1_p += dt * r.h1_p;
        s.l2h1_psi += dt * r.h1_psi;
    }
    s
}
