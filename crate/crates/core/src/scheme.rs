//! Fully implicit time stepping of the drift-diffusion-Poisson system.
//!
//! Every step solves the nonlinear finite volume scheme
//!
//! ```text
//! m(K) (N_K - N_K^n) / dt + sum_sigma F_{K,sigma} = 0
//! m(K) (P_K - P_K^n) / dt + sum_sigma G_{K,sigma} = 0
//! -lambda^2 sum_sigma tau_sigma D Psi_{K,sigma} = m(K) (P_K - N_K + C_K)
//! ```
//!
//! with Scharfetter-Gummel fluxes. Three nonlinear solvers are available: the
//! linearized map with `mu / lambda^2` relaxation (for `lambda > 0`), the quasi-neutral
//! map (for `lambda = 0`), and Newton's method on the coupled system. [`SolverChoice::Auto`]
//! uses the maps when they contract quickly and Newton otherwise.

use std::time::Instant;

use thiserror::Error;

use crate::flux::{bernoulli, bernoulli_derivative, electron_flux, hole_flux, Species};
use crate::linsolve::{
    assemble_linearized_density, assemble_poisson, assemble_qn_potential, check_m_matrix, solve, BandedLu,
    LinsolveError, SparseSystem, Stabilization, DEFAULT_LIN_TOL,
};
use crate::mesh::{project_cell_averages, CellField, EdgeKind, Mesh, Profile};

/// Absolute slack on the data bounds `m <= u <= M`.
pub const BOUND_SLACK: f64 = 1e-12;

/// Largest `mu / lambda^2` for which `Auto` uses the relaxed map; above it the map's
/// contraction factor on charge-neutral modes approaches 1.
pub const PICARD_MAX_RELAXATION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Linear(#[from] LinsolveError),
    #[error("{solver} did not converge in {iterations} iterations (last increment {increment:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        increment: f64,
        last: Box<State>,
    },
    #[error("nonpositive {species} density {value:e} in cell {cell}")]
    NonPositiveDensity {
        species: &'static str,
        cell: usize,
        value: f64,
    },
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SchemeError>,
    },
    #[error("observer failed at step {step}: {message}")]
    Observer { step: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mu {
    /// `M dt`, the smallest value for which the linearized map preserves the bounds.
    Auto,
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverChoice {
    /// Relaxed or quasi-neutral map when it contracts well, Newton otherwise, and Newton
    /// as a fallback when the map fails.
    Auto,
    Picard,
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    PicardMu,
    PicardQuasiNeutral,
    Newton,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::PicardMu => "relaxed fixed-point map",
            SolverKind::PicardQuasiNeutral => "quasi-neutral fixed-point map",
            SolverKind::Newton => "Newton",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeParams {
    pub lambda_sq: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Lower data bound `m`.
    pub lower_bound: f64,
    /// Upper data bound `M`.
    pub upper_bound: f64,
    pub mu: Mu,
    /// Stop when `max |Delta N|, |Delta P| <= fp_tol`.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub lin_tol: f64,
    pub solver: SolverChoice,
    /// Halve the map update after three consecutive growing increments.
    pub damping: bool,
    /// Verify the M-matrix structure of every density system (slow).
    pub check_m_matrix: bool,
}

impl SchemeParams {
    pub fn new(lambda_sq: f64, dt: f64, t_final: f64, lower_bound: f64, upper_bound: f64) -> Self {
        SchemeParams {
            lambda_sq,
            dt,
            t_final,
            lower_bound,
            upper_bound,
            mu: Mu::Auto,
            fp_tol: 1e-11,
            fp_max_iter: 500,
            lin_tol: DEFAULT_LIN_TOL,
            solver: SolverChoice::Auto,
            damping: true,
            check_m_matrix: false,
        }
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        let bad = |m: String| Err(SchemeError::InvalidParams(m));
        if !(self.lambda_sq >= 0.0) || !self.lambda_sq.is_finite() {
            return bad(format!("lambda^2 must be >= 0, got {}", self.lambda_sq));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return bad(format!("t_final = {} must be at least dt = {}", self.t_final, self.dt));
        }
        if !(self.lower_bound > 0.0) || !(self.lower_bound <= self.upper_bound) || !self.upper_bound.is_finite() {
            return bad(format!(
                "data bounds must satisfy 0 < m <= M, got m = {}, M = {}",
                self.lower_bound, self.upper_bound
            ));
        }
        if let Mu::Value(mu) = self.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return bad(format!("mu must be > 0, got {mu}"));
            }
        }
        if !(self.fp_tol > 0.0) || self.fp_max_iter == 0 || !(self.lin_tol > 0.0) {
            return bad("fp_tol, fp_max_iter and lin_tol must be positive".into());
        }
        Ok(())
    }

    pub fn effective_mu(&self) -> f64 {
        match self.mu {
            Mu::Auto => self.upper_bound * self.dt,
            Mu::Value(mu) => mu,
        }
    }

    /// `floor(T / dt)`, tolerant to the representation error of `T / dt`.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt * (1.0 + 1e-12)).floor() as usize
    }

    /// The solver `Auto` starts with.
    pub fn primary_solver(&self) -> SolverKind {
        match self.solver {
            SolverChoice::Newton => SolverKind::Newton,
            _ if self.lambda_sq == 0.0 => SolverKind::PicardQuasiNeutral,
            SolverChoice::Picard => SolverKind::PicardMu,
            SolverChoice::Auto => {
                if self.effective_mu() / self.lambda_sq <= PICARD_MAX_RELAXATION {
                    SolverKind::PicardMu
                } else {
                    SolverKind::Newton
                }
            }
        }
    }
}

/// Initial, boundary and doping data on a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemData {
    pub n0: CellField,
    pub p0: CellField,
    /// Traces on the Dirichlet edges, in the mesh's Dirichlet order.
    pub nd: Vec<f64>,
    pub pd: Vec<f64>,
    pub psid: Vec<f64>,
    /// Cell averages of the boundary-data extensions.
    pub nd_cells: CellField,
    pub pd_cells: CellField,
    pub psid_cells: CellField,
    pub doping: CellField,
}

/// Spatial profiles from which [`ProblemData`] is built.
#[derive(Clone, Debug)]
pub struct ProblemProfiles {
    pub n0: Profile,
    pub p0: Profile,
    /// Extensions of the Dirichlet data; their edge means give the traces.
    pub nd: Profile,
    pub pd: Profile,
    pub psid: Profile,
    pub doping: Profile,
}

impl ProblemData {
    pub fn from_profiles(mesh: &Mesh, profiles: &ProblemProfiles) -> Self {
        let traces = |p: &Profile| -> Vec<f64> {
            mesh.dirichlet_edges()
                .iter()
                .map(|&s| p.edge_average(mesh.edge(s)))
                .collect()
        };
        ProblemData {
            n0: project_cell_averages(mesh, &profiles.n0),
            p0: project_cell_averages(mesh, &profiles.p0),
            nd: traces(&profiles.nd),
            pd: traces(&profiles.pd),
            psid: traces(&profiles.psid),
            nd_cells: project_cell_averages(mesh, &profiles.nd),
            pd_cells: project_cell_averages(mesh, &profiles.pd),
            psid_cells: project_cell_averages(mesh, &profiles.psid),
            doping: project_cell_averages(mesh, &profiles.doping),
        }
    }

    pub fn has_doping(&self) -> bool {
        self.doping.iter().any(|&c| c != 0.0)
    }

    /// Checks sizes, the bounds `m <= N0, P0, N^D, P^D <= M`, and the quasi-neutrality
    /// requirements of the `lambda = 0` scheme.
    pub fn validate(&self, mesh: &Mesh, params: &SchemeParams) -> Result<(), SchemeError> {
        let (nc, nd) = (mesh.n_cells(), mesh.n_dirichlet());
        let sizes: [(&str, usize, usize); 9] = [
            ("N0", self.n0.len(), nc),
            ("P0", self.p0.len(), nc),
            ("N^D", self.nd.len(), nd),
            ("P^D", self.pd.len(), nd),
            ("Psi^D", self.psid.len(), nd),
            ("N^D cells", self.nd_cells.len(), nc),
            ("P^D cells", self.pd_cells.len(), nc),
            ("Psi^D cells", self.psid_cells.len(), nc),
            ("C", self.doping.len(), nc),
        ];
        for (what, got, expected) in sizes {
            if got != expected {
                return Err(SchemeError::InvalidData(format!(
                    "{what} has {got} values, expected {expected}"
                )));
            }
        }
        let (m, big_m) = (params.lower_bound, params.upper_bound);
        for (what, values) in [
            ("N0", &self.n0[..]),
            ("P0", &self.p0[..]),
            ("N^D", &self.nd),
            ("P^D", &self.pd),
        ] {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, &v)| !(v >= m - BOUND_SLACK && v <= big_m + BOUND_SLACK))
            {
                return Err(SchemeError::InvalidData(format!(
                    "{what}[{i}] = {v} lies outside [m, M] = [{m}, {big_m}]"
                )));
            }
        }
        for (what, values) in [("N^D cells", &self.nd_cells), ("P^D cells", &self.pd_cells)] {
            if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(SchemeError::InvalidData(format!("{what}[{i}] = {v} must be positive")));
            }
        }
        if params.lambda_sq == 0.0 {
            if self.has_doping() {
                return Err(SchemeError::InvalidData(
                    "lambda = 0 requires zero doping; use a small positive lambda^2 such as 1e-12".into(),
                ));
            }
            let qn = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= BOUND_SLACK);
            if !qn(&self.n0, &self.p0) {
                return Err(SchemeError::InvalidData("lambda = 0 requires P0 = N0".into()));
            }
            if !qn(&self.nd, &self.pd) {
                return Err(SchemeError::InvalidData("lambda = 0 requires P^D = N^D".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    /// Time index `n`.
    pub step: usize,
    pub t: f64,
    pub n: CellField,
    pub p: CellField,
    pub psi: CellField,
}

/// Largest per-cell residual of each equation, multiplied by `dt / m(K)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SchemeResidual {
    pub electrons: f64,
    pub holes: f64,
    pub potential: f64,
}

impl SchemeResidual {
    pub fn max(&self) -> f64 {
        self.electrons.max(self.holes).max(self.potential)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    pub solver: SolverKind,
    pub iterations: usize,
    /// Last `max |Delta N|, |Delta P|`.
    pub increment: f64,
    /// Last `max |Delta Psi|` (monitored only).
    pub psi_increment: f64,
    pub damping_events: usize,
    /// Linear iterations (Krylov) or solves (direct) summed over the step.
    pub linear_iterations: usize,
    pub factorizations: usize,
    /// The relaxed map failed and Newton was used instead.
    pub fallback: bool,
    pub residual: SchemeResidual,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_positive(species: &'static str, u: &[f64]) -> Result<(), SchemeError> {
    match u.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        Some((cell, &value)) => Err(SchemeError::NonPositiveDensity { species, cell, value }),
        None => Ok(()),
    }
}

fn solve_counted(sys: &SparseSystem, tol: f64, symmetric: bool, count: &mut usize) -> Result<Vec<f64>, LinsolveError> {
    let (x, rep) = solve(sys, tol, symmetric)?;
    *count += rep.iterations;
    Ok(x)
}

fn potential_lambda_positive(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    n: &[f64],
    p: &[f64],
    count: &mut usize,
) -> Result<Vec<f64>, SchemeError> {
    let sys = assemble_poisson(mesh, params.lambda_sq, n, p, &data.doping, &data.psid)?;
    Ok(solve_counted(&sys, params.lin_tol, true, count)?)
}

fn potential_quasi_neutral(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    n: &[f64],
    count: &mut usize,
) -> Result<Vec<f64>, SchemeError> {
    let sys = assemble_qn_potential(mesh, n, &data.nd, &data.psid)?;
    Ok(solve_counted(&sys, params.lin_tol, true, count)?)
}

/// Initial state: cell averages of the initial data and the matching potential.
pub fn init_state(mesh: &Mesh, data: &ProblemData, params: &SchemeParams) -> Result<State, SchemeError> {
    params.validate()?;
    data.validate(mesh, params)?;
    let mut count = 0;
    let psi = if params.lambda_sq > 0.0 {
        potential_lambda_positive(mesh, data, params, &data.n0, &data.p0, &mut count)?
    } else {
        potential_quasi_neutral(mesh, data, params, &data.n0, &mut count)?
    };
    Ok(State {
        step: 0,
        t: 0.0,
        n: data.n0.clone(),
        p: data.p0.clone(),
        psi: psi.into(),
    })
}

/// Residual of the nonlinear scheme at `next`, each equation scaled by `dt / m(K)`.
pub fn scheme_residual(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    prev: &State,
    next: &State,
) -> SchemeResidual {
    let r = residual_vector(
        mesh,
        data,
        params.lambda_sq,
        params.dt,
        &prev.n,
        &prev.p,
        &next.n,
        &next.p,
        &next.psi,
    );
    let mut out = SchemeResidual::default();
    for (k, cell) in mesh.cells().iter().enumerate() {
        let s = params.dt / cell.measure;
        out.electrons = out.electrons.max((s * r[3 * k]).abs());
        out.holes = out.holes.max((s * r[3 * k + 1]).abs());
        out.potential = out.potential.max((s * r[3 * k + 2]).abs());
    }
    out
}

/// Unscaled residuals interleaved per cell as `(N, P, Psi)`.
#[allow(clippy::too_many_arguments)]
fn residual_vector(
    mesh: &Mesh,
    data: &ProblemData,
    lambda_sq: f64,
    dt: f64,
    n_old: &[f64],
    p_old: &[f64],
    n: &[f64],
    p: &[f64],
    psi: &[f64],
) -> Vec<f64> {
    let mut r = vec![0.0; 3 * mesh.n_cells()];
    for (k, cell) in mesh.cells().iter().enumerate() {
        let m = cell.measure;
        r[3 * k] = m / dt * (n[k] - n_old[k]);
        r[3 * k + 1] = m / dt * (p[k] - p_old[k]);
        r[3 * k + 2] = -m * (p[k] - n[k] + data.doping[k]);
    }
    for e in mesh.edges() {
        match e.kind {
            EdgeKind::Interior { k, l } => {
                let x = psi[l] - psi[k];
                let f = electron_flux(e.tau, n[k], n[l], x);
                let g = hole_flux(e.tau, p[k], p[l], x);
                r[3 * k] += f;
                r[3 * l] -= f;
                r[3 * k + 1] += g;
                r[3 * l + 1] -= g;
                r[3 * k + 2] -= lambda_sq * e.tau * x;
                r[3 * l + 2] += lambda_sq * e.tau * x;
            }
            EdgeKind::Dirichlet { k, boundary } => {
                let x = data.psid[boundary] - psi[k];
                r[3 * k] += electron_flux(e.tau, n[k], data.nd[boundary], x);
                r[3 * k + 1] += hole_flux(e.tau, p[k], data.pd[boundary], x);
                r[3 * k + 2] -= lambda_sq * e.tau * x;
            }
            EdgeKind::Neumann { .. } => {}
        }
    }
    r
}

fn finish_report(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    prev: &State,
    next: &State,
    mut report: FixedPointReport,
) -> FixedPointReport {
    report.residual = scheme_residual(mesh, data, params, prev, next);
    report
}

fn empty_report(solver: SolverKind) -> FixedPointReport {
    FixedPointReport {
        solver,
        iterations: 0,
        increment: f64::INFINITY,
        psi_increment: f64::INFINITY,
        damping_events: 0,
        linear_iterations: 0,
        factorizations: 0,
        fallback: false,
        residual: SchemeResidual::default(),
    }
}

/// Tracks increments and halves the relaxation after three consecutive increases.
struct Damper {
    enabled: bool,
    omega: f64,
    last: f64,
    growth: usize,
    events: usize,
}

impl Damper {
    fn new(enabled: bool) -> Self {
        Damper {
            enabled,
            omega: 1.0,
            last: f64::INFINITY,
            growth: 0,
            events: 0,
        }
    }

    fn update(&mut self, increment: f64) -> f64 {
        if increment > self.last {
            self.growth += 1;
        } else {
            self.growth = 0;
        }
        self.last = increment;
        if self.enabled && self.growth >= 3 && self.omega > 1.0 / 64.0 {
            self.omega *= 0.5;
            self.growth = 0;
            self.events += 1;
        }
        self.omega
    }
}

fn relax(current: &mut [f64], target: &[f64], omega: f64) {
    for (c, t) in current.iter_mut().zip(target) {
        *c += omega * (t - *c);
    }
}

/// One step with the relaxed linearized map (`lambda > 0`).
///
/// Each iteration solves the Poisson equation for the current densities, then the two
/// decoupled density systems with relaxation `mu / lambda^2`. The accepted state is the
/// last density solve together with the potential it was computed with, which satisfies
/// all three equations up to the last increment.
pub fn step_lambda_positive(
    state: &State,
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
) -> Result<(State, FixedPointReport), SchemeError> {
    if !(params.lambda_sq > 0.0) {
        return Err(SchemeError::InvalidParams("the relaxed map needs lambda^2 > 0".into()));
    }
    let stab = Stabilization::MuOverLambdaSq {
        mu: params.effective_mu(),
        lambda_sq: params.lambda_sq,
    };
    let mut report = empty_report(SolverKind::PicardMu);
    let mut damper = Damper::new(params.damping);
    let mut n = state.n.to_vec();
    let mut p = state.p.to_vec();
    let mut psi_prev = state.psi.to_vec();
    for it in 1..=params.fp_max_iter {
        let psi = potential_lambda_positive(mesh, data, params, &n, &p, &mut report.linear_iterations)?;
        let density =
            |species, u_old: &[f64], u: &[f64], ud: &[f64], count: &mut usize| -> Result<Vec<f64>, SchemeError> {
                let sys = assemble_linearized_density(mesh, species, &psi, &data.psid, params.dt, stab, u_old, u, ud)?;
                if params.check_m_matrix {
                    let rep = check_m_matrix(&sys);
                    if !rep.is_m_matrix() {
                        return Err(SchemeError::InvalidParams(format!(
                            "density matrix is not an M-matrix: {rep:?}"
                        )));
                    }
                }
                Ok(solve_counted(&sys, params.lin_tol, false, count)?)
            };
        let n_hat = density(Species::Electron, &state.n, &n, &data.nd, &mut report.linear_iterations)?;
        let p_hat = density(Species::Hole, &state.p, &p, &data.pd, &mut report.linear_iterations)?;
        let increment = sup_diff(&n_hat, &n).max(sup_diff(&p_hat, &p));
        report.iterations = it;
        report.increment = increment;
        report.psi_increment = sup_diff(&psi, &psi_prev);
        if !increment.is_finite() {
            break;
        }
        if increment <= params.fp_tol {
            check_positive("electron", &n_hat)?;
            check_positive("hole", &p_hat)?;
            let next = State {
                step: state.step + 1,
                t: (state.step + 1) as f64 * params.dt,
                n: n_hat.into(),
                p: p_hat.into(),
                psi: psi.into(),
            };
            report.damping_events = damper.events;
            let report = finish_report(mesh, data, params, state, &next, report);
            return Ok((next, report));
        }
        let omega = damper.update(increment);
        relax(&mut n, &n_hat, omega);
        relax(&mut p, &p_hat, omega);
        psi_prev = psi;
    }
    Err(SchemeError::NotConverged {
        solver: SolverKind::PicardMu.name(),
        iterations: report.iterations,
        increment: report.increment,
        last: Box::new(State {
            step: state.step + 1,
            t: (state.step + 1) as f64 * params.dt,
            p: n.clone().into(),
            n: n.into(),
            psi: psi_prev.into(),
        }),
    })
}

/// One step of the `lambda = 0` scheme with the quasi-neutral map: potential from the
/// density-weighted Laplacian, then the effective-diffusion density system; `P = N`.
pub fn step_quasi_neutral(
    state: &State,
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
) -> Result<(State, FixedPointReport), SchemeError> {
    if params.lambda_sq != 0.0 {
        return Err(SchemeError::InvalidParams(
            "the quasi-neutral map needs lambda^2 = 0".into(),
        ));
    }
    let mut report = empty_report(SolverKind::PicardQuasiNeutral);
    let mut damper = Damper::new(params.damping);
    let mut n = state.n.to_vec();
    let mut psi_prev = state.psi.to_vec();
    for it in 1..=params.fp_max_iter {
        check_positive("electron", &n)?;
        let psi = potential_quasi_neutral(mesh, data, params, &n, &mut report.linear_iterations)?;
        let sys = assemble_linearized_density(
            mesh,
            Species::Electron,
            &psi,
            &data.psid,
            params.dt,
            Stabilization::QuasiNeutral,
            &state.n,
            &n,
            &data.nd,
        )?;
        let n_hat = solve_counted(&sys, params.lin_tol, true, &mut report.linear_iterations)?;
        let increment = sup_diff(&n_hat, &n);
        report.iterations = it;
        report.increment = increment;
        report.psi_increment = sup_diff(&psi, &psi_prev);
        if !increment.is_finite() {
            break;
        }
        if increment <= params.fp_tol {
            check_positive("electron", &n_hat)?;
            let n_hat: CellField = n_hat.into();
            let next = State {
                step: state.step + 1,
                t: (state.step + 1) as f64 * params.dt,
                p: n_hat.clone(),
                n: n_hat,
                psi: psi.into(),
            };
            report.damping_events = damper.events;
            let report = finish_report(mesh, data, params, state, &next, report);
            return Ok((next, report));
        }
        let omega = damper.update(increment);
        relax(&mut n, &n_hat, omega);
        psi_prev = psi;
    }
    Err(SchemeError::NotConverged {
        solver: SolverKind::PicardQuasiNeutral.name(),
        iterations: report.iterations,
        increment: report.increment,
        last: Box::new(State {
            step: state.step + 1,
            t: (state.step + 1) as f64 * params.dt,
            p: n.clone().into(),
            n: n.into(),
            psi: psi_prev.into(),
        }),
    })
}

/// Jacobian factorization kept across Newton iterations and time steps.
#[derive(Default)]
pub struct NewtonCache {
    lu: Option<BandedLu>,
}

impl NewtonCache {
    pub fn new() -> Self {
        NewtonCache::default()
    }
}

/// Band half-width of the interleaved `(N, P, Psi)` Jacobian.
fn coupled_bandwidth(mesh: &Mesh) -> usize {
    let gap = mesh
        .edges()
        .iter()
        .filter_map(|e| match e.kind {
            EdgeKind::Interior { k, l } => Some(k.abs_diff(l)),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    3 * gap + 2
}

/// Jacobian of [`residual_vector`] with respect to the interleaved unknowns.
fn jacobian_entries(
    mesh: &Mesh,
    data: &ProblemData,
    lambda_sq: f64,
    dt: f64,
    n: &[f64],
    p: &[f64],
    psi: &[f64],
) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(5 * mesh.n_cells() + 24 * mesh.edges().len());
    for (k, cell) in mesh.cells().iter().enumerate() {
        let m = cell.measure;
        t.push((3 * k, 3 * k, m / dt));
        t.push((3 * k + 1, 3 * k + 1, m / dt));
        t.push((3 * k + 2, 3 * k, m));
        t.push((3 * k + 2, 3 * k + 1, -m));
    }
    let (iu_n, iu_p, iu_psi) = (0, 1, 2);
    for e in mesh.edges() {
        let tau = e.tau;
        match e.kind {
            EdgeKind::Interior { k, l } => {
                let x = psi[l] - psi[k];
                let (bp, bm) = (bernoulli(x), bernoulli(-x));
                let (dbp, dbm) = (bernoulli_derivative(x), bernoulli_derivative(-x));
                // F = tau (B(-x) n_k - B(x) n_l), G = tau (B(x) p_k - B(-x) p_l)
                let df_dx = tau * (-dbm * n[k] - dbp * n[l]);
                let dg_dx = tau * (dbp * p[k] + dbm * p[l]);
                for (row, sign) in [(k, 1.0), (l, -1.0)] {
                    let rn = 3 * row + iu_n;
                    let rp = 3 * row + iu_p;
                    t.push((rn, 3 * k + iu_n, sign * tau * bm));
                    t.push((rn, 3 * l + iu_n, -sign * tau * bp));
                    t.push((rn, 3 * l + iu_psi, sign * df_dx));
                    t.push((rn, 3 * k + iu_psi, -sign * df_dx));
                    t.push((rp, 3 * k + iu_p, sign * tau * bp));
                    t.push((rp, 3 * l + iu_p, -sign * tau * bm));
                    t.push((rp, 3 * l + iu_psi, sign * dg_dx));
                    t.push((rp, 3 * k + iu_psi, -sign * dg_dx));
                }
                if lambda_sq > 0.0 {
                    let a = lambda_sq * tau;
                    t.push((3 * k + 2, 3 * k + 2, a));
                    t.push((3 * k + 2, 3 * l + 2, -a));
                    t.push((3 * l + 2, 3 * l + 2, a));
                    t.push((3 * l + 2, 3 * k + 2, -a));
                }
            }
            EdgeKind::Dirichlet { k, boundary } => {
                let x = data.psid[boundary] - psi[k];
                let (nd, pd) = (data.nd[boundary], data.pd[boundary]);
                let (bp, bm) = (bernoulli(x), bernoulli(-x));
                let (dbp, dbm) = (bernoulli_derivative(x), bernoulli_derivative(-x));
                let df_dx = tau * (-dbm * n[k] - dbp * nd);
                let dg_dx = tau * (dbp * p[k] + dbm * pd);
                t.push((3 * k, 3 * k, tau * bm));
                t.push((3 * k, 3 * k + 2, -df_dx));
                t.push((3 * k + 1, 3 * k + 1, tau * bp));
                t.push((3 * k + 1, 3 * k + 2, -dg_dx));
                if lambda_sq > 0.0 {
                    t.push((3 * k + 2, 3 * k + 2, lambda_sq * tau));
                }
            }
            EdgeKind::Neumann { .. } => {}
        }
    }
    t
}

/// Scaled residual norm used by the line search.
fn residual_norm(mesh: &Mesh, dt: f64, r: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, cell) in mesh.cells().iter().enumerate() {
        let w = dt / cell.measure;
        for i in 0..3 {
            s += (w * r[3 * k + i]).powi(2);
        }
    }
    s.sqrt()
}

/// Above this estimated factorization cost the Jacobian is reused between iterations.
const CHEAP_FACTORIZATION_FLOPS: f64 = 2e7;

/// One step with Newton's method on the coupled system.
///
/// Updates are damped to keep densities positive and backtracked until the scaled
/// residual decreases. When the factorization is expensive, the Jacobian is refreshed only
/// when convergence slows down.
pub fn newton_step(
    state: &State,
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    cache: &mut NewtonCache,
) -> Result<(State, FixedPointReport), SchemeError> {
    let nc = mesh.n_cells();
    let bw = coupled_bandwidth(mesh);
    let dim = 3 * nc;
    let expensive = (dim as f64) * (bw as f64) * (3 * bw) as f64 > CHEAP_FACTORIZATION_FLOPS;
    let (lsq, dt) = (params.lambda_sq, params.dt);
    let mut report = empty_report(SolverKind::Newton);
    let mut n = state.n.to_vec();
    let mut p = state.p.to_vec();
    let mut psi = state.psi.to_vec();
    let eval = |n: &[f64], p: &[f64], psi: &[f64]| residual_vector(mesh, data, lsq, dt, &state.n, &state.p, n, p, psi);
    let mut r = eval(&n, &p, &psi);
    let mut rnorm = residual_norm(mesh, dt, &r);
    let mut fresh = false;
    let mut last_increment = f64::INFINITY;
    if !expensive {
        cache.lu = None;
    }
    for it in 1..=params.fp_max_iter {
        if cache.lu.is_none() || !expensive {
            let j = jacobian_entries(mesh, data, lsq, dt, &n, &p, &psi);
            cache.lu = Some(BandedLu::factor_entries(dim, bw, bw, j)?);
            report.factorizations += 1;
            fresh = true;
        }
        let lu = cache.lu.as_ref().expect("factorized above");
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut delta);
        report.linear_iterations += 1;
        let mut full_increment: f64 = 0.0;
        let mut psi_increment: f64 = 0.0;
        let mut alpha: f64 = 1.0;
        for k in 0..nc {
            full_increment = full_increment.max(delta[3 * k].abs()).max(delta[3 * k + 1].abs());
            psi_increment = psi_increment.max(delta[3 * k + 2].abs());
            for (u, d) in [(n[k], delta[3 * k]), (p[k], delta[3 * k + 1])] {
                if d < 0.0 {
                    alpha = alpha.min(0.9 * u / -d);
                }
            }
        }
        report.iterations = it;
        report.increment = full_increment;
        report.psi_increment = psi_increment;
        if !full_increment.is_finite() {
            break;
        }
        // backtracking on the scaled residual
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..30 {
            let trial = |u: &[f64], off: usize| -> Vec<f64> {
                u.iter().enumerate().map(|(k, v)| v + a * delta[3 * k + off]).collect()
            };
            let (tn, tp, tpsi) = (trial(&n, 0), trial(&p, 1), trial(&psi, 2));
            let tr = eval(&tn, &tp, &tpsi);
            let tnorm = residual_norm(mesh, dt, &tr);
            if tnorm <= (1.0 - 1e-4 * a) * rnorm || (a == 1.0 && full_increment <= params.fp_tol) {
                accepted = Some((tn, tp, tpsi, tr, tnorm));
                break;
            }
            a *= 0.5;
        }
        match accepted {
            Some((tn, tp, tpsi, tr, tnorm)) => {
                n = tn;
                p = tp;
                psi = tpsi;
                r = tr;
                rnorm = tnorm;
            }
            None if !fresh => {
                // a stale Jacobian gave a poor direction
                cache.lu = None;
                continue;
            }
            None => {
                // no descent possible at rounding level; converged if the step is tiny
                if full_increment <= params.fp_tol {
                    report.increment = full_increment;
                } else {
                    break;
                }
            }
        }
        if a == 1.0 && full_increment <= params.fp_tol {
            check_positive("electron", &n)?;
            check_positive("hole", &p)?;
            let next = State {
                step: state.step + 1,
                t: (state.step + 1) as f64 * dt,
                n: n.into(),
                p: p.into(),
                psi: psi.into(),
            };
            let report = finish_report(mesh, data, params, state, &next, report);
            return Ok((next, report));
        }
        // slow contraction with a reused Jacobian: refresh
        if expensive && (a < 1.0 || full_increment > 0.5 * last_increment) {
            cache.lu = None;
        }
        fresh = false;
        last_increment = full_increment;
    }
    Err(SchemeError::NotConverged {
        solver: SolverKind::Newton.name(),
        iterations: report.iterations,
        increment: report.increment,
        last: Box::new(State {
            step: state.step + 1,
            t: (state.step + 1) as f64 * dt,
            n: n.into(),
            p: p.into(),
            psi: psi.into(),
        }),
    })
}

/// Time stepper bound to one mesh, data set and parameter set.
pub struct Stepper<'a> {
    mesh: &'a Mesh,
    data: &'a ProblemData,
    params: &'a SchemeParams,
    cache: NewtonCache,
}

impl<'a> Stepper<'a> {
    pub fn new(mesh: &'a Mesh, data: &'a ProblemData, params: &'a SchemeParams) -> Result<Self, SchemeError> {
        params.validate()?;
        data.validate(mesh, params)?;
        Ok(Stepper {
            mesh,
            data,
            params,
            cache: NewtonCache::new(),
        })
    }

    pub fn step(&mut self, state: &State) -> Result<(State, FixedPointReport), SchemeError> {
        let (mesh, data, params) = (self.mesh, self.data, self.params);
        let primary = params.primary_solver();
        let result = match primary {
            SolverKind::PicardMu => step_lambda_positive(state, mesh, data, params),
            SolverKind::PicardQuasiNeutral => step_quasi_neutral(state, mesh, data, params),
            SolverKind::Newton => newton_step(state, mesh, data, params, &mut self.cache),
        };
        let (mut next, mut report) = match result {
            Err(SchemeError::NotConverged { .. })
                if params.solver == SolverChoice::Auto && primary != SolverKind::Newton =>
            {
                let (next, mut report) = newton_step(state, mesh, data, params, &mut self.cache)?;
                report.fallback = true;
                (next, report)
            }
            other => other?,
        };
        if params.lambda_sq == 0.0 && report.solver == SolverKind::Newton {
            // enforce the exact algebraic constraint of the limit scheme
            next.p = next.n.clone();
            report.residual = scheme_residual(mesh, data, params, state, &next);
        }
        Ok((next, report))
    }
}

/// What an observer sees after the initial state and after every accepted step.
pub struct StepContext<'a> {
    pub mesh: &'a Mesh,
    pub data: &'a ProblemData,
    pub params: &'a SchemeParams,
    pub previous: Option<&'a State>,
    pub state: &'a State,
    /// `None` for the initial state.
    pub report: Option<&'a FixedPointReport>,
}

pub trait Observer {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<(), String>;
}

impl<F: FnMut(&StepContext<'_>) -> Result<(), String>> Observer for F {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<(), String> {
        self(ctx)
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub initial: State,
    pub final_state: State,
    pub reports: Vec<FixedPointReport>,
    pub wallclock_s: f64,
}

impl RunSummary {
    pub fn mean_iterations(&self) -> f64 {
        if self.reports.is_empty() {
            0.0
        } else {
            self.reports.iter().map(|r| r.iterations as f64).sum::<f64>() / self.reports.len() as f64
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.reports.iter().map(|r| r.residual.max()).fold(0.0, f64::max)
    }
}

/// Runs `floor(T / dt)` steps from the initial data.
pub fn run(
    mesh: &Mesh,
    data: &ProblemData,
    params: &SchemeParams,
    observers: &mut [&mut dyn Observer],
) -> Result<RunSummary, SchemeError> {
    let start = Instant::now();
    let mut stepper = Stepper::new(mesh, data, params)?;
    let initial = init_state(mesh, data, params)?;
    for obs in observers.iter_mut() {
        obs.observe(&StepContext {
            mesh,
            data,
            params,
            previous: None,
            state: &initial,
            report: None,
        })
        .map_err(|message| SchemeError::Observer { step: 0, message })?;
    }
    let n_steps = params.n_steps();
    let mut reports = Vec::with_capacity(n_steps);
    let mut state = initial.clone();
    for step in 1..=n_steps {
        let (next, report) = stepper.step(&state).map_err(|e| SchemeError::Step {
            step,
            source: Box::new(e),
        })?;
        for obs in observers.iter_mut() {
            obs.observe(&StepContext {
                mesh,
                data,
                params,
                previous: Some(&state),
                state: &next,
                report: Some(&report),
            })
            .map_err(|message| SchemeError::Observer { step, message })?;
        }
        reports.push(report);
        state = next;
    }
    Ok(RunSummary {
        initial,
        final_state: state,
        reports,
        wallclock_s: start.elapsed().as_secs_f64(),
    })
}
