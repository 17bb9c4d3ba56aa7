//! Error tables over `(lambda^2, dt, dx)` and least-squares convergence orders.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::scheme::run;

use super::cases::TestCase;
use super::reference::{compute_reference, l1_error, ReferenceCache, ReferenceSpec, Snapshot};
use super::{dt_divides, HarnessError};

/// `lambda^2` used in place of `0` for cases with doping, where the limit scheme is not defined.
pub const QUASI_NEUTRAL_SUBSTITUTE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub case: TestCase,
    pub lambdas: Vec<f64>,
    pub dts: Vec<f64>,
    pub cells: Vec<usize>,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowErrors {
    /// `[N, P, Psi]`
    pub err: [f64; 3],
    pub fp_iters_avg: f64,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    /// The value asked for; differs from `lambda_sq` only for the substituted limit.
    pub requested_lambda_sq: f64,
    pub lambda_sq: f64,
    pub dt: f64,
    pub dx: f64,
    pub outcome: Result<RowErrors, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

pub const ERROR_TABLE_HEADER: &str = "lambda2,dt,dx,err_N,err_P,err_Psi,fp_iters_avg,wallclock_s";

impl ErrorTable {
    /// Failed rows carry `failed` in the error columns.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ERROR_TABLE_HEADER.split(','))?;
        for r in &self.rows {
            let mut rec = vec![r.lambda_sq.to_string(), r.dt.to_string(), r.dx.to_string()];
            match &r.outcome {
                Ok(e) => {
                    rec.extend(e.err.iter().map(f64::to_string));
                    rec.push(e.fp_iters_avg.to_string());
                    rec.push(e.wallclock_s.to_string());
                }
                Err(_) => rec.extend(std::iter::repeat_n("failed".to_string(), 5)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        self.write_csv(file)
            .map_err(|e| HarnessError::io(path, std::io::Error::other(e)))
    }

    /// Row for a requested `lambda^2`, time step and mesh size.
    pub fn get(&self, lambda_sq: f64, dt: f64, dx: f64) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .find(|r| r.requested_lambda_sq == lambda_sq && same(r.dt, dt) && same(r.dx, dx))
    }

    pub fn failures(&self) -> impl Iterator<Item = (&ErrorRow, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|m| (r, m.as_str())))
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn check_unique<T: PartialEq + Copy>(what: &'static str, v: &[T]) -> Result<(), HarnessError> {
    if v.is_empty() {
        return Err(HarnessError::EmptyList(what));
    }
    for (i, a) in v.iter().enumerate() {
        if v[..i].contains(a) {
            return Err(HarnessError::Config(format!("duplicate entry in the {what} list")));
        }
    }
    Ok(())
}

/// The `lambda^2` actually run for a requested value.
pub fn effective_lambda_sq(case: &TestCase, requested: f64) -> f64 {
    if requested == 0.0 && case.has_doping() {
        QUASI_NEUTRAL_SUBSTITUTE
    } else {
        requested
    }
}

/// One row per `(lambda^2, dt, cells)` combination, in list order. Rows run in parallel;
/// a failing run or reference marks its rows instead of aborting the sweep.
pub fn sweep(spec: &SweepSpec, cache: Option<&ReferenceCache>) -> Result<ErrorTable, HarnessError> {
    check_unique("lambda^2", &spec.lambdas)?;
    check_unique("time step", &spec.dts)?;
    check_unique("cells", &spec.cells)?;
    let t_final = spec.case.t_final;
    for &dt in spec.dts.iter().chain([spec.reference.dt].iter()) {
        if !dt_divides(dt, t_final) {
            return Err(HarnessError::DtNotDivisor { dt, t_final });
        }
    }
    let ref_mesh = spec.case.mesh(spec.reference.cells)?;
    let mut meshes = Vec::with_capacity(spec.cells.len());
    for &c in &spec.cells {
        let m = spec.case.mesh(c)?;
        crate::mesh::nesting_map(&m, &ref_mesh)?;
        meshes.push(m);
    }
    let references: Vec<Result<Snapshot, String>> = spec
        .lambdas
        .par_iter()
        .map(|&l| {
            let lsq = effective_lambda_sq(&spec.case, l);
            compute_reference(&spec.case, spec.reference.cells, spec.reference.dt, lsq, cache)
                .map_err(|e| format!("reference for lambda^2 = {lsq}: {e}"))
        })
        .collect();
    let combos: Vec<(usize, f64, usize)> = (0..spec.lambdas.len())
        .flat_map(|i| {
            spec.dts
                .iter()
                .flat_map(move |&dt| (0..spec.cells.len()).map(move |j| (i, dt, j)))
        })
        .collect();
    let rows = combos
        .par_iter()
        .map(|&(i, dt, j)| {
            let requested = spec.lambdas[i];
            let lambda_sq = effective_lambda_sq(&spec.case, requested);
            let mesh = &meshes[j];
            let outcome = references[i].clone().and_then(|reference| {
                let start = Instant::now();
                let data = spec.case.data(mesh);
                let params = spec.case.params(lambda_sq, dt);
                let summary = run(mesh, &data, &params, &mut []).map_err(|e| e.to_string())?;
                let err = l1_error(mesh, &summary.final_state, &ref_mesh, &reference).map_err(|e| e.to_string())?;
                Ok(RowErrors {
                    err,
                    fp_iters_avg: summary.mean_iterations(),
                    wallclock_s: start.elapsed().as_secs_f64(),
                })
            });
            ErrorRow {
                requested_lambda_sq: requested,
                lambda_sq,
                dt,
                dx: mesh.size(),
                outcome,
            }
        })
        .collect();
    Ok(ErrorTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Dt,
    Dx,
}

/// Fitted slopes of `log err` against `log axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderFit {
    pub n: f64,
    pub p: f64,
    pub psi: f64,
    pub points: usize,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64, HarnessError> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(HarnessError::TooFewRows(pts.len()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Order along `axis` for the rows with the requested `lambda^2` whose other axis
/// equals `fixed`.
pub fn fit_order(table: &ErrorTable, axis: Axis, lambda_sq: f64, fixed: f64) -> Result<OrderFit, HarnessError> {
    let rows: Vec<(f64, [f64; 3])> = table
        .rows
        .iter()
        .filter(|r| r.requested_lambda_sq == lambda_sq)
        .filter_map(|r| {
            let (along, other) = match axis {
                Axis::Dt => (r.dt, r.dx),
                Axis::Dx => (r.dx, r.dt),
            };
            match &r.outcome {
                Ok(e) if same(other, fixed) && e.err.iter().all(|v| *v > 0.0 && v.is_finite()) => Some((along, e.err)),
                _ => None,
            }
        })
        .collect();
    if rows.len() < 3 {
        return Err(HarnessError::TooFewRows(rows.len()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let slope = |i: usize| fit_slope(&xs, &rows.iter().map(|r| r.1[i]).collect::<Vec<_>>());
    Ok(OrderFit {
        n: slope(0)?,
        p: slope(1)?,
        psi: slope(2)?,
        points: rows.len(),
    })
}
