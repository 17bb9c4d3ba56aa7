//! Command-line front end. Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};

use crate::diagnostics::{apriori_sums, check_entropy_inequality};
use crate::flux::{bernoulli, check_flux, Species};
use crate::linsolve::{assemble_linearized_density, assemble_poisson, check_m_matrix, Dominance, Stabilization};
use crate::mesh::load_triangle_mesh;
use crate::scheme::{init_state, run, Mu};

use super::config::RunConfig;
use super::output::{DiagnosticsWriter, SnapshotWriter};
use super::reference::{ReferenceCache, ReferenceSpec, Snapshot};
use super::sweep::{effective_lambda_sq, fit_order, sweep, Axis, ErrorTable, SweepSpec};
use super::{builtin_case, HarnessError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "driftfv",
    version,
    about = "Scharfetter-Gummel finite volume drift-diffusion solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write diagnostics and state snapshots.
    Run(RunArgs),
    /// Compute an L1 error table against a reference solution.
    Sweep(SweepArgs),
    /// Error table plus fitted convergence orders.
    Convergence(ConvergenceArgs),
    /// Flux identities, M-matrix structure and the entropy inequality on a short run.
    Check,
    /// Admissibility report of a mesh.
    MeshInfo(MeshArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file; command-line values override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    fp_tol: Option<f64>,
    #[arg(long)]
    fp_max_iter: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write a snapshot every this many steps.
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value = "case1")]
    case: String,
    #[arg(long = "lambda2", value_delimiter = ',', default_values_t = vec![1.0, 1e-2, 1e-5, 1e-9, 0.0])]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 5e-3, 2.5e-3, 1.25e-3])]
    dts: Vec<f64>,
    /// Sweep meshes; defaults to the finest sweep mesh for time-step studies.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<usize>,
    #[arg(long)]
    ref_cells: Option<usize>,
    #[arg(long)]
    ref_dt: Option<f64>,
    /// Reference on 10240 cells with dt = 1e-6.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    t_final: Option<f64>,
    /// Error table output.
    #[arg(long, default_value = "error_table.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Dt,
    Dx,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_enum, default_value = "dt")]
    along: AxisArg,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long, default_value = "case1")]
    case: String,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    mesh_file: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Sweep(a) => cmd_sweep(a, None, out),
        Command::Convergence(a) => cmd_sweep(a.sweep, Some(a.along), out),
        Command::Check => cmd_check(out),
        Command::MeshInfo(a) => cmd_mesh_info(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() || matches!(e, HarnessError::Mesh(_)) {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::io(path, e)
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.case {
        cfg.case = v;
    }
    cfg.lambda2 = a.lambda2.unwrap_or(cfg.lambda2);
    cfg.dt = a.dt.unwrap_or(cfg.dt);
    cfg.t_final = a.t_final.or(cfg.t_final);
    cfg.cells = a.cells.or(cfg.cells);
    cfg.mesh_file = a.mesh_file.or(cfg.mesh_file);
    cfg.mu = a.mu.or(cfg.mu);
    cfg.fp_tol = a.fp_tol.or(cfg.fp_tol);
    cfg.fp_max_iter = a.fp_max_iter.or(cfg.fp_max_iter);
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    let (case, mesh, data, params) = cfg.build()?;
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let diag_path = cfg.out_dir.join("diagnostics.csv");
    let file = fs::File::create(&diag_path).map_err(io_err(&diag_path))?;
    let mut diag = DiagnosticsWriter::new(std::io::BufWriter::new(file))
        .map_err(|e| HarnessError::io(&diag_path, std::io::Error::other(e)))?;
    let mut snaps = SnapshotWriter::new(&cfg.out_dir, a.snapshot_every.unwrap_or(usize::MAX));
    let summary = match a.snapshot_every {
        Some(_) => run(&mesh, &data, &params, &mut [&mut diag, &mut snaps])?,
        None => run(&mesh, &data, &params, &mut [&mut diag])?,
    };
    let final_path = cfg.out_dir.join("state_final.csv");
    Snapshot::from_state(&mesh, &summary.final_state, params.lambda_sq).write(&final_path)?;
    let entropy = check_entropy_inequality(diag.records(), params.dt, params.lambda_sq);
    let sums = apriori_sums(diag.records(), params.dt);
    let fin = &summary.final_state;
    let _ = writeln!(
        out,
        "{} lambda2={} dt={} cells={} steps={} t={}",
        case.name,
        params.lambda_sq,
        params.dt,
        mesh.n_cells(),
        summary.reports.len(),
        fin.t
    );
    let _ = writeln!(
        out,
        "solver={} mean_iters={:.2} max_residual={:.3e} wallclock={:.3}s",
        summary.reports.first().map_or("none", |r| r.solver.name()),
        summary.mean_iterations(),
        summary.max_residual(),
        summary.wallclock_s
    );
    let _ = writeln!(
        out,
        "final N in [{:.6}, {:.6}], P in [{:.6}, {:.6}]",
        fin.n.min(),
        fin.n.max(),
        fin.p.min(),
        fin.p.max()
    );
    let _ = writeln!(
        out,
        "entropy inequality {} (max excess {:.3e}), summed production {:.6e}",
        if entropy.holds() { "holds" } else { "VIOLATED" },
        entropy.max_excess,
        entropy.summed_production
    );
    let _ = writeln!(
        out,
        "weak_bv={:.6e} l2h1_N={:.6e} l2h1_P={:.6e} l2h1_Psi={:.6e}",
        sums.weak_bv, sums.l2h1_n, sums.l2h1_p, sums.l2h1_psi
    );
    let _ = writeln!(out, "outputs in {}", cfg.out_dir.display());
    Ok(EXIT_OK)
}

fn sweep_spec(a: &SweepArgs, along: Option<AxisArg>) -> Result<SweepSpec, HarnessError> {
    let mut case = builtin_case(&a.case)?;
    if let Some(t) = a.t_final {
        case.t_final = t;
    }
    let base = if a.paper_scale {
        ReferenceSpec::PAPER
    } else {
        ReferenceSpec::DESK
    };
    let reference = ReferenceSpec {
        cells: a.ref_cells.unwrap_or(base.cells),
        dt: a.ref_dt.unwrap_or(base.dt),
    };
    let cells = if !a.cells.is_empty() {
        a.cells.clone()
    } else if matches!(along, Some(AxisArg::Dx)) {
        (0..6).map(|i| 20usize << i).filter(|&c| c < reference.cells).collect()
    } else {
        vec![reference.cells.min(1280)]
    };
    Ok(SweepSpec {
        case,
        lambdas: a.lambdas.clone(),
        dts: a.dts.clone(),
        cells,
        reference,
    })
}

fn cmd_sweep(a: SweepArgs, along: Option<AxisArg>, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let spec = sweep_spec(&a, along)?;
    for &l in &spec.lambdas {
        let used = effective_lambda_sq(&spec.case, l);
        if used != l {
            let _ = writeln!(
                out,
                "note: {} has doping; lambda2 = {l} runs as lambda2 = {used}",
                spec.case.name
            );
        }
    }
    let cache = ReferenceCache::from_env();
    let table = sweep(&spec, Some(&cache))?;
    table.save(&a.out)?;
    let mut text = Vec::new();
    table
        .write_csv(&mut text)
        .map_err(|e| HarnessError::io(&a.out, std::io::Error::other(e)))?;
    let _ = out.write_all(&text);
    let mut failed = false;
    for (row, msg) in table.failures() {
        failed = true;
        let _ = writeln!(
            out,
            "row lambda2={} dt={} dx={} failed: {msg}",
            row.lambda_sq, row.dt, row.dx
        );
    }
    if let Some(axis) = along {
        report_orders(&table, &spec, axis, out);
    }
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}

fn report_orders(table: &ErrorTable, spec: &SweepSpec, axis: AxisArg, out: &mut dyn Write) {
    let (axis, fixed): (Axis, Vec<f64>) = match axis {
        AxisArg::Dt => (Axis::Dt, table.rows.iter().map(|r| r.dx).collect()),
        AxisArg::Dx => (Axis::Dx, spec.dts.clone()),
    };
    let mut fixed = fixed;
    fixed.sort_by(f64::total_cmp);
    fixed.dedup();
    for &l in &spec.lambdas {
        for &f in &fixed {
            match fit_order(table, axis, l, f) {
                Ok(o) => {
                    let _ = writeln!(
                        out,
                        "order lambda2={l} fixed={f}: N {:.3}  P {:.3}  Psi {:.3}  ({} points)",
                        o.n, o.p, o.psi, o.points
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "order lambda2={l} fixed={f}: {e}");
                }
            }
        }
    }
}

fn cmd_check(out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mut all = true;
    let mut line = |name: &str, ok: bool, detail: String| {
        all &= ok;
        let _ = writeln!(out, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(-50.0..50.0);
        worst = worst.max((bernoulli(x) - bernoulli(-x) + x).abs() / x.abs().max(1.0));
    }
    line(
        "bernoulli identity",
        worst <= 1e-13,
        format!("max scaled defect {worst:.2e}"),
    );
    let mut bad = 0;
    for _ in 0..10_000 {
        let (a, b, d) = (
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(-20.0..20.0),
        );
        for s in [Species::Electron, Species::Hole] {
            if !check_flux(s, 1.0, a, b, d).all_hold() {
                bad += 1;
            }
        }
    }
    line(
        "flux inequalities",
        bad == 0,
        format!("{bad} violations in 20000 checks"),
    );

    let case = builtin_case("case1")?;
    let mesh = case.mesh(160)?;
    let data = case.data(&mesh);
    let params = case.params(1.0, 1e-3);
    let s0 = init_state(&mesh, &data, &params)?;
    let lin = |e: crate::linsolve::LinsolveError| HarnessError::Scheme(e.into());
    let poisson = assemble_poisson(&mesh, 1.0, &s0.n, &s0.p, &data.doping, &data.psid).map_err(lin)?;
    let rep = check_m_matrix(&poisson);
    line(
        "poisson M-matrix",
        rep.irreducibly_dominant(),
        format!(
            "{} strict, {} weak columns",
            rep.count(Dominance::Strict),
            rep.count(Dominance::Weak)
        ),
    );
    let stabs = [
        ("plain", Stabilization::None),
        (
            "relaxed",
            Stabilization::MuOverLambdaSq {
                mu: 1e-3,
                lambda_sq: 1e-5,
            },
        ),
        ("quasi-neutral", Stabilization::QuasiNeutral),
    ];
    for (name, stab) in stabs {
        for s in [Species::Electron, Species::Hole] {
            let u_d = if s == Species::Electron { &data.nd } else { &data.pd };
            let sys = assemble_linearized_density(&mesh, s, &s0.psi, &data.psid, 1e-3, stab, &s0.n, &s0.n, u_d)
                .map_err(lin)?;
            line(
                &format!("{name} {s:?} density M-matrix"),
                check_m_matrix(&sys).is_m_matrix(),
                String::new(),
            );
        }
    }
    let mut short = case.clone();
    short.t_final = 0.01;
    for l in [1.0, 1e-5, 0.0] {
        let mut p = short.params(l, 1e-3);
        p.mu = Mu::Auto;
        let mut rec = crate::diagnostics::DiagnosticsRecorder::new();
        run(&mesh, &data, &p, &mut [&mut rec])?;
        let c = check_entropy_inequality(&rec.records, p.dt, l);
        line(
            &format!("entropy inequality lambda2={l}"),
            c.holds(),
            format!("max excess {:.3e} over {} steps", c.max_excess, c.steps),
        );
    }
    Ok(if all { EXIT_OK } else { EXIT_NUMERICAL })
}

fn cmd_mesh_info(a: MeshArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mesh = match &a.mesh_file {
        Some(p) => load_triangle_mesh(p)?,
        None => {
            let case = builtin_case(&a.case)?;
            case.mesh(a.cells.unwrap_or(case.default_cells))?
        }
    };
    let _ = write!(out, "{}", mesh.report());
    Ok(EXIT_OK)
}
