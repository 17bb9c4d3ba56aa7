use std::path::Path;
use std::process::{Command, Output};

use driftfv::harness::Snapshot;

fn driftfv(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftfv"))
        .args(args)
        .env("DRIFTFV_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = driftfv(
        &[
            "run",
            "--case",
            "case1",
            "--lambda2",
            "1e-9",
            "--dt",
            "1e-3",
            "--cells",
            "160",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let lines: Vec<&str> = diag.lines().collect();
    assert_eq!(
        lines[0],
        "n,t,entropy,production,min_N,max_N,min_P,max_P,h1_Psi,weak_bv,fp_iters"
    );
    assert_eq!(lines.len(), 102);
    let snap = Snapshot::read(&out.join("state_final.csv")).unwrap();
    assert_eq!(snap.n_cells(), 160);
    assert!((snap.t - 0.1).abs() < 1e-12);
    assert!(stdout(&o).contains("entropy inequality holds"));
}

#[test]
fn run_from_config_with_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cfg-run");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "[problem]\ncase = case2\nlambda2 = 1e-3\nt_final = 0.01\ncells = 40\n\n[scheme]\ndt = 1e-3\n\n[output]\nout_dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = driftfv(
        &["run", "--config", cfg.to_str().unwrap(), "--snapshot-every", "5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for n in [0, 5, 10] {
        assert!(out.join(format!("state_{n:06}.csv")).exists());
    }
    let snap = Snapshot::read(&out.join("state_000010.csv")).unwrap();
    assert_eq!((snap.n_cells(), snap.lambda_sq), (40, 1e-3));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = driftfv(&["run", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(driftfv(&[], dir.path()).status.code(), Some(1));
    assert_eq!(driftfv(&["run", "--case", "case7"], dir.path()).status.code(), Some(1));
    let o = driftfv(
        &[
            "run",
            "--case",
            "case2",
            "--lambda2",
            "0",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1e-12"));
    assert_eq!(driftfv(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = driftfv(
        &[
            "run",
            "--lambda2",
            "1e-5",
            "--fp-max-iter",
            "1",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 1"));
}

#[test]
fn convergence_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let o = driftfv(
        &[
            "convergence",
            "--case",
            "case1",
            "--lambda2",
            "0",
            "--dts",
            "1e-2,5e-3,2.5e-3,1.25e-3",
            "--cells",
            "160",
            "--ref-cells",
            "160",
            "--ref-dt",
            "1e-4",
            "--out",
            table.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let line = text
        .lines()
        .find(|l| l.starts_with("order lambda2=0"))
        .expect("slope line");
    let slope: f64 = line
        .split("N ")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.75..=1.25).contains(&slope), "{line}");
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "lambda2,dt,dx,err_N,err_P,err_Psi,fp_iters_avg,wallclock_s"
    );
    assert_eq!(csv.lines().count(), 5);
    // the reference landed in the cache directory
    assert!(std::fs::read_dir(dir.path()).unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .ends_with(".state")));
}

#[test]
fn check_and_mesh_info() {
    let dir = tempfile::tempdir().unwrap();
    let o = driftfv(&["check"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = driftfv(&["mesh-info", "--case", "case3", "--cells", "16"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cells          256"));
    // the top contact end point at x = 0.25 is not on a 6-cell grid line
    let o = driftfv(&["mesh-info", "--case", "case3", "--cells", "6"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
