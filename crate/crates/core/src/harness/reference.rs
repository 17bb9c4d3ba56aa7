//! State snapshots, the on-disk reference cache and nested-mesh L1 errors.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::mesh::{nesting_map, CellField, Mesh};
use crate::scheme::{run, State};

use super::cases::TestCase;
use super::{dt_divides, HarnessError};

/// Overrides the reference-cache directory.
pub const CACHE_ENV: &str = "DRIFTFV_CACHE_DIR";

/// Final-time state with enough mesh metadata to check it against a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub lambda_sq: f64,
    pub dimension: usize,
    pub centers: Vec<[f64; 2]>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub psi: Vec<f64>,
}

impl Snapshot {
    pub fn from_state(mesh: &Mesh, state: &State, lambda_sq: f64) -> Self {
        Snapshot {
            t: state.t,
            lambda_sq,
            dimension: mesh.dimension(),
            centers: mesh.cells().iter().map(|c| c.center).collect(),
            n: state.n.to_vec(),
            p: state.p.to_vec(),
            psi: state.psi.to_vec(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n.len()
    }

    pub fn state(&self, step: usize) -> State {
        State {
            step,
            t: self.t,
            n: CellField(self.n.clone()),
            p: CellField(self.p.clone()),
            psi: CellField(self.psi.clone()),
        }
    }

    /// Header line followed by `cell_id,x[,y],N,P,Psi` rows; floats use the shortest
    /// representation that reads back exactly.
    pub fn write_to(&self, out: impl Write) -> std::io::Result<()> {
        let mut out = out;
        writeln!(
            out,
            "state v1 cells={} t={} lambda2={}",
            self.n_cells(),
            self.t,
            self.lambda_sq
        )?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for k in 0..self.n_cells() {
            let mut row = vec![k.to_string(), self.centers[k][0].to_string()];
            if self.dimension == 2 {
                row.push(self.centers[k][1].to_string());
            }
            row.extend([self.n[k], self.p[k], self.psi[k]].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| HarnessError::io(path, e))
    }

    /// Parses a snapshot; `path` only labels errors.
    pub fn read_from(input: impl Read, path: &Path) -> Result<Self, HarnessError> {
        let parse_err = |line: usize, message: String| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| HarnessError::io(path, e))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("state") || fields.next() != Some("v1") {
            return Err(parse_err(
                1,
                format!("expected a 'state v1' header, got {:?}", header.trim()),
            ));
        }
        let (mut cells, mut t, mut lambda_sq) = (None, None, None);
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad header field {f:?}")))?;
            let bad = |_| parse_err(1, format!("bad value in {f:?}"));
            match k {
                "cells" => {
                    cells = Some(
                        v.parse::<usize>()
                            .map_err(|_| parse_err(1, format!("bad value in {f:?}")))?,
                    )
                }
                "t" => t = Some(v.parse::<f64>().map_err(bad)?),
                "lambda2" => lambda_sq = Some(v.parse::<f64>().map_err(bad)?),
                _ => return Err(parse_err(1, format!("unknown header field {k:?}"))),
            }
        }
        let (cells, t, lambda_sq) = match (cells, t, lambda_sq) {
            (Some(c), Some(t), Some(l)) => (c, t, l),
            _ => return Err(parse_err(1, "header needs cells, t and lambda2".into())),
        };
        let mut snap = Snapshot {
            t,
            lambda_sq,
            dimension: 0,
            centers: Vec::with_capacity(cells),
            n: Vec::with_capacity(cells),
            p: Vec::with_capacity(cells),
            psi: Vec::with_capacity(cells),
        };
        let mut rows = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        for (i, rec) in rows.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let dim = match rec.len() {
                5 => 1,
                6 => 2,
                n => return Err(parse_err(line, format!("expected 5 or 6 columns, got {n}"))),
            };
            if snap.dimension == 0 {
                snap.dimension = dim;
            } else if snap.dimension != dim {
                return Err(parse_err(line, "column count changes".into()));
            }
            let id: usize = rec[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad cell id {:?}", &rec[0])))?;
            if id != i {
                return Err(parse_err(line, format!("expected cell id {i}, got {id}")));
            }
            let mut vals = [0.0; 5];
            for (j, v) in vals.iter_mut().enumerate().take(rec.len() - 1) {
                *v = rec[j + 1]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number {:?}", &rec[j + 1])))?;
            }
            let (center, rest) = if dim == 1 {
                ([vals[0], 0.0], &vals[1..4])
            } else {
                ([vals[0], vals[1]], &vals[2..5])
            };
            snap.centers.push(center);
            snap.n.push(rest[0]);
            snap.p.push(rest[1]);
            snap.psi.push(rest[2]);
        }
        if snap.n_cells() != cells {
            return Err(parse_err(
                1,
                format!("header announces {cells} cells, found {}", snap.n_cells()),
            ));
        }
        Ok(snap)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_from(file, path)
    }

    /// Checks that the snapshot was taken on `mesh`.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<(), HarnessError> {
        if self.n_cells() != mesh.n_cells() || self.dimension != mesh.dimension() {
            return Err(HarnessError::ReferenceMismatch {
                reference: self.n_cells(),
                mesh: mesh.n_cells(),
            });
        }
        let tol = 1e-9 * mesh.size().max(1.0);
        let same = mesh
            .cells()
            .iter()
            .zip(&self.centers)
            .all(|(c, x)| (c.center[0] - x[0]).abs() <= tol && (c.center[1] - x[1]).abs() <= tol);
        if same {
            Ok(())
        } else {
            Err(HarnessError::ReferenceMismatch {
                reference: self.n_cells(),
                mesh: mesh.n_cells(),
            })
        }
    }
}

/// Directory of reference snapshots keyed by case, cell count, time step and `lambda^2`.
#[derive(Clone, Debug)]
pub struct ReferenceCache {
    pub dir: PathBuf,
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReferenceCache { dir: dir.into() }
    }

    /// `$DRIFTFV_CACHE_DIR`, or `driftfv-cache` in the system temporary directory.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Self::new(d),
            _ => Self::new(std::env::temp_dir().join("driftfv-cache")),
        }
    }

    pub fn path(&self, case: &str, cells: usize, dt: f64, lambda_sq: f64) -> PathBuf {
        self.dir
            .join(format!("{case}-cells{cells}-dt{dt:e}-lambda2{lambda_sq:e}.state"))
    }

    pub fn load(&self, case: &str, cells: usize, dt: f64, lambda_sq: f64) -> Result<Option<Snapshot>, HarnessError> {
        let path = self.path(case, cells, dt, lambda_sq);
        if !path.exists() {
            return Ok(None);
        }
        Snapshot::read(&path).map(Some)
    }

    /// Writes to a unique temporary file and renames it into place, so readers never
    /// see a partial snapshot.
    pub fn store(
        &self,
        case: &str,
        cells: usize,
        dt: f64,
        lambda_sq: f64,
        snap: &Snapshot,
    ) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(&self.dir).map_err(|e| HarnessError::io(&self.dir, e))?;
        let path = self.path(case, cells, dt, lambda_sq);
        let tmp = path.with_extension(format!(
            "tmp.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        snap.write(&tmp)?;
        fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}

/// Reference resolution of an error study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceSpec {
    pub cells: usize,
    pub dt: f64,
}

impl ReferenceSpec {
    pub const DESK: ReferenceSpec = ReferenceSpec { cells: 1280, dt: 1e-5 };
    pub const PAPER: ReferenceSpec = ReferenceSpec { cells: 10240, dt: 1e-6 };
}

/// Final-time state of `case` on `cells` cells with step `dt`, read from `cache` when
/// present and stored there otherwise.
pub fn compute_reference(
    case: &TestCase,
    cells: usize,
    dt: f64,
    lambda_sq: f64,
    cache: Option<&ReferenceCache>,
) -> Result<Snapshot, HarnessError> {
    if !dt_divides(dt, case.t_final) {
        return Err(HarnessError::DtNotDivisor {
            dt,
            t_final: case.t_final,
        });
    }
    let mesh = case.mesh(cells)?;
    if let Some(c) = cache {
        if let Some(snap) = c.load(&case.name, cells, dt, lambda_sq)? {
            snap.check_mesh(&mesh)?;
            return Ok(snap);
        }
    }
    let data = case.data(&mesh);
    let params = case.params(lambda_sq, dt);
    let summary = run(&mesh, &data, &params, &mut [])?;
    let snap = Snapshot::from_state(&mesh, &summary.final_state, lambda_sq);
    if let Some(c) = cache {
        c.store(&case.name, cells, dt, lambda_sq, &snap)?;
    }
    Ok(snap)
}

/// `sum_K m(K) |u_coarse(K) - u_ref(K)|` over the reference cells, with the coarse value
/// taken constant on every reference cell it contains. Returns `[N, P, Psi]`.
pub fn l1_error(
    coarse_mesh: &Mesh,
    coarse: &State,
    fine_mesh: &Mesh,
    reference: &Snapshot,
) -> Result<[f64; 3], HarnessError> {
    reference.check_mesh(fine_mesh)?;
    if (coarse.t - reference.t).abs() > 1e-9 * reference.t.abs().max(1.0) {
        return Err(HarnessError::TimeMismatch {
            coarse: coarse.t,
            reference: reference.t,
        });
    }
    let map = nesting_map(coarse_mesh, fine_mesh)?;
    let mut err = [0.0; 3];
    for (f, &c) in map.iter().enumerate() {
        let m = fine_mesh.cell(f).measure;
        err[0] += m * (coarse.n[c] - reference.n[f]).abs();
        err[1] += m * (coarse.p[c] - reference.p[f]).abs();
        err[2] += m * (coarse.psi[c] - reference.psi[f]).abs();
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builtin_case;
    use crate::mesh::{build_1d_uniform, project_nested};

    fn sample(mesh: &Mesh) -> Snapshot {
        let n: Vec<f64> = mesh.cells().iter().map(|c| 0.1 + 0.8 * c.center[0]).collect();
        let state = State {
            step: 3,
            t: 0.1,
            n: n.clone().into(),
            p: n.iter().map(|v| 1.0 - v).collect(),
            psi: n.iter().map(|v| (v * 7.0).sin() / 3.0).collect(),
        };
        Snapshot::from_state(mesh, &state, 1e-9)
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        for mesh in [
            build_1d_uniform(7, 1.0).unwrap(),
            builtin_case("case3").unwrap().mesh(4).unwrap(),
        ] {
            let snap = sample(&mesh);
            let mut buf = Vec::new();
            snap.write_to(&mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with(&format!(
                "state v1 cells={} t=0.1 lambda2=0.000000001\n",
                mesh.n_cells()
            )));
            let back = Snapshot::read_from(&buf[..], Path::new("mem")).unwrap();
            assert_eq!(back, snap);
            back.check_mesh(&mesh).unwrap();
        }
    }

    #[test]
    fn snapshot_parse_errors() {
        let bad = [
            "stat v1 cells=1 t=0 lambda2=1\n0,0.5,1,1,0\n",
            "state v1 cells=2 t=0 lambda2=1\n0,0.5,1,1,0\n",
            "state v1 cells=1 t=0 lambda2=1\n0,0.5,1,x,0\n",
            "state v1 cells=1 t=0\n0,0.5,1,1,0\n",
            "state v1 cells=1 t=0 lambda2=1\n1,0.5,1,1,0\n",
        ];
        for text in bad {
            assert!(matches!(
                Snapshot::read_from(text.as_bytes(), Path::new("x")),
                Err(HarnessError::Parse { .. })
            ));
        }
    }

    #[test]
    fn l1_error_oracles() {
        let fine = build_1d_uniform(40, 1.0).unwrap();
        let coarse = build_1d_uniform(10, 1.0).unwrap();
        let snap = sample(&fine);
        // the reference against itself
        assert_eq!(l1_error(&fine, &snap.state(0), &fine, &snap).unwrap(), [0.0; 3]);
        // a uniform shift of the reference
        let mut shifted = snap.state(0);
        shifted.n.iter_mut().for_each(|v| *v += 1e-3);
        let e = l1_error(&fine, &shifted, &fine, &snap).unwrap();
        assert!((e[0] - 1e-3).abs() < 1e-15 && e[1] == 0.0);
        // the projection of an affine field is off by |slope| h / 4 on average per cell
        let proj = State {
            step: 0,
            t: 0.1,
            n: project_nested(&coarse, &fine, &snap.n).unwrap(),
            p: project_nested(&coarse, &fine, &snap.p).unwrap(),
            psi: project_nested(&coarse, &fine, &snap.psi).unwrap(),
        };
        let e = l1_error(&coarse, &proj, &fine, &snap).unwrap();
        assert!((e[0] - 0.8 * 0.1 / 4.0).abs() < 1e-14, "{e:?}");
        let late = State { t: 0.2, ..proj.clone() };
        assert!(matches!(
            l1_error(&coarse, &late, &fine, &snap),
            Err(HarnessError::TimeMismatch { .. })
        ));
        let odd = build_1d_uniform(3, 1.0).unwrap();
        let st = State {
            n: CellField(vec![0.5; 3]),
            p: CellField(vec![0.5; 3]),
            psi: CellField(vec![0.0; 3]),
            ..proj
        };
        assert!(matches!(l1_error(&odd, &st, &fine, &snap), Err(HarnessError::Mesh(_))));
    }

    #[test]
    fn cache_hit_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::new(dir.path());
        let mut case = builtin_case("case1").unwrap();
        case.t_final = 0.01;
        let a = compute_reference(&case, 40, 1e-3, 1e-5, Some(&cache)).unwrap();
        assert!(cache.path("case1", 40, 1e-3, 1e-5).exists());
        let b = compute_reference(&case, 40, 1e-3, 1e-5, Some(&cache)).unwrap();
        let c = compute_reference(&case, 40, 1e-3, 1e-5, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(fs::read_dir(dir.path()).unwrap().count() == 1);
        assert!(matches!(
            compute_reference(&case, 40, 3e-3, 1.0, None),
            Err(HarnessError::DtNotDivisor { .. })
        ));
    }
}
