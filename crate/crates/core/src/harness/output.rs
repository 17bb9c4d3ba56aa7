//! Streaming output observers: diagnostics rows and state snapshots.

use std::io::Write;
use std::path::PathBuf;

use crate::diagnostics::{DiagnosticsRecord, DiagnosticsRecorder};
use crate::scheme::{Observer, StepContext};

use super::reference::Snapshot;

pub const DIAGNOSTICS_HEADER: &str = "n,t,entropy,production,min_N,max_N,min_P,max_P,h1_Psi,weak_bv,fp_iters";

fn diagnostics_row(r: &DiagnosticsRecord) -> [String; 11] {
    [
        r.n.to_string(),
        r.t.to_string(),
        r.entropy.to_string(),
        r.production.to_string(),
        r.min_n.to_string(),
        r.max_n.to_string(),
        r.min_p.to_string(),
        r.max_p.to_string(),
        r.h1_psi.to_string(),
        r.weak_bv_increment.to_string(),
        r.fp_iters.to_string(),
    ]
}

/// Records diagnostics and appends one CSV row per time level to `out`.
pub struct DiagnosticsWriter<W: Write> {
    pub recorder: DiagnosticsRecorder,
    out: csv::Writer<W>,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(DIAGNOSTICS_HEADER.split(','))?;
        Ok(DiagnosticsWriter {
            recorder: DiagnosticsRecorder::new(),
            out,
        })
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.recorder.records
    }
}

impl<W: Write> Observer for DiagnosticsWriter<W> {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<(), String> {
        self.recorder.observe(ctx)?;
        let rec = self.recorder.records.last().expect("recorder pushed a record");
        self.out.write_record(diagnostics_row(rec)).map_err(|e| e.to_string())?;
        self.out.flush().map_err(|e| e.to_string())
    }
}

/// Writes `state_<n>.csv` into `dir` every `every` steps and at the last step.
pub struct SnapshotWriter {
    pub dir: PathBuf,
    pub every: usize,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: impl Into<PathBuf>, every: usize) -> Self {
        SnapshotWriter {
            dir: dir.into(),
            every: every.max(1),
            written: Vec::new(),
        }
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<(), String> {
        let n = ctx.state.step;
        if !n.is_multiple_of(self.every) && n != ctx.params.n_steps() {
            return Ok(());
        }
        let path = self.dir.join(format!("state_{n:06}.csv"));
        Snapshot::from_state(ctx.mesh, ctx.state, ctx.params.lambda_sq)
            .write(&path)
            .map_err(|e| e.to_string())?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builtin_case;
    use crate::scheme::run;

    #[test]
    fn streams_one_row_per_level() {
        let mut case = builtin_case("case1").unwrap();
        case.t_final = 0.005;
        let mesh = case.mesh(20).unwrap();
        let data = case.data(&mesh);
        let params = case.params(1e-2, 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let mut diag = DiagnosticsWriter::new(Vec::new()).unwrap();
        let mut snaps = SnapshotWriter::new(dir.path(), 2);
        run(&mesh, &data, &params, &mut [&mut diag, &mut snaps]).unwrap();
        assert_eq!(diag.records().len(), 6);
        let text = String::from_utf8(diag.out.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], DIAGNOSTICS_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("0,0,") && lines[1].ends_with(",0"));
        assert!(lines[6].starts_with("5,"));
        let names: Vec<String> = snaps
            .written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            [
                "state_000000.csv",
                "state_000002.csv",
                "state_000004.csv",
                "state_000005.csv"
            ]
        );
        let last = Snapshot::read(&snaps.written[3]).unwrap();
        assert_eq!(last.n_cells(), 20);
    }
}
