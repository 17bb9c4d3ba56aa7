//! Run configuration: `key = value` lines under `[problem]`, `[scheme]` and `[output]`.

use std::path::{Path, PathBuf};

use ini::Ini;

use crate::mesh::{load_triangle_mesh, Mesh};
use crate::scheme::{Mu, ProblemData, SchemeParams};

use super::cases::{builtin_case, TestCase};
use super::HarnessError;

/// Keys accepted in each section.
const SCHEMA: [(&str, &[&str]); 3] = [
    ("problem", &["case", "lambda2", "t_final", "cells", "mesh_file"]),
    ("scheme", &["dt", "mu", "fp_tol", "fp_max_iter"]),
    ("output", &["out_dir"]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub case: String,
    pub lambda2: f64,
    pub dt: f64,
    /// Defaults to the case's final time.
    pub t_final: Option<f64>,
    /// Cells (1D) or cells per side (2D); defaults to the case's resolution.
    pub cells: Option<usize>,
    /// Triangle mesh replacing the built-in mesh.
    pub mesh_file: Option<PathBuf>,
    pub mu: Option<f64>,
    pub fp_tol: Option<f64>,
    pub fp_max_iter: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: "case1".into(),
            lambda2: 1.0,
            dt: 1e-3,
            t_final: None,
            cells: None,
            mesh_file: None,
            mu: None,
            fp_tol: None,
            fp_max_iter: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    /// Parses config text on top of the defaults. Relative `mesh_file` and `out_dir`
    /// paths are kept as written.
    pub fn parse(text: &str, path: &Path) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: e.line,
            message: e.msg.into_owned(),
        })?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let keys = match section {
                None if props.is_empty() => continue,
                None => return Err(HarnessError::Config("keys must appear under a section".into())),
                Some(s) => SCHEMA
                    .iter()
                    .find(|(name, _)| *name == s)
                    .map(|(_, keys)| *keys)
                    .ok_or_else(|| HarnessError::Config(format!("unknown section [{s}]")))?,
            };
            for (k, v) in props.iter() {
                if !keys.contains(&k) {
                    return Err(HarnessError::Config(format!(
                        "unknown key {k:?} in [{}]",
                        section.unwrap_or_default()
                    )));
                }
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        match key {
            "case" => self.case = v.trim().to_string(),
            "lambda2" => self.lambda2 = value(key, v)?,
            "dt" => self.dt = value(key, v)?,
            "t_final" => self.t_final = Some(value(key, v)?),
            "cells" => self.cells = Some(value(key, v)?),
            "mesh_file" => self.mesh_file = Some(PathBuf::from(v.trim())),
            "mu" => self.mu = Some(value(key, v)?),
            "fp_tol" => self.fp_tol = Some(value(key, v)?),
            "fp_max_iter" => self.fp_max_iter = Some(value(key, v)?),
            "out_dir" => self.out_dir = PathBuf::from(v.trim()),
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn test_case(&self) -> Result<TestCase, HarnessError> {
        let mut case = builtin_case(&self.case)?;
        if let Some(t) = self.t_final {
            case.t_final = t;
        }
        if self.lambda2 == 0.0 && case.has_doping() {
            return Err(HarnessError::Config(format!(
                "{} has doping, which the lambda = 0 scheme does not support; use lambda2 = 1e-12",
                case.name
            )));
        }
        Ok(case)
    }

    pub fn mesh(&self, case: &TestCase) -> Result<Mesh, HarnessError> {
        match &self.mesh_file {
            Some(p) => Ok(load_triangle_mesh(p)?),
            None => case.mesh(self.cells.unwrap_or(case.default_cells)),
        }
    }

    pub fn params(&self, case: &TestCase) -> SchemeParams {
        let mut p = case.params(self.lambda2, self.dt);
        if let Some(mu) = self.mu {
            p.mu = Mu::Value(mu);
        }
        if let Some(tol) = self.fp_tol {
            p.fp_tol = tol;
        }
        if let Some(it) = self.fp_max_iter {
            p.fp_max_iter = it;
        }
        p
    }

    /// Case, mesh, data and validated parameters of the run.
    pub fn build(&self) -> Result<(TestCase, Mesh, ProblemData, SchemeParams), HarnessError> {
        let case = self.test_case()?;
        let mesh = self.mesh(&case)?;
        let data = case.data(&mesh);
        let params = self.params(&case);
        params.validate()?;
        data.validate(&mesh, &params)?;
        Ok((case, mesh, data, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config() {
        let text = "\
; comment
[problem]
case = case2
lambda2 = 1e-7
t_final = 0.05
cells = 80

[scheme]
dt = 5e-3
mu = 0.01
fp_tol = 1e-10
fp_max_iter = 50

[output]
out_dir = results/run1
";
        let c = RunConfig::parse(text, Path::new("a.cfg")).unwrap();
        assert_eq!(
            c,
            RunConfig {
                case: "case2".into(),
                lambda2: 1e-7,
                dt: 5e-3,
                t_final: Some(0.05),
                cells: Some(80),
                mesh_file: None,
                mu: Some(0.01),
                fp_tol: Some(1e-10),
                fp_max_iter: Some(50),
                out_dir: "results/run1".into(),
            }
        );
        let (case, mesh, _, params) = c.build().unwrap();
        assert_eq!((case.t_final, mesh.n_cells(), params.n_steps()), (0.05, 80, 10));
        assert_eq!(params.mu, Mu::Value(0.01));
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("x");
        assert!(matches!(
            RunConfig::parse("[problem]\nfoo = 1\n", p),
            Err(HarnessError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[scheme]\ncase = case1\n", p),
            Err(HarnessError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[other]\ndt = 1\n", p),
            Err(HarnessError::Config(_))
        ));
        assert!(matches!(RunConfig::parse("dt = 1\n", p), Err(HarnessError::Config(_))));
        assert!(matches!(
            RunConfig::parse("[scheme]\ndt = fast\n", p),
            Err(HarnessError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[scheme\ndt = 1\n", p),
            Err(HarnessError::Parse { .. })
        ));
        let c = RunConfig::parse("[problem]\ncase = case2\nlambda2 = 0\n", p).unwrap();
        assert!(matches!(c.build(), Err(HarnessError::Config(_))));
        let c = RunConfig::parse("[problem]\ncase = case9\n", p).unwrap();
        assert!(matches!(c.build(), Err(HarnessError::UnknownCase(_))));
    }

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(RunConfig::parse("", Path::new("x")).unwrap(), RunConfig::default());
    }
}
