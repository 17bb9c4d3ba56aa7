//! The three built-in experiments.

use crate::mesh::{build_1d_uniform, build_2d_rect, BoundaryKind, BoundarySpec, BoxRegion, Mesh, Profile, Side};
use crate::scheme::{ProblemData, ProblemProfiles, SchemeParams};

use super::HarnessError;

pub const CASE_NAMES: [&str; 3] = ["case1", "case2", "case3"];

/// Doping magnitude of the PN cases.
const DOPING: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSpec {
    /// Uniform mesh of `(0, length)`, Dirichlet at both ends.
    Interval { length: f64 },
    /// Uniform `n x n` mesh of the unit square.
    UnitSquare { boundary: BoundarySpec },
}

#[derive(Clone, Debug)]
pub struct TestCase {
    pub name: String,
    pub mesh_spec: MeshSpec,
    pub profiles: ProblemProfiles,
    pub t_final: f64,
    /// `(m, M)`
    pub bounds: (f64, f64),
    pub default_cells: usize,
}

impl TestCase {
    /// `cells` is the cell count in 1D and the cells per side in 2D.
    pub fn mesh(&self, cells: usize) -> Result<Mesh, HarnessError> {
        Ok(match &self.mesh_spec {
            MeshSpec::Interval { length } => build_1d_uniform(cells, *length)?,
            MeshSpec::UnitSquare { boundary } => build_2d_rect(cells, cells, 1.0, 1.0, boundary)?,
        })
    }

    pub fn data(&self, mesh: &Mesh) -> ProblemData {
        ProblemData::from_profiles(mesh, &self.profiles)
    }

    pub fn params(&self, lambda_sq: f64, dt: f64) -> SchemeParams {
        SchemeParams::new(lambda_sq, dt, self.t_final, self.bounds.0, self.bounds.1)
    }

    pub fn has_doping(&self) -> bool {
        !matches!(self.profiles.doping, Profile::Constant(c) if c == 0.0)
    }

    pub fn dimension(&self) -> usize {
        match self.mesh_spec {
            MeshSpec::Interval { .. } => 1,
            MeshSpec::UnitSquare { .. } => 2,
        }
    }
}

pub fn builtin_case(name: &str) -> Result<TestCase, HarnessError> {
    let pn = |region: BoxRegion, inside: f64, outside: f64| {
        Profile::piecewise(outside, vec![(region, inside)]).expect("a single non-empty box")
    };
    let case = match name {
        "case1" => TestCase {
            name: name.into(),
            mesh_spec: MeshSpec::Interval { length: 1.0 },
            profiles: ProblemProfiles {
                n0: Profile::Constant(0.5),
                p0: Profile::Constant(0.5),
                nd: Profile::affine_x(0.0, 0.1, 1.0, 0.9),
                pd: Profile::affine_x(0.0, 0.1, 1.0, 0.9),
                psid: Profile::affine_x(0.0, 0.0, 1.0, 4.0),
                doping: Profile::Constant(0.0),
            },
            t_final: 0.1,
            bounds: (0.1, 0.9),
            default_cells: 160,
        },
        "case2" => {
            let left = BoxRegion::interval(0.0, 0.5);
            TestCase {
                name: name.into(),
                mesh_spec: MeshSpec::Interval { length: 1.0 },
                profiles: ProblemProfiles {
                    // (1 + C) / 2 and (1 - C) / 2
                    n0: pn(left, 0.5 * (1.0 - DOPING), 0.5 * (1.0 + DOPING)),
                    p0: pn(left, 0.5 * (1.0 + DOPING), 0.5 * (1.0 - DOPING)),
                    nd: Profile::affine_x(0.0, 0.1, 1.0, 0.9),
                    pd: Profile::affine_x(0.0, 0.9, 1.0, 0.1),
                    psid: Profile::affine_x(0.0, 0.0, 1.0, 4.0),
                    doping: pn(left, -DOPING, DOPING),
                },
                t_final: 0.1,
                bounds: (0.1, 0.9),
                default_cells: 160,
            }
        }
        "case3" => {
            let p_region = BoxRegion::rect(0.0, 0.5, 0.5, 1.0);
            let boundary = BoundarySpec::uniform(BoundaryKind::Neumann)
                .with_default(Side::Bottom, BoundaryKind::Dirichlet)
                .with_segment(Side::Top, 0.0, 0.25, BoundaryKind::Dirichlet);
            TestCase {
                name: name.into(),
                mesh_spec: MeshSpec::UnitSquare { boundary },
                profiles: ProblemProfiles {
                    n0: pn(p_region, 0.5 * (1.0 - DOPING), 0.5 * (1.0 + DOPING)),
                    p0: pn(p_region, 0.5 * (1.0 + DOPING), 0.5 * (1.0 - DOPING)),
                    // affine in y between the bottom contact and the top contact values
                    nd: Profile::affine_y(0.0, 0.9, 1.0, 0.1),
                    pd: Profile::affine_y(0.0, 0.1, 1.0, 0.9),
                    psid: Profile::affine_y(0.0, 1.1, 1.0, -1.1),
                    doping: pn(p_region, -DOPING, DOPING),
                },
                t_final: 1.0,
                bounds: (0.1, 0.9),
                default_cells: 64,
            }
        }
        other => return Err(HarnessError::UnknownCase(other.into())),
    };
    Ok(case)
}
