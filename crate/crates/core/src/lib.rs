pub mod diagnostics;
pub mod flux;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod scheme;
