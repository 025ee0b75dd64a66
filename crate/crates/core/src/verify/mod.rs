//! Independent oracles used to check the truncation code: exact linear
//! CCD, densely sampled curved CCD, a brute-force small QP, random scene
//! generators, and the random-triangle benchmark harness.
//!
//! The oracles never call into the truncation paths they check.

pub mod bench;
pub mod ccd;
pub mod qp;
pub mod random;
pub mod sampled;
pub mod suites;

use thiserror::Error;

pub use bench::{run_random_triangle_benchmark, BenchmarkParams, BenchmarkStats, DeformKind, RatioStats};
pub use ccd::{ccd_linear, ccd_linear_with_tets, ccd_path, CcdHit, CcdReport};
pub use qp::qp_oracle;
pub use sampled::ccd_sampled_rigid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("too many half-spaces for the brute-force QP: {0}")]
    TooManyConstraints(usize),
    #[error("half-space set is infeasible")]
    Infeasible,
}
