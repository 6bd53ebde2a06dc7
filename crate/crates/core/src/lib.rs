//! Interpolation of sparse, scattered time series with
//! trivariate B-splines.
//!
//! The pipeline turns station samples inside a border polygon into a
//! "dynamic surface" `M(u, v, t)` that reproduces every station reading
//! exactly while approximating a Kriging-densified grid elsewhere:
//!
//! 1. [`border`]: pick high-curvature feature points of the border.
//! 2. [`meshparam`]: constrained Delaunay mesh, mean value parametrization
//!    onto the unit square, orientation-safe parameter merging.
//! 3. [`kriging`]: ordinary Kriging onto the merged parameter grid.
//! 4. [`kpi`]: equality-constrained curve fits lofted along `u`, `v`, `t`.
//! 5. [`pipeline`]: ingestion, orchestration, persistence, sampling.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod border;
pub mod bspline;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kpi;
pub mod kriging;
pub mod linalg;
pub mod meshparam;
pub mod pipeline;

pub use bspline::{averaging_knots, BSplineCurve, BSplineVolume, KnotVector};
pub use error::{Error, Result};
pub use exec::Execution;
