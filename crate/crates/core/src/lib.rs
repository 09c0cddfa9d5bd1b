//! Estimation of reachable sets by sublinear regression of support
//! functions: sampling of input paths, trajectory integration, empirical
//! support values, and two regressors (a max-affine QP fit and an
//! input-sublinear neural network).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod isnn;
pub mod qp;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use geometry::{
    affine_image, empirical_support, hausdorff_distance, inclusion_test, membership_test, minkowski_sum,
    union_hull, AxisBox, Ball, BoxedSupport, Direction, DirectionSet, PointCloud, SupportFunction, SupportSamples,
};
pub use isnn::{train_isnn, AdamConfig, IsnnArchitecture, IsnnModel, IsnnParams};
pub use qp::{assemble_qp, fit_support_qp, solve_qp, MaxAffineModel, QpProblem, QpSolveOptions, RegressionMode};
pub use sampling::{sample_constrained_gp_paths, GibbsOptions, GpConfig, Hyperrectangle, InputPathEnsemble};
pub use dynamics::{reach_cloud, reach_clouds_at, Bicycle, Dubins, ReachCloud, VectorField};
pub use io::{load_model, save_model, Model, Provenance};
