//! Simulation and small-noise estimation for a two-dimensional linear
//! parabolic SPDE on the unit square with Dirichlet boundary.

// NaN-rejecting `!(x > 0.0)` guards are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coordinate;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod ou;
pub mod quadrature;
pub mod qv;
pub mod rng;
pub mod simulate;
pub mod spatial;
pub mod stats;

pub use coordinate::{
    approximate_coordinate, asymptotic_variance, contrast_v1, contrast_v2, estimate_lambda_mu_q2, estimate_lambda_q1,
    recover_mu0, recover_theta0, ApproxCoordinatePath, AsymptoticRegime, LambdaEstimate, LambdaSearch, VarianceReport,
};
pub use error::{Error, FailCode, Result};
pub use harness::{run_replicates, summarize, EstimationReport, ExperimentConfig, ReplicateRecord, ReplicateTable};
pub use model::{eigenfunction_at, eigenvalue, theta0_from_lambda, NoiseKind};
pub use model::{EigenIndex, InitialField, NoiseSpec, SpdeParams};
pub use ou::{estimate_case1, estimate_case2, simulate_ou, OuCase, OuModel};
pub use quadrature::GaussLegendre;
pub use qv::{
    build_thinned_space_grid, build_thinned_time_grid, limit_surface, z_statistic, ThinnedSpaceGrid, ThinnedTimeGrid,
};
pub use rng::{Domain, SeedPath};
pub use simulate::{
    choose_truncation, simulate_coordinate_path, simulate_dataset, CoordinatePath, GridSpec, ObservationGrid,
    SimulationPlan, SimulationSettings, TruncationPolicy,
};
pub use spatial::{contrast_u, minimize_contrast, SearchBox, SpatialContrastInput, SpatialEstimate};
