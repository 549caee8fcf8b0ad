//! Optimal cluster-randomized designs for spatial A/B tests.
//!
//! Spatial experiments face two opposing forces: treatment interference
//! between neighboring regions favors coarse designs that treat neighbors
//! alike, while spatially correlated residuals favor fine designs that
//! treat regions independently. This crate balances the two by minimizing
//! the exact MSE of a doubly-robust ATE estimator over cluster-randomized
//! designs, using a graph-cut surrogate that a signed-Laplacian spectral
//! embedding plus k-means can optimize quickly.
//!
//! The pieces:
//!
//! - [`graph`]: region graphs over lattice grids, partitions, boundaries
//!   and cluster-touch counts.
//! - [`covariance`]: model and empirical residual covariance matrices.
//! - [`mse`]: the exact variance formula, its SC/I₁/J₁–J₃ decomposition, a
//!   brute-force oracle, and the surrogate objective.
//! - [`spectral`]: the cut pipeline and exact-MSE-plug-in selection of the
//!   cluster count.
//! - [`estimator`]: IS/DR estimators, exposure probabilities, pooled ridge
//!   outcome regression and cross-fitting.
//! - [`cgc`]: the iterative causal-graph-cut loop plus oracle and
//!   single-experiment modes.
//! - [`synth`]: synthetic environments, ATE oracles and the replication
//!   benchmark harness.
//! - [`io`]: text formats for graphs, covariances and batches.

mod bits;

pub mod cgc;
pub mod covariance;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod io;
pub mod mse;
pub mod seed;
pub mod spectral;
pub mod synth;

pub use cgc::{
    run_cgc, run_single_experiment, run_with_known_covariance, BatchSource, CgcConfig, CgcTrace,
    CovarianceMode, RoundRecord, SingleExperimentOutcome,
};
pub use covariance::{
    build_model_covariance, check_decaying, empirical_covariance, factorize_for_sampling,
    positive_part, CovModel, CovarianceMatrix, CovarianceOrigin,
};
pub use error::{Error, Result};
pub use estimator::{
    crossfit_dr, dr_estimate, exposure_indicator, exposure_probability, fit_outcome_model,
    is_estimate, residuals, Arm, ExperimentBatch, OutcomeModel, RegressionSpec,
};
pub use graph::{
    boundary_regions, build_grid, cluster_touch_count, shared_cluster_count, tiling_partition,
    Clustering, GridShape, RegionGraph,
};
pub use mse::{
    da_term, decompose, exact_variance_oracle, sigma1_squared, surrogate_general, surrogate_two,
    weight_matrix, MseBreakdown,
};
pub use spectral::{
    cut_partition, default_m_max, kmeans, laplacian, select_design, spectral_embed,
    DesignSelection, SpectralConfig,
};
pub use synth::{
    benchmark, relative_mse, BenchmarkConfig, BenchmarkReport, BenchmarkRow, CovariateLaw, Method,
    Sweep, SyntheticEnv, DEFAULT_MC_REPS,
};
