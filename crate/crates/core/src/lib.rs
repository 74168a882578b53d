//! Poisson space-time ARMA models with covariates.
//!
//! Linear and log-linear intensity recursions over spatial weight matrices,
//! copula-coupled simulation, constrained quasi-maximum-likelihood fitting,
//! sandwich-covariance inference and forecast metrics.

pub mod copula;
pub mod error;
pub mod estimate;
pub mod forecast;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod moments;
pub mod optim;
mod recursion;
pub mod simulate;
pub mod study;
pub mod validation;
pub mod weights;

pub use error::{Error, Result};
pub use estimate::{default_start, fit, fit_from, FitConfig, FitResult};
pub use forecast::{explained_deviance, mae, mse_params, mspe, one_step_forecast, rolling_forecast};
pub use inference::{compare_models, qic, single_param_test, wald_test, WaldResult};
pub use likelihood::{filter_intensity, info_matrices, quasi_log_lik, score, FilterState, InfoMatrices, InitStrategy};
pub use model::{
    check_identifiability, coefficient_matrices, spectral_stability_norm, stationarity_margin, stationary_mean,
    CountPanel, CovariatePanel, Delta, InterceptKind, Link, ModelSpec, ParamLayout, ParameterVector,
    StationarityCriterion,
};
pub use copula::{CopulaFamily, CopulaSpec};
pub use simulate::{generate_arma_covariate, simulate_path, ArmaCovariateConfig, CovariateShift, SimulatedPath, SimulationConfig};
pub use validation::{Issue, Severity, ValidationReport};
pub use weights::{AdjacencyList, GridSpec, WeightMatrix, WeightMatrixSet};
