//! The finite mixture of multivariate Gaussians.

mod data;
pub mod factors;
mod hessian;

pub use data::{random_truth, simulate, Dataset, GmmTruth};
pub use factors::{
    factor_covariance_blocks, factor_mean_params, DirichletFactor, FactorParams, MvnFactor, WishartFactor,
};
pub use hessian::hessian_blocks;
pub(crate) use hessian::{half_trace_weight, mu_lambda_blocks, ComponentMeans};
