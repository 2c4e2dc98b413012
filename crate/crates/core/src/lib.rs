#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block;
pub mod error;
pub mod gibbs;
pub mod gmm;
pub mod influence;
pub mod layout;
pub mod lrvb;
pub mod mfvb;
pub mod mvn;
pub mod oracle;
pub mod special;

pub use block::BlockMatrix;
pub use error::{LrvbError, Result};
pub use layout::{pack_symmetric, unpack_symmetric, BlockId, ParamLayout};
pub use gibbs::{ess, gibbs_run, posterior_summary, Ess, GibbsChain, PosteriorSummary};
pub use gmm::{factor_covariance_blocks, hessian_blocks, random_truth, simulate, Dataset, FactorParams, GmmTruth};
pub use influence::{influence_for_fit, influence_matrix, InfluenceMatrix, Prefactor};
pub use lrvb::{lrvb_alpha, lrvb_dense, lrvb_full, lrvb_gmm, LrvbDiagnostics, LrvbResult};
pub use mfvb::{elbo, fit, fit_from, Init, SolverConfig, VariationalState};
pub use mvn::{lrvb_mvn, mfvb_mvn, mfvb_mvn_from, MvnFit, MvnTarget};
pub use oracle::{numeric_dm_dt, numeric_influence, OracleRow};
