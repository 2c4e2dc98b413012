//! Finite-difference derivatives of refitted variational optima. These use
//! only the solver, never the analytic `V`, `H` or LRVB code paths.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};
use crate::gmm::Dataset;
use crate::mfvb::{fit_from, SolverConfig, VariationalState};

/// Refits run at this fraction of the base tolerance.
pub const REFIT_TOL_FACTOR: f64 = 1e-2;

/// Below this the max-change criterion sits at the rounding floor of `m`.
pub const MIN_REFIT_TOL: f64 = 1e-13;

/// Default central-difference step for a coordinate of typical size `scale`.
pub fn default_step(scale: f64) -> f64 {
    1e-4 * (1.0 + scale.abs())
}

fn refit(base: &VariationalState, data: &Dataset, cfg: &SolverConfig, side: &str) -> Result<VariationalState> {
    let st = fit_from(base, data, cfg)?;
    if !st.converged {
        return Err(LrvbError::Unconverged {
            what: format!("refit with {side}"),
            iterations: st.iterations,
            max_change: st.max_change,
        });
    }
    Ok(st)
}

fn tightened(cfg: &SolverConfig) -> SolverConfig {
    let mut c = cfg.clone();
    c.tol = (cfg.tol * REFIT_TOL_FACTOR).max(MIN_REFIT_TOL);
    c
}

/// Central difference of the full mean-parameter vector with respect to
/// the perturbation `t_i`, warm-started from `base`.
pub fn numeric_dm_dt(data: &Dataset, cfg: &SolverConfig, base: &VariationalState, i: usize, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(LrvbError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    if i >= base.layout.alpha_dim() {
        return Err(LrvbError::InvalidConfig(format!("index {i} is not an α statistic")));
    }
    let side = |sign: f64| -> Result<DVector<f64>> {
        let mut c = tightened(cfg);
        *c.t.entry(i).or_insert(0.0) += sign * h;
        Ok(refit(base, data, &c, &format!("t[{i}] {} {h:e}", if sign > 0.0 { "+" } else { "-" }))?.m)
    };
    Ok((side(1.0)? - side(-1.0)?) / (2.0 * h))
}

/// Central difference of the α means with respect to data value `x_{n,p}`.
pub fn numeric_influence(
    data: &Dataset,
    cfg: &SolverConfig,
    base: &VariationalState,
    n: usize,
    p: usize,
    h: f64,
) -> Result<DVector<f64>> {
    if n >= data.n() || p >= data.p() {
        return Err(LrvbError::InvalidConfig(format!("x[{n}][{p}] is outside the data")));
    }
    if !(h > 0.0) {
        return Err(LrvbError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let c = tightened(cfg);
    let side = |sign: f64| -> Result<DVector<f64>> {
        let perturbed = data.perturbed(n, p, sign * h);
        let st = refit(base, &perturbed, &c, &format!("x[{n}][{p}] {} {h:e}", if sign > 0.0 { "+" } else { "-" }))?;
        Ok(st.alpha_means())
    };
    Ok((side(1.0)? - side(-1.0)?) / (2.0 * h))
}

/// One analytic-vs-numeric comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub index: String,
    pub lrvb_value: f64,
    pub oracle_value: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl OracleRow {
    pub fn new(index: impl Into<String>, lrvb_value: f64, oracle_value: f64) -> Self {
        let abs_err = (lrvb_value - oracle_value).abs();
        let rel_err = if oracle_value != 0.0 { abs_err / oracle_value.abs() } else { abs_err };
        Self {
            index: index.into(),
            lrvb_value,
            oracle_value,
            abs_err,
            rel_err,
        }
    }

    /// Passes if within `abs` absolutely or `rel` relatively.
    pub fn within(&self, abs: f64, rel: f64) -> bool {
        self.abs_err <= abs || self.rel_err <= rel
    }
}
