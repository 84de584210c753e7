//! Structured spike-and-slab prior primitives.
//!
//! The effective channel of UE `i` in cluster `l` follows
//! `p(x_i | c_l, γ̄_i) = (1 - c_l) δ(x_i) + c_l CN(x_i; 0, γ̄_i I_M)`,
//! and cluster indicators are Bernoulli with `p(c_l = 1) = ε`. The spike is
//! never integrated numerically; inference paths marginalize it in closed
//! form, so the log-density here returns `-inf` for a nonzero argument under
//! `c_l = 0` purely as a convention.

use nalgebra::DMatrixView;

use crate::{C64, Error, Result};
use crate::model::ClusterMap;

/// Hard floor on slab variances; keeps near-zero hyperparameters from
/// producing degenerate Gaussians.
pub const SLAB_VAR_FLOOR: f64 = 1e-12;

/// Slab variances, cluster activation probability and the cluster map.
#[derive(Debug, Clone)]
pub struct PriorParams {
    pub slab_vars: Vec<f64>,
    pub cluster_activation_prob: f64,
    pub cluster_map: ClusterMap,
}

impl PriorParams {
    pub fn new(slab_vars: Vec<f64>, eps: f64, cluster_map: ClusterMap) -> Result<Self> {
        if !(0.0 < eps && eps < 1.0) {
            return Err(Error::Config(format!("eps = {eps} outside (0, 1)")));
        }
        if slab_vars.len() != cluster_map.n_ues() {
            return Err(Error::Config("slab_vars length mismatch".into()));
        }
        let slab_vars = slab_vars.into_iter().map(|v| v.max(SLAB_VAR_FLOOR)).collect();
        Ok(Self { slab_vars, cluster_activation_prob: eps, cluster_map })
    }
}

/// Log-density of `CN(x; 0, γ̄ I_M)`: `-M log(π γ̄) - ‖x‖²/γ̄`.
pub fn slab_log_density(x: &[C64], slab_var: f64) -> Result<f64> {
    if slab_var <= 0.0 {
        return Err(Error::NonPositiveVariance(slab_var));
    }
    let m = x.len() as f64;
    let norm_sq: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    Ok(-m * (std::f64::consts::PI * slab_var).ln() - norm_sq / slab_var)
}

/// Log-pmf of the Bernoulli cluster indicator.
pub fn cluster_log_pmf(c: bool, eps: f64) -> f64 {
    if c { eps.ln() } else { (1.0 - eps).ln() }
}

/// Log-density of one cluster block under indicator `c`.
///
/// `x_cluster` is `M × L` (columns are cluster members). For `c = 0` the
/// point mass contributes log 1 = 0 at the all-zero block and `-inf`
/// elsewhere; for `c = 1` the slab terms sum over columns.
pub fn cluster_prior_log_density(
    x_cluster: DMatrixView<'_, C64>,
    c: bool,
    slab_vars: &[f64],
) -> Result<f64> {
    assert_eq!(x_cluster.ncols(), slab_vars.len());
    if !c {
        let all_zero = x_cluster.iter().all(|z| z.re == 0.0 && z.im == 0.0);
        return Ok(if all_zero { 0.0 } else { f64::NEG_INFINITY });
    }
    let mut total = 0.0;
    for (j, &var) in slab_vars.iter().enumerate() {
        let col: Vec<C64> = x_cluster.column(j).iter().copied().collect();
        total += slab_log_density(&col, var)?;
    }
    Ok(total)
}
