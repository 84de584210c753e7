//! Expectation propagation over the clustered spike-and-slab prior.
//!
//! The posterior factorizes as `f1(X) f2(X, c, γ̄) f3(c)`: the Gaussian
//! likelihood, the per-cluster spike-and-slab blocks, and the Bernoulli
//! cluster prior. The likelihood is already Gaussian and enters exactly;
//! each cluster's spike-and-slab block (with its Bernoulli odds absorbed)
//! is approximated by one Gaussian site with a scalar precision per UE,
//! shared across antennas. Sites are refined by moment matching against the
//! tilted distribution formed from per-UE cavity marginals, with damping in
//! natural-parameter space and a sequential sweep over clusters.
//!
//! The global Gaussian over the `N × M` coefficient matrix `Ξ = Xᵀ` has a
//! shared `N × N` covariance across antennas (all sites are per-UE scalars),
//! so one Cholesky factorization per sweep plus rank-`L` Woodbury updates
//! per cluster carry the whole schedule.

use nalgebra::DMatrix;

use crate::model::ClusterMap;
use crate::priors::SLAB_VAR_FLOOR;
use crate::{C64, CMat, Error, Result};

/// Relative mean change below which the fixed-γ̄ warm-up is considered
/// stabilized and EM updates of the slab variances may begin.
const SLAB_WARMUP_TOL: f64 = 1e-3;

/// Bounds the cluster responsibility away from {0,1} inside site updates so
/// saturated clusters remain revisable across sweeps.
const R_CLAMP: f64 = 1e-3;

/// Sweeps between full refactorizations of the global Gaussian; in between,
/// incremental Woodbury updates carry the covariance and mean forward.
const REFACTOR_EVERY: usize = 5;

/// EM slab variances below this fraction of the strongest member of their
/// cluster are snapped to the floor (relative prune, as in M-SBL).
const SLAB_PRUNE_FRAC: f64 = 0.1;

/// EP solver knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Weight on the freshly matched site in the convex combination.
    pub damping: f64,
    /// Relative Frobenius change of the posterior mean below which the
    /// solve stops.
    pub tol: f64,
    /// Per-antenna energy threshold multiplier for support detection.
    pub detection_threshold: f64,
    /// Re-estimate the slab variances (EM-style) after each sweep.
    pub update_slab_vars: bool,
    pub slab_var_init: f64,
    /// Cluster activation probability; 1.0 forces every cluster active.
    pub eps: f64,
    /// Floor on site variances (caps site precisions at its inverse).
    pub min_site_var: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            damping: 0.7,
            tol: 1e-6,
            detection_threshold: 0.5,
            update_slab_vars: true,
            slab_var_init: 1.0,
            eps: 0.1,
            min_site_var: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(0.0 < self.damping && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if self.tol <= 0.0 || self.detection_threshold <= 0.0 {
            return Err(Error::Config("tol and detection_threshold must be positive".into()));
        }
        if !(0.0 < self.eps && self.eps <= 1.0) {
            return Err(Error::Config(format!("eps {} outside (0, 1]", self.eps)));
        }
        if self.slab_var_init <= 0.0 || self.min_site_var <= 0.0 {
            return Err(Error::Config("slab_var_init and min_site_var must be positive".into()));
        }
        Ok(())
    }
}

/// The exact Gaussian site for the likelihood factor, in natural parameters.
#[derive(Debug, Clone)]
pub struct LikelihoodSite {
    /// `Φᴴ Φ / σ²` (`N × N`).
    pub precision: CMat,
    /// `Φᴴ Y / σ²` (`N × M`).
    pub shift: CMat,
}

/// Natural parameters of the `f1` likelihood site. Exact; computed once.
pub fn likelihood_site(y: &CMat, phi: &CMat, noise_var: f64) -> Result<LikelihoodSite> {
    if noise_var <= 0.0 {
        return Err(Error::SingularInput(format!("noise_var = {noise_var}")));
    }
    let scale = C64::new(1.0 / noise_var, 0.0);
    let precision = (phi.adjoint() * phi) * scale;
    let shift = (phi.adjoint() * y) * scale;
    Ok(LikelihoodSite { precision, shift })
}

/// Aggregate spike-and-slab sites: per-UE scalar precisions shared across
/// antennas plus `N × M` mean shifts.
#[derive(Debug, Clone)]
pub struct GaussianSite {
    pub precisions: Vec<f64>,
    pub mean_shifts: CMat,
}

/// Outcome of one cluster site refinement.
#[derive(Debug, Clone)]
pub struct SiteUpdate {
    /// Damped, clipped site precisions for the cluster members.
    pub precisions: Vec<f64>,
    /// Damped site mean shifts (`L × M`).
    pub shifts: CMat,
    /// Posterior slab responsibility `r` for the cluster.
    pub activity_prob: f64,
    /// Moments of the tilted marginals (before conversion to a site).
    pub tilted_means: CMat,
    pub tilted_vars: Vec<f64>,
}

/// Refine one cluster's site by moment matching against the tilted
/// distribution.
///
/// `cavity_means` is `L × M` (rows are cluster members), `cavity_vars` the
/// per-UE scalar cavity variances. The tilted distribution is the two-point
/// mixture over the cluster indicator: spike (all member columns zero) vs.
/// slab (per-UE Gaussian with variance `slab_vars[i]`), with mixture odds
/// `ε/(1-ε)` times the product of per-UE evidence ratios. Matched moments
/// are converted to natural parameters, damped against the old site, and
/// negative precisions are clipped to a vacuous site.
#[allow(clippy::too_many_arguments)]
pub fn spike_slab_site_update(
    cavity_means: &CMat,
    cavity_vars: &[f64],
    slab_vars: &[f64],
    eps: f64,
    damping: f64,
    old_precisions: &[f64],
    old_shifts: &CMat,
    min_site_var: f64,
) -> SiteUpdate {
    let l = cavity_vars.len();
    let m = cavity_means.ncols();
    debug_assert_eq!(cavity_means.nrows(), l);

    // Slab-component conditionals per member and the mixture log-odds.
    let mut slab_means = CMat::zeros(l, m);
    let mut slab_vars_post = vec![0.0; l];
    let mut logit = if eps >= 1.0 {
        f64::INFINITY
    } else {
        (eps / (1.0 - eps)).ln()
    };
    for i in 0..l {
        let v = cavity_vars[i];
        let g = slab_vars[i];
        let shrink = g / (v + g);
        for a in 0..m {
            slab_means[(i, a)] = cavity_means[(i, a)] * shrink;
        }
        slab_vars_post[i] = v * shrink;
        let energy: f64 = cavity_means.row(i).iter().map(|z| z.norm_sqr()).sum();
        // log Z_slab - log Z_spike for this member
        logit += m as f64 * (v / (v + g)).ln() + energy * (1.0 / v - 1.0 / (v + g));
    }
    let r = if logit.is_infinite() {
        if logit > 0.0 { 1.0 } else { 0.0 }
    } else {
        1.0 / (1.0 + (-logit).exp())
    };
    // Keep the responsibility soft while ε is a genuine mixture: a saturated
    // r makes the site update idempotent (infinite or prior-matched precision
    // targets), freezing the sweep at whatever the first pass decided. A small
    // clamp keeps sites revisable in later sweeps. ε=1 (or 0) bypasses the
    // clamp so the fully-Gaussian case stays exact.
    let r_site = if eps >= 1.0 || eps <= 0.0 { r } else { r.clamp(R_CLAMP, 1.0 - R_CLAMP) };

    let mut tilted_means = CMat::zeros(l, m);
    let mut tilted_vars = vec![0.0; l];
    let mut precisions = vec![0.0; l];
    let mut shifts = CMat::zeros(l, m);
    for i in 0..l {
        let v = cavity_vars[i];
        let g_energy: f64 = slab_means.row(i).iter().map(|z| z.norm_sqr()).sum();
        let spread = g_energy / m as f64;
        let tv = r_site * slab_vars_post[i] + r_site * (1.0 - r_site) * spread;
        for a in 0..m {
            tilted_means[(i, a)] = slab_means[(i, a)] * C64::new(r_site, 0.0);
        }
        tilted_vars[i] = tv;

        // Site natural parameters; r/tv stays finite as r -> 0.
        let prec_new = if tv > 0.0 { 1.0 / tv - 1.0 / v } else { f64::INFINITY };
        let shift_scale = 1.0 / (slab_vars_post[i] + (1.0 - r_site) * spread);
        let mut prec = damping * prec_new + (1.0 - damping) * old_precisions[i];
        let mut row = Vec::with_capacity(m);
        for a in 0..m {
            let s_new = slab_means[(i, a)] * C64::new(shift_scale, 0.0)
                - cavity_means[(i, a)] * C64::new(1.0 / v, 0.0);
            row.push(s_new * C64::new(damping, 0.0) + old_shifts[(i, a)] * C64::new(1.0 - damping, 0.0));
        }
        if prec < 0.0 {
            // vacuous in this direction
            prec = 0.0;
            row.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        }
        let cap = 1.0 / min_site_var;
        if prec > cap {
            prec = cap;
        }
        precisions[i] = prec;
        for a in 0..m {
            shifts[(i, a)] = row[a];
        }
    }

    SiteUpdate { precisions, shifts, activity_prob: r, tilted_means, tilted_vars }
}

/// Posterior channel estimates, cluster activity probabilities and
/// hyperparameter estimates from one EP solve.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// Posterior mean of `X` (`M × N`).
    pub means: CMat,
    /// Per-UE marginal posterior variance, shared across antennas.
    pub variances: Vec<f64>,
    /// Posterior `p(c_l = 1 | Y)` per cluster.
    pub cluster_probs: Vec<f64>,
    /// Estimated slab variances `γ̄_i`.
    pub slab_vars: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Cluster updates skipped due to degenerate (non-positive) cavities.
    pub degenerate_skips: usize,
}

/// EM-style point update of the slab variances:
/// `γ̄_i ← max(floor, ‖μ_i‖²/M + v_i)`.
pub fn update_slab_vars(summary: &PosteriorSummary, floor: f64) -> Vec<f64> {
    let m = summary.means.nrows() as f64;
    (0..summary.means.ncols())
        .map(|i| {
            let energy: f64 = summary.means.column(i).iter().map(|z| z.norm_sqr()).sum();
            (energy / m + summary.variances[i]).max(floor)
        })
        .collect()
}

/// Run the EP solve with all slab variances initialized to
/// `config.slab_var_init`.
pub fn ep_infer(
    y: &CMat,
    phi: &CMat,
    noise_var: f64,
    map: &ClusterMap,
    config: &SolverConfig,
) -> Result<PosteriorSummary> {
    let init = vec![config.slab_var_init; map.n_ues()];
    ep_infer_with(y, phi, noise_var, map, config, &init)
}

/// Run the EP solve with explicit initial slab variances (kept fixed when
/// `config.update_slab_vars` is false).
pub fn ep_infer_with(
    y: &CMat,
    phi: &CMat,
    noise_var: f64,
    map: &ClusterMap,
    config: &SolverConfig,
    initial_slab_vars: &[f64],
) -> Result<PosteriorSummary> {
    config.validate()?;
    let n = map.n_ues();
    let n_ant = y.ncols();
    if phi.ncols() != n || phi.nrows() != y.nrows() || initial_slab_vars.len() != n {
        return Err(Error::Config("dimension mismatch in ep_infer".into()));
    }
    let lik = likelihood_site(y, phi, noise_var)?;

    let mut slab_vars: Vec<f64> = initial_slab_vars.iter().map(|&v| v.max(SLAB_VAR_FLOOR)).collect();
    // Prior-matched initialization: sites start at the slab precision rather
    // than fully vacuous, so the first global Gaussian is proper even in the
    // compressive regime (τ_p < N, where Φᴴ Φ is rank deficient).
    let mut site = GaussianSite {
        precisions: slab_vars.iter().map(|&g| 1.0 / g).collect(),
        mean_shifts: CMat::zeros(n, n_ant),
    };
    let mut cluster_probs = vec![config.eps.min(1.0); map.n_clusters()];

    let mut coeffs = CMat::zeros(n, n_ant); // Ξ = Xᵀ, posterior mean
    let mut cov = CMat::zeros(n, n);
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate_skips = 0usize;
    let mut slab_phase = false;

    for iter in 1..=config.max_iters {
        iterations = iter;
        // Refactor the global Gaussian from scratch periodically; between
        // refactors the rank-L Woodbury updates keep (cov, coeffs) in sync
        // at a fraction of the O(N³) factorization cost.
        if (iter - 1) % REFACTOR_EVERY == 0 {
            let mut a = lik.precision.clone();
            for i in 0..n {
                a[(i, i)] += C64::new(site.precisions[i], 0.0);
            }
            cov = match cholesky_inverse(&a) {
                Some(c) => c,
                None => {
                    // jittered retry; sites clipped to zero can leave A singular
                    for i in 0..n {
                        a[(i, i)] += C64::new(1e-10, 0.0);
                    }
                    cholesky_inverse(&a)
                        .ok_or_else(|| Error::SingularInput("EP global precision".into()))?
                }
            };
            let shifted = &lik.shift + &site.mean_shifts;
            coeffs = &cov * &shifted;
        }
        let prev = coeffs.clone();

        for (l, members) in map.iter().enumerate() {
            let lm = members.len();
            // Per-UE cavity marginals.
            let mut cavity_vars = vec![0.0; lm];
            let mut cavity_means = CMat::zeros(lm, n_ant);
            let mut degenerate = false;
            for (k, &i) in members.iter().enumerate() {
                let d = cov[(i, i)].re;
                let cav_prec = 1.0 / d - site.precisions[i];
                if !(d > 0.0) || cav_prec <= 1e-12 {
                    degenerate = true;
                    break;
                }
                let v = 1.0 / cav_prec;
                cavity_vars[k] = v;
                for a_idx in 0..n_ant {
                    let shift = coeffs[(i, a_idx)] * C64::new(1.0 / d, 0.0)
                        - site.mean_shifts[(i, a_idx)];
                    cavity_means[(k, a_idx)] = shift * C64::new(v, 0.0);
                }
            }
            if degenerate {
                degenerate_skips += 1;
                continue;
            }

            let old_prec: Vec<f64> = members.iter().map(|&i| site.precisions[i]).collect();
            let mut old_shifts = CMat::zeros(lm, n_ant);
            for (k, &i) in members.iter().enumerate() {
                for a_idx in 0..n_ant {
                    old_shifts[(k, a_idx)] = site.mean_shifts[(i, a_idx)];
                }
            }
            let member_slabs: Vec<f64> = members.iter().map(|&i| slab_vars[i]).collect();
            let upd = spike_slab_site_update(
                &cavity_means,
                &cavity_vars,
                &member_slabs,
                config.eps,
                config.damping,
                &old_prec,
                &old_shifts,
                config.min_site_var,
            );

            // Rank-L Woodbury refresh of the shared covariance and mean.
            let delta: Vec<f64> = (0..lm).map(|k| upd.precisions[k] - old_prec[k]).collect();
            let mut u = CMat::zeros(n, lm);
            for (k, &i) in members.iter().enumerate() {
                u.set_column(k, &cov.column(i));
            }
            let mut scc = CMat::zeros(lm, lm);
            for (k, &i) in members.iter().enumerate() {
                for (k2, &j) in members.iter().enumerate() {
                    scc[(k, k2)] = cov[(i, j)];
                }
            }
            let mut core = CMat::identity(lm, lm);
            for k in 0..lm {
                for k2 in 0..lm {
                    core[(k, k2)] += scc[(k, k2)] * C64::new(delta[k2], 0.0);
                }
            }
            let core_inv = match core.try_inverse() {
                Some(inv) => inv,
                None => {
                    degenerate_skips += 1;
                    continue;
                }
            };
            let mut b = DMatrix::zeros(lm, lm); // B = diag(delta) * core_inv
            for k in 0..lm {
                for k2 in 0..lm {
                    b[(k, k2)] = C64::new(delta[k], 0.0) * core_inv[(k, k2)];
                }
            }
            let ub = &u * &b;
            let mut xi_c = CMat::zeros(lm, n_ant);
            for (k, &i) in members.iter().enumerate() {
                for a_idx in 0..n_ant {
                    xi_c[(k, a_idx)] = coeffs[(i, a_idx)];
                }
            }
            let mut dshift = CMat::zeros(lm, n_ant);
            for k in 0..lm {
                for a_idx in 0..n_ant {
                    dshift[(k, a_idx)] = upd.shifts[(k, a_idx)] - old_shifts[(k, a_idx)];
                }
            }
            let u_new = &u - &ub * &scc;
            coeffs -= &ub * &xi_c;
            coeffs += &u_new * &dshift;
            cov -= &ub * u.adjoint();

            for (k, &i) in members.iter().enumerate() {
                site.precisions[i] = upd.precisions[k];
                for a_idx in 0..n_ant {
                    site.mean_shifts[(i, a_idx)] = upd.shifts[(k, a_idx)];
                }
            }
            cluster_probs[l] = upd.activity_prob.clamp(0.0, 1.0);
        }

        let diff = (&coeffs - &prev).norm();
        let base = prev.norm().max(1e-300);
        let rel = diff / base;

        // EM on the slab variances, but only once the fixed-γ̄ sweeps have
        // nearly stabilized: updating γ̄ from a transient posterior collapses
        // the slab for still-undetected active UEs and locks in a bad fixed
        // point. The update itself is damped for the same reason.
        let mut slab_rel = 0.0f64;
        if config.update_slab_vars && iter > 2 && (slab_phase || rel < SLAB_WARMUP_TOL) {
            slab_phase = true;
            let m = n_ant as f64;
            let stats: Vec<f64> = (0..n)
                .map(|i| {
                    let energy: f64 = coeffs.row(i).iter().map(|z| z.norm_sqr()).sum();
                    (energy / m + cov[(i, i)].re.max(0.0)).max(SLAB_VAR_FLOOR)
                })
                .collect();
            // Relative within-cluster pruning: the plain EM fixed point keeps
            // a small nonzero γ̄ for inactive members of an active cluster
            // (residual interference sustains it); members far below their
            // cluster's strongest slab are snapped to the floor, like M-SBL's
            // relative prune.
            for members in map.iter() {
                let mx = members.iter().map(|&i| stats[i]).fold(0.0f64, f64::max);
                let cut = SLAB_PRUNE_FRAC * mx;
                for &i in members {
                    if stats[i] < cut {
                        slab_vars[i] = SLAB_VAR_FLOOR;
                    } else {
                        slab_rel = slab_rel
                            .max((stats[i] - slab_vars[i]).abs() / slab_vars[i].max(1e-300));
                        slab_vars[i] = stats[i];
                    }
                }
            }
        }

        let slab_settled = !config.update_slab_vars || (slab_phase && slab_rel < 1e-3);
        if rel < config.tol && slab_settled {
            converged = true;
            break;
        }
    }

    let variances: Vec<f64> = (0..n).map(|i| cov[(i, i)].re.max(0.0)).collect();
    Ok(PosteriorSummary {
        means: coeffs.transpose(),
        variances,
        cluster_probs,
        slab_vars,
        iterations,
        converged,
        degenerate_skips,
    })
}

/// Active-UE decision: the owning cluster is likely active and the estimated
/// per-antenna energy clears `threshold · σ²`.
pub fn detect_support(
    summary: &PosteriorSummary,
    map: &ClusterMap,
    threshold: f64,
    noise_var: f64,
) -> std::collections::BTreeSet<usize> {
    let m = summary.means.nrows() as f64;
    let energies: Vec<f64> = (0..summary.means.ncols())
        .map(|i| summary.means.column(i).iter().map(|z| z.norm_sqr()).sum::<f64>() / m)
        .collect();
    // Relative floor: keeps numerical leakage from counting as a detection
    // once σ² (and with it the absolute gate) becomes vanishingly small.
    let floor = 1e-6 * energies.iter().cloned().fold(0.0f64, f64::max);
    (0..summary.means.ncols())
        .filter(|&i| {
            summary.cluster_probs[map.cluster_of(i)] > 0.5
                && energies[i] > (threshold * noise_var).max(floor)
        })
        .collect()
}

fn cholesky_inverse(a: &CMat) -> Option<CMat> {
    nalgebra::linalg::Cholesky::new(a.clone()).map(|c| c.inverse())
}
