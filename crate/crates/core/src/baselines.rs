//! Reference estimators: oracle MMSE, M-SBL and IRW-ℓ2,1.
//!
//! All three share the `Y = Φ Xᵀ + W` interfaces of the model module and are
//! deterministic given their inputs. The oracle MMSE is handed the true
//! support and path gains and lower-bounds the channel estimation error;
//! M-SBL is the standard multiple-measurement-vector sparse Bayesian
//! learning EM loop; IRW-ℓ2,1 is iteratively reweighted ridge regression for
//! the group-sparse mixed-norm objective.

use crate::{C64, CMat, Result};

/// Iteration and regularization knobs shared by the baselines.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BaselineConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// IRW smoothing added to the row norms in the weights.
    pub reg_epsilon: f64,
    /// IRW penalty weight; `None` selects `σ (√M + √(2 ln N))`.
    pub lambda: Option<f64>,
    /// M-SBL prune level, relative to the largest `γ`.
    pub prune_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            reg_epsilon: 1e-6,
            lambda: None,
            prune_threshold: 1e-6,
        }
    }
}

impl BaselineConfig {
    /// IRW penalty for a given noise level, unless pinned explicitly.
    pub fn irw_lambda(&self, noise_var: f64, n_antennas: usize, n_ues: usize) -> f64 {
        self.lambda.unwrap_or_else(|| {
            noise_var.sqrt() * ((n_antennas as f64).sqrt() + (2.0 * (n_ues as f64).ln()).sqrt())
        })
    }
}

/// MMSE estimate restricted to the true support:
/// `X̂_Sᵀ = (Φ_Sᴴ Φ_S + σ² diag(β_S)⁻¹)⁻¹ Φ_Sᴴ Y`, zero off the support.
pub fn oracle_mmse(
    y: &CMat,
    phi: &CMat,
    true_support: &[usize],
    path_gains: &[f64],
    noise_var: f64,
) -> CMat {
    let n = phi.ncols();
    let n_ant = y.ncols();
    let mut x = CMat::zeros(n_ant, n);
    if true_support.is_empty() {
        return x;
    }
    let k = true_support.len();
    let tau_p = phi.nrows();
    let mut phi_s = CMat::zeros(tau_p, k);
    for (j, &i) in true_support.iter().enumerate() {
        phi_s.set_column(j, &phi.column(i));
    }
    let mut a = phi_s.adjoint() * &phi_s;
    for (j, &i) in true_support.iter().enumerate() {
        a[(j, j)] += C64::new(noise_var / path_gains[i], 0.0);
    }
    let rhs = phi_s.adjoint() * y;
    let sol = a.try_inverse().expect("regularized Gram is invertible") * rhs; // k x M
    for (j, &i) in true_support.iter().enumerate() {
        for m in 0..n_ant {
            x[(m, i)] = sol[(j, m)];
        }
    }
    x
}

/// M-SBL output: posterior means, hyperparameters and diagnostics.
#[derive(Debug, Clone)]
pub struct MsblResult {
    /// Posterior mean of `X` (`M × N`).
    pub means: CMat,
    /// Row-variance hyperparameters `γ_i` (activity proxies).
    pub gammas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Marginal log-likelihood after each EM step (non-decreasing).
    pub loglik_trace: Vec<f64>,
}

/// Multiple-measurement-vector sparse Bayesian learning via EM.
///
/// Works through the `τ_p × τ_p` observation covariance
/// `C = σ² I + Φ Γ Φᴴ`, so the per-iteration cost is governed by the pilot
/// length rather than the UE count.
pub fn msbl(y: &CMat, phi: &CMat, noise_var: f64, config: &BaselineConfig) -> Result<MsblResult> {
    if noise_var <= 0.0 {
        return Err(crate::Error::SingularInput(format!("noise_var = {noise_var}")));
    }
    let n = phi.ncols();
    let tau_p = phi.nrows();
    let n_ant = y.ncols() as f64;
    let pi = std::f64::consts::PI;

    let mut gammas = vec![1.0f64; n];
    let mut means = CMat::zeros(y.ncols(), n);
    let mut loglik_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=config.max_iters {
        iterations = iter;
        // C = sigma^2 I + Phi Gamma Phi^H
        let mut scaled = phi.clone();
        for j in 0..n {
            let g = gammas[j];
            for t in 0..tau_p {
                scaled[(t, j)] *= g;
            }
        }
        let mut c = &scaled * phi.adjoint();
        for t in 0..tau_p {
            c[(t, t)] += C64::new(noise_var, 0.0);
        }
        let chol = nalgebra::linalg::Cholesky::new(c)
            .ok_or_else(|| crate::Error::SingularInput("M-SBL covariance".into()))?;
        let c_inv_y = chol.solve(y); // tau_p x M

        let log_det: f64 = (0..tau_p).map(|t| chol.l()[(t, t)].re.ln()).sum::<f64>() * 2.0;
        let quad: f64 = y.iter().zip(c_inv_y.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        loglik_trace.push(-n_ant * (tau_p as f64 * pi.ln() + log_det) - quad);

        // mu_i = gamma_i phi_i^H C^-1 Y, Sigma_ii = gamma_i - gamma_i^2 phi_i^H C^-1 phi_i
        let c_inv_phi = chol.solve(phi); // tau_p x N
        let mut new_gammas = vec![0.0f64; n];
        means = CMat::zeros(y.ncols(), n);
        for i in 0..n {
            let g = gammas[i];
            if g == 0.0 {
                continue;
            }
            let mut mu_energy = 0.0;
            for m in 0..y.ncols() {
                let dot: C64 = (0..tau_p).map(|t| phi[(t, i)].conj() * c_inv_y[(t, m)]).sum();
                let mu = dot * g;
                means[(m, i)] = mu;
                mu_energy += mu.norm_sqr();
            }
            let pcp: f64 = (0..tau_p)
                .map(|t| (phi[(t, i)].conj() * c_inv_phi[(t, i)]).re)
                .sum();
            let sigma_ii = (g - g * g * pcp).max(0.0);
            new_gammas[i] = mu_energy / n_ant + sigma_ii;
        }

        // scale-free pruning
        let max_g = new_gammas.iter().cloned().fold(0.0, f64::max);
        for g in &mut new_gammas {
            if *g < config.prune_threshold * max_g {
                *g = 0.0;
            }
        }

        let change: f64 = gammas
            .iter()
            .zip(&new_gammas)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let base = gammas.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-300);
        gammas = new_gammas;
        if change / base < config.tol {
            converged = true;
            break;
        }
    }

    Ok(MsblResult { means, gammas, iterations, converged, loglik_trace })
}

/// Iteratively reweighted ℓ2,1 minimization of
/// `‖Y − Φ Xᵀ‖_F² + λ Σ_i w_i ‖x_i‖₂`, weights `w_i = (‖x_i‖₂ + ε)⁻¹`
/// refreshed each outer iteration; each inner step is a ridge solve.
pub fn irw_l21(y: &CMat, phi: &CMat, lambda: f64, config: &BaselineConfig) -> CMat {
    assert!(lambda >= 0.0);
    let n = phi.ncols();
    let gram = phi.adjoint() * phi;
    let rhs = phi.adjoint() * y; // N x M

    let tau_p = phi.nrows();
    let mut coeffs = CMat::zeros(n, y.ncols()); // X^T
    let mut weights = vec![1.0f64; n];
    for _ in 0..config.max_iters {
        // Ridge solve (Φ^HΦ + D)⁻¹Φ^HY with D = (λ/2)·diag(w). In the
        // compressive regime the push-through identity
        // (Φ^HΦ + D)⁻¹Φ^H = D⁻¹Φ^H(I + ΦD⁻¹Φ^H)⁻¹ reduces the system from
        // N×N to τ_p×τ_p.
        let next = if lambda > 0.0 && tau_p < n {
            let mut phi_dinv = phi.clone(); // Φ D⁻¹, scaled columns
            for i in 0..n {
                let s = C64::new(1.0 / (0.5 * lambda * weights[i]), 0.0);
                for r in 0..tau_p {
                    phi_dinv[(r, i)] = phi[(r, i)] * s;
                }
            }
            let mut small = &phi_dinv * phi.adjoint(); // τ_p × τ_p
            for r in 0..tau_p {
                small[(r, r)] += C64::new(1.0, 0.0);
            }
            match small.try_inverse() {
                Some(inv) => phi_dinv.adjoint() * (inv * y),
                None => break,
            }
        } else {
            let mut a = gram.clone();
            for i in 0..n {
                a[(i, i)] += C64::new(0.5 * lambda * weights[i], 0.0);
            }
            match a.try_inverse() {
                Some(inv) => inv * &rhs,
                None => break,
            }
        };
        let change = (&next - &coeffs).norm();
        let base = coeffs.norm().max(1e-300);
        coeffs = next;
        for i in 0..n {
            let row_norm: f64 = coeffs.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            weights[i] = 1.0 / (row_norm + config.reg_epsilon);
        }
        if change / base < config.tol {
            break;
        }
    }
    coeffs.transpose()
}

/// The group-sparse objective `‖Y − Φ Xᵀ‖_F² + λ Σ_i ‖x_i‖₂`.
pub fn irw_objective(y: &CMat, phi: &CMat, x: &CMat, lambda: f64) -> f64 {
    let residual = y - phi * x.transpose();
    let penalty: f64 = (0..x.ncols())
        .map(|i| x.column(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .sum();
    residual.norm_squared() + lambda * penalty
}
