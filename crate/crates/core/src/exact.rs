//! Exact posterior by cluster-configuration enumeration.
//!
//! For a fixed slab-variance vector, conditioning on the cluster indicators
//! `c ∈ {0,1}^{N_c}` makes the model linear-Gaussian: active clusters keep
//! their columns with Gaussian priors, inactive clusters drop out (the spike
//! is marginalized by column deletion). Enumerating all `2^{N_c}`
//! configurations therefore yields the exact posterior mean and exact
//! per-cluster activity marginals. Intended for small instances and used as
//! the ground-truth oracle for the EP solver.

use crate::model::ClusterMap;
use crate::priors::SLAB_VAR_FLOOR;
use crate::{C64, CMat, Error, Result};

/// Largest cluster count accepted for enumeration.
pub const MAX_ENUM_CLUSTERS: usize = 12;

/// Exact mixture posterior over the cluster configurations.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    /// Posterior mean of `X` (`M × N`).
    pub means: CMat,
    /// Exact `p(c_l = 1 | Y)` per cluster.
    pub cluster_probs: Vec<f64>,
    /// Log marginal likelihood `log p(Y)` (with the configuration prior).
    pub log_evidence: f64,
}

/// Enumerate all cluster configurations and mix their Gaussian posteriors.
pub fn enumerate_posterior(
    y: &CMat,
    phi: &CMat,
    noise_var: f64,
    slab_vars: &[f64],
    eps: f64,
    map: &ClusterMap,
) -> Result<ExactPosterior> {
    let n_c = map.n_clusters();
    if n_c > MAX_ENUM_CLUSTERS {
        return Err(Error::TooLarge { n_clusters: n_c, max: MAX_ENUM_CLUSTERS });
    }
    if noise_var <= 0.0 {
        return Err(Error::SingularInput(format!("noise_var = {noise_var}")));
    }
    let n = map.n_ues();
    let n_ant = y.ncols();
    let tau_p = y.nrows();
    assert_eq!(phi.ncols(), n);
    assert_eq!(phi.nrows(), tau_p);
    assert_eq!(slab_vars.len(), n);

    let y_energy: f64 = y.iter().map(|z| z.norm_sqr()).sum();
    let pi = std::f64::consts::PI;

    let n_cfg = 1usize << n_c;
    let mut log_weights = vec![f64::NEG_INFINITY; n_cfg];
    let mut cond_means: Vec<Option<(Vec<usize>, CMat)>> = vec![None; n_cfg];

    for mask in 0..n_cfg {
        // configuration prior
        let mut log_prior = 0.0;
        for l in 0..n_c {
            let active = mask >> l & 1 == 1;
            log_prior += if active {
                if eps <= 0.0 { f64::NEG_INFINITY } else { eps.ln() }
            } else if eps >= 1.0 {
                f64::NEG_INFINITY
            } else {
                (1.0 - eps).ln()
            };
        }
        if log_prior == f64::NEG_INFINITY {
            continue;
        }

        let support: Vec<usize> = (0..n_c)
            .filter(|l| mask >> l & 1 == 1)
            .flat_map(|l| map.members(l).iter().copied())
            .collect();

        let log_ev = if support.is_empty() {
            -((tau_p * n_ant) as f64) * (pi * noise_var).ln() - y_energy / noise_var
        } else {
            // Evidence and posterior mean through the tau_p x tau_p observation
            // covariance C = sigma^2 I + Phi_S Gamma_S Phi_S^H.
            let k = support.len();
            let mut phi_s = CMat::zeros(tau_p, k);
            for (j, &i) in support.iter().enumerate() {
                phi_s.set_column(j, &phi.column(i));
            }
            let mut scaled = phi_s.clone(); // Phi_S Gamma_S
            for (j, &i) in support.iter().enumerate() {
                let g = slab_vars[i].max(SLAB_VAR_FLOOR);
                for t in 0..tau_p {
                    scaled[(t, j)] *= g;
                }
            }
            let mut c = &scaled * phi_s.adjoint();
            for t in 0..tau_p {
                c[(t, t)] += C64::new(noise_var, 0.0);
            }
            let chol = nalgebra::linalg::Cholesky::new(c)
                .ok_or_else(|| Error::SingularInput("observation covariance".into()))?;
            let log_det: f64 = (0..tau_p).map(|t| chol.l()[(t, t)].re.ln()).sum::<f64>() * 2.0;
            let c_inv_y = chol.solve(y);
            let quad: f64 = y
                .iter()
                .zip(c_inv_y.iter())
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            let mean_s = scaled.adjoint() * &c_inv_y; // k x M
            cond_means[mask] = Some((support, mean_s));
            -(n_ant as f64) * (tau_p as f64 * pi.ln() + log_det) - quad
        };
        log_weights[mask] = log_prior + log_ev;
    }

    // normalize in the log domain
    let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for lw in &log_weights {
        if lw.is_finite() {
            total += (lw - max_lw).exp();
        }
    }
    let log_evidence = max_lw + total.ln();

    let mut means = CMat::zeros(n, n_ant);
    let mut cluster_probs = vec![0.0; n_c];
    for mask in 0..n_cfg {
        if !log_weights[mask].is_finite() {
            continue;
        }
        let w = (log_weights[mask] - log_evidence).exp();
        for l in 0..n_c {
            if mask >> l & 1 == 1 {
                cluster_probs[l] += w;
            }
        }
        if let Some((support, mean_s)) = &cond_means[mask] {
            for (j, &i) in support.iter().enumerate() {
                for a in 0..n_ant {
                    means[(i, a)] += mean_s[(j, a)] * C64::new(w, 0.0);
                }
            }
        }
    }
    for p in &mut cluster_probs {
        *p = p.clamp(0.0, 1.0);
    }

    Ok(ExactPosterior { means: means.transpose(), cluster_probs, log_evidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_cluster_map, generate_pilots, orthonormalize_pilots, sample_channels};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_too_many_clusters() {
        let map = build_cluster_map(26, 13).unwrap();
        let y = CMat::zeros(4, 1);
        let phi = CMat::zeros(4, 26);
        assert!(matches!(
            enumerate_posterior(&y, &phi, 1.0, &vec![1.0; 26], 0.5, &map),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn single_cluster_forced_active_is_gaussian_mmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = build_cluster_map(3, 1).unwrap();
        let phi = generate_pilots(5, 3, &mut rng);
        let x = sample_channels(&[1.0; 3], 2, &mut rng);
        let y = crate::model::synthesize_received(&phi, &x, 0.2, &mut rng);
        let slab = vec![1.0; 3];
        // eps -> 1 collapses the mixture to the all-active term
        let out = enumerate_posterior(&y, &phi, 0.2, &slab, 1.0 - 1e-15, &map).unwrap();

        let mut a = (phi.adjoint() * &phi) * C64::new(5.0, 0.0);
        for i in 0..3 {
            a[(i, i)] += C64::new(1.0, 0.0);
        }
        let b = (phi.adjoint() * &y) * C64::new(5.0, 0.0);
        let mmse = (a.try_inverse().unwrap() * b).transpose();
        assert!((out.means - mmse).norm() < 1e-10);
        assert!((out.cluster_probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eps_zero_means_nothing_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = build_cluster_map(4, 2).unwrap();
        let phi = generate_pilots(4, 4, &mut rng);
        let y = sample_channels(&[1.0; 2], 4, &mut rng);
        let out = enumerate_posterior(&y, &phi, 0.5, &vec![1.0; 4], 0.0, &map).unwrap();
        assert_eq!(out.means.norm(), 0.0);
        assert!(out.cluster_probs.iter().all(|&p| p == 0.0));
    }

    // Scalar evidence-ratio check on the hand instance: N_c = 2, N = 2, M = 1,
    // orthonormal pilots, sigma^2 = 1, slab = 1, eps = 0.5, Y = (2, 0)^T.
    // Cluster 1 activity odds come out as exp(|2|^2 / 2) / 2; verified here
    // against 2-D quadrature of the scalar evidence ratio.
    #[test]
    fn scalar_evidence_ratio_instance() {
        let map = build_cluster_map(2, 2).unwrap();
        let phi = CMat::identity(2, 2);
        let mut y = CMat::zeros(2, 1);
        y[(0, 0)] = C64::new(2.0, 0.0);
        let out = enumerate_posterior(&y, &phi, 1.0, &[1.0, 1.0], 0.5, &map).unwrap();

        let odds = (4.0f64 * 0.5).exp() * 0.5;
        let expect_p1 = odds / (1.0 + odds);
        assert!((out.cluster_probs[0] - expect_p1).abs() < 1e-10);

        // quadrature of the marginal evidences Z1 = int CN(2; x, 1) CN(x; 0, 1) dx
        // and Z0 = CN(2; 0, 1)
        let pi = std::f64::consts::PI;
        let cn = |x: C64, mean: C64, var: f64| ((-(x - mean).norm_sqr() / var).exp()) / (pi * var);
        let z1 = crate::priors::tests::quad2d(
            |x| cn(C64::new(2.0, 0.0), x, 1.0) * cn(x, C64::new(0.0, 0.0), 1.0),
            10.0,
            1000,
        );
        let z0 = cn(C64::new(2.0, 0.0), C64::new(0.0, 0.0), 1.0);
        let odds_quad = z1 / z0;
        assert!((odds - odds_quad).abs() < 1e-6 * odds);

        // cluster 2 sees a zero observation; activity odds = (1/2) e^0 / 1
        let odds2 = 0.5;
        assert!((out.cluster_probs[1] - odds2 / (1.0 + odds2)).abs() < 1e-10);
    }

    #[test]
    fn mixture_weights_normalize_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = build_cluster_map(4, 2).unwrap();
        let mut phi = generate_pilots(4, 4, &mut rng);
        orthonormalize_pilots(&mut phi);
        let x = sample_channels(&[1.0; 4], 2, &mut rng);
        let y = crate::model::synthesize_received(&phi, &x, 0.3, &mut rng);
        let out = enumerate_posterior(&y, &phi, 0.3, &[1.0; 4], 0.4, &map).unwrap();
        for &p in &out.cluster_probs {
            assert!((0.0..=1.0).contains(&p));
        }

        // swap the two clusters' pilot columns; probabilities must swap
        let mut phi_sw = phi.clone();
        phi_sw.set_column(0, &phi.column(2));
        phi_sw.set_column(1, &phi.column(3));
        phi_sw.set_column(2, &phi.column(0));
        phi_sw.set_column(3, &phi.column(1));
        let sw = enumerate_posterior(&y, &phi_sw, 0.3, &[1.0; 4], 0.4, &map).unwrap();
        assert!((sw.cluster_probs[0] - out.cluster_probs[1]).abs() < 1e-10);
        assert!((sw.cluster_probs[1] - out.cluster_probs[0]).abs() < 1e-10);
    }

    #[test]
    fn spike_marginalization_matches_column_deletion() {
        // evidence with cluster 2 inactive equals the evidence of the model
        // with cluster 2's columns removed entirely
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map_full = build_cluster_map(4, 2).unwrap();
        let phi = generate_pilots(5, 4, &mut rng);
        let x = sample_channels(&[1.0; 4], 1, &mut rng);
        let y = crate::model::synthesize_received(&phi, &x, 0.4, &mut rng);

        // eps -> 0 keeps only the all-inactive configuration for cluster 2 in
        // a reduced model over cluster 1 alone
        let eps = 1e-12;
        let full = enumerate_posterior(&y, &phi, 0.4, &[1.0; 4], eps, &map_full).unwrap();

        let map_half = build_cluster_map(2, 1).unwrap();
        let mut phi_half = CMat::zeros(5, 2);
        phi_half.set_column(0, &phi.column(0));
        phi_half.set_column(1, &phi.column(1));
        let half = enumerate_posterior(&y, &phi_half, 0.4, &[1.0; 2], eps, &map_half).unwrap();

        // both dominated by the all-inactive term; the log-evidence gap is the
        // shared prior factor log(1 - eps), identical per cluster
        let diff = (full.log_evidence - 2.0 * (1.0 - eps).ln())
            - (half.log_evidence - (1.0 - eps).ln());
        assert!(diff.abs() < 1e-9, "diff {diff}");
    }

    #[test]
    fn evidence_monotone_in_signal_strength() {
        let map = build_cluster_map(1, 1).unwrap();
        let phi = CMat::identity(1, 1);
        let mut prev = 0.0;
        for k in 1..10 {
            let mut y = CMat::zeros(1, 1);
            y[(0, 0)] = C64::new(0.3 * k as f64, 0.0);
            let out = enumerate_posterior(&y, &phi, 1.0, &[1.0], 0.3, &map).unwrap();
            assert!(out.cluster_probs[0] > prev);
            prev = out.cluster_probs[0];
        }
    }
}
