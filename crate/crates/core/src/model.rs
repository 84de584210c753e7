//! Synthetic uplink scenario generation.
//!
//! One scenario draw produces the received pilot signal `Y = Φ Xᵀ + W`:
//! unit-norm pilot columns `φ_i ∈ C^{τ_p}`, i.i.d. Rayleigh channels
//! `h_i ~ CN(0, β_i I_M)`, a clustered activity pattern `(c, γ)` and the
//! effective channels `x_i = γ_i h_i`. UE indices are 0-based throughout.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{C64, CMat, Error, Result};

/// Partition of the `N` UE indices into `N_c` equal-size clusters.
///
/// Clusters are contiguous index blocks: cluster `l` holds
/// `{l·L, ..., (l+1)·L - 1}` with `L = N / N_c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    n_ues: usize,
    n_clusters: usize,
    members: Vec<Vec<usize>>,
    cluster_of: Vec<usize>,
}

impl ClusterMap {
    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// UEs per cluster (`L`).
    pub fn cluster_size(&self) -> usize {
        self.n_ues / self.n_clusters
    }

    /// Member indices of cluster `l`.
    pub fn members(&self, l: usize) -> &[usize] {
        &self.members[l]
    }

    /// Cluster index owning UE `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.members.iter().map(|m| m.as_slice())
    }
}

/// Build the contiguous equal-size partition.
pub fn build_cluster_map(n_ues: usize, n_clusters: usize) -> Result<ClusterMap> {
    if n_ues == 0 || n_clusters == 0 || n_ues % n_clusters != 0 {
        return Err(Error::NonDivisible { n_ues, n_clusters });
    }
    let l = n_ues / n_clusters;
    let members: Vec<Vec<usize>> = (0..n_clusters)
        .map(|c| (c * l..(c + 1) * l).collect())
        .collect();
    let mut cluster_of = vec![0usize; n_ues];
    for (c, m) in members.iter().enumerate() {
        for &i in m {
            cluster_of[i] = c;
        }
    }
    Ok(ClusterMap { n_ues, n_clusters, members, cluster_of })
}

/// How many UEs activate inside an active cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivityMode {
    /// Exactly `l_c` active UEs per active cluster.
    Exact,
    /// A count drawn uniformly from `{1, ..., l_c}`.
    Uniform,
}

/// Cluster indicators `c_l` and per-UE indicators `γ_i`.
///
/// `γ_i = 1` marks an active UE; an inactive cluster has all-zero `γ` and an
/// active cluster has at least one active UE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityPattern {
    pub cluster_indicators: Vec<bool>,
    pub ue_indicators: Vec<bool>,
}

impl ActivityPattern {
    /// Sorted indices of active UEs.
    pub fn support(&self) -> Vec<usize> {
        self.ue_indicators
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }
}

/// Draw a clustered activity pattern: `k_active` clusters chosen uniformly
/// without replacement, then active UEs within each per `mode`.
pub fn sample_activity<R: Rng + ?Sized>(
    map: &ClusterMap,
    k_active: usize,
    l_c: usize,
    mode: ActivityMode,
    rng: &mut R,
) -> Result<ActivityPattern> {
    let l = map.cluster_size();
    if k_active > map.n_clusters() {
        return Err(Error::BadCount(format!(
            "k_active = {k_active} exceeds N_c = {}",
            map.n_clusters()
        )));
    }
    if l_c == 0 || l_c > l {
        return Err(Error::BadCount(format!("l_c = {l_c} outside 1..={l}")));
    }

    let active_clusters = sample_without_replacement(map.n_clusters(), k_active, rng);
    let mut cluster_indicators = vec![false; map.n_clusters()];
    let mut ue_indicators = vec![false; map.n_ues()];
    for &c in &active_clusters {
        cluster_indicators[c] = true;
        let count = match mode {
            ActivityMode::Exact => l_c,
            ActivityMode::Uniform => rng.gen_range(1..=l_c),
        };
        let picks = sample_without_replacement(l, count, rng);
        for p in picks {
            ue_indicators[map.members(c)[p]] = true;
        }
    }
    Ok(ActivityPattern { cluster_indicators, ue_indicators })
}

fn sample_without_replacement<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    // Partial Fisher-Yates; deterministic for a given rng state.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// One complex sample with i.i.d. real/imag parts of variance `var / 2`.
pub(crate) fn sample_cn<R: Rng + ?Sized>(var: f64, rng: &mut R) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draw a `τ_p × N` pilot matrix with i.i.d. CN entries per column,
/// normalized to unit Euclidean column norm.
pub fn generate_pilots<R: Rng + ?Sized>(tau_p: usize, n_ues: usize, rng: &mut R) -> CMat {
    assert!(tau_p >= 1, "pilot length must be positive");
    let mut phi = CMat::zeros(tau_p, n_ues);
    for j in 0..n_ues {
        let mut norm_sq = 0.0;
        for i in 0..tau_p {
            let z = sample_cn(1.0, rng);
            norm_sq += z.norm_sqr();
            phi[(i, j)] = z;
        }
        let inv = 1.0 / norm_sq.sqrt();
        for i in 0..tau_p {
            phi[(i, j)] *= inv;
        }
    }
    phi
}

/// Orthonormalize the pilot columns in place (modified Gram-Schmidt).
/// Requires `τ_p >= N`.
pub fn orthonormalize_pilots(phi: &mut CMat) {
    let (tau_p, n) = phi.shape();
    assert!(tau_p >= n, "orthonormalization needs tau_p >= N");
    for j in 0..n {
        for k in 0..j {
            let proj: C64 = (0..tau_p).map(|i| phi[(i, k)].conj() * phi[(i, j)]).sum();
            for i in 0..tau_p {
                let sub = proj * phi[(i, k)];
                phi[(i, j)] -= sub;
            }
        }
        let norm: f64 = (0..tau_p).map(|i| phi[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..tau_p {
            phi[(i, j)] /= norm;
        }
    }
}

/// Draw `M × N` Rayleigh channels, column `i` ~ CN(0, β_i I_M).
pub fn sample_channels<R: Rng + ?Sized>(
    path_gains: &[f64],
    n_antennas: usize,
    rng: &mut R,
) -> CMat {
    let n = path_gains.len();
    let mut h = CMat::zeros(n_antennas, n);
    for (j, &beta) in path_gains.iter().enumerate() {
        assert!(beta >= 0.0, "path gains must be non-negative");
        for i in 0..n_antennas {
            h[(i, j)] = sample_cn(beta, rng);
        }
    }
    h
}

/// Mask channel columns by the activity indicators: `x_i = γ_i h_i`.
pub fn effective_channel(activity: &ActivityPattern, channels: &CMat) -> CMat {
    assert_eq!(activity.ue_indicators.len(), channels.ncols());
    let mut x = channels.clone();
    for (j, &active) in activity.ue_indicators.iter().enumerate() {
        if !active {
            for i in 0..x.nrows() {
                x[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    x
}

/// Received pilot signal `Y = Φ Xᵀ + W`, noise i.i.d. CN(0, σ²) per entry.
pub fn synthesize_received<R: Rng + ?Sized>(
    pilots: &CMat,
    effective_channels: &CMat,
    noise_var: f64,
    rng: &mut R,
) -> CMat {
    assert!(noise_var >= 0.0);
    assert_eq!(pilots.ncols(), effective_channels.ncols());
    let mut y = pilots * effective_channels.transpose();
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += sample_cn(noise_var, rng);
        }
    }
    y
}

/// One full scenario draw.
#[derive(Debug, Clone)]
pub struct SystemRealization {
    pub pilots: CMat,
    pub channels: CMat,
    pub path_gains: Vec<f64>,
    pub activity: ActivityPattern,
    pub effective_channels: CMat,
    pub received: CMat,
    pub noise_var: f64,
}

/// Scenario parameters for one realization draw.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n_antennas: usize,
    pub pilot_len: usize,
    pub k_active_clusters: usize,
    pub l_c: usize,
    pub activity_mode: ActivityMode,
    pub noise_var: f64,
    /// Orthonormalize pilot columns (requires `pilot_len >= n_ues`).
    pub orthonormal_pilots: bool,
    /// Per-UE path gains β_i; all-ones when `None`.
    pub path_gains: Option<Vec<f64>>,
}

/// Draw pilots, activity, channels and the received signal in a fixed order,
/// so a given rng seed reproduces the realization bit for bit.
pub fn draw_realization<R: Rng + ?Sized>(
    map: &ClusterMap,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<SystemRealization> {
    let n = map.n_ues();
    let path_gains = scenario.path_gains.clone().unwrap_or_else(|| vec![1.0; n]);
    if path_gains.len() != n {
        return Err(Error::Config(format!(
            "expected {n} path gains, got {}",
            path_gains.len()
        )));
    }
    let mut pilots = generate_pilots(scenario.pilot_len, n, rng);
    if scenario.orthonormal_pilots {
        if scenario.pilot_len < n {
            return Err(Error::Config(
                "orthonormal pilots need pilot_len >= n_ues".into(),
            ));
        }
        orthonormalize_pilots(&mut pilots);
    }
    let activity = sample_activity(
        map,
        scenario.k_active_clusters,
        scenario.l_c,
        scenario.activity_mode,
        rng,
    )?;
    let channels = sample_channels(&path_gains, scenario.n_antennas, rng);
    let effective_channels = effective_channel(&activity, &channels);
    let received = synthesize_received(&pilots, &effective_channels, scenario.noise_var, rng);
    Ok(SystemRealization {
        pilots,
        channels,
        path_gains,
        activity,
        effective_channels,
        received,
        noise_var: scenario.noise_var,
    })
}
