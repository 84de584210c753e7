//! Monte Carlo experiment runner, metrics and result export.
//!
//! Every trial seeds its own generator from `(master_seed, sweep_index,
//! trial_index)`, draws one realization and feeds the identical data to all
//! selected estimators, so runs are reproducible bit for bit and fair across
//! estimators regardless of the worker pool.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::ep::{self, SolverConfig};
use crate::model::{self, ActivityMode, ClusterMap, Scenario};
use crate::{C64, CMat, Error, Result};

/// Normalized mean square error `‖X̂ − X‖_F² / ‖X‖_F²`.
pub fn nmse(estimate: &CMat, truth: &CMat) -> Result<f64> {
    assert_eq!(estimate.shape(), truth.shape());
    let denom = truth.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok((estimate - truth).norm_squared() / denom)
}

/// Support recovery rate: the Jaccard index `|Ŝ ∩ S| / |Ŝ ∪ S|`; two empty
/// sets count as perfect recovery.
pub fn srr(estimated: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> f64 {
    let union = estimated.union(truth).count();
    if union == 0 {
        return 1.0;
    }
    estimated.intersection(truth).count() as f64 / union as f64
}

/// Estimators selectable in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Estimator {
    Ep,
    /// EP with a degenerate one-UE-per-cluster map (ignores the activity
    /// correlation).
    EpUncoupled,
    OracleMmse,
    Msbl,
    IrwL21,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ep => "ep",
            Estimator::EpUncoupled => "ep_uncoupled",
            Estimator::OracleMmse => "oracle_mmse",
            Estimator::Msbl => "msbl",
            Estimator::IrwL21 => "irw_l21",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ep" => Ok(Estimator::Ep),
            "ep_uncoupled" => Ok(Estimator::EpUncoupled),
            "oracle_mmse" => Ok(Estimator::OracleMmse),
            "msbl" => Ok(Estimator::Msbl),
            "irw_l21" => Ok(Estimator::IrwL21),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Parameter swept across experiment points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    SnrDb,
    PilotLen,
    NoiseVar,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::SnrDb => "snr_db",
            SweepParam::PilotLen => "pilot_len",
            SweepParam::NoiseVar => "noise_var",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "snr_db" => Ok(SweepParam::SnrDb),
            "pilot_len" => Ok(SweepParam::PilotLen),
            "noise_var" => Ok(SweepParam::NoiseVar),
            other => Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_ues: usize,
    pub n_clusters: usize,
    pub n_antennas: usize,
    pub pilot_len: usize,
    pub k_active_clusters: usize,
    pub l_c: usize,
    pub activity_mode: ActivityMode,
    pub orthonormal_pilots: bool,
    /// Exactly one of `snr_db` / `noise_var` must be set (SNR is `1/σ²` for
    /// unit path gains).
    pub snr_db: Option<f64>,
    pub noise_var: Option<f64>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub sweep: Option<(SweepParam, Vec<f64>)>,
    pub estimators: Vec<Estimator>,
    pub solver: SolverConfig,
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    /// Fig.-1-style default: 200 UEs in 20 clusters, 10 antennas, 40-symbol
    /// pilots, 2 active clusters of 8 UEs, SNR 10 dB.
    pub fn default_experiment() -> Self {
        let mut solver = SolverConfig::default();
        solver.eps = 0.1;
        Self {
            n_ues: 200,
            n_clusters: 20,
            n_antennas: 10,
            pilot_len: 40,
            k_active_clusters: 2,
            l_c: 8,
            activity_mode: ActivityMode::Exact,
            orthonormal_pilots: false,
            snr_db: Some(10.0),
            noise_var: None,
            n_trials: 500,
            master_seed: 1,
            sweep: None,
            estimators: vec![
                Estimator::Ep,
                Estimator::EpUncoupled,
                Estimator::OracleMmse,
                Estimator::Msbl,
                Estimator::IrwL21,
            ],
            solver,
            baseline: BaselineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_ues % self.n_clusters != 0 {
            return Err(Error::NonDivisible { n_ues: self.n_ues, n_clusters: self.n_clusters });
        }
        let l = self.n_ues / self.n_clusters;
        if self.l_c == 0 || self.l_c > l {
            return Err(Error::Config(format!("l_c = {} outside 1..={l}", self.l_c)));
        }
        if self.k_active_clusters == 0 || self.k_active_clusters > self.n_clusters {
            return Err(Error::Config(format!(
                "k_active_clusters = {} outside 1..={}",
                self.k_active_clusters, self.n_clusters
            )));
        }
        match (self.snr_db, self.noise_var) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set snr_db or noise_var, not both".into()));
            }
            (None, None) => return Err(Error::Config("set snr_db or noise_var".into())),
            (_, Some(v)) if v <= 0.0 => {
                return Err(Error::Config("noise_var must be positive".into()));
            }
            _ => {}
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("select at least one estimator".into()));
        }
        if self.pilot_len == 0 {
            return Err(Error::Config("pilot_len must be positive".into()));
        }
        self.solver.validate()
    }

    pub fn base_noise_var(&self) -> f64 {
        match (self.noise_var, self.snr_db) {
            (Some(v), _) => v,
            (None, Some(snr)) => 10f64.powf(-snr / 10.0),
            _ => unreachable!("validated"),
        }
    }
}

/// One trial's metrics for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub trial: usize,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub estimator: String,
    pub nmse: f64,
    pub srr: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
}

pub fn trial_rng(master_seed: u64, sweep_index: u64, trial: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&sweep_index.to_le_bytes());
    seed[16..24].copy_from_slice(&trial.to_le_bytes());
    seed[24..32].copy_from_slice(&0x4a55_4943_455f_4d43u64.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Run every (sweep value, trial, estimator) combination and collect records
/// in deterministic order (sweep-major, then trial, then estimator name).
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let sweep_points: Vec<(SweepParam, f64)> = match &config.sweep {
        Some((param, values)) => values.iter().map(|&v| (*param, v)).collect(),
        None => vec![(
            if config.snr_db.is_some() { SweepParam::SnrDb } else { SweepParam::NoiseVar },
            config.snr_db.unwrap_or_else(|| config.base_noise_var()),
        )],
    };
    let mut estimators = config.estimators.clone();
    estimators.sort_by_key(|e| e.name());
    estimators.dedup();

    let map = model::build_cluster_map(config.n_ues, config.n_clusters)?;
    let uncoupled_map = model::build_cluster_map(config.n_ues, config.n_ues)?;

    let mut jobs: Vec<(usize, usize, SweepParam, f64)> = Vec::new();
    for (s_idx, &(param, value)) in sweep_points.iter().enumerate() {
        for trial in 0..config.n_trials {
            jobs.push((s_idx, trial, param, value));
        }
    }

    let results: Result<Vec<Vec<ResultRecord>>> = jobs
        .par_iter()
        .map(|&(s_idx, trial, param, value)| {
            run_trial(config, &map, &uncoupled_map, &estimators, s_idx, trial, param, value)
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    config: &ExperimentConfig,
    map: &ClusterMap,
    uncoupled_map: &ClusterMap,
    estimators: &[Estimator],
    sweep_index: usize,
    trial: usize,
    param: SweepParam,
    value: f64,
) -> Result<Vec<ResultRecord>> {
    let mut noise_var = config.base_noise_var();
    let mut pilot_len = config.pilot_len;
    match param {
        SweepParam::SnrDb => noise_var = 10f64.powf(-value / 10.0),
        SweepParam::NoiseVar => noise_var = value,
        SweepParam::PilotLen => {
            pilot_len = value.round() as usize;
            if pilot_len == 0 {
                return Err(Error::Config("swept pilot_len must be positive".into()));
            }
        }
    }
    let scenario = Scenario {
        n_antennas: config.n_antennas,
        pilot_len,
        k_active_clusters: config.k_active_clusters,
        l_c: config.l_c,
        activity_mode: config.activity_mode,
        noise_var,
        orthonormal_pilots: config.orthonormal_pilots,
        path_gains: None,
    };
    let mut rng = trial_rng(config.master_seed, sweep_index as u64, trial as u64);
    let real = model::draw_realization(map, &scenario, &mut rng)?;
    let truth = &real.effective_channels;
    let true_support: BTreeSet<usize> = real.activity.support().into_iter().collect();
    let threshold = config.solver.detection_threshold;

    let mut records = Vec::with_capacity(estimators.len());
    for &est in estimators {
        let start = Instant::now();
        let (estimate, support, iterations, converged) = match est {
            Estimator::Ep => {
                let out = ep::ep_infer(&real.received, &real.pilots, noise_var, map, &config.solver)?;
                let support = ep::detect_support(&out, map, threshold, noise_var);
                (out.means, support, out.iterations, out.converged)
            }
            Estimator::EpUncoupled => {
                let mut solver = config.solver.clone();
                let frac = (config.k_active_clusters * config.l_c) as f64 / config.n_ues as f64;
                solver.eps = frac.clamp(1e-6, 1.0);
                let out = ep::ep_infer(&real.received, &real.pilots, noise_var, uncoupled_map, &solver)?;
                let support = ep::detect_support(&out, uncoupled_map, threshold, noise_var);
                (out.means, support, out.iterations, out.converged)
            }
            Estimator::OracleMmse => {
                let sup = real.activity.support();
                let est_x = baselines::oracle_mmse(
                    &real.received,
                    &real.pilots,
                    &sup,
                    &real.path_gains,
                    noise_var,
                );
                (est_x, sup.into_iter().collect(), 0, true)
            }
            Estimator::Msbl => {
                let out = baselines::msbl(&real.received, &real.pilots, noise_var, &config.baseline)?;
                let support = energy_support(&out.means, threshold, noise_var)
                    .into_iter()
                    .filter(|&i| out.gammas[i] > 0.0)
                    .collect();
                (out.means, support, out.iterations, out.converged)
            }
            Estimator::IrwL21 => {
                let lambda =
                    config.baseline.irw_lambda(noise_var, config.n_antennas, config.n_ues);
                let est_x = baselines::irw_l21(&real.received, &real.pilots, lambda, &config.baseline);
                let support = energy_support(&est_x, threshold, noise_var);
                (est_x, support, 0, true)
            }
        };
        // Joint identification + estimation: each estimator reports exact
        // zeros for the UEs it declares inactive.
        let mut estimate = estimate;
        for i in 0..estimate.ncols() {
            if !support.contains(&i) {
                estimate.column_mut(i).fill(C64::new(0.0, 0.0));
            }
        }
        let wall_time_s = start.elapsed().as_secs_f64();
        records.push(ResultRecord {
            trial,
            sweep_name: param.name().to_string(),
            sweep_value: value,
            estimator: est.name().to_string(),
            nmse: nmse(&estimate, truth)?,
            srr: srr(&support, &true_support),
            iterations,
            wall_time_s,
            converged,
        });
    }
    Ok(records)
}

/// Per-UE energy detection shared by the unstructured baselines.
fn energy_support(means: &CMat, threshold: f64, noise_var: f64) -> BTreeSet<usize> {
    let m = means.nrows() as f64;
    let energies: Vec<f64> = (0..means.ncols())
        .map(|i| means.column(i).iter().map(|z| z.norm_sqr()).sum::<f64>() / m)
        .collect();
    // Relative floor: as σ² → 0 the absolute gate vanishes and numerical
    // leakage in columns the solver never truly activated would count as
    // detections.
    let floor = 1e-6 * energies.iter().cloned().fold(0.0f64, f64::max);
    (0..means.ncols())
        .filter(|&i| energies[i] > (threshold * noise_var).max(floor))
        .collect()
}

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "trial,sweep_name,sweep_value,estimator,nmse,srr,iterations,wall_time_s,converged";

/// Render records as CSV with full-precision scientific floats.
pub fn render_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{:.16e},{},{:.16e},{:.16e},{},{:.16e},{}\n",
            r.trial,
            r.sweep_name,
            r.sweep_value,
            r.estimator,
            r.nmse,
            r.srr,
            r.iterations,
            r.wall_time_s,
            r.converged
        ));
    }
    out
}

/// Parse CSV produced by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("bad CSV header: {other:?}"))),
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse(format!("line {}: expected 9 fields", lineno + 2)));
        }
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 2));
        records.push(ResultRecord {
            trial: fields[0].parse().map_err(|_| bad("trial"))?,
            sweep_name: fields[1].to_string(),
            sweep_value: fields[2].parse().map_err(|_| bad("sweep_value"))?,
            estimator: fields[3].to_string(),
            nmse: fields[4].parse().map_err(|_| bad("nmse"))?,
            srr: fields[5].parse().map_err(|_| bad("srr"))?,
            iterations: fields[6].parse().map_err(|_| bad("iterations"))?,
            wall_time_s: fields[7].parse().map_err(|_| bad("wall_time_s"))?,
            converged: fields[8].parse().map_err(|_| bad("converged"))?,
        });
    }
    Ok(records)
}

/// Write records to `path` in the requested format.
pub fn export_results(records: &[ResultRecord], path: &str, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => render_csv(records),
        ExportFormat::Json => serde_json::to_string_pretty(records)
            .map_err(|e| Error::Parse(e.to_string()))?,
    };
    let mut file = std::fs::File::create(path)
        .map_err(|source| Error::Io { path: path.to_string(), source })?;
    file.write_all(text.as_bytes())
        .map_err(|source| Error::Io { path: path.to_string(), source })?;
    Ok(())
}

/// Parse a JSON record list.
pub fn parse_json(text: &str) -> Result<Vec<ResultRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Median of a sample (empty input yields NaN).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median metric of one estimator's records.
pub fn median_metric(records: &[ResultRecord], estimator: &str, metric: fn(&ResultRecord) -> f64) -> f64 {
    let vals: Vec<f64> =
        records.iter().filter(|r| r.estimator == estimator).map(metric).collect();
    median(&vals)
}

/// Grid-search the detection threshold on a validation batch, maximizing the
/// mean SRR of the EP estimator.
pub fn calibrate_detection_threshold(
    config: &ExperimentConfig,
    grid: &[f64],
    n_trials: usize,
) -> Result<(f64, f64)> {
    let mut cal = config.clone();
    cal.n_trials = n_trials;
    cal.master_seed = config.master_seed.wrapping_add(0x5eed_0ca1);
    cal.estimators = vec![Estimator::Ep];
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &thr in grid {
        cal.solver.detection_threshold = thr;
        let records = run_experiment(&cal)?;
        let mean_srr: f64 =
            records.iter().map(|r| r.srr).sum::<f64>() / records.len() as f64;
        if mean_srr > best.1 {
            best = (thr, mean_srr);
        }
    }
    Ok(best)
}

/// Grid-search the IRW penalty on a validation batch, minimizing the median
/// NMSE of the IRW estimator.
pub fn calibrate_irw_lambda(
    config: &ExperimentConfig,
    grid: &[f64],
    n_trials: usize,
) -> Result<(f64, f64)> {
    let mut cal = config.clone();
    cal.n_trials = n_trials;
    cal.master_seed = config.master_seed.wrapping_add(0x5eed_1a3b);
    cal.estimators = vec![Estimator::IrwL21];
    let mut best = (grid[0], f64::INFINITY);
    for &lambda in grid {
        cal.baseline.lambda = Some(lambda);
        let records = run_experiment(&cal)?;
        let med = median_metric(&records, "irw_l21", |r| r.nmse);
        if med < best.1 {
            best = (lambda, med);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Flat key-value config file
// ---------------------------------------------------------------------------

/// Serde image of the flat config file; unknown keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    n_ues: usize,
    n_clusters: usize,
    n_antennas: usize,
    pilot_len: usize,
    k_active_clusters: usize,
    l_c: usize,
    #[serde(default = "default_activity_mode")]
    activity_mode: String,
    #[serde(default)]
    orthonormal_pilots: bool,
    snr_db: Option<f64>,
    noise_var: Option<f64>,
    n_trials: usize,
    #[serde(default)]
    master_seed: u64,
    sweep_param: Option<String>,
    sweep_values: Option<Vec<f64>>,
    estimators: Vec<String>,
    // solver
    max_iters: Option<usize>,
    damping: Option<f64>,
    tol: Option<f64>,
    detection_threshold: Option<f64>,
    update_slab_vars: Option<bool>,
    slab_var_init: Option<f64>,
    eps: Option<f64>,
    min_site_var: Option<f64>,
    // baselines
    baseline_max_iters: Option<usize>,
    baseline_tol: Option<f64>,
    reg_epsilon: Option<f64>,
    lambda: Option<f64>,
    prune_threshold: Option<f64>,
}

fn default_activity_mode() -> String {
    "exact".to_string()
}

/// Parse the flat key-value config format (TOML syntax, flat keys only).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let flat: FlatConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let activity_mode = match flat.activity_mode.as_str() {
        "exact" => ActivityMode::Exact,
        "uniform" => ActivityMode::Uniform,
        other => return Err(Error::Config(format!("unknown activity_mode '{other}'"))),
    };
    let estimators = flat
        .estimators
        .iter()
        .map(|s| Estimator::from_name(s))
        .collect::<Result<Vec<_>>>()?;
    let sweep = match (flat.sweep_param, flat.sweep_values) {
        (Some(p), Some(v)) if !v.is_empty() => Some((SweepParam::from_name(&p)?, v)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "sweep_param and non-empty sweep_values must be given together".into(),
            ));
        }
    };

    let mut solver = SolverConfig::default();
    if let Some(v) = flat.max_iters {
        solver.max_iters = v;
    }
    if let Some(v) = flat.damping {
        solver.damping = v;
    }
    if let Some(v) = flat.tol {
        solver.tol = v;
    }
    if let Some(v) = flat.detection_threshold {
        solver.detection_threshold = v;
    }
    if let Some(v) = flat.update_slab_vars {
        solver.update_slab_vars = v;
    }
    if let Some(v) = flat.slab_var_init {
        solver.slab_var_init = v;
    }
    if let Some(v) = flat.min_site_var {
        solver.min_site_var = v;
    }
    // cluster activation probability defaults to the generator's rate
    solver.eps = flat.eps.unwrap_or_else(|| {
        (flat.k_active_clusters as f64 / flat.n_clusters.max(1) as f64).clamp(1e-6, 1.0)
    });

    let mut baseline = BaselineConfig::default();
    if let Some(v) = flat.baseline_max_iters {
        baseline.max_iters = v;
    }
    if let Some(v) = flat.baseline_tol {
        baseline.tol = v;
    }
    if let Some(v) = flat.reg_epsilon {
        baseline.reg_epsilon = v;
    }
    if let Some(v) = flat.lambda {
        baseline.lambda = Some(v);
    }
    if let Some(v) = flat.prune_threshold {
        baseline.prune_threshold = v;
    }

    let config = ExperimentConfig {
        n_ues: flat.n_ues,
        n_clusters: flat.n_clusters,
        n_antennas: flat.n_antennas,
        pilot_len: flat.pilot_len,
        k_active_clusters: flat.k_active_clusters,
        l_c: flat.l_c,
        activity_mode,
        orthonormal_pilots: flat.orthonormal_pilots,
        snr_db: flat.snr_db,
        noise_var: flat.noise_var,
        n_trials: flat.n_trials,
        master_seed: flat.master_seed,
        sweep,
        estimators,
        solver,
        baseline,
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use proptest::prelude::*;

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn nmse_basic_values() {
        let x = CMat::from_element(2, 2, C64::new(1.0, 1.0));
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&CMat::zeros(2, 2), &x).unwrap(), 1.0);
        let double = &x * C64::new(2.0, 0.0);
        assert!((nmse(&double, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&x, &CMat::zeros(2, 2)), Err(Error::ZeroTruth)));
    }

    #[test]
    fn srr_basic_values() {
        assert_eq!(srr(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(srr(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(srr(&set(&[1, 2, 3]), &set(&[2, 3, 4])), 0.5);
        assert_eq!(srr(&set(&[]), &set(&[])), 1.0);
    }

    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default_experiment();
        config.n_ues = 16;
        config.n_clusters = 4;
        config.n_antennas = 2;
        config.pilot_len = 8;
        config.k_active_clusters = 1;
        config.l_c = 2;
        config.n_trials = 3;
        config.solver.eps = 0.25;
        config
    }

    #[test]
    fn experiment_is_reproducible() {
        let config = tiny_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        // wall time differs run to run; everything else is bit-identical
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.trial, rb.trial);
            assert_eq!(ra.estimator, rb.estimator);
            assert_eq!(ra.nmse.to_bits(), rb.nmse.to_bits());
            assert_eq!(ra.srr.to_bits(), rb.srr.to_bits());
            assert_eq!(ra.iterations, rb.iterations);
        }
    }

    #[test]
    fn record_count_and_metric_bounds() {
        let mut config = tiny_config();
        config.sweep = Some((SweepParam::SnrDb, vec![5.0, 15.0]));
        let records = run_experiment(&config).unwrap();
        assert_eq!(records.len(), 2 * 3 * config.estimators.len());
        for r in &records {
            assert!(r.nmse >= 0.0);
            assert!((0.0..=1.0).contains(&r.srr));
        }
    }

    #[test]
    fn tiny_noise_oracle_run() {
        let mut config = tiny_config();
        config.estimators = vec![Estimator::OracleMmse];
        config.snr_db = None;
        config.noise_var = Some(1e-8);
        config.n_trials = 1;
        let records = run_experiment(&config).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].nmse < 1e-6);
    }

    #[test]
    fn export_csv_round_trip() {
        let records = vec![ResultRecord {
            trial: 3,
            sweep_name: "snr_db".into(),
            sweep_value: 10.0,
            estimator: "ep".into(),
            nmse: 1.234e-3,
            srr: 0.875,
            iterations: 17,
            wall_time_s: 0.0123,
            converged: true,
        }];
        let text = render_csv(&records);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_csv(&text).unwrap(), records);

        let empty = render_csv(&[]);
        assert_eq!(empty.trim(), CSV_HEADER);
        assert!(parse_csv(&empty).unwrap().is_empty());
    }

    #[test]
    fn config_file_round_trip_and_unknown_keys() {
        let text = r#"
            n_ues = 16
            n_clusters = 4
            n_antennas = 2
            pilot_len = 8
            k_active_clusters = 1
            l_c = 2
            snr_db = 10.0
            n_trials = 5
            master_seed = 42
            estimators = ["ep", "oracle_mmse"]
            damping = 0.8
        "#;
        let config = parse_config(text).unwrap();
        assert_eq!(config.n_ues, 16);
        assert_eq!(config.solver.damping, 0.8);
        assert_eq!(config.solver.eps, 0.25);
        assert_eq!(config.estimators.len(), 2);

        let bad = format!("{text}\nnot_a_key = 1");
        assert!(matches!(parse_config(&bad), Err(Error::Parse(_))));

        let both = text.replace("snr_db = 10.0", "snr_db = 10.0\nnoise_var = 0.1");
        assert!(parse_config(&both).is_err());
    }

    proptest! {
        #[test]
        fn srr_is_bounded_and_symmetric(
            a in proptest::collection::btree_set(0usize..50, 0..20),
            b in proptest::collection::btree_set(0usize..50, 0..20),
        ) {
            let v = srr(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, srr(&b, &a));
            prop_assert_eq!(srr(&a, &a), 1.0);
        }

        #[test]
        fn csv_round_trip_arbitrary_records(
            trial in 0usize..10_000,
            sweep_value in -100.0f64..100.0,
            nmse_v in 0.0f64..10.0,
            srr_v in 0.0f64..1.0,
            iters in 0usize..1000,
            wall in 0.0f64..100.0,
            converged in proptest::bool::ANY,
        ) {
            let records = vec![ResultRecord {
                trial,
                sweep_name: "snr_db".into(),
                sweep_value,
                estimator: "msbl".into(),
                nmse: nmse_v,
                srr: srr_v,
                iterations: iters,
                wall_time_s: wall,
                converged,
            }];
            let parsed = parse_csv(&render_csv(&records)).unwrap();
            prop_assert_eq!(&parsed, &records);
            let json = serde_json::to_string(&records).unwrap();
            prop_assert_eq!(parse_json(&json).unwrap(), records);
        }
    }
}
