//! Command-line front end: Monte Carlo runs, tiny-instance exact-posterior
//! debugging, and threshold/penalty calibration.

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use juice::harness::{
    self, Estimator, ExperimentConfig, ExportFormat, median_metric,
};
use juice::{ep, exact, model};

#[derive(Parser)]
#[command(name = "juice", version, about = "Grant-free MTC joint user identification and channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment from a config file.
    Run {
        /// Flat key-value config file (TOML syntax).
        config: String,
        /// Output path for the result records.
        #[arg(long, default_value = "results.csv")]
        out: String,
        /// Output format: csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (1 forces serial execution).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare EP against the exact enumerated posterior on a tiny instance.
    Oracle {
        #[arg(long, default_value_t = 8)]
        n_ues: usize,
        #[arg(long, default_value_t = 4)]
        n_clusters: usize,
        #[arg(long, default_value_t = 2)]
        n_antennas: usize,
        #[arg(long, default_value_t = 8)]
        pilot_len: usize,
        #[arg(long, default_value_t = 1)]
        k_active_clusters: usize,
        #[arg(long, default_value_t = 2)]
        l_c: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_var: f64,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid-search the detection threshold and the IRW penalty.
    Calibrate {
        /// Flat key-value config file (TOML syntax).
        config: String,
        /// Validation trials per grid point.
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Worker threads (1 forces serial execution).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, out, format, seed, threads } => {
            let format = ExportFormat::from_name(&format)?;
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            init_threads(threads)?;
            let records = harness::run_experiment(&cfg)?;
            harness::export_results(&records, &out, format)?;
            println!("wrote {} records to {out}", records.len());
            for est in &cfg.estimators {
                let name = est.name();
                let med_nmse = median_metric(&records, name, |r| r.nmse);
                let med_srr = median_metric(&records, name, |r| r.srr);
                println!(
                    "{name:>13}: median NMSE {:.3e} ({:+.2} dB), median SRR {:.3}",
                    med_nmse,
                    10.0 * med_nmse.log10(),
                    med_srr
                );
            }
        }
        Command::Oracle {
            n_ues,
            n_clusters,
            n_antennas,
            pilot_len,
            k_active_clusters,
            l_c,
            noise_var,
            eps,
            seed,
        } => {
            let map = model::build_cluster_map(n_ues, n_clusters)?;
            let scenario = model::Scenario {
                n_antennas,
                pilot_len,
                k_active_clusters,
                l_c,
                activity_mode: model::ActivityMode::Exact,
                noise_var,
                orthonormal_pilots: false,
                path_gains: None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let real = model::draw_realization(&map, &scenario, &mut rng)?;
            let slab_vars = vec![1.0; n_ues];
            let exact_post = exact::enumerate_posterior(
                &real.received,
                &real.pilots,
                noise_var,
                &slab_vars,
                eps,
                &map,
            )?;
            let mut solver = ep::SolverConfig::default();
            solver.eps = eps;
            solver.update_slab_vars = false;
            let ep_post = ep::ep_infer_with(
                &real.received,
                &real.pilots,
                noise_var,
                &map,
                &solver,
                &slab_vars,
            )?;
            println!("true active clusters: {:?}", active_clusters(&real));
            println!("log evidence: {:.6}", exact_post.log_evidence);
            println!("cluster   exact p(c=1)   ep p(c=1)");
            for l in 0..n_clusters {
                println!(
                    "{l:>7}   {:>12.6}   {:>9.6}",
                    exact_post.cluster_probs[l], ep_post.cluster_probs[l]
                );
            }
            let mean_err = (&ep_post.means - &exact_post.means).norm()
                / exact_post.means.norm().max(1e-300);
            println!("posterior mean relative error: {mean_err:.3e}");
        }
        Command::Calibrate { config, trials, threads } => {
            let cfg = load_config(&config)?;
            init_threads(threads)?;
            let thr_grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
            let (thr, srr) = harness::calibrate_detection_threshold(&cfg, &thr_grid, trials)?;
            println!("detection_threshold = {thr:.2} (mean SRR {srr:.4})");
            if cfg.estimators.contains(&Estimator::IrwL21) || cfg.baseline.lambda.is_none() {
                let sigma = cfg.base_noise_var().sqrt();
                let lam_grid: Vec<f64> =
                    [0.25, 0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|c| c * sigma).collect();
                let (lam, med) = harness::calibrate_irw_lambda(&cfg, &lam_grid, trials)?;
                println!("lambda = {lam:.4} (median NMSE {med:.3e})");
            }
        }
    }
    Ok(())
}

fn load_config(path: &str) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| juice::Error::Io { path: path.to_string(), source })?;
    Ok(harness::parse_config(&text)?)
}

fn init_threads(threads: Option<usize>) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global()?;
    }
    Ok(())
}

fn active_clusters(real: &model::SystemRealization) -> Vec<usize> {
    real.activity
        .cluster_indicators
        .iter()
        .enumerate()
        .filter_map(|(l, &c)| c.then_some(l))
        .collect()
}
