//! Subcommand bodies. Each returns the `key = value` summary printed to
//! standard output; artifacts go to files under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use disk_core::bench::{evaluate as eval_report, gen_sim1, gen_sim2, Scenario};
use disk_core::combine::{combine_chains, QuantileGrid};
use disk_core::exact::{rate_study, DegenerateKernel};
use disk_core::formats::{
    format_assignment, format_disk_posterior, format_kv, format_risk_reports, format_w0, parse_w0, read_assignment,
    read_chain, read_dataset, read_disk_posterior, read_text, write_atomic, write_chain, write_dataset,
};
use disk_core::model::{GpVariant, ModelConfig, SpatialDataset};
use disk_core::partition::{random_partition, SubsetAssignment};
use disk_core::rng::{derive_seed, rng_from_seed};
use disk_core::sampler::{random_knots, run_subset_chain, McmcConfig, SubsetChain};
use disk_core::{DiskError, Result};

use crate::config::{RunConfig, VariantChoice};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const W0_FILE: &str = "w0.csv";
pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const CHAINS_DIR: &str = "chains";
pub const POSTERIOR_FILE: &str = "disk_posterior.csv";
pub const EVAL_FILE: &str = "eval_report.txt";
pub const RISK_FILE: &str = "risk_report.csv";

/// Stream ids under the master seed. Chain `j` uses stream `j`.
pub const PARTITION_STREAM: u64 = u64::MAX - 2;
pub const SHARED_KNOT_STREAM: u64 = u64::MAX - 1;

pub type Summary = Vec<(String, String)>;

pub fn format_summary(s: &Summary) -> String {
    format_kv(s)
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Worker count: `DISK_THREADS` if set, else the config's.
pub fn effective_workers(cfg: &RunConfig) -> Result<usize> {
    match std::env::var("DISK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(DiskError::Input(format!("DISK_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(cfg.workers),
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DiskError::Input(format!("cannot start {threads} workers: {e}")))?;
    Ok(pool.install(f))
}

fn train_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.train_path.clone().unwrap_or_else(|| out.join(TRAIN_FILE))
}

fn test_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.test_path.clone().unwrap_or_else(|| out.join(TEST_FILE))
}

fn w0_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.w0_path.clone().unwrap_or_else(|| out.join(W0_FILE))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(DiskError::Input(format!("missing artifact {}", path.display())))
    }
}

fn load(path: &Path) -> Result<SpatialDataset> {
    require(path)?;
    read_dataset(path)
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let mut sim = cfg.sim.clone();
    sim.seed = cfg.seed;
    let data = with_pool(effective_workers(cfg)?, || match sim.scenario {
        Scenario::Sim1 => gen_sim1(&sim),
        Scenario::Sim2 => gen_sim2(&sim),
    })??;
    write_dataset(&out.join(TRAIN_FILE), &data.train)?;
    write_dataset(&out.join(TEST_FILE), &data.test)?;
    write_atomic(&out.join(W0_FILE), &format_w0(&data.w0_test))?;
    Ok(vec![
        kv("n_train", data.train.n()),
        kv("n_test", data.test.n()),
        kv("out", out.display()),
    ])
}

fn make_partition(cfg: &RunConfig, n: usize) -> Result<SubsetAssignment> {
    random_partition(n, cfg.k, derive_seed(cfg.seed, PARTITION_STREAM), cfg.overlap)
}

pub fn partition(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let train = load(&train_path(cfg, out))?;
    let a = make_partition(cfg, train.n())?;
    write_atomic(&out.join(ASSIGNMENT_FILE), &format_assignment(&a))?;
    let sizes = a.sizes();
    Ok(vec![
        kv("k", a.k()),
        kv("min_subset", sizes.iter().min().unwrap_or(&0)),
        kv("max_subset", sizes.iter().max().unwrap_or(&0)),
    ])
}

fn chain_dir(out: &Path, j: usize) -> PathBuf {
    out.join(CHAINS_DIR).join(format!("subset_{j:03}"))
}

/// Model for every subset: the shared knots (if any) are drawn once over
/// the training bounding box.
pub fn model_config(cfg: &RunConfig, train: &SpatialDataset) -> Result<ModelConfig> {
    let variant = match cfg.variant {
        VariantChoice::FullRank => GpVariant::FullRank,
        VariantChoice::Mpp { rank } => {
            let knots = if cfg.knots_shared {
                let mut rng = rng_from_seed(derive_seed(cfg.seed, SHARED_KNOT_STREAM));
                Some(random_knots(train.locations(), rank, &mut rng)?)
            } else {
                None
            };
            GpVariant::Mpp { rank, knots }
        }
    };
    Ok(ModelConfig {
        prior: cfg.prior.for_p(train.p()),
        kernel: cfg.kernel,
        variant,
    })
}

pub fn chain_mcmc(cfg: &RunConfig, j: usize) -> McmcConfig {
    McmcConfig {
        seed: derive_seed(cfg.seed, j as u64),
        ..cfg.mcmc.clone()
    }
}

/// Runs every subset chain. The first failure in subset order is returned.
pub fn fit_chains(cfg: &RunConfig, out: &Path) -> Result<(SubsetAssignment, Vec<SubsetChain>)> {
    let train = load(&train_path(cfg, out))?;
    let test = load(&test_path(cfg, out))?;
    let assign_path = out.join(ASSIGNMENT_FILE);
    let assignment = if assign_path.exists() {
        let a = read_assignment(&assign_path, train.n())?;
        if a.k() != cfg.k {
            return Err(DiskError::Input(format!(
                "{} has {} subsets but k = {}",
                assign_path.display(),
                a.k(),
                cfg.k
            )));
        }
        a
    } else {
        let a = make_partition(cfg, train.n())?;
        write_atomic(&assign_path, &format_assignment(&a))?;
        a
    };
    if let VariantChoice::Mpp { rank } = cfg.variant {
        let smallest = assignment.sizes().into_iter().min().unwrap_or(0);
        if rank >= smallest {
            return Err(DiskError::Input(format!(
                "predictive-process rank {rank} must be below the smallest subset size {smallest}"
            )));
        }
    }
    let model = model_config(cfg, &train)?;
    let threads = effective_workers(cfg)?.min(cfg.k);
    let results: Vec<Result<SubsetChain>> = with_pool(threads, || {
        (0..assignment.k())
            .into_par_iter()
            .map(|j| {
                let sub = train.subset(&assignment.memberships[j])?;
                let chain = run_subset_chain(
                    &sub,
                    test.locations(),
                    test.x(),
                    &model,
                    &chain_mcmc(cfg, j),
                    assignment.exponents[j],
                )
                .map_err(|e| e.with_subset(j))?;
                log::info!(
                    "subset {j}: acceptance {:.3}, jitter events {}, {:.1}s",
                    chain.acceptance_rate,
                    chain.jitter_events,
                    chain.wall_time_s
                );
                Ok(chain)
            })
            .collect()
    })?;
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((assignment, chains))
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let (assignment, chains) = fit_chains(cfg, out)?;
    for (j, c) in chains.iter().enumerate() {
        write_chain(&chain_dir(out, j), c)?;
    }
    remove_stale_chains(out, chains.len())?;
    let acc: Vec<f64> = chains.iter().map(|c| c.acceptance_rate).collect();
    Ok(vec![
        kv("k", assignment.k()),
        kv("retained", chains[0].retained()),
        kv("mean_acceptance", acc.iter().sum::<f64>() / acc.len() as f64),
        kv("jitter_events", chains.iter().map(|c| c.jitter_events).sum::<usize>()),
    ])
}

/// Chain directories from an earlier run with a larger `k`.
fn remove_stale_chains(out: &Path, k: usize) -> Result<()> {
    for j in k.. {
        let dir = chain_dir(out, j);
        if !dir.exists() {
            return Ok(());
        }
        fs::remove_dir_all(&dir).map_err(|e| DiskError::Io { path: dir, source: e })?;
    }
    Ok(())
}

fn read_chains(out: &Path) -> Result<Vec<SubsetChain>> {
    let mut chains = Vec::new();
    while chain_dir(out, chains.len()).exists() {
        chains.push(read_chain(&chain_dir(out, chains.len()))?);
    }
    if chains.is_empty() {
        return Err(DiskError::Input(format!("missing artifact {}", chain_dir(out, 0).display())));
    }
    Ok(chains)
}

pub fn combine(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let chains = read_chains(out)?;
    let grid = QuantileGrid::new(cfg.xi)?;
    let post = with_pool(effective_workers(cfg)?, || combine_chains(&chains, grid))??;
    write_atomic(&out.join(POSTERIOR_FILE), &format_disk_posterior(&post))?;
    let mut s = vec![kv("chains", chains.len()), kv("quantities", post.entries().len())];
    for label in ["sigma2", "tau2", "phi"] {
        if let Some(q) = post.get(label) {
            s.push(kv(&format!("{label}_median"), q.median()));
        }
    }
    for (label, q) in post.entries().iter().filter(|(l, _)| l.starts_with("beta_")) {
        s.push(kv(&format!("{label}_median"), q.median()));
    }
    Ok(s)
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let post_path = out.join(POSTERIOR_FILE);
    require(&post_path)?;
    let post = read_disk_posterior(&post_path)?;
    let test = load(&test_path(cfg, out))?;
    let w0p = w0_path(cfg, out);
    require(&w0p)?;
    let w0 = parse_w0(&read_text(&w0p)?, &w0p.display().to_string())?;
    let r = eval_report(&post, &w0, test.y(), cfg.level)?;
    let s = vec![
        kv("bias2", r.bias2),
        kv("variance", r.variance),
        kv("l2_risk", r.l2_risk),
        kv("mspe", r.mspe),
        kv("ci_coverage", r.ci_coverage),
        kv("ci_length", r.ci_length),
        kv("pi_coverage", r.pi_coverage),
        kv("pi_length", r.pi_length),
    ];
    write_atomic(&out.join(EVAL_FILE), &format_kv(&s))?;
    Ok(s)
}

pub fn risk_study(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let div = cfg.risk.k_divisor;
    let study = with_pool(effective_workers(cfg)?, || {
        rate_study(
            &DegenerateKernel::rank5(),
            &cfg.risk.n_grid,
            &|n| (n / div).max(1),
            cfg.risk.tau2,
            cfg.risk.reps,
            cfg.seed,
        )
    })??;
    write_atomic(&out.join(RISK_FILE), &format_risk_reports(&study.reports))?;
    Ok(vec![
        kv("slope", study.slope),
        kv("slope_se", study.slope_se),
        kv("monotonicity_violations", study.monotonicity_violations()),
    ])
}

/// `fit`, `combine` and `evaluate` after generating data if none exists.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    if cfg.train_path.is_none() && !out.join(TRAIN_FILE).exists() {
        generate(cfg, out)?;
    }
    fit(cfg, out)?;
    combine(cfg, out)?;
    evaluate(cfg, out)
}
