//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use disk_core::bench::{Scenario, SimConfig};
use disk_core::combine::QuantileGrid;
use disk_core::formats::{format_kv, parse_kv, read_text};
use disk_core::kernels::KernelSpec;
use disk_core::model::PriorSpec;
use disk_core::sampler::McmcConfig;
use disk_core::{DiskError, Result};
use nalgebra::{DMatrix, DVector};

const DEFAULT_RANK: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum VariantChoice {
    FullRank,
    Mpp { rank: usize },
}

/// Settings for the `risk-study` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskStudyConfig {
    pub n_grid: Vec<usize>,
    /// `k = max(1, n / k_divisor)`.
    pub k_divisor: usize,
    pub tau2: f64,
    pub reps: usize,
}

/// Prior hyperparameters; β gets `N(mu_beta 1, sigma2_beta I)` once `p` is
/// known from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub mu_beta: f64,
    pub sigma2_beta: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl PriorConfig {
    pub fn for_p(&self, p: usize) -> PriorSpec {
        PriorSpec {
            mu_beta: DVector::from_element(p, self.mu_beta),
            sigma_beta: DMatrix::identity(p, p) * self.sigma2_beta,
            a_sigma: self.a_sigma,
            b_sigma: self.b_sigma,
            a_tau: self.a_tau,
            b_tau: self.b_tau,
            phi_lo: self.phi_lo,
            phi_hi: self.phi_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    /// Use existing data instead of generating it.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub w0_path: Option<PathBuf>,
    pub k: usize,
    pub overlap: f64,
    pub kernel: KernelSpec,
    pub variant: VariantChoice,
    pub knots_shared: bool,
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    pub xi: f64,
    pub level: f64,
    pub seed: u64,
    pub workers: usize,
    pub risk: RiskStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PriorSpec::default_for(1);
        RunConfig {
            sim: SimConfig::sim1(2000, 400, 0),
            train_path: None,
            test_path: None,
            w0_path: None,
            k: 10,
            overlap: 0.0,
            kernel: KernelSpec::Exponential,
            variant: VariantChoice::Mpp { rank: DEFAULT_RANK },
            knots_shared: true,
            prior: PriorConfig {
                mu_beta: 0.0,
                sigma2_beta: 100.0,
                a_sigma: p.a_sigma,
                b_sigma: p.b_sigma,
                a_tau: p.a_tau,
                b_tau: p.b_tau,
                phi_lo: p.phi_lo,
                phi_hi: p.phi_hi,
            },
            mcmc: McmcConfig {
                n_iter: 3000,
                burn_in: 1000,
                thin: 2,
                ..McmcConfig::default()
            },
            xi: QuantileGrid::DEFAULT_XI,
            level: 0.95,
            seed: 0,
            workers: 1,
            risk: RiskStudyConfig {
                n_grid: vec![128, 256, 512, 1024, 2048, 4096],
                k_divisor: 64,
                tau2: 1.0,
                reps: 200,
            },
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> DiskError {
    DiskError::Input(format!("config key {key} = {value:?}: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "not a valid number"))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let cfg = Self::from_kv(&parse_kv(&text, &path.display().to_string())?)?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Applies `kv` on top of the defaults. Unknown keys are an error.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut nu = None;
        let mut rank = None;
        let mut variant = None;
        let mut kernel = None;
        if let Some(v) = kv.get("scenario") {
            c.sim = match v.as_str() {
                "sim1" => SimConfig::sim1(c.sim.n_train, c.sim.n_test, c.sim.seed),
                "sim2" => SimConfig::sim2(c.sim.n_train, c.sim.n_test, c.sim.seed),
                _ => return Err(bad("scenario", v, "expected sim1 or sim2")),
            };
        }
        // Scenario defaults are settled first so explicit values override them.
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "scenario" => {}
                "n_train" => c.sim.n_train = num(k, v)?,
                "n_test" => c.sim.n_test = num(k, v)?,
                "beta0" => c.sim.beta0 = num(k, v)?,
                "tau2_0" => c.sim.tau2_0 = num(k, v)?,
                "sigma2_0" => c.sim.sigma2_0 = num(k, v)?,
                "phi_0" => c.sim.phi_0 = num(k, v)?,
                "domain_lo" => c.sim.domain.0 = num(k, v)?,
                "domain_hi" => c.sim.domain.1 = num(k, v)?,
                "train_path" => c.train_path = Some(PathBuf::from(v)),
                "test_path" => c.test_path = Some(PathBuf::from(v)),
                "w0_path" => c.w0_path = Some(PathBuf::from(v)),
                "k" => c.k = num(k, v)?,
                "overlap" => c.overlap = num(k, v)?,
                "kernel" => kernel = Some(v.to_string()),
                "nu" => nu = Some(num::<f64>(k, v)?),
                "variant" => variant = Some(v.to_string()),
                "rank" => rank = Some(num::<usize>(k, v)?),
                "knots_shared" => c.knots_shared = boolean(k, v)?,
                "mu_beta" => c.prior.mu_beta = num(k, v)?,
                "sigma2_beta" => c.prior.sigma2_beta = num(k, v)?,
                "a_sigma" => c.prior.a_sigma = num(k, v)?,
                "b_sigma" => c.prior.b_sigma = num(k, v)?,
                "a_tau" => c.prior.a_tau = num(k, v)?,
                "b_tau" => c.prior.b_tau = num(k, v)?,
                "phi_lo" => c.prior.phi_lo = num(k, v)?,
                "phi_hi" => c.prior.phi_hi = num(k, v)?,
                "n_iter" => c.mcmc.n_iter = num(k, v)?,
                "burn_in" => c.mcmc.burn_in = num(k, v)?,
                "thin" => c.mcmc.thin = num(k, v)?,
                "step_size" => c.mcmc.step_sizes = [num(k, v)?; 3],
                "adapt" => c.mcmc.adapt = boolean(k, v)?,
                "xi" => c.xi = num(k, v)?,
                "level" => c.level = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "workers" => c.workers = num(k, v)?,
                "risk_n_grid" => {
                    c.risk.n_grid = v
                        .split(',')
                        .map(|s| num::<usize>(k, s.trim()))
                        .collect::<Result<_>>()?
                }
                "risk_k_divisor" => c.risk.k_divisor = num(k, v)?,
                "risk_tau2" => c.risk.tau2 = num(k, v)?,
                "risk_reps" => c.risk.reps = num(k, v)?,
                _ => return Err(DiskError::Input(format!("unknown config key {k}"))),
            }
        }
        c.kernel = match kernel.as_deref() {
            None | Some("exponential") => KernelSpec::Exponential,
            Some("squared_exponential") => KernelSpec::SquaredExponential,
            Some("matern") => KernelSpec::matern(nu.ok_or_else(|| DiskError::Input("kernel = matern needs nu".into()))?)?,
            Some(other) => return Err(bad("kernel", other, "expected exponential, squared_exponential or matern")),
        };
        c.variant = match variant.as_deref() {
            None | Some("mpp") => VariantChoice::Mpp {
                rank: rank.unwrap_or(DEFAULT_RANK),
            },
            Some("full") => VariantChoice::FullRank,
            Some(other) => return Err(bad("variant", other, "expected full or mpp")),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(DiskError::Input("k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(DiskError::Input("workers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(DiskError::Input(format!("overlap must be in [0, 1), got {}", self.overlap)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(DiskError::Input(format!("level must be in (0, 1), got {}", self.level)));
        }
        if self.risk.k_divisor == 0 {
            return Err(DiskError::Input("risk_k_divisor must be at least 1".into()));
        }
        self.sim.validate()?;
        self.prior.for_p(1).validate()?;
        self.mcmc.validate()?;
        QuantileGrid::new(self.xi)?;
        Ok(())
    }

    fn check_paths(&self) -> Result<()> {
        for p in [&self.train_path, &self.test_path, &self.w0_path].into_iter().flatten() {
            if !p.exists() {
                return Err(DiskError::Input(format!("config references missing file {}", p.display())));
            }
        }
        Ok(())
    }

    /// The effective configuration as `key = value` text; loading it back
    /// gives the same config.
    pub fn to_kv(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            (
                "scenario",
                match self.sim.scenario {
                    Scenario::Sim1 => "sim1",
                    Scenario::Sim2 => "sim2",
                }
                .into(),
            ),
            ("n_train", self.sim.n_train.to_string()),
            ("n_test", self.sim.n_test.to_string()),
            ("beta0", self.sim.beta0.to_string()),
            ("tau2_0", self.sim.tau2_0.to_string()),
            ("sigma2_0", self.sim.sigma2_0.to_string()),
            ("phi_0", self.sim.phi_0.to_string()),
            ("domain_lo", self.sim.domain.0.to_string()),
            ("domain_hi", self.sim.domain.1.to_string()),
        ];
        for (key, p) in [("train_path", &self.train_path), ("test_path", &self.test_path), ("w0_path", &self.w0_path)] {
            if let Some(p) = p {
                pairs.push((key, p.display().to_string()));
            }
        }
        pairs.push(("k", self.k.to_string()));
        pairs.push(("overlap", self.overlap.to_string()));
        match self.kernel {
            KernelSpec::Exponential => pairs.push(("kernel", "exponential".into())),
            KernelSpec::SquaredExponential => pairs.push(("kernel", "squared_exponential".into())),
            KernelSpec::Matern { nu } => {
                pairs.push(("kernel", "matern".into()));
                pairs.push(("nu", nu.to_string()));
            }
        }
        match self.variant {
            VariantChoice::FullRank => pairs.push(("variant", "full".into())),
            VariantChoice::Mpp { rank } => {
                pairs.push(("variant", "mpp".into()));
                pairs.push(("rank", rank.to_string()));
            }
        }
        let pr = &self.prior;
        pairs.extend([
            ("knots_shared", self.knots_shared.to_string()),
            ("mu_beta", pr.mu_beta.to_string()),
            ("sigma2_beta", pr.sigma2_beta.to_string()),
            ("a_sigma", pr.a_sigma.to_string()),
            ("b_sigma", pr.b_sigma.to_string()),
            ("a_tau", pr.a_tau.to_string()),
            ("b_tau", pr.b_tau.to_string()),
            ("phi_lo", pr.phi_lo.to_string()),
            ("phi_hi", pr.phi_hi.to_string()),
            ("n_iter", self.mcmc.n_iter.to_string()),
            ("burn_in", self.mcmc.burn_in.to_string()),
            ("thin", self.mcmc.thin.to_string()),
            ("step_size", self.mcmc.step_sizes[0].to_string()),
            ("adapt", self.mcmc.adapt.to_string()),
            ("xi", self.xi.to_string()),
            ("level", self.level.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            (
                "risk_n_grid",
                self.risk.n_grid.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("risk_k_divisor", self.risk.k_divisor.to_string()),
            ("risk_tau2", self.risk.tau2.to_string()),
            ("risk_reps", self.risk.reps.to_string()),
        ]);
        format_kv(&pairs)
    }
}
