//! Synthetic benchmark data and the evaluation report.
//!
//! Locations are generated in blocks of [`BLOCK`] points; block `b` draws
//! from `derive_seed(seed, b)` so the output does not depend on how blocks
//! are scheduled across threads. Within a block each point consumes two
//! uniforms for its coordinates and one normal for its noise, in that order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::combine::DiskPosterior;
use crate::error::{DiskError, Result};
use crate::kernels::{chol_psd, CovParams, Covariance, Kernel, KernelSpec, Location};
use crate::model::SpatialDataset;
use crate::rng::{derive_seed, rng_from_seed, unit_f64};

pub const BLOCK: usize = 4096;
/// Largest `n_train + n_test` accepted by the dense joint draw.
pub const SIM2_MAX_POINTS: usize = 20_000;
/// Stream for the joint GP draw, kept apart from the block streams.
const FIELD_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Deterministic surface `w₀(s) = −f₀(s₁) f₀(s₂)`.
    Sim1,
    /// `w₀` drawn from an exponential-kernel GP.
    Sim2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n_train: usize,
    pub n_test: usize,
    pub beta0: f64,
    pub tau2_0: f64,
    /// Sim2 only.
    pub sigma2_0: f64,
    /// Sim2 only.
    pub phi_0: f64,
    /// Locations are uniform on `[lo, hi]²`.
    pub domain: (f64, f64),
    pub seed: u64,
}

impl SimConfig {
    pub fn sim1(n_train: usize, n_test: usize, seed: u64) -> Self {
        SimConfig {
            scenario: Scenario::Sim1,
            n_train,
            n_test,
            beta0: 1.0,
            tau2_0: 0.01,
            sigma2_0: 1.0,
            phi_0: 9.0,
            domain: (-2.0, 2.0),
            seed,
        }
    }

    pub fn sim2(n_train: usize, n_test: usize, seed: u64) -> Self {
        SimConfig {
            scenario: Scenario::Sim2,
            tau2_0: 0.1,
            ..Self::sim1(n_train, n_test, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Both sets are datasets with an intercept column, so each needs n > p = 1.
        if self.n_train < 2 || self.n_test < 2 {
            return Err(DiskError::input(format!(
                "need n_train >= 2 and n_test >= 2, got {} and {}",
                self.n_train, self.n_test
            )));
        }
        for (name, v) in [("tau2_0", self.tau2_0), ("sigma2_0", self.sigma2_0), ("phi_0", self.phi_0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DiskError::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.beta0.is_finite() {
            return Err(DiskError::input("beta0 must be finite"));
        }
        let (lo, hi) = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DiskError::input(format!("bad domain [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn total(&self) -> usize {
        self.n_train + self.n_test
    }
}

/// Training and test sets with the true surface at every location.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub train: SpatialDataset,
    pub test: SpatialDataset,
    pub w0_train: DVector<f64>,
    pub w0_test: DVector<f64>,
}

pub fn f0(s: f64) -> f64 {
    (-(s - 1.0).powi(2)).exp() + (-0.8 * (s + 1.0).powi(2)).exp() - 0.05 * (8.0 * (s + 0.1)).sin()
}

pub fn sim1_surface(s: &Location) -> f64 {
    let c = s.coords();
    -f0(c[0]) * f0(c[1])
}

/// Points of block `b`: locations and standard-normal noise.
fn block_points(cfg: &SimConfig, b: usize) -> (Vec<Location>, Vec<f64>) {
    let start = b * BLOCK;
    let len = BLOCK.min(cfg.total() - start);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, b as u64));
    let (lo, hi) = cfg.domain;
    let mut locs = Vec::with_capacity(len);
    let mut noise = Vec::with_capacity(len);
    for _ in 0..len {
        let s1 = lo + (hi - lo) * unit_f64(&mut rng);
        let s2 = lo + (hi - lo) * unit_f64(&mut rng);
        locs.push(Location::xy(s1, s2));
        noise.push(rng.sample::<f64, _>(StandardNormal));
    }
    (locs, noise)
}

fn all_points(cfg: &SimConfig) -> (Vec<Location>, Vec<f64>) {
    let blocks = cfg.total().div_ceil(BLOCK);
    let parts: Vec<_> = (0..blocks).into_par_iter().map(|b| block_points(cfg, b)).collect();
    let mut locs = Vec::with_capacity(cfg.total());
    let mut noise = Vec::with_capacity(cfg.total());
    for (l, e) in parts {
        locs.extend(l);
        noise.extend(e);
    }
    (locs, noise)
}

fn assemble(cfg: &SimConfig, locs: Vec<Location>, noise: Vec<f64>, w0: Vec<f64>) -> Result<SimData> {
    let sd = cfg.tau2_0.sqrt();
    let y: Vec<f64> = w0.iter().zip(&noise).map(|(w, e)| cfg.beta0 + w + sd * e).collect();
    let n = cfg.n_train;
    let mut locs = locs;
    let test_locs = locs.split_off(n);
    let ones = |m| DMatrix::from_element(m, 1, 1.0);
    Ok(SimData {
        train: SpatialDataset::new(locs, ones(n), DVector::from_column_slice(&y[..n]))?,
        test: SpatialDataset::new(test_locs, ones(cfg.n_test), DVector::from_column_slice(&y[n..]))?,
        w0_train: DVector::from_column_slice(&w0[..n]),
        w0_test: DVector::from_column_slice(&w0[n..]),
    })
}

/// `y = β₀ + w₀(s) + ε` at `n_train + n_test` uniform locations; the first
/// `n_train` are the training set.
pub fn gen_sim1(cfg: &SimConfig) -> Result<SimData> {
    cfg.validate()?;
    let (locs, noise) = all_points(cfg);
    let w0 = locs.par_iter().map(sim1_surface).collect();
    assemble(cfg, locs, noise, w0)
}

/// Like [`gen_sim1`] but `w₀` is one joint draw `L z` from the GP with
/// covariance `σ₀² exp(−φ₀ d)`, `z` taken from its own stream.
pub fn gen_sim2(cfg: &SimConfig) -> Result<SimData> {
    cfg.validate()?;
    if cfg.total() > SIM2_MAX_POINTS {
        return Err(DiskError::input(format!(
            "Sim2 needs a dense draw; {} points exceeds {SIM2_MAX_POINTS}",
            cfg.total()
        )));
    }
    let (locs, noise) = all_points(cfg);
    let params = CovParams::new(cfg.sigma2_0, cfg.tau2_0, cfg.phi_0)?;
    let kernel = Kernel::new(KernelSpec::Exponential, &params);
    let factor = chol_psd(&kernel.gram(&locs), cfg.sigma2_0)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, FIELD_STREAM));
    let z = DVector::from_fn(locs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let w0 = factor.mul_l(&z).iter().copied().collect();
    assemble(cfg, locs, noise, w0)
}

/// One block of Sim1 data as `(locations, y, w₀)`.
pub type Sim1Block = (Vec<Location>, Vec<f64>, Vec<f64>);

/// Sim1 generation without holding the whole dataset: calls `sink` once per
/// block, in order. Produces exactly the rows of [`gen_sim1`].
pub fn stream_sim1(cfg: &SimConfig, mut sink: impl FnMut(Sim1Block) -> Result<()>) -> Result<()> {
    cfg.validate()?;
    let sd = cfg.tau2_0.sqrt();
    for b in 0..cfg.total().div_ceil(BLOCK) {
        let (locs, noise) = block_points(cfg, b);
        let w0: Vec<f64> = locs.iter().map(sim1_surface).collect();
        let y = w0.iter().zip(&noise).map(|(w, e)| cfg.beta0 + w + sd * e).collect();
        sink((locs, y, w0))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bias2: f64,
    pub variance: f64,
    pub l2_risk: f64,
    pub mspe: f64,
    pub ci_coverage: f64,
    pub ci_length: f64,
    pub pi_coverage: f64,
    pub pi_length: f64,
}

/// Scores a DISK posterior against the truth at the test locations.
///
/// Point estimates are posterior medians, variances come from
/// [`QuantileSummary::moments`](crate::combine::QuantileSummary::moments),
/// and intervals run between the `(1 ∓ level)/2` quantiles. An interval
/// covers a value when `lo <= value <= hi`.
pub fn evaluate(disk: &DiskPosterior, w0_test: &DVector<f64>, y_test: &DVector<f64>, level: f64) -> Result<EvalReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DiskError::input(format!("level must be in (0, 1), got {level}")));
    }
    let l = w0_test.len();
    if l == 0 || y_test.len() != l {
        return Err(DiskError::input(format!(
            "truth has {l} values and y_test has {}",
            y_test.len()
        )));
    }
    let (p_lo, p_hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let get = |label: String| disk.get(&label).ok_or_else(|| DiskError::input(format!("posterior has no {label}")));
    let mut acc = [0.0; 8];
    for i in 0..l {
        let w = get(format!("wstar_{}", i + 1))?;
        let y = get(format!("ystar_{}", i + 1))?;
        let (w_hat, (_, w_var)) = (w.median(), w.moments());
        let (w_lo, w_hi) = (w.quantile_at(p_lo), w.quantile_at(p_hi));
        let (y_lo, y_hi) = (y.quantile_at(p_lo), y.quantile_at(p_hi));
        acc[0] += (w_hat - w0_test[i]).powi(2);
        acc[1] += w_var;
        acc[2] += (y.median() - y_test[i]).powi(2);
        acc[3] += f64::from(u8::from(w_lo <= w0_test[i] && w0_test[i] <= w_hi));
        acc[4] += w_hi - w_lo;
        acc[5] += f64::from(u8::from(y_lo <= y_test[i] && y_test[i] <= y_hi));
        acc[6] += y_hi - y_lo;
    }
    let lf = l as f64;
    let [bias2, variance, mspe, ci_coverage, ci_length, pi_coverage, pi_length, _] = acc.map(|a| a / lf);
    Ok(EvalReport {
        bias2,
        variance,
        l2_risk: bias2 + variance,
        mspe,
        ci_coverage,
        ci_length,
        pi_coverage,
        pi_length,
    })
}
