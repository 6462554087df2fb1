//! Metropolis-within-Gibbs sampler for one subset posterior.
//!
//! Each iteration draws β from its Gaussian conditional, then updates
//! α = (σ², τ², φ) with one joint random-walk Metropolis step on
//! `(log σ², log τ², logit φ)`. The likelihood is raised to the power
//! `a = n / m_j`. At retained iterations the chain also draws `w*` (latent
//! surface at the prediction locations, with nugget `τ²/a`) and `y*`
//! (with nugget `τ²`). Both are leaves of the Gibbs graph, so skipping them
//! at discarded iterations does not change the retained draws' law.

mod conditionals;
mod mh;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{DiskError, Result};
use crate::kernels::{common_dim, CovParams, KnotSet, Location};
use crate::model::{tempered_gaussian, CovFactor, GpVariant, ModelConfig, SpatialDataset, SubsetCovariance};
use crate::rng::{derive_seed, rng_from_seed, DiskRng};

pub use conditionals::sample_ystar_conditional;
pub use mh::{metropolis_alpha_step, AlphaTransform};

use conditionals::{BetaConditional, PredictionGeometry, WstarConditional};
use mh::Adapter;

/// Stream id for knots drawn inside a chain when none were supplied.
const KNOT_STREAM: u64 = u64::MAX;
const ABORT_WINDOW: usize = 100;
const ABORT_CONSECUTIVE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub step_sizes: [f64; 3],
    pub adapt: bool,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 15_000,
            burn_in: 10_000,
            thin: 5,
            step_sizes: [0.1; 3],
            adapt: true,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(DiskError::input(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(DiskError::input("thin must be at least 1"));
        }
        if self.step_sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(DiskError::input(format!("step sizes must be positive, got {:?}", self.step_sizes)));
        }
        if self.retained() == 0 {
            return Err(DiskError::input("no draws would be retained; lower thin or burn_in"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Whether 0-based iteration `it` is kept.
    pub fn is_retained(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in + 1).is_multiple_of(self.thin) && (it - self.burn_in + 1) / self.thin <= self.retained()
    }
}

/// Retained draws of one subset chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetChain {
    /// 0-based iteration numbers of the retained draws.
    pub iterations: Vec<usize>,
    pub beta_draws: DMatrix<f64>,
    /// Columns σ², τ², φ.
    pub alpha_draws: DMatrix<f64>,
    pub wstar_draws: DMatrix<f64>,
    pub ystar_draws: DMatrix<f64>,
    /// Acceptance rate of the α step after burn-in.
    pub acceptance_rate: f64,
    /// Factorisations that needed jitter, plus ones that failed outright.
    pub jitter_events: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl SubsetChain {
    pub fn retained(&self) -> usize {
        self.iterations.len()
    }

    pub fn p(&self) -> usize {
        self.beta_draws.ncols()
    }

    pub fn l(&self) -> usize {
        self.wstar_draws.ncols()
    }
}

fn knots_of(config: &ModelConfig) -> Result<Option<&KnotSet>> {
    match &config.variant {
        GpVariant::FullRank => Ok(None),
        GpVariant::Mpp { knots: Some(k), .. } => Ok(Some(k)),
        GpVariant::Mpp { knots: None, .. } => Err(DiskError::input(
            "predictive-process conditionals need explicit knots",
        )),
    }
}

fn check_exponent(exponent: f64) -> Result<()> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(DiskError::input(format!("exponent must be positive, got {exponent}")));
    }
    Ok(())
}

fn factor_at(data: &SpatialDataset, alpha: &CovParams, config: &ModelConfig) -> Result<CovFactor> {
    let geom = SubsetCovariance::new(data.locations(), knots_of(config)?)?;
    geom.structure(config.kernel, alpha)?.factor(alpha.tau2)
}

/// Mean and covariance of β given α.
pub fn beta_conditional_moments(
    data: &SpatialDataset,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_exponent(exponent)?;
    let (prec, shift) = config.prior.beta_precision()?;
    let factor = factor_at(data, alpha, config)?;
    let cond = BetaConditional::new(&factor, data, &prec, &shift, exponent)?;
    Ok((cond.mean.clone(), cond.covariance()))
}

/// One exact draw of β from its tempered Gaussian conditional.
pub fn sample_beta_conditional<R: Rng + ?Sized>(
    data: &SpatialDataset,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_exponent(exponent)?;
    let (prec, shift) = config.prior.beta_precision()?;
    let factor = factor_at(data, alpha, config)?;
    Ok(BetaConditional::new(&factor, data, &prec, &shift, exponent)?.draw(rng))
}

/// Log density of α given β, up to a constant; −∞ outside the prior support
/// or when the covariance cannot be factorised.
pub fn alpha_log_target(
    data: &SpatialDataset,
    beta: &DVector<f64>,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
) -> f64 {
    let prior = config.prior.alpha_log_prior(alpha);
    if !prior.is_finite() || !(exponent > 0.0) || beta.len() != data.p() {
        return f64::NEG_INFINITY;
    }
    match factor_at(data, alpha, config) {
        Ok(f) => prior + tempered_gaussian(&f, &(data.y() - data.x() * beta), exponent),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// One Metropolis update of α with the steps in `mcmc`.
pub fn mh_step_alpha<R: Rng + ?Sized>(
    state: &CovParams,
    data: &SpatialDataset,
    beta: &DVector<f64>,
    config: &ModelConfig,
    mcmc: &McmcConfig,
    exponent: f64,
    rng: &mut R,
) -> (CovParams, bool) {
    let transform = AlphaTransform {
        phi_lo: config.prior.phi_lo,
        phi_hi: config.prior.phi_hi,
    };
    let lt = alpha_log_target(data, beta, state, config, exponent);
    let (next, _, ok) = metropolis_alpha_step(
        state,
        lt,
        &mcmc.step_sizes,
        &transform,
        |a| alpha_log_target(data, beta, a, config, exponent),
        rng,
    );
    (next, ok)
}

/// Mean and covariance of `w*` given β and α, using the nugget `τ²/a` and
/// the direct form `C** − C*j (C_jj + τ²/a I)⁻¹ Cj*`. The predictive-process
/// covariance is returned as `diag(δ*) + V*ᵀ B⁻¹ V*`, the same representation
/// the sampler draws from.
pub fn wstar_moments(
    data: &SpatialDataset,
    s_star: &[Location],
    beta: &DVector<f64>,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cond = wstar_conditional(data, s_star, beta, alpha, config, exponent)?;
    Ok((cond.mean().clone(), cond.covariance()))
}

fn wstar_conditional(
    data: &SpatialDataset,
    s_star: &[Location],
    beta: &DVector<f64>,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
) -> Result<WstarConditional> {
    check_exponent(exponent)?;
    alpha.validate()?;
    if s_star.is_empty() {
        return Err(DiskError::input("need at least one prediction location"));
    }
    if beta.len() != data.p() {
        return Err(DiskError::input("beta length does not match design"));
    }
    common_dim(&[data.locations(), s_star])?;
    let knots = knots_of(config)?;
    let geom = SubsetCovariance::new(data.locations(), knots)?;
    let structure = geom.structure(config.kernel, alpha)?;
    let pred = PredictionGeometry::new(data.locations(), s_star, geom.knot_locations());
    WstarConditional::new(&structure, &pred, &(data.y() - data.x() * beta), alpha.tau2 / exponent)
}

/// One exact draw of `w*` from its conditional.
pub fn sample_wstar_conditional<R: Rng + ?Sized>(
    data: &SpatialDataset,
    s_star: &[Location],
    beta: &DVector<f64>,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let cond = wstar_conditional(data, s_star, beta, alpha, config, exponent)?;
    Ok(cond.draw(alpha.sigma2, rng).0)
}

/// Knots drawn uniformly over the bounding box of `locs`.
pub fn random_knots<R: Rng + ?Sized>(locs: &[Location], r: usize, rng: &mut R) -> Result<KnotSet> {
    let d = common_dim(&[locs])?;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for l in locs {
        for (i, c) in l.coords().iter().enumerate() {
            lo[i] = lo[i].min(*c);
            hi[i] = hi[i].max(*c);
        }
    }
    let knots = (0..r)
        .map(|_| {
            let c = (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()).collect();
            Location::new(c)
        })
        .collect::<Result<Vec<_>>>()?;
    KnotSet::new(knots)
}

/// Runs one subset chain.
pub fn run_subset_chain(
    data: &SpatialDataset,
    s_star: &[Location],
    x_star: &DMatrix<f64>,
    config: &ModelConfig,
    mcmc: &McmcConfig,
    exponent: f64,
) -> Result<SubsetChain> {
    let start = Instant::now();
    config.validate()?;
    mcmc.validate()?;
    check_exponent(exponent)?;
    let p = data.p();
    if config.prior.p() != p {
        return Err(DiskError::input(format!(
            "prior has {} regression coefficients but design has {p}",
            config.prior.p()
        )));
    }
    if s_star.is_empty() || x_star.nrows() != s_star.len() || x_star.ncols() != p {
        return Err(DiskError::input(format!(
            "prediction inputs disagree: {} locations, X* is {}x{}",
            s_star.len(),
            x_star.nrows(),
            x_star.ncols()
        )));
    }
    common_dim(&[data.locations(), s_star])?;
    let m = data.n();

    let drawn_knots;
    let knots = match &config.variant {
        GpVariant::FullRank => None,
        GpVariant::Mpp { rank, knots } => {
            if *rank >= m {
                return Err(DiskError::input(format!(
                    "predictive-process rank {rank} must be below subset size {m}"
                )));
            }
            match knots {
                Some(k) => {
                    if k.dim() != data.dim() {
                        return Err(DiskError::input("knot dimension does not match data"));
                    }
                    Some(k)
                }
                None => {
                    let mut krng = rng_from_seed(derive_seed(mcmc.seed, KNOT_STREAM));
                    drawn_knots = random_knots(data.locations(), *rank, &mut krng)?;
                    Some(&drawn_knots)
                }
            }
        }
    };
    warn_duplicates(data.locations(), s_star);

    let geom = SubsetCovariance::new(data.locations(), knots)?;
    let pred = PredictionGeometry::new(data.locations(), s_star, geom.knot_locations());
    let (prior_prec, prior_shift) = config.prior.beta_precision()?;
    let transform = AlphaTransform {
        phi_lo: config.prior.phi_lo,
        phi_hi: config.prior.phi_hi,
    };
    let mut rng: DiskRng = rng_from_seed(mcmc.seed);
    let mut jitter_events = 0usize;

    let mut alpha = config.prior.initial_alpha();
    let mut structure = geom.structure(config.kernel, &alpha).map_err(|e| abort(format!(
        "covariance at the initial alpha {alpha:?} cannot be factorised: {e}"
    )))?;
    let mut factor = structure
        .factor(alpha.tau2)
        .map_err(|e| abort(format!("initial factorisation failed: {e}")))?;
    jitter_events += usize::from(factor.used_jitter());

    // β is drawn first in every sweep, so the GLS start only seeds the
    // diagnostics and rejects rank-deficient designs up front.
    let beta_start = gls_estimate(&factor, data)?;
    log::debug!("chain seed {}: GLS start beta = {:?}", mcmc.seed, beta_start.as_slice());

    let retained = mcmc.retained();
    let l = s_star.len();
    let mut iterations = Vec::with_capacity(retained);
    let mut beta_draws = DMatrix::zeros(retained, p);
    let mut alpha_draws = DMatrix::zeros(retained, 3);
    let mut wstar_draws = DMatrix::zeros(retained, l);
    let mut ystar_draws = DMatrix::zeros(retained, l);

    let mut steps = mcmc.step_sizes;
    let mut adapter = Adapter::new();
    let mut monitor = FailureMonitor::default();
    let mut accepted_post = 0usize;
    let mut row = 0usize;

    for it in 0..mcmc.n_iter {
        // β | α
        let cond = BetaConditional::new(&factor, data, &prior_prec, &prior_shift, exponent)?;
        let beta = cond.draw(&mut rng);
        let resid = data.y() - data.x() * &beta;

        // α | β
        let current_lt = config.prior.alpha_log_prior(&alpha) + tempered_gaussian(&factor, &resid, exponent);
        let mut proposal_state = None;
        let mut failed = false;
        let (next, _, accepted) = metropolis_alpha_step(
            &alpha,
            current_lt,
            &steps,
            &transform,
            |a| {
                let prior = config.prior.alpha_log_prior(a);
                if !prior.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let built = geom
                    .structure(config.kernel, a)
                    .and_then(|s| s.factor(a.tau2).map(|f| (s, f)));
                match built {
                    Ok((s, f)) => {
                        let lt = prior + tempered_gaussian(&f, &resid, exponent);
                        proposal_state = Some((s, f));
                        lt
                    }
                    Err(_) => {
                        failed = true;
                        f64::NEG_INFINITY
                    }
                }
            },
            &mut rng,
        );
        jitter_events += usize::from(failed);
        monitor.record(it, failed).map_err(|e| match e {
            DiskError::ChainAbort { subset, reason } => DiskError::ChainAbort {
                subset,
                reason: format!("{reason} (alpha = {alpha:?})"),
            },
            other => other,
        })?;
        if let Some((_, f)) = &proposal_state {
            jitter_events += usize::from(f.used_jitter());
        }
        if accepted {
            let (s, f) = proposal_state.expect("accepted proposal has a factorisation");
            structure = s;
            factor = f;
            alpha = next;
        }
        if it < mcmc.burn_in {
            if mcmc.adapt {
                adapter.record(accepted, &mut steps);
            }
        } else {
            accepted_post += usize::from(accepted);
        }

        if mcmc.is_retained(it) {
            let wcond = WstarConditional::new(&structure, &pred, &resid, alpha.tau2 / exponent)?;
            let (wstar, fallback) = wcond.draw(alpha.sigma2, &mut rng);
            jitter_events += usize::from(fallback);
            let ystar = sample_ystar_conditional(x_star, &beta, &wstar, &alpha, &mut rng)?;
            iterations.push(it);
            beta_draws.row_mut(row).copy_from(&beta.transpose());
            alpha_draws[(row, 0)] = alpha.sigma2;
            alpha_draws[(row, 1)] = alpha.tau2;
            alpha_draws[(row, 2)] = alpha.phi;
            wstar_draws.row_mut(row).copy_from(&wstar.transpose());
            ystar_draws.row_mut(row).copy_from(&ystar.transpose());
            row += 1;
        }
    }
    debug_assert_eq!(row, retained);

    Ok(SubsetChain {
        iterations,
        beta_draws,
        alpha_draws,
        wstar_draws,
        ystar_draws,
        acceptance_rate: accepted_post as f64 / (mcmc.n_iter - mcmc.burn_in) as f64,
        jitter_events,
        seed: mcmc.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Aborts a chain that cannot factorise its covariance early on.
#[derive(Debug, Default)]
pub(crate) struct FailureMonitor {
    consecutive: usize,
}

impl FailureMonitor {
    pub fn record(&mut self, it: usize, failed: bool) -> Result<()> {
        if !failed {
            self.consecutive = 0;
            return Ok(());
        }
        self.consecutive += 1;
        if it < ABORT_WINDOW && self.consecutive > ABORT_CONSECUTIVE {
            return Err(abort(format!(
                "{} consecutive factorisation failures in the first {ABORT_WINDOW} iterations",
                self.consecutive
            )));
        }
        Ok(())
    }
}

fn abort(reason: String) -> DiskError {
    DiskError::ChainAbort { subset: None, reason }
}

/// Generalised least squares `(XᵀΣ⁻¹X)⁻¹ XᵀΣ⁻¹y`.
fn gls_estimate(factor: &CovFactor, data: &SpatialDataset) -> Result<DVector<f64>> {
    let sx = factor.solve_mat(data.x());
    let a = data.x().tr_mul(&sx);
    let b = sx.tr_mul(data.y());
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| DiskError::numerical("design is rank deficient; GLS start undefined"))
}

fn warn_duplicates(s_j: &[Location], s_star: &[Location]) {
    let dup = s_star
        .iter()
        .filter(|s| s_j.iter().any(|t| s.dist_unchecked(t) == 0.0))
        .count();
    if dup > 0 {
        log::warn!("{dup} prediction locations coincide with training locations");
    }
}

#[cfg(test)]
mod tests;
