//! Datasets, priors and the (tempered) Gaussian likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{DiskError, Result};
use crate::kernels::{
    chol_psd, common_dim, distance_matrix, CovParams, Kernel, KernelSpec, KnotProjection, KnotSet,
    Location, LowRankSolver, PsdFactor,
};

/// Locations, design matrix and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    locations: Vec<Location>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl SpatialDataset {
    pub fn new(locations: Vec<Location>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(DiskError::input("dataset must have at least one observation"));
        }
        common_dim(&[&locations])?;
        if x.nrows() != n || y.len() != n {
            return Err(DiskError::input(format!(
                "dataset shapes disagree: {n} locations, X is {}x{}, y has {}",
                x.nrows(),
                x.ncols(),
                y.len()
            )));
        }
        if x.ncols() >= n {
            return Err(DiskError::input(format!(
                "need more observations than predictors (n={n}, p={})",
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DiskError::input("dataset contains non-finite values"));
        }
        Ok(SpatialDataset { locations, x, y })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn dim(&self) -> usize {
        self.locations[0].dim()
    }

    /// Rows `rows` of this dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(DiskError::input(format!("row {bad} out of range for n={}", self.n())));
        }
        let locations = rows.iter().map(|&r| self.locations[r].clone()).collect();
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        SpatialDataset::new(locations, x, y)
    }
}

/// Prior on (β, σ², τ², φ).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl PriorSpec {
    pub const DEFAULT_PHI_BOX: (f64, f64) = (0.01, 30.0);

    /// N(0, 100 I) on β, IG(2, 2) on σ², IG(2, 0.1) on τ², uniform φ on
    /// [`Self::DEFAULT_PHI_BOX`].
    pub fn default_for(p: usize) -> Self {
        PriorSpec {
            mu_beta: DVector::zeros(p),
            sigma_beta: DMatrix::identity(p, p) * 100.0,
            a_sigma: 2.0,
            b_sigma: 2.0,
            a_tau: 2.0,
            b_tau: 0.1,
            phi_lo: Self::DEFAULT_PHI_BOX.0,
            phi_hi: Self::DEFAULT_PHI_BOX.1,
        }
    }

    pub fn p(&self) -> usize {
        self.mu_beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.sigma_beta.shape() != (p, p) {
            return Err(DiskError::input("Sigma_beta shape does not match mu_beta"));
        }
        for (name, v) in [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DiskError::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.phi_lo < self.phi_hi && self.phi_lo > 0.0 && self.phi_hi.is_finite()) {
            return Err(DiskError::input(format!(
                "phi box must satisfy 0 < phi_lo < phi_hi, got [{}, {}]",
                self.phi_lo, self.phi_hi
            )));
        }
        self.sigma_beta_factor()?;
        Ok(())
    }

    fn sigma_beta_factor(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        if self.sigma_beta.iter().any(|v| !v.is_finite()) {
            return Err(DiskError::input("Sigma_beta has non-finite entries"));
        }
        if (&self.sigma_beta - self.sigma_beta.transpose()).amax() > 1e-10 * self.sigma_beta.amax() {
            return Err(DiskError::input("Sigma_beta is not symmetric"));
        }
        self.sigma_beta
            .clone()
            .cholesky()
            .ok_or_else(|| DiskError::input("Sigma_beta must be positive definite"))
    }

    /// `(Σ_β⁻¹, Σ_β⁻¹ μ_β)`.
    pub fn beta_precision(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let chol = self.sigma_beta_factor()?;
        let prec = chol.inverse();
        let prec = (&prec + prec.transpose()) * 0.5;
        let shift = &prec * &self.mu_beta;
        Ok((prec, shift))
    }

    /// Prior medians are not available in closed form for IG, so the chain
    /// starts at `b / a` for the variances and the middle of the φ box.
    pub fn initial_alpha(&self) -> CovParams {
        CovParams {
            sigma2: self.b_sigma / self.a_sigma,
            tau2: self.b_tau / self.a_tau,
            phi: 0.5 * (self.phi_lo + self.phi_hi),
        }
    }

    pub fn phi_in_box(&self, phi: f64) -> bool {
        phi >= self.phi_lo && phi <= self.phi_hi
    }

    /// Log prior density of α (IG, IG, uniform), −∞ outside the support.
    pub fn alpha_log_prior(&self, alpha: &CovParams) -> f64 {
        if !(alpha.sigma2 > 0.0 && alpha.tau2 > 0.0) || !self.phi_in_box(alpha.phi) {
            return f64::NEG_INFINITY;
        }
        inv_gamma_logpdf(alpha.sigma2, self.a_sigma, self.b_sigma)
            + inv_gamma_logpdf(alpha.tau2, self.a_tau, self.b_tau)
            - (self.phi_hi - self.phi_lo).ln()
    }
}

/// Log density of IG(a, b), normalising constant included.
pub fn inv_gamma_logpdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - libm::lgamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Full-rank GP or modified predictive process with `rank` knots.
#[derive(Debug, Clone, PartialEq)]
pub enum GpVariant {
    FullRank,
    Mpp { rank: usize, knots: Option<KnotSet> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub prior: PriorSpec,
    pub kernel: KernelSpec,
    pub variant: GpVariant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.kernel.validate()?;
        if let GpVariant::Mpp { rank, knots } = &self.variant {
            if *rank == 0 {
                return Err(DiskError::input("MPP rank must be at least 1"));
            }
            if let Some(k) = knots {
                if k.len() != *rank {
                    return Err(DiskError::input(format!(
                        "MPP rank {rank} but {} knots supplied",
                        k.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exponent-tempered Gaussian log-likelihood of `y − Xβ` under
/// `C + τ² I` (or `C̃ + τ² I` for the predictive process).
///
/// Every term, constants included, is multiplied by `exponent`.
pub fn marginal_loglik(
    data: &SpatialDataset,
    beta: &DVector<f64>,
    alpha: &CovParams,
    config: &ModelConfig,
    exponent: f64,
) -> Result<f64> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(DiskError::input(format!("exponent must be positive, got {exponent}")));
    }
    if beta.len() != data.p() {
        return Err(DiskError::input("beta length does not match design"));
    }
    alpha.validate()?;
    config.kernel.validate()?;
    let knots = match &config.variant {
        GpVariant::FullRank => None,
        GpVariant::Mpp { knots: Some(k), .. } => Some(k),
        GpVariant::Mpp { knots: None, .. } => {
            return Err(DiskError::input("predictive-process likelihood needs explicit knots"))
        }
    };
    let geom = SubsetCovariance::new(data.locations(), knots)?;
    let factor = geom.structure(config.kernel, alpha)?.factor(alpha.tau2)?;
    let resid = data.y() - data.x() * beta;
    Ok(tempered_gaussian(&factor, &resid, exponent))
}

pub(crate) fn tempered_gaussian(factor: &CovFactor, resid: &DVector<f64>, exponent: f64) -> f64 {
    let m = resid.len() as f64;
    let quad = resid.dot(&factor.solve_vec(resid));
    -0.5 * exponent * (m * (2.0 * PI).ln() + factor.log_det() + quad)
}

/// Distances for one subset, computed once and reused for every α.
#[derive(Debug, Clone)]
pub struct SubsetCovariance {
    d_jj: Option<DMatrix<f64>>,
    knots: Option<KnotDistances>,
}

#[derive(Debug, Clone)]
struct KnotDistances {
    d_00: DMatrix<f64>,
    d_0j: DMatrix<f64>,
    locations: Vec<Location>,
}

impl SubsetCovariance {
    /// Full-rank geometry when `knots` is `None`, predictive-process
    /// geometry otherwise. The m × m distance matrix is only built for the
    /// full-rank case.
    pub fn new(locations: &[Location], knots: Option<&KnotSet>) -> Result<Self> {
        match knots {
            None => {
                common_dim(&[locations])?;
                Ok(SubsetCovariance {
                    d_jj: Some(distance_matrix(locations, locations)),
                    knots: None,
                })
            }
            Some(k) => {
                common_dim(&[locations, k.locations()])?;
                Ok(SubsetCovariance {
                    d_jj: None,
                    knots: Some(KnotDistances {
                        d_00: distance_matrix(k.locations(), k.locations()),
                        d_0j: distance_matrix(k.locations(), locations),
                        locations: k.locations().to_vec(),
                    }),
                })
            }
        }
    }

    pub fn is_low_rank(&self) -> bool {
        self.knots.is_some()
    }

    pub fn knot_locations(&self) -> Option<&[Location]> {
        self.knots.as_ref().map(|k| k.locations.as_slice())
    }

    /// Covariance of the latent process at the subset locations, without
    /// nugget.
    pub fn structure(&self, spec: KernelSpec, alpha: &CovParams) -> Result<CovStructure> {
        let kernel = Kernel::new(spec, alpha);
        match (&self.d_jj, &self.knots) {
            (_, Some(k)) => {
                let k0 = kernel.from_distances(&k.d_00);
                let factor = chol_psd(&k0, kernel.sigma2)?;
                let proj = KnotProjection::with_factor(factor, kernel.from_distances(&k.d_0j), kernel.sigma2)?;
                Ok(CovStructure::LowRank { proj, kernel })
            }
            (Some(d), None) => Ok(CovStructure::Dense {
                c: kernel.from_distances(d),
                kernel,
            }),
            (None, None) => unreachable!("geometry has neither distances nor knots"),
        }
    }
}

/// Latent covariance at fixed α, ready to be factorised with a nugget.
#[derive(Debug, Clone)]
pub enum CovStructure {
    Dense { c: DMatrix<f64>, kernel: Kernel },
    LowRank { proj: KnotProjection, kernel: Kernel },
}

impl CovStructure {
    pub fn kernel(&self) -> &Kernel {
        match self {
            CovStructure::Dense { kernel, .. } | CovStructure::LowRank { kernel, .. } => kernel,
        }
    }

    /// Factorises `C + nugget I`.
    pub fn factor(&self, nugget: f64) -> Result<CovFactor> {
        match self {
            CovStructure::Dense { c, kernel } => {
                let mut m = c.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += nugget;
                }
                Ok(CovFactor::Dense(chol_psd(&m, kernel.sigma2)?))
            }
            CovStructure::LowRank { proj, .. } => {
                let lambda = proj.delta().add_scalar(nugget);
                let solver = LowRankSolver::new(proj.projected().clone(), lambda)?;
                let jitter = proj.knot_factor().jitter;
                Ok(CovFactor::LowRank { solver, knot_jitter: jitter })
            }
        }
    }

    /// Dense latent covariance matrix (for tests and small problems).
    pub fn dense(&self) -> DMatrix<f64> {
        match self {
            CovStructure::Dense { c, .. } => c.clone(),
            CovStructure::LowRank { proj, .. } => {
                let v = proj.projected();
                v.tr_mul(v) + DMatrix::from_diagonal(proj.delta())
            }
        }
    }
}

/// Factor of `C + nugget I`.
#[derive(Debug, Clone)]
pub enum CovFactor {
    Dense(PsdFactor),
    LowRank { solver: LowRankSolver, knot_jitter: f64 },
}

impl CovFactor {
    pub fn log_det(&self) -> f64 {
        match self {
            CovFactor::Dense(f) => f.log_det(),
            CovFactor::LowRank { solver, .. } => solver.log_det(),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            CovFactor::Dense(f) => f.solve_vec(b),
            CovFactor::LowRank { solver, .. } => solver.solve_vec(b),
        }
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CovFactor::Dense(f) => f.solve_mat(b),
            CovFactor::LowRank { solver, .. } => solver.solve_mat(b),
        }
    }

    /// Whether any factorisation behind this object needed jitter.
    pub fn used_jitter(&self) -> bool {
        match self {
            CovFactor::Dense(f) => f.jitter > 0.0,
            CovFactor::LowRank { solver, knot_jitter } => *knot_jitter > 0.0 || solver.jitter() > 0.0,
        }
    }
}
