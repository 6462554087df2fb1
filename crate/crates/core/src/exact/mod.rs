//! Known-parameter Gaussian model with a closed-form DISK posterior.
//!
//! With β absent and α fixed, each subset posterior for `w(s*)` is Gaussian
//! with the nugget scaled to `τ²/k`, and the barycenter of Gaussians is the
//! Gaussian with averaged means and averaged standard deviations.

mod derivatives;
mod risk;
mod spectrum;

use nalgebra::{DMatrix, DVector};

use crate::error::{DiskError, Result};
use crate::kernels::{chol_psd, common_dim, CovParams, Covariance, Kernel, KernelSpec, Location};

pub use derivatives::{exponential_dr_dphi, phi_loglik_derivatives};
pub use risk::{rate_study, risk_decomposition, DegenerateKernel, RateStudy, RiskReport};
pub use spectrum::{gamma_eff_dim, nystrom_eigenvalues};

/// One training subset: locations and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSubset {
    pub locations: Vec<Location>,
    pub y: DVector<f64>,
}

/// DISK posterior `N(m̄, v̄)` at each prediction location.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDiskResult {
    pub m_bar: DVector<f64>,
    pub v_bar: DVector<f64>,
    /// k × l subset posterior variances `v_j`.
    pub per_subset_v: DMatrix<f64>,
}

/// Per-subset pieces: `A_j = (C_jj + τ²/k I)⁻¹ C_j*` and `v_j`.
pub(crate) struct SubsetSolve {
    pub a: DMatrix<f64>,
    pub v: DVector<f64>,
}

pub(crate) fn subset_solve<C: Covariance + ?Sized>(
    cov: &C,
    locations: &[Location],
    s_star: &[Location],
    nugget: f64,
    scale: f64,
) -> Result<SubsetSolve> {
    let mut r = cov.gram(locations);
    for i in 0..r.nrows() {
        r[(i, i)] += nugget;
    }
    let f = chol_psd(&r, scale)?;
    let c_j_star = cov.matrix(locations, s_star);
    let a = f.solve_mat(&c_j_star);
    let v = DVector::from_fn(s_star.len(), |i, _| {
        let c_ss = cov.cov(&s_star[i], &s_star[i]);
        (c_ss - c_j_star.column(i).dot(&a.column(i))).max(0.0)
    });
    Ok(SubsetSolve { a, v })
}

/// Closed-form DISK posterior for any covariance function.
pub fn disk_gauss_posterior_with<C: Covariance + ?Sized>(
    subsets: &[TrainingSubset],
    s_star: &[Location],
    tau2: f64,
    cov: &C,
    scale: f64,
) -> Result<ExactDiskResult> {
    if subsets.is_empty() || s_star.is_empty() {
        return Err(DiskError::input("need at least one subset and one prediction location"));
    }
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return Err(DiskError::input(format!("tau2 must be positive, got {tau2}")));
    }
    for (j, s) in subsets.iter().enumerate() {
        if s.locations.is_empty() || s.locations.len() != s.y.len() {
            return Err(DiskError::input(format!(
                "subset {j} has {} locations and {} responses",
                s.locations.len(),
                s.y.len()
            )));
        }
    }
    let mut all: Vec<&[Location]> = subsets.iter().map(|s| s.locations.as_slice()).collect();
    all.push(s_star);
    common_dim(&all)?;

    let k = subsets.len();
    let l = s_star.len();
    let nugget = tau2 / k as f64;
    let mut m_bar = DVector::zeros(l);
    let mut sd_bar = DVector::zeros(l);
    let mut per_subset_v = DMatrix::zeros(k, l);
    for (j, s) in subsets.iter().enumerate() {
        let solve = subset_solve(cov, &s.locations, s_star, nugget, scale)?;
        m_bar += solve.a.tr_mul(&s.y);
        sd_bar += solve.v.map(f64::sqrt);
        per_subset_v.row_mut(j).copy_from(&solve.v.transpose());
    }
    m_bar /= k as f64;
    sd_bar /= k as f64;
    Ok(ExactDiskResult {
        m_bar,
        v_bar: sd_bar.map(|s| s * s),
        per_subset_v,
    })
}

/// Closed-form DISK posterior for a parent kernel.
pub fn disk_gauss_posterior(
    subsets: &[TrainingSubset],
    s_star: &[Location],
    tau2: f64,
    spec: KernelSpec,
    params: &CovParams,
) -> Result<ExactDiskResult> {
    spec.validate()?;
    let kernel = Kernel::new(spec, params);
    disk_gauss_posterior_with(subsets, s_star, tau2, &kernel, params.sigma2)
}
