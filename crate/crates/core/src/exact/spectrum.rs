use crate::error::{DiskError, Result};
use crate::kernels::{Covariance, Location};

const EIG_TOL: f64 = 1e-12;

/// Effective dimension `γ(a) = Σ μ_i / (μ_i + a)`.
pub fn gamma_eff_dim(eigenvalues: &[f64], a: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(DiskError::input(format!("a must be positive, got {a}")));
    }
    let mut prev = f64::INFINITY;
    let mut sum = 0.0;
    for (i, &mu) in eigenvalues.iter().enumerate() {
        if !mu.is_finite() || mu < -EIG_TOL {
            return Err(DiskError::input(format!("eigenvalue {i} is {mu}")));
        }
        if mu > prev + EIG_TOL * prev.abs().max(1.0) {
            return Err(DiskError::input("eigenvalues must be sorted non-increasing"));
        }
        prev = mu;
        let mu = mu.max(0.0);
        sum += mu / (mu + a);
    }
    Ok(sum)
}

/// Nyström estimate of the integral-operator spectrum: the eigenvalues of
/// `K_N / N` for `N` design points, sorted non-increasing.
pub fn nystrom_eigenvalues<C: Covariance + ?Sized>(cov: &C, locations: &[Location]) -> Result<Vec<f64>> {
    if locations.is_empty() {
        return Err(DiskError::input("need at least one design point"));
    }
    let n = locations.len() as f64;
    let k = cov.gram(locations) / n;
    let mut eig: Vec<f64> = k.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}
