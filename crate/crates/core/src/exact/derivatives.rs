use nalgebra::DMatrix;

use crate::error::{DiskError, Result};
use crate::kernels::{chol_psd, distance_matrix, KernelSpec};
use crate::model::SpatialDataset;

/// First and second φ-derivatives of the tempered log-likelihood
/// `−(k/2)(log|R| + yᵀR⁻¹y)`, `R = σ²e^{−φD} + τ²I`, for the exponential
/// kernel. The mean is taken to be zero, so `y` is used as is.
///
/// With `R′ = −D∘C`, `R″ = D²∘C`, `u = R⁻¹y` and `A = R⁻¹R′`:
///
/// ```text
/// d1 = −(k/2) tr A + (k/2) uᵀR′u
/// d2 = −(k/2)(tr R⁻¹R″ − tr A²) + (k/2)(uᵀR″u − 2 (R′u)ᵀR⁻¹(R′u))
/// ```
pub fn phi_loglik_derivatives(
    data: &SpatialDataset,
    phi: f64,
    sigma2: f64,
    tau2: f64,
    spec: KernelSpec,
    k_exponent: f64,
) -> Result<(f64, f64)> {
    if spec != KernelSpec::Exponential {
        return Err(DiskError::input("closed-form φ derivatives need the exponential kernel"));
    }
    for (name, v) in [("phi", phi), ("sigma2", sigma2), ("tau2", tau2), ("k_exponent", k_exponent)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(DiskError::input(format!("{name} must be positive, got {v}")));
        }
    }
    let d = distance_matrix(data.locations(), data.locations());
    let c = d.map(|x| sigma2 * (-phi * x).exp());
    let dp = -d.component_mul(&c);
    let d2p = d.component_mul(&d).component_mul(&c);
    let r = c + DMatrix::identity(data.n(), data.n()) * tau2;
    let f = chol_psd(&r, sigma2 + tau2)?;

    let u = f.solve_vec(data.y());
    let a = f.solve_mat(&dp);
    let tr_a = a.trace();
    let tr_a2 = a.component_mul(&a.transpose()).sum();
    let tr_b = f.solve_mat(&d2p).trace();
    let rpu = &dp * &u;
    let half = 0.5 * k_exponent;
    let d1 = -half * tr_a + half * u.dot(&rpu);
    let d2 = -half * (tr_b - tr_a2) + half * (u.dot(&(&d2p * &u)) - 2.0 * rpu.dot(&f.solve_vec(&rpu)));
    Ok((d1, d2))
}

/// `R′ = −D∘C` for the exponential kernel; exposed for diagnostics.
pub fn exponential_dr_dphi(data: &SpatialDataset, phi: f64, sigma2: f64) -> DMatrix<f64> {
    let d = distance_matrix(data.locations(), data.locations());
    d.map(|x| -x * sigma2 * (-phi * x).exp())
}
