use nalgebra::{DMatrix, DVector};

use super::cholesky::{chol_psd, PsdFactor};
use super::{Covariance, Kernel, Location};
use crate::error::{DiskError, Result};

const DELTA_TOL: f64 = 1e-10;

/// Projection of a location set onto the knot span.
///
/// Holds `V = L0⁻¹ C(S⁰, S)` where `L0 L0ᵀ = C(S⁰)`, so that the low-rank
/// part of the covariance is `VᵀV`, and the diagonal correction
/// `δ = diag(C(S, S)) − colnorm²(V)`.
#[derive(Debug, Clone)]
pub struct KnotProjection {
    knot_factor: PsdFactor,
    v: DMatrix<f64>,
    delta: DVector<f64>,
    sigma2: f64,
}

impl KnotProjection {
    pub fn new(kernel: &Kernel, knots: &[Location], s: &[Location]) -> Result<Self> {
        let k0 = kernel.gram(knots);
        let factor = chol_psd(&k0, kernel.sigma2)?;
        Self::with_factor(factor, kernel.matrix(knots, s), kernel.sigma2)
    }

    /// Builds from a factor of the knot Gram matrix and the knot-to-location
    /// cross covariance (r × m). The parent kernel is stationary, so its
    /// diagonal is `sigma2` everywhere.
    pub fn with_factor(knot_factor: PsdFactor, cross: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let v = knot_factor.forward_mat(&cross);
        let delta = corrections(&v, sigma2)?;
        Ok(KnotProjection {
            knot_factor,
            v,
            delta,
            sigma2,
        })
    }

    /// Projection of another location set with the same knots and kernel.
    pub fn extend(&self, kernel: &Kernel, knots: &[Location], s: &[Location]) -> Result<Self> {
        self.extend_cross(kernel.matrix(knots, s))
    }

    pub fn extend_cross(&self, cross: DMatrix<f64>) -> Result<Self> {
        Self::with_factor(self.knot_factor.clone(), cross, self.sigma2)
    }

    pub fn projected(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn knot_factor(&self) -> &PsdFactor {
        &self.knot_factor
    }

    pub fn rank(&self) -> usize {
        self.v.nrows()
    }
}

fn corrections(v: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let tol = DELTA_TOL * sigma2.max(1.0);
    let mut delta = DVector::zeros(v.ncols());
    for (i, col) in v.column_iter().enumerate() {
        let d = sigma2 - col.norm_squared();
        if d < -tol {
            return Err(DiskError::numerical(format!(
                "negative predictive-process correction {d:e} at location {i}; knot Gram inversion is unreliable"
            )));
        }
        delta[i] = d.max(0.0);
    }
    Ok(delta)
}

/// Solves and log-determinants for `Σ = VᵀV + diag(Λ)` via Woodbury.
///
/// With `B = I + V Λ⁻¹ Vᵀ = Lb Lbᵀ`:
/// `log|Σ| = log|B| + Σ log Λ` and
/// `Σ⁻¹ b = Λ⁻¹ b − Λ⁻¹ Vᵀ B⁻¹ V Λ⁻¹ b`.
#[derive(Debug, Clone)]
pub struct LowRankSolver {
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    b_factor: PsdFactor,
}

impl LowRankSolver {
    pub fn new(v: DMatrix<f64>, lambda: DVector<f64>) -> Result<Self> {
        if v.ncols() != lambda.len() {
            return Err(DiskError::input("low-rank solver shape mismatch"));
        }
        if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(DiskError::numerical("low-rank solver needs a positive diagonal"));
        }
        let scaled = scale_cols(&v, &lambda);
        let mut b = &scaled * v.transpose();
        for i in 0..b.nrows() {
            b[(i, i)] += 1.0;
        }
        // Rounding can leave B a hair off symmetric.
        let b = (&b + b.transpose()) * 0.5;
        let b_factor = chol_psd(&b, 1.0)?;
        Ok(LowRankSolver { v, lambda, b_factor })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn log_det(&self) -> f64 {
        self.b_factor.log_det() + self.lambda.iter().map(|l| l.ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let lb = b.component_div(&self.lambda);
        let t = self.b_factor.solve_vec(&(&self.v * &lb));
        let corr = (self.v.tr_mul(&t)).component_div(&self.lambda);
        lb - corr
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut lb = b.clone();
        for (i, mut row) in lb.row_iter_mut().enumerate() {
            row /= self.lambda[i];
        }
        let t = self.b_factor.solve_mat(&(&self.v * &lb));
        let mut corr = self.v.tr_mul(&t);
        for (i, mut row) in corr.row_iter_mut().enumerate() {
            row /= self.lambda[i];
        }
        lb - corr
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Factor of the capacitance matrix `B`.
    pub fn capacitance(&self) -> &PsdFactor {
        &self.b_factor
    }

    pub fn jitter(&self) -> f64 {
        self.b_factor.jitter
    }
}

/// `V diag(1/λ)`.
fn scale_cols(v: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= lambda[j];
    }
    out
}
