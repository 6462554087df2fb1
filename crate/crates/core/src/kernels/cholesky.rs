use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{DiskError, Result};

/// Jitter multipliers tried in order; each is scaled by the caller's `scale`.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

const SYMMETRY_TOL: f64 = 1e-10;

/// Cholesky factor of `M + jitter * I`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl PsdFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor with zeroed upper part.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Lower-triangular factor; the strict upper triangle is unspecified.
    pub(crate) fn l_dirty(&self) -> &DMatrix<f64> {
        self.chol.l_dirty()
    }

    pub fn log_det(&self) -> f64 {
        self.chol.ln_determinant()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn forward(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l_dirty()
            .solve_lower_triangular(b)
            .expect("nonzero diagonal in Cholesky factor")
    }

    pub fn forward_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l_dirty()
            .solve_lower_triangular(b)
            .expect("nonzero diagonal in Cholesky factor")
    }

    /// `L⁻ᵀ b`.
    pub fn backward(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l_dirty()
            .tr_solve_lower_triangular(b)
            .expect("nonzero diagonal in Cholesky factor")
    }

    /// `L z`, used to turn standard normals into correlated draws.
    pub fn mul_l(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Factorises a symmetric PSD matrix, adding diagonal jitter from
/// [`JITTER_LADDER`] until the factorisation succeeds.
pub fn chol_psd(m: &DMatrix<f64>, scale: f64) -> Result<PsdFactor> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(DiskError::input(format!(
            "chol_psd needs a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DiskError::input(format!("jitter scale must be positive, got {scale}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DiskError::numerical("matrix has non-finite entries"));
    }
    let norm = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(DiskError::input(format!(
            "matrix not symmetric: max |M - Mᵀ| = {asym:e}, max |M| = {norm:e}"
        )));
    }
    for &mult in &JITTER_LADDER {
        let jitter = mult * scale;
        let mut work = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                work[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(work) {
            return Ok(PsdFactor { chol, jitter });
        }
    }
    Err(DiskError::numerical(diagnostics(m, scale)))
}

fn diagnostics(m: &DMatrix<f64>, scale: f64) -> String {
    let n = m.nrows();
    let diag_min = (0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..n).map(|i| m[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    format!(
        "Cholesky failed at max jitter {:e} (n={n}, diag in [{diag_min:e}, {diag_max:e}], \
         eigenvalues in [{lo:e}, {hi:e}], condition ~ {:e})",
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
        if lo > 0.0 { hi / lo } else { f64::INFINITY }
    )
}
