use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DiskError, Result};
use crate::kernels::{chol_psd, distance_matrix, CovParams, KnotProjection, Location, LowRankSolver};
use crate::model::{CovFactor, CovStructure, SpatialDataset};

pub(crate) fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Mean and covariance of β given α under the tempered likelihood:
/// `V = (a XᵀΣ⁻¹X + Σ_β⁻¹)⁻¹`, `m = V (a XᵀΣ⁻¹y + Σ_β⁻¹μ_β)`.
pub(crate) struct BetaConditional {
    pub mean: DVector<f64>,
    /// Cholesky factor of the precision matrix `V⁻¹`.
    pub precision: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl BetaConditional {
    pub fn new(
        factor: &CovFactor,
        data: &SpatialDataset,
        prior_prec: &DMatrix<f64>,
        prior_shift: &DVector<f64>,
        exponent: f64,
    ) -> Result<Self> {
        let p = data.p();
        let mut rhs = DMatrix::zeros(data.n(), p + 1);
        rhs.columns_mut(0, p).copy_from(data.x());
        rhs.set_column(p, data.y());
        let solved = factor.solve_mat(&rhs);
        let xt_solved = data.x().tr_mul(&solved);
        let mut prec = xt_solved.columns(0, p) * exponent + prior_prec;
        prec = (&prec + prec.transpose()) * 0.5;
        let b = xt_solved.column(p) * exponent + prior_shift;
        let precision = prec
            .cholesky()
            .ok_or_else(|| DiskError::numerical("beta conditional precision is not positive definite"))?;
        let mean = precision.solve(&b);
        Ok(BetaConditional { mean, precision })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normals(rng, self.mean.len());
        let dev = self
            .precision
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("nonzero Cholesky diagonal");
        &self.mean + dev
    }
}

/// Distances from the prediction set to the subset (full rank) or to the
/// knots (predictive process).
#[derive(Debug, Clone)]
pub(crate) enum PredictionGeometry {
    Dense {
        d_star_j: DMatrix<f64>,
        d_star_star: DMatrix<f64>,
    },
    LowRank {
        d_0_star: DMatrix<f64>,
    },
}

impl PredictionGeometry {
    pub fn new(s_j: &[Location], s_star: &[Location], knots: Option<&[Location]>) -> Self {
        match knots {
            None => PredictionGeometry::Dense {
                d_star_j: distance_matrix(s_star, s_j),
                d_star_star: distance_matrix(s_star, s_star),
            },
            Some(k) => PredictionGeometry::LowRank {
                d_0_star: distance_matrix(k, s_star),
            },
        }
    }
}

/// Conditional law of `w*` given β and α with the tempered nugget
/// `τ²/a`, in a form that can be sampled without an l × l factorisation
/// in the predictive-process case.
pub(crate) enum WstarConditional {
    Dense {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    LowRank {
        mean: DVector<f64>,
        /// `V*` (r × l), knot projection of the prediction set.
        v_star: DMatrix<f64>,
        delta_star: DVector<f64>,
        solver: LowRankSolver,
    },
}

impl WstarConditional {
    /// `resid = y − Xβ`, `nugget = τ²/a`.
    pub fn new(
        structure: &CovStructure,
        pred: &PredictionGeometry,
        resid: &DVector<f64>,
        nugget: f64,
    ) -> Result<Self> {
        match (structure, pred) {
            (CovStructure::Dense { kernel, .. }, PredictionGeometry::Dense { d_star_j, d_star_star }) => {
                let factor = match structure.factor(nugget)? {
                    CovFactor::Dense(f) => f,
                    CovFactor::LowRank { .. } => unreachable!(),
                };
                let c_j_star = kernel.from_distances(d_star_j).transpose();
                let w = factor.forward_mat(&c_j_star);
                let mean = w.tr_mul(&factor.forward(resid));
                let cov = kernel.from_distances(d_star_star) - w.tr_mul(&w);
                let cov = (&cov + cov.transpose()) * 0.5;
                Ok(WstarConditional::Dense { mean, cov })
            }
            (CovStructure::LowRank { proj, kernel }, PredictionGeometry::LowRank { d_0_star }) => {
                let star: KnotProjection = proj.extend_cross(kernel.from_distances(d_0_star))?;
                let lambda = proj.delta().add_scalar(nugget);
                let v = proj.projected();
                let solver = LowRankSolver::new(v.clone(), lambda)?;
                // V*ᵀ B⁻¹ V Λ⁻¹ z
                let scaled = resid.component_div(solver.lambda());
                let t = solver.capacitance().solve_vec(&(v * scaled));
                let mean = star.projected().tr_mul(&t);
                Ok(WstarConditional::LowRank {
                    mean,
                    v_star: star.projected().clone(),
                    delta_star: star.delta().clone(),
                    solver,
                })
            }
            _ => Err(DiskError::input("prediction geometry does not match covariance structure")),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            WstarConditional::Dense { mean, .. } | WstarConditional::LowRank { mean, .. } => mean,
        }
    }

    /// Dense covariance, `diag(δ*) + V*ᵀ B⁻¹ V*` in the low-rank case.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            WstarConditional::Dense { cov, .. } => cov.clone(),
            WstarConditional::LowRank {
                v_star,
                delta_star,
                solver,
                ..
            } => {
                let f = solver.capacitance().forward_mat(v_star);
                f.tr_mul(&f) + DMatrix::from_diagonal(delta_star)
            }
        }
    }

    /// Draws `w*`; returns whether a jitter or eigen fallback was needed.
    pub fn draw<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> (DVector<f64>, bool) {
        match self {
            WstarConditional::Dense { mean, cov } => {
                let z = standard_normals(rng, mean.len());
                match chol_psd(cov, scale) {
                    Ok(f) => (mean + f.mul_l(&z), f.jitter > 0.0),
                    Err(_) => (mean + psd_sqrt(cov) * z, true),
                }
            }
            WstarConditional::LowRank {
                mean,
                v_star,
                delta_star,
                solver,
            } => {
                let xi = standard_normals(rng, v_star.nrows());
                let eta = standard_normals(rng, mean.len());
                let low = v_star.tr_mul(&solver.capacitance().backward(&xi));
                let diag = delta_star.map(f64::sqrt).component_mul(&eta);
                (mean + low + diag, false)
            }
        }
    }
}

/// Symmetric square root with negative eigenvalues clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `y* = X*β + w* + ε`, `ε ~ N(0, τ² I)` with the untempered nugget.
pub fn sample_ystar_conditional<R: Rng + ?Sized>(
    x_star: &DMatrix<f64>,
    beta: &DVector<f64>,
    wstar: &DVector<f64>,
    alpha: &CovParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x_star.ncols() != beta.len() || x_star.nrows() != wstar.len() {
        return Err(DiskError::input(format!(
            "y* shapes disagree: X* {}x{}, beta {}, w* {}",
            x_star.nrows(),
            x_star.ncols(),
            beta.len(),
            wstar.len()
        )));
    }
    let sd = alpha.tau2.sqrt();
    let noise = standard_normals(rng, wstar.len()) * sd;
    Ok(x_star * beta + wstar + noise)
}
