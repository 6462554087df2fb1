use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::subset_solve;
use crate::error::{DiskError, Result};
use crate::kernels::{Covariance, Location};
use crate::rng::{derive_seed, rng_from_seed, DiskRng};

/// Monte-Carlo estimates of the Bayes L2-risk and its three components.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub n: usize,
    pub k: usize,
    pub bias2: f64,
    pub var_mean: f64,
    pub var_disk: f64,
    /// Direct estimate `E (w̄ − w₀(s*))²` with `w̄` drawn from the DISK
    /// posterior.
    pub total: f64,
    pub mc_replicates: usize,
    pub se_bias2: f64,
    pub se_var_mean: f64,
    pub se_var_disk: f64,
    pub se_total: f64,
    /// Standard error of the per-replicate component sum.
    pub se_sum: f64,
    /// `sqrt(se_total² + se_sum²)`, the scale for comparing `total` with the
    /// component sum.
    pub mc_standard_error: f64,
}

impl RiskReport {
    pub fn component_sum(&self) -> f64 {
        self.bias2 + self.var_mean + self.var_disk
    }
}

struct Replicate {
    bias2: f64,
    var_mean: f64,
    var_disk: f64,
    total: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Near-equal contiguous chunk bounds; the first `n mod k` get one extra.
fn chunks(n: usize, k: usize) -> Vec<(usize, usize)> {
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Estimates the Bayes L2-risk of the DISK posterior at a random location.
///
/// Each replicate draws `n` training locations and one test location from
/// `sampler`, noisy responses `w₀(s) + N(0, τ²)`, and splits the training
/// set into `k` contiguous (hence random) subsets. With
/// `a_j = (C_jj + τ²/k I)⁻¹ c_j*` the replicate contributes
/// `((1/k) Σ a_jᵀ w₀_j − w₀(s*))²` to the squared bias,
/// `τ² (1/k²) Σ ‖a_j‖²` to the variance of the mean and `v̄` to the DISK
/// variance. Replicates run in parallel on streams `derive_seed(seed, r)`
/// and are reduced in replicate order.
#[allow(clippy::too_many_arguments)]
pub fn risk_decomposition<C, W, S>(
    n: usize,
    k: usize,
    cov: &C,
    tau2: f64,
    w0: &W,
    sampler: &S,
    mc_reps: usize,
    seed: u64,
) -> Result<RiskReport>
where
    C: Covariance + ?Sized,
    W: Fn(&Location) -> f64 + Sync,
    S: Fn(&mut DiskRng) -> Location + Sync,
{
    if mc_reps < 2 {
        return Err(DiskError::input("need at least 2 Monte-Carlo replicates"));
    }
    if k == 0 || k > n {
        return Err(DiskError::input(format!("need 1 <= k <= n, got n={n}, k={k}")));
    }
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return Err(DiskError::input(format!("tau2 must be positive, got {tau2}")));
    }
    let bounds = chunks(n, k);
    let reps = (0..mc_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, r as u64));
            let locs: Vec<Location> = (0..n).map(|_| sampler(&mut rng)).collect();
            let star = vec![sampler(&mut rng)];
            let truth: Vec<f64> = locs.iter().map(w0).collect();
            let noise: Vec<f64> = (0..n)
                .map(|_| tau2.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let w_star = w0(&star[0]);
            let scale = cov.cov(&star[0], &star[0]).max(f64::MIN_POSITIVE);
            let kf = k as f64;
            let (mut fit_truth, mut fit_noise, mut a_norm2, mut sd) = (0.0, 0.0, 0.0, 0.0);
            for &(lo, hi) in &bounds {
                let solve = subset_solve(cov, &locs[lo..hi], &star, tau2 / kf, scale)?;
                let a = solve.a.column(0);
                fit_truth += a.dot(&DVector::from_column_slice(&truth[lo..hi]));
                fit_noise += a.dot(&DVector::from_column_slice(&noise[lo..hi]));
                a_norm2 += a.norm_squared();
                sd += solve.v[0].sqrt();
            }
            let m_truth = fit_truth / kf;
            let m_bar = m_truth + fit_noise / kf;
            let v_bar = (sd / kf).powi(2);
            let draw = m_bar + v_bar.sqrt() * rng.sample::<f64, _>(StandardNormal);
            Ok(Replicate {
                bias2: (m_truth - w_star).powi(2),
                var_mean: tau2 * a_norm2 / (kf * kf),
                var_disk: v_bar,
                total: (draw - w_star).powi(2),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let col = |f: fn(&Replicate) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
    let (bias2, se_bias2) = mean_se(&col(|r| r.bias2));
    let (var_mean, se_var_mean) = mean_se(&col(|r| r.var_mean));
    let (var_disk, se_var_disk) = mean_se(&col(|r| r.var_disk));
    let (total, se_total) = mean_se(&col(|r| r.total));
    let (_, se_sum) = mean_se(&col(|r| r.bias2 + r.var_mean + r.var_disk));
    Ok(RiskReport {
        n,
        k,
        bias2,
        var_mean,
        var_disk,
        total,
        mc_replicates: mc_reps,
        se_bias2,
        se_var_mean,
        se_var_disk,
        se_total,
        se_sum,
        mc_standard_error: (se_total * se_total + se_sum * se_sum).sqrt(),
    })
}

/// Finite-rank kernel `C(s, s') = Σ μ_i φ_i(s) φ_i(s')` on `[0, 1]²` with
/// tensor-cosine features `φ_(a,b)(s) = c_a(s₁) c_b(s₂)`, `c_0 = 1`,
/// `c_a(x) = √2 cos(π a x)`. The features are orthonormal in L²([0, 1]²),
/// so the `μ_i` are exactly the integral-operator eigenvalues under the
/// uniform design.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateKernel {
    mu: Vec<f64>,
    modes: Vec<(usize, usize)>,
}

impl DegenerateKernel {
    /// Uses the first `mu.len()` modes ordered by total degree, then by
    /// descending first index: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
    pub fn tensor_cosine(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(DiskError::input("degenerate kernel needs positive weights"));
        }
        let mut modes = Vec::with_capacity(mu.len());
        let mut deg = 0;
        while modes.len() < mu.len() {
            for a in (0..=deg).rev() {
                if modes.len() < mu.len() {
                    modes.push((a, deg - a));
                }
            }
            deg += 1;
        }
        Ok(DegenerateKernel { mu, modes })
    }

    /// The rank-5 kernel used for rate studies: μ = (1, .5, .5, .25, .25).
    pub fn rank5() -> Self {
        Self::tensor_cosine(vec![1.0, 0.5, 0.5, 0.25, 0.25]).expect("valid weights")
    }

    pub fn rank(&self) -> usize {
        self.mu.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.mu
    }

    fn cos_feature(a: usize, x: f64) -> f64 {
        if a == 0 {
            1.0
        } else {
            SQRT_2 * (PI * a as f64 * x).cos()
        }
    }

    /// Feature vector at `s`; `s` must have at least two coordinates.
    pub fn features(&self, s: &Location) -> DVector<f64> {
        let c = s.coords();
        DVector::from_iterator(
            self.modes.len(),
            self.modes
                .iter()
                .map(|&(a, b)| Self::cos_feature(a, c[0]) * Self::cos_feature(b, c[1])),
        )
    }

    fn feature_matrix(&self, locs: &[Location]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(locs.len(), self.rank());
        for (i, s) in locs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.features(s).transpose());
        }
        m
    }

    /// Coefficients of a draw from the GP prior: `sqrt(μ_i) z_i`.
    pub fn draw_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .map(|m| m.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn eval_span(&self, coef: &[f64], s: &Location) -> f64 {
        self.features(s).iter().zip(coef).map(|(f, c)| f * c).sum()
    }
}

impl Covariance for DegenerateKernel {
    fn cov(&self, a: &Location, b: &Location) -> f64 {
        let fa = self.features(a);
        let fb = self.features(b);
        self.mu.iter().enumerate().map(|(i, m)| m * fa[i] * fb[i]).sum()
    }

    fn matrix(&self, a: &[Location], b: &[Location]) -> DMatrix<f64> {
        let mut fa = self.feature_matrix(a);
        for (j, mut col) in fa.column_iter_mut().enumerate() {
            col *= self.mu[j];
        }
        fa * self.feature_matrix(b).transpose()
    }

    fn gram(&self, a: &[Location]) -> DMatrix<f64> {
        let m = self.matrix(a, a);
        (&m + m.transpose()) * 0.5
    }
}

/// Risk at each `n` and the least-squares slope of log risk on log n.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub reports: Vec<RiskReport>,
    pub slope: f64,
    pub slope_se: f64,
}

impl RateStudy {
    /// The risk used for the fit: the component sum, which has lower MC
    /// noise than the direct total.
    pub fn risks(&self) -> Vec<f64> {
        self.reports.iter().map(RiskReport::component_sum).collect()
    }

    /// Number of consecutive grid points where the risk went up.
    pub fn monotonicity_violations(&self) -> usize {
        self.risks().windows(2).filter(|w| w[1] > w[0]).count()
    }
}

/// Runs [`risk_decomposition`] over `n_grid` with `w₀` drawn once from the
/// kernel's prior span and locations uniform on `[0, 1]²`.
pub fn rate_study(
    kernel: &DegenerateKernel,
    n_grid: &[usize],
    k_rule: &(dyn Fn(usize) -> usize + Sync),
    tau2: f64,
    reps: usize,
    seed: u64,
) -> Result<RateStudy> {
    if n_grid.len() < 4 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiskError::input("n grid must be increasing with at least 4 points"));
    }
    let coef = kernel.draw_coefficients(&mut rng_from_seed(derive_seed(seed, u64::MAX)));
    let w0 = |s: &Location| kernel.eval_span(&coef, s);
    let sampler = |rng: &mut DiskRng| Location::xy(rng.random(), rng.random());
    let reports = n_grid
        .iter()
        .map(|&n| risk_decomposition(n, k_rule(n).max(1), kernel, tau2, &w0, &sampler, reps, derive_seed(seed, n as u64)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.component_sum().ln()).collect();
    let (slope, slope_se) = ols_slope(&xs, &ys);
    Ok(RateStudy {
        reports,
        slope,
        slope_se,
    })
}

fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}
