//! Covariance functions and the matrices built from them.
//!
//! Parent kernels are isotropic and parameterised by a partial sill `sigma2`
//! and a decay `phi`, so that `C(s, s') = sigma2 * rho(phi * |s - s'|)`. The
//! nugget `tau2` is never part of a kernel value; it is added by callers when
//! forming the marginal covariance of the responses.

mod cholesky;
mod lowrank;

use nalgebra::{DMatrix, DVector};

use crate::error::{DiskError, Result};

pub use cholesky::{chol_psd, PsdFactor, JITTER_LADDER};
pub use lowrank::{KnotProjection, LowRankSolver};

/// A point in the spatial domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Location(Vec<f64>);

impl Location {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(DiskError::input("location needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(DiskError::input(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Location(coords))
    }

    /// Two-dimensional location; panics on non-finite input.
    pub fn xy(x: f64, y: f64) -> Self {
        Location::new(vec![x, y]).expect("finite coordinates")
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Euclidean distance. Callers must have checked dimensions.
    #[inline]
    pub(crate) fn dist_unchecked(&self, other: &Location) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, other: &Location) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.dist_unchecked(other))
    }
}

fn check_dims(a: &Location, b: &Location) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DiskError::input(format!(
            "location dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub(crate) fn common_dim(sets: &[&[Location]]) -> Result<usize> {
    let mut dim = None;
    for loc in sets.iter().flat_map(|s| s.iter()) {
        match dim {
            None => dim = Some(loc.dim()),
            Some(d) if d != loc.dim() => {
                return Err(DiskError::input(format!(
                    "location dimension mismatch: {} vs {}",
                    d,
                    loc.dim()
                )))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| DiskError::input("empty location list"))
}

/// Parent correlation family.
///
/// Matérn is only available at half-integer smoothness where it has a closed
/// form (ν = 1/2, 3/2, 5/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Exponential,
    SquaredExponential,
    Matern { nu: f64 },
}

impl KernelSpec {
    pub fn matern(nu: f64) -> Result<Self> {
        let spec = KernelSpec::Matern { nu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Matern { nu } = *self {
            if !(nu > 0.0) {
                return Err(DiskError::input(format!("Matérn smoothness must be positive, got {nu}")));
            }
            if ![0.5, 1.5, 2.5].contains(&nu) {
                return Err(DiskError::input(format!(
                    "Matérn smoothness {nu} unsupported; use 0.5, 1.5 or 2.5"
                )));
            }
        }
        Ok(())
    }

    /// Correlation at distance `d` for decay `phi`.
    #[inline]
    pub fn correlation(&self, phi: f64, d: f64) -> f64 {
        let t = phi * d;
        match *self {
            KernelSpec::Exponential => (-t).exp(),
            KernelSpec::SquaredExponential => (-t * t).exp(),
            KernelSpec::Matern { nu } => {
                if nu == 0.5 {
                    (-t).exp()
                } else if nu == 1.5 {
                    (1.0 + t) * (-t).exp()
                } else {
                    (1.0 + t + t * t / 3.0) * (-t).exp()
                }
            }
        }
    }
}

/// Covariance hyperparameters: partial sill, nugget and decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovParams {
    pub sigma2: f64,
    pub tau2: f64,
    pub phi: f64,
}

impl CovParams {
    pub fn new(sigma2: f64, tau2: f64, phi: f64) -> Result<Self> {
        let p = CovParams { sigma2, tau2, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(DiskError::input(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(DiskError::input(format!("tau2 must be positive, got {}", self.tau2)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(DiskError::input(format!("phi must be positive, got {}", self.phi)));
        }
        Ok(())
    }
}

/// Anything that can produce a covariance between two locations.
///
/// The default `matrix` loops over pairs; implementations with cheaper
/// structure (feature expansions) override it.
pub trait Covariance: Sync {
    fn cov(&self, a: &Location, b: &Location) -> f64;

    fn matrix(&self, a: &[Location], b: &[Location]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.cov(&a[i], &b[j]))
    }

    /// Symmetric Gram matrix; only the lower triangle is evaluated.
    fn gram(&self, a: &[Location]) -> DMatrix<f64> {
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.cov(&a[i], &a[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// A parent kernel with its parameters bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub spec: KernelSpec,
    pub sigma2: f64,
    pub phi: f64,
}

impl Kernel {
    pub fn new(spec: KernelSpec, params: &CovParams) -> Self {
        Kernel {
            spec,
            sigma2: params.sigma2,
            phi: params.phi,
        }
    }

    #[inline]
    pub fn at_distance(&self, d: f64) -> f64 {
        self.sigma2 * self.spec.correlation(self.phi, d)
    }

    /// Applies the kernel elementwise to a precomputed distance matrix.
    pub fn from_distances(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        d.map(|x| self.at_distance(x))
    }
}

impl Covariance for Kernel {
    #[inline]
    fn cov(&self, a: &Location, b: &Location) -> f64 {
        self.at_distance(a.dist_unchecked(b))
    }
}

/// Pairwise distances between two location lists.
pub fn distance_matrix(a: &[Location], b: &[Location]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i].dist_unchecked(&b[j]))
}

pub fn kernel_value(spec: KernelSpec, params: &CovParams, s1: &Location, s2: &Location) -> Result<f64> {
    check_dims(s1, s2)?;
    spec.validate()?;
    Ok(Kernel::new(spec, params).cov(s1, s2))
}

pub fn kernel_matrix(
    spec: KernelSpec,
    params: &CovParams,
    a: &[Location],
    b: &[Location],
) -> Result<DMatrix<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(DiskError::input("kernel_matrix needs nonempty location lists"));
    }
    common_dim(&[a, b])?;
    spec.validate()?;
    Ok(Kernel::new(spec, params).matrix(a, b))
}

/// Inducing locations for the modified predictive process.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet(Vec<Location>);

impl KnotSet {
    pub const DISTINCT_TOL: f64 = 1e-12;

    pub fn new(knots: Vec<Location>) -> Result<Self> {
        if knots.is_empty() {
            return Err(DiskError::input("knot set must contain at least one knot"));
        }
        common_dim(&[&knots])?;
        for i in 0..knots.len() {
            for j in 0..i {
                if knots[i].dist_unchecked(&knots[j]) <= Self::DISTINCT_TOL {
                    return Err(DiskError::input(format!("knots {j} and {i} coincide")));
                }
            }
        }
        Ok(KnotSet(knots))
    }

    pub fn locations(&self) -> &[Location] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }
}

/// Modified predictive process covariance between two locations.
pub fn mpp_cov(
    spec: KernelSpec,
    params: &CovParams,
    knots: &KnotSet,
    s1: &Location,
    s2: &Location,
) -> Result<f64> {
    check_dims(s1, s2)?;
    check_dims(s1, &knots.locations()[0])?;
    spec.validate()?;
    let kernel = Kernel::new(spec, params);
    let pair = [s1.clone(), s2.clone()];
    let proj = KnotProjection::new(&kernel, knots.locations(), &pair)?;
    let v = proj.projected();
    let q = v.column(0).dot(&v.column(1));
    let nugget = if s1 == s2 { proj.delta()[0] } else { 0.0 };
    Ok(q + nugget)
}

/// FITC blocks for a training set `S_j` and prediction set `S_*`.
#[derive(Debug, Clone)]
pub struct FitcBlocks {
    /// Low-rank part of the training block.
    pub q_jj: DMatrix<f64>,
    pub ctilde_jj: DMatrix<f64>,
    pub ctilde_jstar: DMatrix<f64>,
    pub ctilde_starstar: DMatrix<f64>,
}

pub fn fitc_blocks(
    spec: KernelSpec,
    params: &CovParams,
    knots: &KnotSet,
    s_j: &[Location],
    s_star: &[Location],
) -> Result<FitcBlocks> {
    if s_j.is_empty() || s_star.is_empty() {
        return Err(DiskError::input("fitc_blocks needs nonempty location lists"));
    }
    common_dim(&[s_j, s_star, knots.locations()])?;
    spec.validate()?;
    let kernel = Kernel::new(spec, params);
    let pj = KnotProjection::new(&kernel, knots.locations(), s_j)?;
    let ps = pj.extend(&kernel, knots.locations(), s_star)?;
    let vj = pj.projected();
    let vs = ps.projected();
    let q_jj = vj.transpose() * vj;
    let mut ctilde_jj = q_jj.clone();
    for (i, d) in pj.delta().iter().enumerate() {
        ctilde_jj[(i, i)] += d;
    }
    let ctilde_jstar = vj.transpose() * vs;
    let mut ctilde_starstar = vs.transpose() * vs;
    for (i, d) in ps.delta().iter().enumerate() {
        ctilde_starstar[(i, i)] += d;
    }
    Ok(FitcBlocks {
        q_jj,
        ctilde_jj,
        ctilde_jstar,
        ctilde_starstar,
    })
}

/// Covariance of `x(s)ᵀβ + w(s)` when β has prior covariance `sigma_beta`.
pub fn modified_kernel(
    spec: KernelSpec,
    params: &CovParams,
    sigma_beta: &DMatrix<f64>,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    s1: &Location,
    s2: &Location,
) -> Result<f64> {
    let p = sigma_beta.nrows();
    if sigma_beta.ncols() != p || x1.len() != p || x2.len() != p {
        return Err(DiskError::input(format!(
            "modified kernel shapes disagree: Sigma_beta {}x{}, x1 {}, x2 {}",
            sigma_beta.nrows(),
            sigma_beta.ncols(),
            x1.len(),
            x2.len()
        )));
    }
    let fixed = x1.dot(&(sigma_beta * x2));
    Ok(fixed + kernel_value(spec, params, s1, s2)?)
}
