use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels::CovParams;

/// Map between α and the unconstrained scale
/// `(log σ², log τ², logit((φ − lo)/(hi − lo)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaTransform {
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl AlphaTransform {
    pub fn forward(&self, a: &CovParams) -> [f64; 3] {
        let u = (a.phi - self.phi_lo) / (self.phi_hi - self.phi_lo);
        [a.sigma2.ln(), a.tau2.ln(), (u / (1.0 - u)).ln()]
    }

    pub fn inverse(&self, t: &[f64; 3]) -> CovParams {
        let u = 1.0 / (1.0 + (-t[2]).exp());
        CovParams {
            sigma2: t[0].exp(),
            tau2: t[1].exp(),
            phi: self.phi_lo + (self.phi_hi - self.phi_lo) * u,
        }
    }

    /// `log |dα/dθ|` evaluated at α.
    pub fn log_jacobian(&self, a: &CovParams) -> f64 {
        a.sigma2.ln()
            + a.tau2.ln()
            + ((a.phi - self.phi_lo) * (self.phi_hi - a.phi) / (self.phi_hi - self.phi_lo)).ln()
    }
}

/// One random-walk Metropolis step on the transformed scale.
///
/// `target` is the log density of α on its natural scale; the Jacobian is
/// added here. `current_lt` must be `target(current)`. Returns the new state,
/// its log target and whether the proposal was accepted.
pub fn metropolis_alpha_step<R, F>(
    current: &CovParams,
    current_lt: f64,
    steps: &[f64; 3],
    transform: &AlphaTransform,
    mut target: F,
    rng: &mut R,
) -> (CovParams, f64, bool)
where
    R: Rng + ?Sized,
    F: FnMut(&CovParams) -> f64,
{
    let t = transform.forward(current);
    let mut prop_t = [0.0; 3];
    for i in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        prop_t[i] = t[i] + steps[i] * z;
    }
    let proposal = transform.inverse(&prop_t);
    let u: f64 = rng.random();
    let jac_prop = transform.log_jacobian(&proposal);
    if !jac_prop.is_finite() {
        return (*current, current_lt, false);
    }
    let prop_lt = target(&proposal);
    if !prop_lt.is_finite() {
        return (*current, current_lt, false);
    }
    let log_ratio = prop_lt + jac_prop - current_lt - transform.log_jacobian(current);
    if u.ln() < log_ratio {
        (proposal, prop_lt, true)
    } else {
        (*current, current_lt, false)
    }
}

/// Multiplicative step-size tuning applied after each batch during burn-in.
#[derive(Debug, Clone)]
pub(crate) struct Adapter {
    batch: usize,
    accepted: usize,
    seen: usize,
}

impl Adapter {
    pub const BATCH: usize = 50;

    pub fn new() -> Self {
        Adapter {
            batch: Self::BATCH,
            accepted: 0,
            seen: 0,
        }
    }

    pub fn record(&mut self, accepted: bool, steps: &mut [f64; 3]) {
        self.seen += 1;
        self.accepted += usize::from(accepted);
        if self.seen == self.batch {
            let rate = self.accepted as f64 / self.batch as f64;
            let factor = if rate < 0.2 {
                0.7
            } else if rate > 0.5 {
                1.3
            } else {
                1.0
            };
            for s in steps.iter_mut() {
                *s *= factor;
            }
            self.seen = 0;
            self.accepted = 0;
        }
    }
}
