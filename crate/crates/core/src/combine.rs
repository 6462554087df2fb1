//! Combination of subset posteriors by quantile averaging.
//!
//! For a scalar quantity the 2-Wasserstein barycenter of `k` distributions
//! has as its quantile function the average of theirs, so each quantity is
//! summarised on a fixed probability grid and the summaries are averaged.
//!
//! Empirical quantiles use the type-7 rule (linear interpolation between
//! order statistics at position `(n − 1) p`).

use rand::Rng;
use rayon::prelude::*;

use crate::error::{DiskError, Result};
use crate::rng::unit_f64;
use crate::sampler::SubsetChain;

/// Probabilities `ξ, 2ξ, …, 1 − ξ`, stored as `i / N` with `N = round(1/ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantileGrid {
    n: usize,
}

impl QuantileGrid {
    pub const DEFAULT_XI: f64 = 1e-4;

    pub fn new(xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi < 0.5) {
            return Err(DiskError::input(format!("grid size must lie in (0, 0.5), got {xi}")));
        }
        let n = (1.0 / xi).round();
        if ((n * xi) - 1.0).abs() > 1e-9 {
            return Err(DiskError::input(format!("1/xi must be an integer, got xi = {xi}")));
        }
        Ok(QuantileGrid { n: n as usize })
    }

    pub fn xi(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prob(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.n as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.prob(i)).collect()
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        QuantileGrid::new(Self::DEFAULT_XI).expect("default grid")
    }
}

/// A monotone quantile function on a [`QuantileGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSummary {
    grid: QuantileGrid,
    values: Vec<f64>,
}

impl QuantileSummary {
    pub fn new(grid: QuantileGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(DiskError::input(format!(
                "summary has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiskError::input("summary values must be finite"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(DiskError::input("summary values must be non-decreasing"));
        }
        Ok(QuantileSummary { grid, values })
    }

    pub fn grid(&self) -> QuantileGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Quantile at `p` by linear interpolation, clamped to the grid ends.
    pub fn quantile_at(&self, p: f64) -> f64 {
        let n = self.grid.n as f64;
        let pos = p * n - 1.0;
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        if t == 0.0 {
            a
        } else {
            a + t * (b - a)
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile_at(0.5)
    }

    /// Mean and variance of the inverse-CDF over `[ξ, 1 − ξ]`, by the
    /// trapezoidal rule with weights normalised to one.
    pub fn moments(&self) -> (f64, f64) {
        let v = &self.values;
        if v.len() == 1 {
            return (v[0], 0.0);
        }
        let width = (v.len() - 1) as f64;
        let trap = |f: &dyn Fn(f64) -> f64| {
            let inner: f64 = v[1..v.len() - 1].iter().map(|&x| f(x)).sum();
            (0.5 * (f(v[0]) + f(v[v.len() - 1])) + inner) / width
        };
        let mean = trap(&|x| x);
        let var = trap(&|x| (x - mean) * (x - mean));
        (mean, var)
    }
}

fn cummax(values: &mut [f64]) {
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1];
        }
    }
}

pub fn empirical_quantiles(draws: &[f64], grid: QuantileGrid) -> Result<QuantileSummary> {
    if draws.len() < 2 {
        return Err(DiskError::input(format!(
            "need at least 2 draws for empirical quantiles, got {}",
            draws.len()
        )));
    }
    if draws.iter().any(|d| !d.is_finite()) {
        return Err(DiskError::input("draws must be finite"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    let mut values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let h = last * grid.prob(i);
            let lo = h.floor() as usize;
            let t = h - lo as f64;
            if t == 0.0 || lo + 1 >= sorted.len() {
                sorted[lo]
            } else {
                sorted[lo] + t * (sorted[lo + 1] - sorted[lo])
            }
        })
        .collect();
    cummax(&mut values);
    Ok(QuantileSummary { grid, values })
}

/// Pointwise mean of quantile functions.
///
/// Computed as `q₁ + Σ (q_j − q₁) / k` so that averaging copies of a single
/// summary returns it unchanged.
pub fn average_quantiles(summaries: &[QuantileSummary]) -> Result<QuantileSummary> {
    let first = summaries
        .first()
        .ok_or_else(|| DiskError::input("nothing to average"))?;
    if summaries.iter().any(|s| s.grid != first.grid) {
        return Err(DiskError::input("summaries are on different quantile grids"));
    }
    let k = summaries.len() as f64;
    let mut values: Vec<f64> = (0..first.values.len())
        .map(|i| {
            let base = first.values[i];
            let shift: f64 = summaries[1..].iter().map(|s| s.values[i] - base).sum();
            base + shift / k
        })
        .collect();
    cummax(&mut values);
    Ok(QuantileSummary {
        grid: first.grid,
        values,
    })
}

/// Inverse-CDF draws with `U ~ Uniform(ξ, 1 − ξ)`.
pub fn sample_from_quantiles<R: Rng + ?Sized>(summary: &QuantileSummary, n_draws: usize, rng: &mut R) -> Vec<f64> {
    let xi = summary.grid.xi();
    (0..n_draws)
        .map(|_| summary.quantile_at(xi + (1.0 - 2.0 * xi) * unit_f64(rng)))
        .collect()
}

/// Combined posterior: one quantile summary per labelled scalar quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskPosterior {
    grid: QuantileGrid,
    entries: Vec<(String, QuantileSummary)>,
}

impl DiskPosterior {
    pub fn new(grid: QuantileGrid, entries: Vec<(String, QuantileSummary)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (label, s) in &entries {
            if !seen.insert(label.as_str()) {
                return Err(DiskError::input(format!("duplicate quantity label {label}")));
            }
            if s.grid != grid {
                return Err(DiskError::input(format!("quantity {label} is on a different grid")));
            }
        }
        Ok(DiskPosterior { grid, entries })
    }

    pub fn grid(&self) -> QuantileGrid {
        self.grid
    }

    pub fn entries(&self) -> &[(String, QuantileSummary)] {
        &self.entries
    }

    pub fn get(&self, label: &str) -> Option<&QuantileSummary> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }
}

/// Labels in output order: `beta_1..p, sigma2, tau2, phi, wstar_1..l,
/// ystar_1..l`.
pub fn quantity_labels(p: usize, l: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=p).map(|i| format!("beta_{i}")).collect();
    out.extend(["sigma2", "tau2", "phi"].map(String::from));
    out.extend((1..=l).map(|i| format!("wstar_{i}")));
    out.extend((1..=l).map(|i| format!("ystar_{i}")));
    out
}

fn column_of(chain: &SubsetChain, q: usize) -> Vec<f64> {
    let p = chain.p();
    let l = chain.l();
    let col = if q < p {
        chain.beta_draws.column(q)
    } else if q < p + 3 {
        chain.alpha_draws.column(q - p)
    } else if q < p + 3 + l {
        chain.wstar_draws.column(q - p - 3)
    } else {
        chain.ystar_draws.column(q - p - 3 - l)
    };
    col.iter().copied().collect()
}

pub fn combine_chains(chains: &[SubsetChain], grid: QuantileGrid) -> Result<DiskPosterior> {
    let first = chains.first().ok_or_else(|| DiskError::input("no chains to combine"))?;
    let (p, l) = (first.p(), first.l());
    for (j, c) in chains.iter().enumerate() {
        if c.p() != p || c.l() != l {
            return Err(DiskError::input(format!(
                "chain {j} has p={}, l={} but chain 0 has p={p}, l={l}",
                c.p(),
                c.l()
            )));
        }
    }
    let labels = quantity_labels(p, l);
    let summaries = (0..labels.len())
        .into_par_iter()
        .map(|q| {
            let per: Vec<QuantileSummary> = chains
                .iter()
                .map(|c| empirical_quantiles(&column_of(c, q), grid))
                .collect::<Result<_>>()?;
            average_quantiles(&per)
        })
        .collect::<Result<Vec<_>>>()?;
    DiskPosterior::new(grid, labels.into_iter().zip(summaries).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(n: usize) -> QuantileGrid {
        QuantileGrid::new(1.0 / n as f64).unwrap()
    }

    #[test]
    fn grid_is_symmetric() {
        let g = QuantileGrid::default();
        let p = g.probs();
        assert_eq!(p.len(), 9999);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        for i in 0..p.len() {
            assert!((p[i] + p[p.len() - 1 - i] - 1.0).abs() < 1e-15);
        }
        assert!(QuantileGrid::new(0.5).is_err());
        assert!(QuantileGrid::new(0.3).is_err());
    }

    #[test]
    fn type7_by_hand() {
        let s = empirical_quantiles(&[0.0, 1.0], grid(4)).unwrap();
        assert_eq!(s.values(), &[0.25, 0.5, 0.75]);
        let s = empirical_quantiles(&[3.0, 1.0, 2.0, 10.0], grid(4)).unwrap();
        // h = 3p: 0.75, 1.5, 2.25 over sorted [1, 2, 3, 10].
        assert_eq!(s.values(), &[1.75, 2.5, 4.75]);
    }

    #[test]
    fn constant_and_order_invariance() {
        let s = empirical_quantiles(&[2.5; 7], grid(10)).unwrap();
        assert!(s.values().iter().all(|&v| v == 2.5));
        let draws = [0.3, -1.0, 2.0, 0.0, 5.5];
        let mut sorted = draws;
        sorted.sort_by(f64::total_cmp);
        assert_eq!(
            empirical_quantiles(&draws, grid(20)).unwrap(),
            empirical_quantiles(&sorted, grid(20)).unwrap()
        );
        assert!(empirical_quantiles(&[1.0], grid(4)).is_err());
    }

    #[test]
    fn averaging_cases() {
        let g = grid(8);
        let q1 = QuantileSummary::new(g, g.probs()).unwrap();
        let q2 = QuantileSummary::new(g, g.probs().iter().map(|p| 3.0 * p).collect()).unwrap();
        let avg = average_quantiles(&[q1.clone(), q2]).unwrap();
        for (v, p) in avg.values().iter().zip(g.probs()) {
            assert!((v - 2.0 * p).abs() < 1e-15);
        }
        assert_eq!(average_quantiles(std::slice::from_ref(&q1)).unwrap(), q1);
        assert_eq!(average_quantiles(&[q1.clone(), q1.clone(), q1.clone()]).unwrap(), q1);
        let other = QuantileSummary::new(grid(4), vec![0.0, 1.0, 2.0]).unwrap();
        assert!(average_quantiles(&[q1, other]).is_err());
    }

    #[test]
    fn uniform_inverse_cdf_mean() {
        let g = grid(1000);
        let s = QuantileSummary::new(g, g.probs()).unwrap();
        let mut rng = rng_from_seed(1);
        let n = 100_000;
        let d = sample_from_quantiles(&s, n, &mut rng);
        let mean = d.iter().sum::<f64>() / n as f64;
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se);
        let c = QuantileSummary::new(g, vec![1.5; 999]).unwrap();
        assert!(sample_from_quantiles(&c, 100, &mut rng).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn normal_round_trip() {
        let g = grid(100);
        let mut rng = rng_from_seed(2);
        let draws: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = empirical_quantiles(&draws, g).unwrap();
        let back = sample_from_quantiles(&s, 1_000_000, &mut rng);
        let s2 = empirical_quantiles(&back, g).unwrap();
        // The draws follow the truncated law whose p-quantile is
        // S(ξ + (1 − 2ξ) p); the untruncated identity only holds inside.
        let xi = g.xi();
        let sup = g
            .probs()
            .iter()
            .zip(s2.values())
            .map(|(p, b)| (s.quantile_at(xi + (1.0 - 2.0 * xi) * p) - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "{sup}");
    }

    #[test]
    fn moments_of_uniform() {
        let g = grid(10_000);
        let s = QuantileSummary::new(g, g.probs()).unwrap();
        let (m, v) = s.moments();
        assert!((m - 0.5).abs() < 1e-12);
        // Variance of U(ξ, 1 − ξ) is (1 − 2ξ)² / 12.
        assert!((v - (1.0 - 2e-4f64).powi(2) / 12.0).abs() < 1e-8);
    }

    #[test]
    fn quantile_at_interpolates() {
        let s = QuantileSummary::new(grid(4), vec![0.0, 1.0, 4.0]).unwrap();
        assert_eq!(s.quantile_at(0.5), 1.0);
        assert_eq!(s.quantile_at(0.625), 2.5);
        assert_eq!(s.quantile_at(0.01), 0.0);
        assert_eq!(s.quantile_at(0.99), 4.0);
    }

    /// Brute-force minimiser of Σ_j W₂² over monotone candidates on a 3-point
    /// grid with values in a lattice.
    #[test]
    fn average_minimises_w2_on_coarse_grid() {
        let g = grid(4);
        let mut rng = rng_from_seed(3);
        let lattice: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        for _ in 0..20 {
            // Multiples of 0.25 averaged over k = 2 stay on a 0.125 lattice;
            // use k = 2 with even sums so the mean lies on the lattice.
            let mut a: Vec<f64> = (0..3).map(|_| (rng.random_range(0..20) * 2) as f64 * 0.25).collect();
            let mut b: Vec<f64> = (0..3).map(|_| (rng.random_range(0..20) * 2) as f64 * 0.25).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let sa = QuantileSummary::new(g, a.clone()).unwrap();
            let sb = QuantileSummary::new(g, b.clone()).unwrap();
            let avg = average_quantiles(&[sa, sb]).unwrap();
            let cost = |q: &[f64]| -> f64 {
                (0..3).map(|i| (q[i] - a[i]).powi(2) + (q[i] - b[i]).powi(2)).sum::<f64>() * g.xi()
            };
            let mut best = f64::INFINITY;
            let mut arg = vec![];
            for &x in &lattice {
                for &y in lattice.iter().filter(|&&y| y >= x) {
                    for &z in lattice.iter().filter(|&&z| z >= y) {
                        let c = cost(&[x, y, z]);
                        if c < best {
                            best = c;
                            arg = vec![x, y, z];
                        }
                    }
                }
            }
            assert_eq!(avg.values(), arg.as_slice());
            assert!((cost(avg.values()) - best).abs() < 1e-12);
        }
    }

    fn arb_summary(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, len).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    proptest! {
        #[test]
        fn averaged_is_monotone_and_idempotent(
            sets in prop::collection::vec(arb_summary(9), 1..6),
            c in -100.0f64..100.0,
        ) {
            let g = grid(10);
            let s: Vec<_> = sets.iter().map(|v| QuantileSummary::new(g, v.clone()).unwrap()).collect();
            let avg = average_quantiles(&s).unwrap();
            prop_assert!(avg.values().windows(2).all(|w| w[0] <= w[1]));
            let copies = vec![s[0].clone(); sets.len()];
            prop_assert_eq!(&average_quantiles(&copies).unwrap(), &s[0]);
            let shifted: Vec<_> = sets
                .iter()
                .map(|v| QuantileSummary::new(g, v.iter().map(|x| x + c).collect()).unwrap())
                .collect();
            let avg2 = average_quantiles(&shifted).unwrap();
            for (a, b) in avg.values().iter().zip(avg2.values()) {
                prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + a.abs() + c.abs()));
            }
        }

        #[test]
        fn barycenter_contracts_towards_point_mass(
            sets in prop::collection::vec(arb_summary(9), 1..6),
            c in -500.0f64..500.0,
        ) {
            let g = grid(10);
            let s: Vec<_> = sets.iter().map(|v| QuantileSummary::new(g, v.clone()).unwrap()).collect();
            let avg = average_quantiles(&s).unwrap();
            let d = |q: &[f64]| q.iter().map(|v| (v - c).powi(2)).sum::<f64>() * g.xi();
            let mean_d = s.iter().map(|q| d(q.values())).sum::<f64>() / s.len() as f64;
            prop_assert!(d(avg.values()) <= mean_d * (1.0 + 1e-12) + 1e-9);
        }
    }
}
