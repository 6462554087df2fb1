use super::*;
use crate::kernels::{fitc_blocks, kernel_matrix, KernelSpec};
use crate::model::{marginal_loglik, inv_gamma_logpdf, PriorSpec};
use rand::Rng;
use std::f64::consts::PI;

fn toy(n: usize, p: usize, seed: u64) -> SpatialDataset {
    let mut rng = rng_from_seed(seed);
    let locs: Vec<_> = (0..n).map(|_| Location::xy(rng.random(), rng.random())).collect();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() - 0.5 });
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    SpatialDataset::new(locs, x, y).unwrap()
}

fn points(n: usize, seed: u64) -> Vec<Location> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| Location::xy(rng.random(), rng.random())).collect()
}

fn full(p: usize) -> ModelConfig {
    ModelConfig {
        prior: PriorSpec::default_for(p),
        kernel: KernelSpec::Exponential,
        variant: GpVariant::FullRank,
    }
}

fn vague(p: usize) -> ModelConfig {
    let mut c = full(p);
    c.prior.sigma_beta = DMatrix::identity(p, p) * 1e12;
    c
}

#[test]
fn beta_flat_prior_pure_noise_is_sample_mean() {
    let data = toy(30, 1, 1);
    let alpha = CovParams::new(1e-14, 0.4, 3.0).unwrap();
    let a = 2.5;
    let (mean, cov) = beta_conditional_moments(&data, &alpha, &vague(1), a).unwrap();
    let ybar = data.y().mean();
    assert!((mean[0] - ybar).abs() < 1e-9, "{} vs {ybar}", mean[0]);
    let want = 0.4 / (a * 30.0);
    assert!((cov[(0, 0)] - want).abs() < 1e-9 * want.max(1.0));
}

#[test]
fn beta_variance_depends_on_exponent_times_m() {
    // Pure noise: V = (a m / τ² + prior precision)⁻¹ whenever a m is fixed.
    let alpha = CovParams::new(1e-300, 0.3, 3.0).unwrap();
    let big = toy(40, 1, 2);
    let small = big.subset(&(0..10).collect::<Vec<_>>()).unwrap();
    let (_, v1) = beta_conditional_moments(&big, &alpha, &full(1), 1.0).unwrap();
    let (_, v2) = beta_conditional_moments(&small, &alpha, &full(1), 4.0).unwrap();
    assert!((v1[(0, 0)] - v2[(0, 0)]).abs() <= 1e-12 * v1[(0, 0)]);
}

/// Closed form assembled with explicit inverses.
fn beta_oracle(data: &SpatialDataset, alpha: &CovParams, cfg: &ModelConfig, a: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.n();
    let c = kernel_matrix(cfg.kernel, alpha, data.locations(), data.locations()).unwrap()
        + DMatrix::identity(n, n) * alpha.tau2;
    let ci = c.try_inverse().unwrap();
    let sbi = cfg.prior.sigma_beta.clone().try_inverse().unwrap();
    let x = data.x();
    let v = (x.transpose() * &ci * x * a + &sbi).try_inverse().unwrap();
    let m = &v * (x.transpose() * &ci * data.y() * a + &sbi * &cfg.prior.mu_beta);
    (m, v)
}

#[test]
fn beta_draws_match_closed_form() {
    let data = toy(5, 2, 3);
    let alpha = CovParams::new(0.8, 0.2, 2.0).unwrap();
    let mut cfg = full(2);
    cfg.prior.mu_beta = DVector::from_vec(vec![0.5, -0.5]);
    cfg.prior.sigma_beta = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let a = 3.0;
    let (m, v) = beta_oracle(&data, &alpha, &cfg, a);
    let (m2, v2) = beta_conditional_moments(&data, &alpha, &cfg, a).unwrap();
    assert!((&m - &m2).amax() < 1e-10);
    assert!((&v - &v2).amax() < 1e-10);

    let mut rng = rng_from_seed(99);
    let n = 50_000;
    let draws: Vec<_> = (0..n)
        .map(|_| sample_beta_conditional(&data, &alpha, &cfg, a, &mut rng).unwrap())
        .collect();
    for i in 0..2 {
        let mean = draws.iter().map(|d| d[i]).sum::<f64>() / n as f64;
        let se = (v[(i, i)] / n as f64).sqrt();
        assert!((mean - m[i]).abs() < 4.0 * se, "coord {i}: {mean} vs {}", m[i]);
        let var = draws.iter().map(|d| (d[i] - m[i]).powi(2)).sum::<f64>() / n as f64;
        // Var of the sample variance of a Gaussian is 2σ⁴/n.
        let se_var = (2.0 / n as f64).sqrt() * v[(i, i)];
        assert!((var - v[(i, i)]).abs() < 4.0 * se_var);
    }
}

#[test]
fn alpha_target_is_loglik_plus_prior() {
    let data = toy(12, 1, 4);
    let beta = DVector::from_vec(vec![0.2]);
    let alpha = CovParams::new(0.9, 0.15, 5.0).unwrap();
    let cfg = full(1);
    let lt = alpha_log_target(&data, &beta, &alpha, &cfg, 1.0);
    let ll = marginal_loglik(&data, &beta, &alpha, &cfg, 1.0).unwrap();
    assert!((lt - ll - cfg.prior.alpha_log_prior(&alpha)).abs() < 1e-12);
}

#[test]
fn alpha_target_outside_box() {
    let data = toy(6, 1, 5);
    let beta = DVector::from_vec(vec![0.0]);
    let cfg = full(1);
    let mut alpha = CovParams::new(1.0, 0.1, 1.0).unwrap();
    alpha.phi = cfg.prior.phi_hi + 1.0;
    assert_eq!(alpha_log_target(&data, &beta, &alpha, &cfg, 1.0), f64::NEG_INFINITY);
    alpha.phi = cfg.prior.phi_lo / 2.0;
    assert_eq!(alpha_log_target(&data, &beta, &alpha, &cfg, 1.0), f64::NEG_INFINITY);
}

#[test]
fn alpha_target_matches_dense_brute_force() {
    let data = toy(7, 2, 6);
    let beta = DVector::from_vec(vec![0.1, 0.4]);
    let alpha = CovParams::new(1.2, 0.25, 4.0).unwrap();
    let cfg = full(2);
    let a = 3.5;
    let n = data.n();
    let c = kernel_matrix(cfg.kernel, &alpha, data.locations(), data.locations()).unwrap()
        + DMatrix::identity(n, n) * alpha.tau2;
    let r = data.y() - data.x() * &beta;
    let quad = (r.transpose() * c.clone().try_inverse().unwrap() * &r)[(0, 0)];
    let ll = -0.5 * a * (n as f64 * (2.0 * PI).ln() + c.determinant().ln() + quad);
    let pr = &cfg.prior;
    let prior = inv_gamma_logpdf(alpha.sigma2, pr.a_sigma, pr.b_sigma)
        + inv_gamma_logpdf(alpha.tau2, pr.a_tau, pr.b_tau)
        - (pr.phi_hi - pr.phi_lo).ln();
    let got = alpha_log_target(&data, &beta, &alpha, &cfg, a);
    assert!((got - ll - prior).abs() < 1e-10);
}

/// Three-term predictive covariance, built from explicit inverses.
fn three_term(c_jj: &DMatrix<f64>, c_sj: &DMatrix<f64>, c_ss: &DMatrix<f64>, tau2: f64, a: f64) -> DMatrix<f64> {
    let m = c_jj.nrows();
    let cinv = c_jj.clone().try_inverse().unwrap();
    let vw = (&cinv + DMatrix::identity(m, m) * (a / tau2)).try_inverse().unwrap();
    let proj = c_sj * &cinv;
    c_ss - &proj * c_sj.transpose() + &proj * vw * proj.transpose()
}

#[test]
fn wstar_direct_equals_three_term() {
    for seed in 0..10 {
        let data = toy(20, 1, 100 + seed);
        let s_star = points(5, 200 + seed);
        let alpha = CovParams::new(1.0, 0.3, 3.0).unwrap();
        let beta = DVector::from_vec(vec![0.1]);
        let a = 4.0;
        let (_, cov) = wstar_moments(&data, &s_star, &beta, &alpha, &full(1), a).unwrap();
        let k = |x: &[Location], y: &[Location]| kernel_matrix(KernelSpec::Exponential, &alpha, x, y).unwrap();
        let want = three_term(&k(data.locations(), data.locations()), &k(&s_star, data.locations()), &k(&s_star, &s_star), alpha.tau2, a);
        let rel = (&cov - &want).amax() / want.amax();
        assert!(rel < 1e-8, "seed {seed}: {rel}");
    }
}

#[test]
fn wstar_lowrank_matches_dense_fitc_direct_form() {
    let data = toy(25, 1, 7);
    let s_star = points(6, 8);
    let knots = KnotSet::new(points(5, 9)).unwrap();
    let alpha = CovParams::new(1.3, 0.2, 2.5).unwrap();
    let beta = DVector::from_vec(vec![-0.2]);
    let a = 3.0;
    let mut cfg = full(1);
    cfg.variant = GpVariant::Mpp { rank: 5, knots: Some(knots.clone()) };
    let (mean, cov) = wstar_moments(&data, &s_star, &beta, &alpha, &cfg, a).unwrap();
    let b = fitc_blocks(KernelSpec::Exponential, &alpha, &knots, data.locations(), &s_star).unwrap();
    let m = data.n();
    let inv = (&b.ctilde_jj + DMatrix::identity(m, m) * (alpha.tau2 / a)).try_inverse().unwrap();
    let resid = data.y() - data.x() * &beta;
    let want_mean = b.ctilde_jstar.transpose() * &inv * resid;
    let want_cov = &b.ctilde_starstar - b.ctilde_jstar.transpose() * &inv * &b.ctilde_jstar;
    assert!((&mean - &want_mean).amax() < 1e-10 * (1.0 + want_mean.amax()));
    assert!((&cov - &want_cov).amax() / want_cov.amax() < 1e-8);
    let three = three_term(&b.ctilde_jj, &b.ctilde_jstar.transpose(), &b.ctilde_starstar, alpha.tau2, a);
    assert!((&cov - &three).amax() / three.amax() < 1e-8);
}

#[test]
fn wstar_interpolates_without_noise() {
    let data = toy(10, 1, 10);
    let s_star = vec![data.locations()[3].clone()];
    let alpha = CovParams::new(1.0, 0.1, 3.0).unwrap();
    let beta = DVector::from_vec(vec![0.3]);
    let (mean, cov) = wstar_moments(&data, &s_star, &beta, &alpha, &full(1), 1e10).unwrap();
    let resid = data.y()[3] - 0.3;
    assert!((mean[0] - resid).abs() < 1e-6);
    assert!(cov[(0, 0)].abs() < 1e-6);
}

#[test]
fn wstar_without_correlation_is_prior() {
    let data = toy(10, 1, 11);
    let s_star = vec![Location::xy(5.0, 5.0)];
    let alpha = CovParams::new(1.7, 0.1, 1e4).unwrap();
    let beta = DVector::from_vec(vec![0.0]);
    let (mean, cov) = wstar_moments(&data, &s_star, &beta, &alpha, &full(1), 2.0).unwrap();
    assert!(mean[0].abs() < 1e-12);
    assert!((cov[(0, 0)] - 1.7).abs() < 1e-12);
}

#[test]
fn wstar_draws_match_moments() {
    let data = toy(15, 1, 12);
    let s_star = points(3, 13);
    let alpha = CovParams::new(1.0, 0.2, 3.0).unwrap();
    let beta = DVector::from_vec(vec![0.1]);
    let mut cfg = full(1);
    cfg.variant = GpVariant::Mpp { rank: 4, knots: Some(KnotSet::new(points(4, 14)).unwrap()) };
    for cfg in [full(1), cfg] {
        let (mean, cov) = wstar_moments(&data, &s_star, &beta, &alpha, &cfg, 2.0).unwrap();
        let mut rng = rng_from_seed(15);
        let n = 20_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..n {
            acc += sample_wstar_conditional(&data, &s_star, &beta, &alpha, &cfg, 2.0, &mut rng).unwrap();
        }
        acc /= n as f64;
        for i in 0..3 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((acc[i] - mean[i]).abs() < 4.0 * se);
        }
    }
}

#[test]
fn ystar_noise_and_limits() {
    let mut rng = rng_from_seed(16);
    let alpha = CovParams::new(1.0, 0.49, 1.0).unwrap();
    let x = DMatrix::zeros(1, 1);
    let beta = DVector::zeros(1);
    let w = DVector::zeros(1);
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_ystar_conditional(&x, &beta, &w, &alpha, &mut rng).unwrap()[0])
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (2.0 / n as f64).sqrt() * 0.49;
    assert!((var - 0.49).abs() < 3.0 * se);

    let alpha = CovParams { sigma2: 1.0, tau2: 1e-300, phi: 1.0 };
    let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, -1.0]);
    let beta = DVector::from_vec(vec![0.5, 0.25]);
    let w = DVector::from_vec(vec![0.1, -0.1]);
    let y = sample_ystar_conditional(&x, &beta, &w, &alpha, &mut rng).unwrap();
    assert!((y - (&x * &beta + &w)).amax() < 1e-140);
}

/// Long-run frequencies of a 3-bin piecewise-constant target on the
/// transformed scale.
#[test]
fn metropolis_detailed_balance_on_discretised_target() {
    let tf = AlphaTransform { phi_lo: 0.1, phi_hi: 10.0 };
    let weights: [f64; 3] = [0.2, 0.5, 0.3];
    let bin = |t: f64| -> Option<usize> {
        if (-1.5..-0.5).contains(&t) {
            Some(0)
        } else if (-0.5..0.5).contains(&t) {
            Some(1)
        } else if (0.5..1.5).contains(&t) {
            Some(2)
        } else {
            None
        }
    };
    // Density on θ is w_b on the θ₁ bin and uniform on [-1,1]² for θ₂, θ₃;
    // on the α scale that is g(θ(α)) − log|J|.
    let target = |a: &CovParams| -> f64 {
        let t = tf.forward(a);
        if t[1].abs() > 1.0 || t[2].abs() > 1.0 {
            return f64::NEG_INFINITY;
        }
        match bin(t[0]) {
            Some(b) => weights[b].ln() - tf.log_jacobian(a),
            None => f64::NEG_INFINITY,
        }
    };
    let mut rng = rng_from_seed(17);
    let mut state = tf.inverse(&[0.0, 0.0, 0.0]);
    let mut lt = target(&state);
    let mut counts = [0f64; 3];
    let thin = 20;
    let n = 20_000;
    for i in 0..n * thin {
        let (s, l, _) = metropolis_alpha_step(&state, lt, &[0.8, 0.5, 0.5], &tf, target, &mut rng);
        state = s;
        lt = l;
        if i % thin == 0 {
            counts[bin(tf.forward(&state)[0]).unwrap()] += 1.0;
        }
    }
    let chi2: f64 = (0..3)
        .map(|b| {
            let e = weights[b] * n as f64;
            (counts[b] - e).powi(2) / e
        })
        .sum();
    // χ² with 2 degrees of freedom has survival function exp(−x/2).
    let p = (-chi2 / 2.0).exp();
    assert!(p > 0.01, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn metropolis_recovers_inverse_gamma_prior() {
    let tf = AlphaTransform { phi_lo: 0.1, phi_hi: 10.0 };
    let target = |a: &CovParams| {
        if !(a.phi > 0.1 && a.phi < 10.0) {
            return f64::NEG_INFINITY;
        }
        inv_gamma_logpdf(a.sigma2, 2.0, 2.0) + inv_gamma_logpdf(a.tau2, 2.0, 0.1)
    };
    let mut rng = rng_from_seed(18);
    let mut state = CovParams { sigma2: 1.0, tau2: 0.05, phi: 5.0 };
    let mut lt = target(&state);
    let thin = 10;
    let n = 40_000;
    let mut inv = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for i in 0..n * thin {
        let (s, l, _) = metropolis_alpha_step(&state, lt, &[1.0, 1.0, 1.0], &tf, target, &mut rng);
        state = s;
        lt = l;
        if i % thin == 0 {
            inv.push(1.0 / state.sigma2);
            raw.push(state.sigma2);
        }
    }
    // 1/σ² ~ Gamma(2, rate 2): mean 1, variance 0.5. IG(2, 2) itself has
    // mean 2 but infinite variance, so its sample mean gets a loose check.
    let m = inv.iter().sum::<f64>() / n as f64;
    let se = (0.5 / n as f64).sqrt();
    assert!((m - 1.0).abs() < 3.0 * se * 2.0, "mean of 1/sigma2 {m}");
    let mraw = raw.iter().sum::<f64>() / n as f64;
    assert!((mraw - 2.0).abs() < 0.25, "mean of sigma2 {mraw}");
}

fn short_mcmc(seed: u64) -> McmcConfig {
    McmcConfig {
        n_iter: 300,
        burn_in: 100,
        thin: 4,
        seed,
        ..McmcConfig::default()
    }
}

#[test]
fn retained_count_defaults() {
    assert_eq!(McmcConfig::default().retained(), 1000);
    let m = McmcConfig { n_iter: 3000, burn_in: 1000, thin: 2, ..McmcConfig::default() };
    let kept: Vec<_> = (0..3000).filter(|&i| m.is_retained(i)).collect();
    assert_eq!(kept.len(), 1000);
    assert_eq!(kept[0], 1001);
    assert_eq!(*kept.last().unwrap(), 2999);
}

#[test]
fn chain_is_deterministic_and_in_support() {
    let data = toy(30, 1, 19);
    let s_star = points(4, 20);
    let xs = DMatrix::from_element(4, 1, 1.0);
    let cfg = full(1);
    let a = run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(5), 2.0).unwrap();
    let b = run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(5), 2.0).unwrap();
    assert_eq!(a.beta_draws, b.beta_draws);
    assert_eq!(a.alpha_draws, b.alpha_draws);
    assert_eq!(a.wstar_draws, b.wstar_draws);
    assert_eq!(a.ystar_draws, b.ystar_draws);
    assert_eq!(a.retained(), 50);
    for r in 0..a.retained() {
        assert!(a.alpha_draws[(r, 0)] > 0.0 && a.alpha_draws[(r, 1)] > 0.0);
        assert!(cfg.prior.phi_in_box(a.alpha_draws[(r, 2)]));
    }
    assert!((0.0..=1.0).contains(&a.acceptance_rate));
    let c = run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(6), 2.0).unwrap();
    assert_ne!(a.beta_draws, c.beta_draws);
}

#[test]
fn mpp_chain_runs_with_drawn_knots() {
    let data = toy(40, 1, 21);
    let s_star = points(3, 22);
    let xs = DMatrix::from_element(3, 1, 1.0);
    let mut cfg = full(1);
    cfg.variant = GpVariant::Mpp { rank: 5, knots: None };
    let chain = run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(7), 1.0).unwrap();
    assert_eq!(chain.retained(), 50);
    cfg.variant = GpVariant::Mpp { rank: 40, knots: None };
    assert!(matches!(
        run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(7), 1.0),
        Err(DiskError::Input(_))
    ));
}

#[test]
fn noiseless_data_pins_beta() {
    let mut rng = rng_from_seed(23);
    let n = 40;
    let locs: Vec<_> = (0..n).map(|_| Location::xy(rng.random(), rng.random())).collect();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 4.0 - 2.0 });
    let beta0 = DVector::from_vec(vec![1.0, -0.5]);
    let y = &x * &beta0;
    let data = SpatialDataset::new(locs, x, y).unwrap();
    let mut cfg = full(2);
    // Prior mass for both variances sits near zero.
    cfg.prior.a_tau = 50.0;
    cfg.prior.b_tau = 1e-6;
    cfg.prior.a_sigma = 50.0;
    cfg.prior.b_sigma = 1e-6;
    let s_star = points(2, 24);
    let xs = DMatrix::from_element(2, 2, 1.0);
    let chain = run_subset_chain(&data, &s_star, &xs, &cfg, &short_mcmc(8), 1.0).unwrap();
    for j in 0..2 {
        let col = chain.beta_draws.column(j);
        let mean = col.mean();
        let sd = (col.map(|v| (v - mean).powi(2)).sum() / (col.len() - 1) as f64).sqrt();
        assert!(sd < 0.05 * 10.0, "sd {sd}");
        assert!((mean - beta0[j]).abs() < 0.05);
    }
}

#[test]
fn monitor_aborts_after_fifty_one_failures() {
    let mut m = FailureMonitor::default();
    for it in 0..50 {
        m.record(it, true).unwrap();
    }
    assert!(matches!(m.record(50, true), Err(DiskError::ChainAbort { .. })));

    let mut m = FailureMonitor::default();
    for it in 0..49 {
        m.record(it, true).unwrap();
    }
    m.record(49, false).unwrap();
    for it in 50..100 {
        m.record(it, true).unwrap();
    }
    // Past the window failures only count as jitter events.
    let mut m = FailureMonitor::default();
    for it in 100..400 {
        m.record(it, true).unwrap();
    }
}

#[test]
fn chain_abort_names_subset() {
    let e = abort("stuck".into()).with_subset(3);
    assert_eq!(e.to_string(), "chain for subset 3 aborted: stuck");
}
