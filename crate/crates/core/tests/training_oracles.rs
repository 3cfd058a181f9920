mod common;

use std::f64::consts::SQRT_2;

use common::{central_diff, golden_min};
use gupkit::distributions::LaplaceDist;
use gupkit::exec::substream;
use gupkit::training::{
    beta_nll_gauss, beta_nll_laplace, htl_trace, learning_situation, nll_gauss, nll_laplace, synthetic_losses, toy_fit,
    FitConfig, TaskGraph,
};
use proptest::prelude::*;

#[test]
fn per_sample_sigma_minimizers() {
    for &(mu, gt) in &[(0.0f64, 2.0f64), (1.0, 0.3), (-4.0, 1.0)] {
        let e = (mu - gt).abs();
        let lap = golden_min(|s| nll_laplace(mu, s, gt).unwrap().value, 1e-3, 50.0, 1e-9);
        assert!((lap - SQRT_2 * e).abs() < 1e-4, "{lap}");
        let gau = golden_min(|s| nll_gauss(mu, s, gt).unwrap().value, 1e-3, 50.0, 1e-9);
        assert!((gau - e).abs() < 1e-4, "{gau}");
        for beta in [0.25, 0.5, 1.0] {
            // prefactor frozen at an arbitrary sigma: the stop-gradient objective
            let frozen = |s: f64| {
                let pref = beta_nll_laplace(mu, 3.0, gt, beta).unwrap().value / nll_laplace(mu, 3.0, gt).unwrap().value;
                pref * nll_laplace(mu, s, gt).unwrap().value
            };
            let m = golden_min(frozen, 1e-3, 50.0, 1e-9);
            assert!((m - SQRT_2 * e).abs() < 1e-4);
            assert!(beta_nll_laplace(mu, SQRT_2 * e, gt, beta).unwrap().d_sigma.abs() < 1e-12);
        }
    }
    let two = golden_min(|s| nll_laplace(0.0, s, 2.0).unwrap().value, 1e-3, 50.0, 1e-9);
    assert!((two - 2.82843).abs() < 1e-4);
}

#[test]
fn aggregate_sigma_minimizer() {
    let mut rng = substream(4, 0);
    let d = LaplaceDist::new(0.0, 1.3).unwrap();
    let xs: Vec<f64> = (0..5000).map(|_| d.sample(&mut rng)).collect();
    let mu = 0.1;
    let mad = xs.iter().map(|x| (x - mu).abs()).sum::<f64>() / xs.len() as f64;
    let mean_nll = |s: f64| xs.iter().map(|&x| nll_laplace(mu, s, x).unwrap().value).sum::<f64>() / xs.len() as f64;
    let m = golden_min(mean_nll, 1e-2, 10.0, 1e-9);
    assert!((m - SQRT_2 * mad).abs() < 1e-4);
}

proptest! {
    #[test]
    fn gradients_match_central_differences(mu in -5.0..5.0f64, sigma in 0.2..5.0f64, gt in -5.0..5.0f64,
                                           beta in 0.0..1.0f64) {
        prop_assume!((mu - gt).abs() > 1e-3);
        let h = 1e-6;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * b.abs().max(1.0);

        let lp = (sigma / SQRT_2).powf(beta);
        let e = beta_nll_laplace(mu, sigma, gt, beta).unwrap();
        prop_assert!(close(e.d_mu, central_diff(|m| lp * nll_laplace(m, sigma, gt).unwrap().value, mu, h)));
        prop_assert!(close(e.d_sigma, central_diff(|s| lp * nll_laplace(mu, s, gt).unwrap().value, sigma, h)));

        let gp = (sigma * sigma).powf(beta);
        let g = beta_nll_gauss(mu, sigma, gt, beta).unwrap();
        prop_assert!(close(g.d_mu, central_diff(|m| gp * nll_gauss(m, sigma, gt).unwrap().value, mu, h)));
        prop_assert!(close(g.d_sigma, central_diff(|s| gp * nll_gauss(mu, s, gt).unwrap().value, sigma, h)));

        let n = nll_laplace(mu, sigma, gt).unwrap();
        prop_assert!((n.d_mu - central_diff(|m| nll_laplace(m, sigma, gt).unwrap().value, mu, h)).abs() < 1e-6);
        prop_assert_eq!(beta_nll_laplace(mu, sigma, gt, 0.0).unwrap(), n);
    }
}

fn laplace_samples(mu: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    let d = LaplaceDist::new(mu, sigma).unwrap();
    let mut rng = substream(seed, 0);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn toy_fit_recovers_sigma() {
    let xs = laplace_samples(0.0, 2.0, 100_000, 1);
    let fit = toy_fit(&xs, &FitConfig::default()).unwrap();
    assert!((1.9..=2.1).contains(&fit.sigma), "{}", fit.sigma);
}

#[test]
fn toy_fit_beta_only_changes_speed() {
    let xs = laplace_samples(0.5, 1.0, 20_000, 2);
    let fits: Vec<_> = [0.0, 1.0]
        .iter()
        .map(|&beta| toy_fit(&xs, &FitConfig { beta, steps: 3000, ..FitConfig::default() }).unwrap())
        .collect();
    assert!((fits[0].mu - fits[1].mu).abs() < 1e-3);
    assert!((fits[0].sigma - fits[1].sigma).abs() < 1e-3);
}

#[test]
fn scheduler_delays_depth() {
    let g = TaskGraph::detector_default();
    let losses = synthetic_losses(&g, 61, 7);
    let trace = htl_trace(g, &losses, 60, 3).unwrap();
    let w = |task: &str, e: usize| trace.iter().find(|r| r.task == task && r.epoch == e).unwrap().weight;
    let first_full = |task: &str| (0..=60).find(|&e| w(task, e) > 0.99).unwrap();
    assert!(first_full("depth") > first_full("angle"));
    for e in 0..=60 {
        for s in ["heatmap", "offset_2d", "size_2d"] {
            assert!(w("depth", e) <= w(s, e));
        }
    }
}

#[test]
fn situation_is_scale_invariant_on_traces() {
    let g = TaskGraph::detector_default();
    let losses = synthetic_losses(&g, 40, 3);
    let depth: Vec<f64> = losses.iter().map(|l| l["depth"]).collect();
    let scaled: Vec<f64> = depth.iter().map(|x| 1234.5 * x).collect();
    for t in 3..40 {
        let a = learning_situation(&depth, 3, t).unwrap();
        let b = learning_situation(&scaled, 3, t).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
