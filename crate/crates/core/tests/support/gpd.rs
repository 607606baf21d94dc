//! Inverse-CDF sampling and a Kolmogorov-Smirnov distance for tail fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use owhsi::evt::{fit_gpd, gpd_cdf, GpdModel};

/// e = μ((1−u)^(−ξ) − 1)/ξ, or −μ ln(1−u) when ξ = 0.
pub fn samples(xi: f64, mu: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if xi == 0.0 {
                -mu * (1.0 - u).ln()
            } else {
                mu * ((1.0 - u).powf(-xi) - 1.0) / xi
            }
        })
        .collect()
}

/// Sup distance between the empirical CDF of `u` and Uniform(0, 1).
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut v = u.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

pub struct Recovery {
    pub model: GpdModel,
    pub ks: f64,
}

/// Fits the whole sample as the tail (w = smallest draw) and measures how
/// uniform the fitted scores of the draws are.
pub fn recover(xi: f64, n: usize, seed: u64) -> Recovery {
    let data = samples(xi, 1.0, n, seed);
    let model = fit_gpd(&data, n).expect("fit");
    let scores: Vec<f64> = data.iter().map(|&v| gpd_cdf(&model, v - model.w)).collect();
    Recovery {
        model,
        ks: ks_uniform(&scores),
    }
}
