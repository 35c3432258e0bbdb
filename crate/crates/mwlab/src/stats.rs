//! Small statistical helpers shared by the Monte Carlo experiments.

use statrs::distribution::{ContinuousCDF, Normal};

/// `L(x) = max(log x, 1)`, the normalizer convention used throughout; the
/// iterated version `L(L(n))` equals 1 for every `n <= e^e`.
#[inline]
pub fn slow_log(x: f64) -> f64 {
    x.ln().max(1.0)
}

/// `sqrt(2 n L(L(n)))`, the iterated-logarithm normalizer.
#[inline]
pub fn lil_normalizer(n: f64) -> f64 {
    (2.0 * n * slow_log(slow_log(n))).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous cdf.
/// Sorts a copy of the sample.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max(((i + 1) as f64 / n - c).abs());
        d = d.max((i as f64 / n - c).abs());
    }
    d
}

/// Cdf of `Normal(0, sigma^2)` as a closure suitable for [`ks_statistic`].
pub fn normal_cdf(sigma: f64) -> impl Fn(f64) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("sigma must be positive");
    move |x| normal.cdf(x)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by `n`).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.len() as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let c = covariance(xs, ys);
    let denom = (variance(xs) * variance(ys)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        c / denom
    }
}
