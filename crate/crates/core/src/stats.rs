//! Estimators with error bars, and the small quadrature toolbox shared by the
//! deterministic oracles.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Default number of batches for batch-means error bars.
pub const BATCHES: usize = 32;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    /// Effective sample size (`sample variance / SE²`); equals `n` for iid data.
    pub n_eff: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0, n_eff: f64::INFINITY }
    }

    /// Number of combined standard errors separating two estimates.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        let diff = (self.value - other.value).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }

    /// Agreement within `k` combined standard errors.
    pub fn agrees(&self, other: &Estimate, k: f64) -> bool {
        self.z_against(other) <= k
    }

    /// Whether `value ± k·SE` intervals overlap.
    pub fn overlaps(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.std_error + other.std_error)
    }

    pub fn scale(&self, c: f64) -> Estimate {
        Estimate { value: c * self.value, std_error: c.abs() * self.std_error, n_eff: self.n_eff }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean with an iid standard error.
pub fn iid(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    Estimate { value: mean(x), std_error: (variance(x) / n).sqrt(), n_eff: n }
}

/// Mean of a correlated series with a batch-means standard error.
pub fn batch_means(x: &[f64], batches: usize) -> Estimate {
    let n = x.len();
    let b = batches.max(2);
    if n < 2 * b {
        return iid(x);
    }
    let size = n / b;
    let used = size * b;
    let bm: Vec<f64> = x[..used].chunks(size).map(mean).collect();
    let se = (variance(&bm) / b as f64).sqrt();
    let var = variance(x);
    let n_eff = if se > 0.0 { var / (se * se) } else { n as f64 };
    Estimate { value: mean(&x[..used]), std_error: se, n_eff: n_eff.min(n as f64) }
}

/// Covariance estimate `E[xy] − E[x]E[y]` for a correlated pair of series,
/// with a batch-means error on the per-batch covariances.
pub fn batch_covariance(x: &[f64], y: &[f64], batches: usize) -> Estimate {
    let n = x.len().min(y.len());
    let b = batches.max(2);
    let cov = |a: &[f64], c: &[f64]| {
        let (ma, mc) = (mean(a), mean(c));
        a.iter().zip(c).map(|(p, q)| (p - ma) * (q - mc)).sum::<f64>() / a.len() as f64
    };
    let value = cov(&x[..n], &y[..n]);
    if n < 4 * b {
        let prod: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let e = iid(&prod);
        return Estimate { value, ..e };
    }
    let size = n / b;
    let per: Vec<f64> = (0..b).map(|k| cov(&x[k * size..(k + 1) * size], &y[k * size..(k + 1) * size])).collect();
    let se = (variance(&per) / b as f64).sqrt();
    let prod: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let var = variance(&prod);
    let n_eff = if se > 0.0 { (var / (se * se)).min(n as f64) } else { n as f64 };
    Estimate { value, std_error: se, n_eff }
}

/// Estimate of `f(mean)` from batch means via the jackknife over batches.
pub fn jackknife<F: Fn(&[f64]) -> f64>(batch_values: &[Vec<f64>], stat: F) -> Estimate {
    let b = batch_values.len();
    let all: Vec<f64> = batch_values.iter().flatten().cloned().collect();
    let full = stat(&all);
    if b < 2 {
        return Estimate { value: full, std_error: f64::NAN, n_eff: all.len() as f64 };
    }
    let loo: Vec<f64> = (0..b)
        .map(|k| {
            let v: Vec<f64> =
                batch_values.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, v)| v.iter().cloned()).collect();
            stat(&v)
        })
        .collect();
    let m = mean(&loo);
    let var = loo.iter().map(|v| (v - m).powi(2)).sum::<f64>() * (b - 1) as f64 / b as f64;
    Estimate { value: full, std_error: var.sqrt(), n_eff: all.len() as f64 }
}

/// Split a series into `b` contiguous batches.
pub fn batches(x: &[f64], b: usize) -> Vec<Vec<f64>> {
    let size = (x.len() / b.max(1)).max(1);
    x.chunks(size).take(b.max(1)).map(|c| c.to_vec()).collect()
}

/// `log mean exp` computed stably.
pub fn log_mean_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (x.iter().map(|v| (v - m).exp()).sum::<f64>() / x.len() as f64).ln()
}

/// Two-sided p-value of a z statistic.
pub fn two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf(z.abs()))
}

/// Ordinary least squares `y ≈ a + b x`; returns `(b, a)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Composite Simpson weights for `n` (odd) equispaced nodes with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd node count");
    (0..n)
        .map(|k| {
            let w = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Tanh–sinh quadrature of `f` on `[a, b]`; robust to integrable endpoint
/// singularities. `level` controls the step `2^-level`.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, level: u32) -> f64 {
    let h = 0.5f64.powi(level as i32);
    let r = 0.5 * (b - a);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let kmax = (4.0 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let s = half_pi * t.sinh();
        let u = s.tanh();
        let w = half_pi * t.cosh() / s.cosh().powi(2);
        if w < 1e-300 {
            continue;
        }
        // distance to the nearer endpoint, computed without cancellation
        let e = 1.0 / (s.abs().exp() * s.abs().cosh());
        let x = if u >= 0.0 { b - r * e } else { a + r * e };
        if x <= a || x >= b {
            continue;
        }
        sum += w * f(x);
    }
    sum * h * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tanh_sinh_log_singularity() {
        let v = tanh_sinh(|x| x.ln(), 0.0, 1.0, 6);
        assert!((v + 1.0).abs() < 1e-10, "{v}");
        let v = tanh_sinh(|x| 1.0 / x.sqrt(), 0.0, 4.0, 6);
        assert!((v - 4.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let n = 17;
        let h = 2.0 / 16.0;
        let w = simpson_weights(n, h);
        let s: f64 = (0..n).map(|k| w[k] * (k as f64 * h).powi(3)).sum();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_iid_matches_naive() {
        use rand::Rng;
        let mut r = crate::rng::stream(1, &[]);
        let x: Vec<f64> = (0..64_000).map(|_| r.random::<f64>()).collect();
        let e = batch_means(&x, 32);
        let naive = (variance(&x) / x.len() as f64).sqrt();
        assert!((e.std_error / naive - 1.0).abs() < 0.4);
        assert!((e.value - 0.5).abs() < 4.0 * naive);
    }
}
