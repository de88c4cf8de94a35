//! The Green's function `(−Δ)⁻¹` of the whole lattice `Z³` (occupation
//! convention), tabulated near the origin and asymptotic beyond.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Madelung-type constant of the simple cubic lattice: the constant term of
/// the periodized `1/(4πr)` on a unit torus is `−MADELUNG/(4π)`.
const MADELUNG: f64 = 2.837_297_479_480_619_5;
const TORUS: usize = 128;
/// `Σ_{m ≠ 0} P₄(m_1/|m|)/|m|⁵` over `Z³`: coefficient of the cubic harmonic in
/// the image sum of the torus kernel.
const CUBIC_IMAGE_SUM: f64 = 3.108_226_7;
/// Euclidean radius up to which the table is used.
const CROSSOVER: f64 = 20.0;

/// Tabulated `g_{Z³}(x)` for `|x| ≤ 20` (torus kernel minus its image
/// corrections), with the two-term asymptotic expansion outside; relative
/// accuracy ~2e-5 throughout.
#[derive(Debug, Clone)]
pub struct Z3Green {
    reach: usize,
    table: Vec<f64>,
}

fn fft_axis(data: &mut [Complex<f64>], n: usize, axis: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_inverse(n);
    let stride = n.pow(axis as u32);
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for base in 0..n * n * n {
        if (base / stride) % n != 0 {
            continue;
        }
        for k in 0..n {
            line[k] = data[base + k * stride];
        }
        fft.process(&mut line);
        for k in 0..n {
            data[base + k * stride] = line[k];
        }
    }
}

impl Z3Green {
    fn build() -> Self {
        let n = TORUS;
        let mut data = vec![Complex::new(0.0, 0.0); n * n * n];
        let c: Vec<f64> = (0..n).map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()).collect();
        for k in 1..n * n * n {
            let (a, b, e) = (k % n, (k / n) % n, k / (n * n));
            data[k] = Complex::new(1.0 / (c[a] + c[b] + c[e]), 0.0);
        }
        let mut planner = FftPlanner::new();
        for axis in 0..3 {
            fft_axis(&mut data, n, axis, &mut planner);
        }
        let reach = CROSSOVER as usize;
        let m = reach + 1;
        let n3 = (n * n * n) as f64;
        let shift = MADELUNG / (4.0 * PI * n as f64);
        let mut table = vec![0.0; m * m * m];
        for z in 0..m {
            for y in 0..m {
                for x in 0..m {
                    let r2 = (x * x + y * y + z * z) as f64;
                    let gt = data[x + n * (y + n * z)].re / n3;
                    let quartic = if r2 > 0.0 {
                        let q = ((x * x * x * x + y * y * y * y + z * z * z * z) as f64) / (r2 * r2);
                        r2 * r2 / (n as f64).powi(5) * CUBIC_IMAGE_SUM * 2.5 * (q - 0.6) / (4.0 * PI)
                    } else {
                        0.0
                    };
                    table[x + m * (y + m * z)] = gt - r2 / (6.0 * n3) + shift - quartic;
                }
            }
        }
        Z3Green { reach, table }
    }

    /// Process-wide instance (built once, ~1 s).
    pub fn shared() -> &'static Z3Green {
        static CELL: OnceLock<Z3Green> = OnceLock::new();
        CELL.get_or_init(Z3Green::build)
    }

    /// Largest `|x|_∞` stored in the table.
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// `g(x)` for a displacement `x ∈ Z³`.
    pub fn value(&self, x: &[i64]) -> f64 {
        let a = [x[0].unsigned_abs() as usize, x[1].unsigned_abs() as usize, x[2].unsigned_abs() as usize];
        let r2: usize = a.iter().map(|v| v * v).sum();
        if (r2 as f64) <= CROSSOVER * CROSSOVER {
            let m = self.reach + 1;
            return self.table[a[0] + m * (a[1] + m * a[2])];
        }
        Self::asymptotic(x)
    }

    /// `1/(4πr) + (5Σx_i⁴/r⁴ − 3)/(32πr³)`.
    pub fn asymptotic(x: &[i64]) -> f64 {
        let r2: f64 = x.iter().map(|&v| (v * v) as f64).sum();
        let r = r2.sqrt();
        let q: f64 = x.iter().map(|&v| (v as f64).powi(4)).sum::<f64>() / (r2 * r2);
        1.0 / (4.0 * PI * r) + (5.0 * q - 3.0) / (32.0 * PI * r * r2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_and_harmonicity() {
        let g = Z3Green::shared();
        // Watson's integral: 0.505462... / 2
        assert!((g.value(&[0, 0, 0]) - 0.252_731_009_858).abs() < 2e-7, "{}", g.value(&[0, 0, 0]));
        // −Δg = δ
        let lap0 = 6.0 * g.value(&[0, 0, 0]) - 6.0 * g.value(&[1, 0, 0]);
        assert!((lap0 - 1.0).abs() < 1e-6);
        let x = [3i64, 2, 1];
        let mut s = 6.0 * g.value(&x);
        for a in 0..3 {
            for sg in [-1, 1] {
                let mut y = x;
                y[a] += sg;
                s -= g.value(&y);
            }
        }
        assert!(s.abs() < 1e-7);
        // table and asymptotics agree around the crossover
        for e in [[19i64, 5, 0], [12, 12, 10], [20, 0, 0]] {
            let m = g.reach() + 1;
            let a = e.map(|v| v as usize);
            let tab = g.table[a[0] + m * (a[1] + m * a[2])];
            assert!((tab / Z3Green::asymptotic(&e) - 1.0).abs() < 2e-5, "{e:?}");
        }
    }
}
