//! Mollifiers and mollified rescaled kernels in `d = 3`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::Z3Green;
use crate::error::{Error, Result};
use crate::field::SiteMap;
use crate::lattice::{cell_of, Site};
use crate::stats::tanh_sinh;

/// Mollifier shape on `[−1, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Product of the 1-d bumps `c·exp(−1/(1−t²))`.
    ProductBump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub profile: Profile,
    pub epsilon: f64,
}

/// Which arguments of the kernel are smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Both,
    RightOnly,
}

fn bump_raw(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn bump_norm() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 1.0 / tanh_sinh(bump_raw, -1.0, 1.0, 8))
}

impl MollifierSpec {
    pub fn new(epsilon: f64) -> Self {
        MollifierSpec { profile: Profile::ProductBump, epsilon }
    }

    /// The 1-d factor of the profile (unit integral).
    pub fn bump(&self, t: f64) -> f64 {
        bump_norm() * bump_raw(t)
    }

    /// Profile value at `u ∈ R^d`.
    pub fn profile_at(&self, u: &[f64]) -> f64 {
        u.iter().map(|&t| self.bump(t)).product()
    }

    /// `‖profile‖_∞` in dimension `d`.
    pub fn sup(&self, dim: usize) -> f64 {
        self.bump(0.0).powi(dim as i32)
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config("mollifier scale must lie in [0, 1)".into()));
        }
        if self.epsilon > 0.0 && (n as f64) * self.epsilon < 1.0 - 1e-12 {
            return Err(Error::Resolution(format!("N = {n} below 1/ε = {}", 1.0 / self.epsilon)));
        }
        Ok(())
    }

    /// Per-axis cell averages `N ∫_{cell} ε⁻¹ b((s − z)/ε) ds`, as
    /// `(first cell, weights)`.
    pub fn axis_weights(&self, n: usize, z: f64) -> (i64, Vec<f64>) {
        let nf = n as f64;
        if self.epsilon == 0.0 {
            return ((nf * z).floor() as i64, vec![nf]);
        }
        let eps = self.epsilon;
        let lo = ((z - eps) * nf).floor() as i64;
        let hi = ((z + eps) * nf).floor() as i64;
        let w = (lo..=hi)
            .map(|x| {
                let a = ((x as f64 / nf - z) / eps).max(-1.0);
                let b = (((x + 1) as f64 / nf - z) / eps).min(1.0);
                if b <= a {
                    0.0
                } else {
                    nf * tanh_sinh(|t| self.bump(t), a, b, 6)
                }
            })
            .collect();
        (lo, w)
    }
}

/// `ρ_N^ε(z, x) = N^d ∫_{cell x} ρ^ε(z′ − z) dz′`.
pub fn mollifier_weights(m: &MollifierSpec, n: usize, z: &[f64]) -> Result<SiteMap> {
    m.check(n)?;
    let axes: Vec<(i64, Vec<f64>)> = z.iter().map(|&c| m.axis_weights(n, c)).collect();
    let mut out = SiteMap::new();
    let sizes: Vec<usize> = axes.iter().map(|a| a.1.len()).collect();
    let total: usize = sizes.iter().product();
    for k in 0..total {
        let mut r = k;
        let mut site: Site = Vec::with_capacity(z.len());
        let mut w = 1.0;
        for (a, (lo, ws)) in axes.iter().enumerate() {
            let i = r % sizes[a];
            r /= sizes[a];
            site.push(lo + i as i64);
            w *= ws[i];
        }
        if w > 0.0 {
            out.insert(site, w);
        }
    }
    Ok(out)
}

/// Mollified rescaled Green kernel in `d = 3` built on the whole-lattice
/// kernel, `G_N(z, z′) = d⁻¹ N^{d−2} g(⌊Nz⌋ − ⌊Nz′⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedKernel {
    pub n: usize,
    pub mollifier: MollifierSpec,
    pub side: Side,
}

/// Unsmoothed rescaled kernel `d⁻¹ N^{d−2} g(⌊Nz⌋, ⌊Nz′⌋)` in `d = 3`.
pub fn rescaled_kernel(n: usize, z: &[f64], zp: &[f64]) -> f64 {
    let x = cell_of(z, n);
    let y = cell_of(zp, n);
    let r = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    n as f64 / 3.0 * Z3Green::shared().value(&r)
}

/// 1-d correlation `c(r) = Σ_{x − y = r} N⁻² w(x) w′(y)`.
fn correlate(a: &(i64, Vec<f64>), b: &(i64, Vec<f64>), n: usize) -> (i64, Vec<f64>) {
    let inv2 = 1.0 / (n as f64 * n as f64);
    let lo = a.0 - (b.0 + b.1.len() as i64 - 1);
    let mut c = vec![0.0; a.1.len() + b.1.len() - 1];
    for (i, wa) in a.1.iter().enumerate() {
        for (j, wb) in b.1.iter().enumerate() {
            let r = (a.0 + i as i64) - (b.0 + j as i64);
            c[(r - lo) as usize] += inv2 * wa * wb;
        }
    }
    (lo, c)
}

/// `g_N^ε(z, z′)` (both sides smoothed) or `g̃_N^ε(z, z′)` (right side only).
pub fn smoothed_kernel_eval(k: &SmoothedKernel, z: &[f64], zp: &[f64]) -> Result<f64> {
    if z.len() != 3 || zp.len() != 3 {
        return Err(Error::Unsupported("smoothed kernels are implemented for d = 3".into()));
    }
    k.mollifier.check(k.n)?;
    let g = Z3Green::shared();
    let m = &k.mollifier;
    let left: Vec<(i64, Vec<f64>)> = match k.side {
        Side::Both => z.iter().map(|&c| m.axis_weights(k.n, c)).collect(),
        // unsmoothed left argument: a single cell with weight N
        Side::RightOnly => z.iter().map(|&c| ((k.n as f64 * c).floor() as i64, vec![k.n as f64])).collect(),
    };
    let right: Vec<(i64, Vec<f64>)> = zp.iter().map(|&c| m.axis_weights(k.n, c)).collect();
    let c: Vec<(i64, Vec<f64>)> = (0..3).map(|a| correlate(&left[a], &right[a], k.n)).collect();
    let mut s = 0.0;
    for (i2, w2) in c[2].1.iter().enumerate() {
        if *w2 == 0.0 {
            continue;
        }
        for (i1, w1) in c[1].1.iter().enumerate() {
            if *w1 == 0.0 {
                continue;
            }
            for (i0, w0) in c[0].1.iter().enumerate() {
                let r = [c[0].0 + i0 as i64, c[1].0 + i1 as i64, c[2].0 + i2 as i64];
                s += w0 * w1 * w2 * g.value(&r);
            }
        }
    }
    Ok(k.n as f64 / 3.0 * s)
}
