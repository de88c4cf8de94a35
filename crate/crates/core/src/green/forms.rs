//! Rescaled Green quadratic forms `⟨f, G_N^V f⟩` and `⟨f, (G_N^V)² f⟩` (the
//! latter with the kernel squared pointwise), where
//! `G_N^V(z, z′) = d⁻¹ N^{d−2} g^{V_N}(⌊Nz⌋, ⌊Nz′⌋)`.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::{cell_integral, cells_meeting_ball, discretize_potential, green_solve, Convention, UnitRule, Z3Green};
use crate::error::{Error, Result};
use crate::field::SiteMap;
use crate::lattice::{Boundary, Domain, Site};

/// Where the lattice Green's function comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum KernelSource {
    /// The whole-lattice `Z³` kernel (tabulated + asymptotic), `d = 3` only.
    InfiniteLattice,
    /// A zero-Dirichlet box of side `factor·N·L` solved by CG.
    DirichletBox { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormOptions {
    pub kernel: KernelSource,
    /// Gauss points per axis per sub-interval.
    pub quad_order: usize,
    pub quad_sub: usize,
    /// Guard on `|supp V|²·|supp f|` for the dense T-matrix route.
    pub dense_limit: f64,
}

impl Default for FormOptions {
    fn default() -> Self {
        FormOptions { kernel: KernelSource::InfiniteLattice, quad_order: 4, quad_sub: 1, dense_limit: 4e9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormReport {
    pub value: f64,
    pub n: usize,
    pub power: u8,
    pub cells: usize,
    pub potential_sites: usize,
    pub kernel: KernelSource,
}

/// A macroscopic function with the radius of a ball containing its support.
#[derive(Clone, Copy)]
pub struct MacroFn<'a> {
    pub f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub radius: f64,
}

impl std::fmt::Debug for MacroFn<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MacroFn(radius = {})", self.radius)
    }
}

/// `F_x = ∫_{cell x} f` for all cells meeting the support ball.
pub fn cell_integrals(f: MacroFn, n: usize, dim: usize, rule: &UnitRule) -> SiteMap {
    let mut m = SiteMap::new();
    for x in cells_meeting_ball(f.radius, n, dim) {
        let v = cell_integral(f.f, &x, n, rule);
        if v != 0.0 {
            m.insert(x, v);
        }
    }
    m
}

/// Linear convolution with a translation-invariant kernel on a cubic window,
/// by zero-padded FFT.
pub(crate) struct WindowConvolution {
    pub lo: i64,
    pub w: usize,
    p: usize,
    kernel_hat: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn fft3(data: &mut [Complex<f64>], p: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut line = vec![Complex::new(0.0, 0.0); p];
    for axis in 0..3 {
        let stride = p.pow(axis as u32);
        for base in 0..p * p * p {
            if (base / stride) % p != 0 {
                continue;
            }
            for k in 0..p {
                line[k] = data[base + k * stride];
            }
            fft.process(&mut line);
            for k in 0..p {
                data[base + k * stride] = line[k];
            }
        }
    }
}

impl WindowConvolution {
    pub fn new(lo: i64, w: usize, kernel: &dyn Fn(&[i64]) -> f64) -> Self {
        let p = 2 * w;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(p);
        let inv = planner.plan_fft_inverse(p);
        let mut k = vec![Complex::new(0.0, 0.0); p * p * p];
        let wrap = |i: usize| if i < p / 2 { i as i64 } else { i as i64 - p as i64 };
        for c in 0..p {
            for b in 0..p {
                for a in 0..p {
                    k[a + p * (b + p * c)] = Complex::new(kernel(&[wrap(a), wrap(b), wrap(c)]), 0.0);
                }
            }
        }
        fft3(&mut k, p, &fwd);
        WindowConvolution { lo, w, p, kernel_hat: k, fwd, inv }
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let w = self.w as i64;
        let mut idx = 0usize;
        for a in (0..3).rev() {
            let c = x[a] - self.lo;
            if c < 0 || c >= w {
                return None;
            }
            idx = idx * self.w + c as usize;
        }
        Some(idx)
    }

    /// `(K ∗ u)` on the window, for `u` given on the window.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let (p, w) = (self.p, self.w);
        let mut buf = vec![Complex::new(0.0, 0.0); p * p * p];
        for c in 0..w {
            for b in 0..w {
                for a in 0..w {
                    buf[a + p * (b + p * c)] = Complex::new(u[a + w * (b + w * c)], 0.0);
                }
            }
        }
        fft3(&mut buf, p, &self.fwd);
        for (x, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *x *= k;
        }
        fft3(&mut buf, p, &self.inv);
        let norm = (p * p * p) as f64;
        let mut out = vec![0.0; w * w * w];
        for c in 0..w {
            for b in 0..w {
                for a in 0..w {
                    out[a + w * (b + w * c)] = buf[a + p * (b + p * c)].re / norm;
                }
            }
        }
        out
    }
}

/// `⟨f, (G_N^V)^power f⟩` with `G_N^V` the rescaled lattice kernel at level `N`
/// (occupation convention, factor `d⁻¹N^{d−2}` per kernel).
pub fn rescaled_quadratic_form(
    f: MacroFn,
    v: Option<MacroFn>,
    n: usize,
    dim: usize,
    power: u8,
    opts: &FormOptions,
) -> Result<FormReport> {
    if power != 1 && power != 2 {
        return Err(Error::Config("power must be 1 or 2".into()));
    }
    if power == 2 && dim != 3 {
        return Err(Error::Unsupported("squared kernel is not locally integrable for d > 3".into()));
    }
    let rule = UnitRule::new(opts.quad_order, opts.quad_sub);
    let fc = cell_integrals(f, n, dim, &rule);
    let vn = match v {
        Some(v) => discretize_potential(v.f, v.radius, n, dim, &rule).values,
        None => SiteMap::new(),
    };
    let scale = (n as f64).powi(dim as i32 - 2) / dim as f64;
    let raw = match opts.kernel {
        KernelSource::InfiniteLattice => {
            if dim != 3 {
                return Err(Error::Unsupported("the whole-lattice kernel is tabulated for d = 3 only".into()));
            }
            if power == 1 {
                infinite_power1(&fc, &vn)?
            } else {
                infinite_power2(&fc, &vn, opts.dense_limit)?
            }
        }
        KernelSource::DirichletBox { factor } => {
            let radius = f.radius.max(v.map_or(0.0, |v| v.radius));
            let side = ((factor * n as f64 * radius).ceil() as usize).max(8) | 1;
            let domain = Domain::centered_cube(dim, side, Boundary::Dirichlet)?;
            let g = green_solve(&vn, &domain, Convention::Occupation)?;
            if power == 1 {
                g.quadratic(&fc)?
            } else {
                let sites: Vec<(Site, f64)> = fc.iter().map(|(s, &w)| (s.clone(), w)).collect();
                if sites.len() > 20_000 {
                    return Err(Error::Unsupported("too many cells for column-wise squared forms".into()));
                }
                let mut s = 0.0;
                for (x, wx) in &sites {
                    let col = g.column(x)?;
                    for (y, wy) in &sites {
                        let gxy = col[domain.index(y).unwrap()];
                        s += wx * wy * gxy * gxy;
                    }
                }
                s
            }
        }
    };
    Ok(FormReport {
        value: raw * scale.powi(power as i32),
        n,
        power,
        cells: fc.0.len(),
        potential_sites: vn.0.len(),
        kernel: opts.kernel,
    })
}

fn window_of(maps: &[&SiteMap]) -> (i64, usize) {
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for m in maps {
        for (s, _) in m.iter() {
            for &c in s {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
    }
    (lo, (hi - lo + 1) as usize)
}

/// `Σ F_x F_y g^V(x, y)`; `g^V` via the Born series `u = g ∗ (F + V u)`.
fn infinite_power1(fc: &SiteMap, vn: &SiteMap) -> Result<f64> {
    if fc.is_empty() {
        return Ok(0.0);
    }
    let g = Z3Green::shared();
    let (lo, w) = window_of(&[fc, vn]);
    let conv = WindowConvolution::new(lo, w, &|r| g.value(r));
    let dense = |m: &SiteMap| {
        let mut out = vec![0.0; w * w * w];
        for (s, &v) in m.iter() {
            out[conv.index(s).unwrap()] = v;
        }
        out
    };
    let f = dense(fc);
    let v = dense(vn);
    let mut u = conv.apply(&f);
    if !vn.is_empty() {
        let mut last = f64::INFINITY;
        for it in 0..500 {
            let rhs: Vec<f64> = f.iter().zip(&v).zip(&u).map(|((a, b), c)| a + b * c).collect();
            let next = conv.apply(&rhs);
            let num: f64 = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = next.iter().map(|a| a * a).sum::<f64>().sqrt();
            u = next;
            let rel = num / den;
            if rel < 1e-12 {
                break;
            }
            if it > 20 && rel > 0.99 * last {
                return Err(Error::Solver { residual: rel, iterations: it });
            }
            last = rel;
        }
    }
    Ok(f.iter().zip(&u).map(|(a, b)| a * b).sum())
}

/// `Σ F_x F_y g^V(x, y)²` with `g^V = g + g T g`, `T = (I − V g)⁻¹ V` dense on
/// the support of `V`.
fn infinite_power2(fc: &SiteMap, vn: &SiteMap, dense_limit: f64) -> Result<f64> {
    if fc.is_empty() {
        return Ok(0.0);
    }
    let g = Z3Green::shared();
    let (lo, w) = window_of(&[fc, vn]);
    let conv = WindowConvolution::new(lo, w, &|r| g.value(r));
    let g2 = WindowConvolution::new(lo, w, &|r| g.value(r).powi(2));
    let fsites: Vec<(Site, f64)> = fc.iter().map(|(s, &x)| (s.clone(), x)).collect();
    let mut fd = vec![0.0; w * w * w];
    for (s, x) in &fsites {
        fd[conv.index(s).unwrap()] = *x;
    }
    let a0: f64 = fd.iter().zip(&g2.apply(&fd)).map(|(a, b)| a * b).sum();
    if vn.is_empty() {
        return Ok(a0);
    }
    let ssites: Vec<(Site, f64)> = vn.iter().map(|(s, &x)| (s.clone(), x)).collect();
    let (ns, nf) = (ssites.len(), fsites.len());
    if (ns * ns) as f64 * nf as f64 > dense_limit {
        return Err(Error::Unsupported(format!("dense T-matrix route too large: |supp V| = {ns}, |supp f| = {nf}")));
    }
    let diff = |a: &[i64], b: &[i64]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    // T = (I − V G_SS)⁻¹ V
    let mut m = DMatrix::<f64>::identity(ns, ns);
    for (i, (zi, vi)) in ssites.iter().enumerate() {
        for (j, (zj, _)) in ssites.iter().enumerate() {
            m[(i, j)] -= vi * g.value(&diff(zi, zj));
        }
    }
    let vdiag = DMatrix::<f64>::from_diagonal(&nalgebra::DVector::from_iterator(ns, ssites.iter().map(|s| s.1)));
    let t = m.lu().solve(&vdiag).ok_or_else(|| Error::Solver { residual: f64::NAN, iterations: 0 })?;
    // a[z][x] = g(x − z) on supp f
    let a: Vec<Vec<f64>> =
        ssites.iter().map(|(z, _)| fsites.iter().map(|(x, _)| g.value(&diff(x, z))).collect()).collect();
    // A1 = 2 tr(T M), M_zw = Σ_x F_x a_z(x) (g ∗ (F a_w))(x)
    let mut mm = DMatrix::<f64>::zeros(ns, ns);
    let orbits = cube_orbits(&fd, vn, &ssites, lo, w);
    for wi in 0..ns {
        if orbits.as_ref().is_some_and(|o| o[wi].0 != wi) {
            continue;
        }
        let mut src = vec![0.0; w * w * w];
        for (k, (x, fx)) in fsites.iter().enumerate() {
            src[conv.index(x).unwrap()] = fx * a[wi][k];
        }
        let pw = conv.apply(&src);
        let fp: Vec<f64> = fsites.iter().map(|(x, fx)| fx * pw[conv.index(x).unwrap()]).collect();
        for zi in 0..ns {
            mm[(zi, wi)] = a[zi].iter().zip(&fp).map(|(p, q)| p * q).sum();
        }
    }
    if let Some(o) = &orbits {
        // M[z, σr] = M[σ⁻¹z, r]
        for (wi, (r, inv)) in o.iter().enumerate() {
            if *r != wi {
                for zi in 0..ns {
                    mm[(zi, wi)] = mm[(inv[zi], *r)];
                }
            }
        }
    }
    let a1 = 2.0 * (&t * &mm).trace();
    // A2 = tr(T C T C), C_zz' = Σ_x F_x a_z(x) a_z'(x)
    let mut c = DMatrix::<f64>::zeros(ns, ns);
    for zi in 0..ns {
        for zj in zi..ns {
            let s: f64 = fsites.iter().enumerate().map(|(k, (_, fx))| fx * a[zi][k] * a[zj][k]).sum();
            c[(zi, zj)] = s;
            c[(zj, zi)] = s;
        }
    }
    let tc = &t * &c;
    let a2 = (&tc * &tc).trace();
    Ok(a0 + a1 + a2)
}

/// When `F` and `V` are both invariant under the signed axis permutations
/// about a common centre, assigns each potential site `w` an orbit
/// representative `r` and, for the symmetry `σ` with `σr = w`, the index map
/// `z ↦ σ⁻¹z` on the potential sites.
fn cube_orbits(
    fd: &[f64],
    vn: &SiteMap,
    ssites: &[(Site, f64)],
    lo: i64,
    w: usize,
) -> Option<Vec<(usize, Vec<usize>)>> {
    let idx = |s: &[i64]| -> Option<usize> {
        let mut k = 0usize;
        for &c in s {
            let o = c - lo;
            if o < 0 || o >= w as i64 {
                return None;
            }
            k = k * w + o as usize;
        }
        Some(k)
    };
    let (mut smin, mut smax) = (i64::MAX, i64::MIN);
    let mut nonzero = Vec::new();
    for (k, &v) in fd.iter().enumerate() {
        if v != 0.0 {
            let s = [(k / (w * w)) as i64 + lo, ((k / w) % w) as i64 + lo, (k % w) as i64 + lo];
            smin = smin.min(s[0]);
            smax = smax.max(s[0]);
            nonzero.push((s, v));
        }
    }
    // doubled centre, taken from the first axis of supp F
    let c2 = smin + smax;
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(vn.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs())));
    let tol = 1e-9 * scale;
    let site_index: std::collections::HashMap<&[i64], usize> =
        ssites.iter().enumerate().map(|(i, (s, _))| (s.as_slice(), i)).collect();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut ops: Vec<Vec<usize>> = Vec::new();
    for perm in perms {
        for signs in 0..8u32 {
            let act = |s: &[i64]| -> Vec<i64> {
                (0..3)
                    .map(|i| {
                        let x = 2 * s[perm[i]] - c2;
                        (if signs >> i & 1 == 1 { -x } else { x } + c2) / 2
                    })
                    .collect()
            };
            let f_ok = nonzero.iter().all(|(s, v)| idx(&act(s)).is_some_and(|k| (fd[k] - v).abs() <= tol));
            if !f_ok {
                continue;
            }
            let image: Option<Vec<usize>> = ssites
                .iter()
                .map(|(s, v)| site_index.get(act(s).as_slice()).filter(|&&j| (ssites[j].1 - v).abs() <= tol).copied())
                .collect();
            if let Some(p) = image {
                ops.push(p);
            }
        }
    }
    if ops.len() <= 1 {
        return None;
    }
    let ns = ssites.len();
    let mut out: Vec<Option<(usize, Vec<usize>)>> = vec![None; ns];
    for r in 0..ns {
        if out[r].is_some() {
            continue;
        }
        for p in &ops {
            if out[p[r]].is_none() {
                let mut inv = vec![0; ns];
                for (z, &pz) in p.iter().enumerate() {
                    inv[pz] = z;
                }
                out[p[r]] = Some((r, inv));
            }
        }
    }
    out.into_iter().collect()
}
