//! Continuum references in `d = 3`: Green's forms of `−a∇² − V` for radial
//! data on the whole space (partial waves), and a spectral Dirichlet cube
//! solver for general data.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::TestFunction;
use crate::error::{Error, Result};
use crate::field::{dst_all_axes, Dst1};
use crate::stats::{gauss_legendre, tanh_sinh};

fn default_log_step() -> f64 {
    2e-3
}

fn default_lmax() -> usize {
    40
}

fn default_order() -> usize {
    64
}

/// The continuum Gaussian model with isotropic `Σ = σ²·Id`:
/// `G_Σ^V = d⁻¹(−(σ²/2)∇² − V)⁻¹` on `R³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuumModel {
    pub sigma2: f64,
    /// Step of the radial grid in `log r`.
    #[serde(default = "default_log_step")]
    pub log_step: f64,
    /// Highest partial wave kept in potential corrections of squared kernels.
    #[serde(default = "default_lmax")]
    pub lmax: usize,
    /// Gauss–Legendre order of the radial double integrals.
    #[serde(default = "default_order")]
    pub order: usize,
}

impl ContinuumModel {
    pub fn new(sigma2: f64) -> Self {
        ContinuumModel { sigma2, log_step: default_log_step(), lmax: default_lmax(), order: default_order() }
    }

    /// The Gaussian fixed point `Σ = 2·Id` (`a = 1`).
    pub fn gaussian() -> Self {
        Self::new(2.0)
    }

    /// Diffusion coefficient `a = σ²/2`.
    pub fn a(&self) -> f64 {
        self.sigma2 / 2.0
    }

    fn check_radial(&self, fs: &[&TestFunction]) -> Result<[f64; 3]> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config("σ² must be positive".into()));
        }
        let c = fs[0].center();
        if fs.iter().any(|f| f.center() != c) {
            return Err(Error::Unsupported("radial route needs concentric test functions".into()));
        }
        Ok(c)
    }

    /// `⟨f, (−a∇² − V)⁻¹ g⟩` for concentric radial `f, g, V` (no `d⁻¹`).
    pub fn resolvent_bilinear(&self, f: &TestFunction, g: &TestFunction, v: Option<&TestFunction>) -> Result<f64> {
        let mut all = vec![f, g];
        all.extend(v);
        self.check_radial(&all)?;
        let rmax = all.iter().map(|t| t.radius).fold(0.0, f64::max);
        let a = self.a();
        let k = match v {
            Some(v) => {
                let w = RadialWave::solve(0, &|r| v.radial(r) / a, rmax, self.log_step);
                Kernel0::Potential(w)
            }
            None => Kernel0::Free,
        };
        let g0 = |s: f64, r: f64| match &k {
            Kernel0::Free => 1.0 / (a * r),
            Kernel0::Potential(w) => w.green(s, r) / a,
        };
        let breaks = breakpoints(&all);
        let (x, wt) = gauss_legendre(self.order);
        let mut total = 0.0;
        for seg in breaks.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            for (xi, wi) in x.iter().zip(&wt) {
                let r = lo + 0.5 * (hi - lo) * (xi + 1.0);
                let (fr, gr) = (f.radial(r), g.radial(r));
                if fr == 0.0 && gr == 0.0 {
                    continue;
                }
                // inner ∫_0^r, split at the same breakpoints
                let inner = inner_integral(&breaks, r, &x, &wt, |s| {
                    let k = s * s * g0(s, r);
                    (fr * g.radial(s) + gr * f.radial(s)) * k
                });
                total += 0.5 * (hi - lo) * wi * r * r * inner;
            }
        }
        Ok(4.0 * PI * total)
    }

    /// `∫∫ f (−a∇² − V)⁻¹(z, z′)² f` for concentric radial `f, V` (no `d⁻²`).
    pub fn resolvent_squared(&self, f: &TestFunction, v: Option<&TestFunction>) -> Result<f64> {
        let mut all = vec![f];
        all.extend(v);
        self.check_radial(&all)?;
        let a = self.a();
        let rmax = all.iter().map(|t| t.radius).fold(0.0, f64::max);
        let breaks = breakpoints(&all);
        let (x, wt) = gauss_legendre(self.order);
        // free part: Σ_ℓ (2ℓ+1) g_ℓ⁰(s, r)² = ln((r+s)/(r−s)) / (2a² r s)
        let mut free = 0.0;
        for seg in breaks.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            for (xi, wi) in x.iter().zip(&wt) {
                let r = lo + 0.5 * (hi - lo) * (xi + 1.0);
                let fr = f.radial(r);
                if fr == 0.0 {
                    continue;
                }
                let inner = tanh_sinh(
                    |s| {
                        let t = s / r;
                        let lg = if t < 1e-6 { 2.0 * t } else { ((1.0 + t) / (1.0 - t)).ln() };
                        s * s * f.radial(s) * lg / (2.0 * a * a * r * s)
                    },
                    0.0,
                    r,
                    7,
                );
                free += 0.5 * (hi - lo) * wi * r * r * fr * inner;
            }
        }
        let mut corr = 0.0;
        if let Some(v) = v {
            let waves: Vec<RadialWave> =
                (0..=self.lmax).map(|l| RadialWave::solve(l, &|r| v.radial(r) / a, rmax, self.log_step)).collect();
            for seg in breaks.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                for (xi, wi) in x.iter().zip(&wt) {
                    let r = lo + 0.5 * (hi - lo) * (xi + 1.0);
                    let fr = f.radial(r);
                    if fr == 0.0 {
                        continue;
                    }
                    let inner = inner_integral(&breaks, r, &x, &wt, |s| {
                        let t = s / r;
                        let mut acc = 0.0;
                        let mut tl = 1.0;
                        for (l, w) in waves.iter().enumerate() {
                            let g0 = tl / (r * (2 * l + 1) as f64);
                            let gv = w.green(s, r);
                            acc += (2 * l + 1) as f64 * (gv * gv - g0 * g0);
                            tl *= t;
                        }
                        s * s * f.radial(s) * acc / (a * a)
                    });
                    corr += 0.5 * (hi - lo) * wi * r * r * fr * inner;
                }
            }
        }
        Ok(2.0 * (free + corr))
    }

    /// `⟨f, G_Σ^V f⟩` (`power = 1`) or `∫∫ f (G_Σ^V)² f` (`power = 2`).
    pub fn form(&self, f: &TestFunction, v: Option<&TestFunction>, power: u8) -> Result<f64> {
        match power {
            1 => Ok(self.resolvent_bilinear(f, f, v)? / 3.0),
            2 => Ok(self.resolvent_squared(f, v)? / 9.0),
            _ => Err(Error::Config("power must be 1 or 2".into())),
        }
    }

    /// `E_Σ(W, W) = ⟨W, G_Σ W⟩`.
    pub fn energy(&self, w: &TestFunction) -> Result<f64> {
        self.form(w, None, 1)
    }

    /// `∫∫ V G_Σ W` for test functions at arbitrary centres (free kernel):
    /// concentric pairs by the radial route, others by tensor quadrature.
    pub fn free_pairing(&self, v: &TestFunction, w: &TestFunction) -> Result<f64> {
        if v.center() == w.center() {
            return Ok(self.resolvent_bilinear(v, w, None)? / 3.0);
        }
        let (cv, cw) = (v.center(), w.center());
        let dist = (0..3).map(|k| (cv[k] - cw[k]).powi(2)).sum::<f64>().sqrt();
        if dist >= v.radius + w.radius {
            // disjoint radial charges interact as point charges
            return Ok(v.integral() * w.integral() / (4.0 * PI * self.a() * dist) / 3.0);
        }
        Ok(self.tensor_pairing(v, w) / 3.0)
    }

    /// `∫∫ V (−a∇²)⁻¹ W` by tensor Gauss–Legendre over the support cubes.
    fn tensor_pairing(&self, v: &TestFunction, w: &TestFunction) -> f64 {
        let a = self.a();
        let (x, wt) = gauss_legendre(12);
        let pts = |t: &TestFunction| {
            let c = t.center();
            let mut out = vec![];
            // the support ball's bounding cube, 2 sub-intervals per axis
            let sub = 2;
            let h = 2.0 * t.radius / sub as f64;
            let axis: Vec<(f64, f64)> = (0..sub)
                .flat_map(|s| {
                    let lo = -t.radius + s as f64 * h;
                    x.iter().zip(&wt).map(move |(xi, wi)| (lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi)).collect::<Vec<_>>()
                })
                .collect();
            for &(p0, w0) in &axis {
                for &(p1, w1) in &axis {
                    for &(p2, w2) in &axis {
                        let z = [c[0] + p0, c[1] + p1, c[2] + p2];
                        let val = t.eval(&z);
                        if val != 0.0 {
                            out.push((z, w0 * w1 * w2 * val));
                        }
                    }
                }
            }
            out
        };
        let (pv, pw) = (pts(v), pts(w));
        let mut s = 0.0;
        for (z, a1) in &pv {
            for (y, a2) in &pw {
                let r = ((z[0] - y[0]).powi(2) + (z[1] - y[1]).powi(2) + (z[2] - y[2]).powi(2)).sqrt();
                s += a1 * a2 / (4.0 * PI * a * r);
            }
        }
        s
    }

    /// `E[:⟨Ψ,V⟩²: :⟨Ψ,W⟩²:] = 2(∫∫ V G_Σ W)²` for the continuum field.
    pub fn wick_variance_oracle(&self, v: &TestFunction, w: &TestFunction) -> Result<f64> {
        if v.amplitude == 0.0 || w.amplitude == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * self.free_pairing(v, w)?.powi(2))
    }

    /// `A^V(V, V) = ∫∫ V A^V V` with `A^V(z,z′) = ∫₀¹∫₀^τ G^{σV}(z,z′)² dσ dτ`,
    /// evaluated as `∫₀¹ (1−σ) ∫∫ V (G^{σV})² V dσ` by Gauss–Legendre in `σ`.
    pub fn avv(&self, v: &TestFunction, sigma_nodes: usize) -> Result<f64> {
        if v.amplitude == 0.0 {
            return Ok(0.0);
        }
        let (x, wt) = gauss_legendre(sigma_nodes.max(2));
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&wt) {
            let sigma = 0.5 * (xi + 1.0);
            let scaled = v.scaled(sigma);
            s += 0.5 * wi * (1.0 - sigma) * self.form(v, Some(&scaled), 2)?;
        }
        Ok(s)
    }
}

enum Kernel0 {
    Free,
    Potential(RadialWave),
}

fn breakpoints(fs: &[&TestFunction]) -> Vec<f64> {
    let mut b: Vec<f64> = fs.iter().map(|f| f.radius).collect();
    b.push(0.0);
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    b
}

/// `∫_0^r h(s) ds` by Gauss–Legendre on the pieces of `[0, r]` cut at `breaks`.
fn inner_integral(breaks: &[f64], r: f64, x: &[f64], wt: &[f64], h: impl Fn(f64) -> f64) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().cloned().filter(|&b| b < r).collect();
    cuts.push(r);
    let mut s = 0.0;
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        for (xi, wi) in x.iter().zip(wt) {
            s += 0.5 * (hi - lo) * wi * h(lo + 0.5 * (hi - lo) * (xi + 1.0));
        }
    }
    s
}

/// Regular and decaying solutions of the `ℓ`-th radial equation of
/// `−∇² − w`, as `u = r^ℓ p` and `v = r^{−ℓ−1} q` with `p(0) = 1` and
/// `q ≡ 1` beyond the support of `w`, on a grid uniform in `log r`.
struct RadialWave {
    l: usize,
    r: Vec<f64>,
    p: Vec<f64>,
    dp: Vec<f64>,
    q: Vec<f64>,
    dq: Vec<f64>,
    /// `r²` times minus the Wronskian: `(2ℓ+1)p(R) + R p′(R)`.
    denom: f64,
    log_r0: f64,
    step: f64,
}

impl RadialWave {
    fn solve(l: usize, w: &dyn Fn(f64) -> f64, rmax: f64, step: f64) -> Self {
        let k = (1e6f64.ln() / step).ceil() as usize;
        let r: Vec<f64> = (0..=k).map(|i| rmax * (-((k - i) as f64) * step).exp()).collect();
        let lf = l as f64;
        // p'' = −(2ℓ+2)/r p' − w p
        let fp = |s: f64, y: [f64; 2]| [y[1], -(2.0 * lf + 2.0) / s * y[1] - w(s) * y[0]];
        // q'' = 2ℓ/r q' − w q
        let fq = |s: f64, y: [f64; 2]| [y[1], 2.0 * lf / s * y[1] - w(s) * y[0]];
        let w0 = w(0.0);
        let mut p = vec![0.0; k + 1];
        let mut dp = vec![0.0; k + 1];
        let r0 = r[0];
        p[0] = 1.0 - w0 * r0 * r0 / (2.0 * (2.0 * lf + 3.0));
        dp[0] = -w0 * r0 / (2.0 * lf + 3.0);
        for i in 0..k {
            let y = rk4(&fp, r[i], [p[i], dp[i]], r[i + 1] - r[i]);
            p[i + 1] = y[0];
            dp[i + 1] = y[1];
        }
        let mut q = vec![0.0; k + 1];
        let mut dq = vec![0.0; k + 1];
        q[k] = 1.0;
        for i in (0..k).rev() {
            let y = rk4(&fq, r[i + 1], [q[i + 1], dq[i + 1]], r[i] - r[i + 1]);
            q[i] = y[0];
            dq[i] = y[1];
        }
        let denom = (2.0 * lf + 1.0) * p[k] + rmax * dp[k];
        RadialWave { l, log_r0: r0.ln(), r, p, dp, q, dq, denom, step }
    }

    fn interp(&self, vals: &[f64], ders: &[f64], s: f64) -> f64 {
        let k = self.r.len() - 1;
        if s <= self.r[0] {
            return vals[0];
        }
        if s >= self.r[k] {
            return vals[k];
        }
        let i = (((s.ln() - self.log_r0) / self.step).floor() as usize).min(k - 1);
        let (a, b) = (self.r[i], self.r[i + 1]);
        let h = b - a;
        let t = (s - a) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * vals[i]
            + (t3 - 2.0 * t2 + t) * h * ders[i]
            + (-2.0 * t3 + 3.0 * t2) * vals[i + 1]
            + (t3 - t2) * h * ders[i + 1]
    }

    /// `g_ℓ(s, r)` for `s ≤ r` (times `a`): `s^ℓ r^{−ℓ−1} p(s) q(r) / denom`.
    /// Beyond the grid `q ≡ 1` and `p` continues as the free solution.
    fn green(&self, s: f64, r: f64) -> f64 {
        let t = s / r;
        let ps = self.interp(&self.p, &self.dp, s);
        let qr = self.interp(&self.q, &self.dq, r);
        t.powi(self.l as i32) / r * ps * qr / self.denom
    }
}

fn rk4(f: &impl Fn(f64, [f64; 2]) -> [f64; 2], s: f64, y: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
    let k1 = f(s, y);
    let k2 = f(s + 0.5 * h, add(y, k1, 0.5 * h));
    let k3 = f(s + 0.5 * h, add(y, k2, 0.5 * h));
    let k4 = f(s + h, add(y, k3, h));
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Spectral solver for `−a∇² − V` on the cube `[−B, B]³` with zero Dirichlet
/// data, sine basis on `m` interior nodes per axis.
pub struct CubeDirichlet {
    pub half_side: f64,
    pub a: f64,
    m: usize,
    dst: Vec<Dst1>,
    inv_eig: Vec<f64>,
}

impl CubeDirichlet {
    pub fn new(half_side: f64, a: f64, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        let dst = (0..3).map(|_| Dst1::new(m, &mut planner)).collect();
        let mut inv_eig = vec![0.0; m * m * m];
        let kk = |k: usize| (PI * (k + 1) as f64 / (2.0 * half_side)).powi(2);
        for (i, e) in inv_eig.iter_mut().enumerate() {
            let (x, y, z) = (i % m, (i / m) % m, i / (m * m));
            *e = 1.0 / (a * (kk(x) + kk(y) + kk(z)));
        }
        CubeDirichlet { half_side, a, m, dst, inv_eig }
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_side / (self.m + 1) as f64
    }

    /// Node values of a function.
    pub fn sample(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let m = self.m;
        let h = self.spacing();
        let c = |k: usize| -self.half_side + (k + 1) as f64 * h;
        (0..m * m * m).map(|i| f(&[c(i % m), c((i / m) % m), c(i / (m * m))])).collect()
    }

    fn free_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let side = [self.m; 3];
        let mut x = rhs.to_vec();
        dst_all_axes(&mut x, &side, &self.dst);
        for (v, e) in x.iter_mut().zip(&self.inv_eig) {
            *v *= e;
        }
        dst_all_axes(&mut x, &side, &self.dst);
        x
    }

    /// `(−a∇² − V)⁻¹ f` at the nodes by the Born iteration.
    pub fn solve(&self, v: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let mut u = self.free_solve(f);
        if v.iter().all(|&x| x == 0.0) {
            return Ok(u);
        }
        let mut last = f64::INFINITY;
        for it in 0..1000 {
            let rhs: Vec<f64> = f.iter().zip(v).zip(&u).map(|((a, b), c)| a + b * c).collect();
            let next = self.free_solve(&rhs);
            let num = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = next.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
            u = next;
            let rel = num / den;
            if rel < 1e-13 {
                return Ok(u);
            }
            if it > 20 && rel > 0.99 * last {
                return Err(Error::Solver { residual: rel, iterations: it });
            }
            last = rel;
        }
        Ok(u)
    }

    /// `∫ f g` from node values.
    pub fn pair(&self, f: &[f64], g: &[f64]) -> f64 {
        self.spacing().powi(3) * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `⟨V, 1⟩` and `⟨V, (−a∇² − V)⁻¹ V⟩` for a function `V` on the cube.
    pub fn potential_forms(&self, v: &dyn Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
        let vs = self.sample(v);
        let ones: f64 = self.spacing().powi(3) * vs.iter().sum::<f64>();
        let u = self.solve(&vs, &vs)?;
        Ok((ones, self.pair(&vs, &u)))
    }
}
