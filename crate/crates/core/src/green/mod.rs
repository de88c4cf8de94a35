//! Deterministic lattice potential theory: Green's functions and heat kernels
//! with signed potentials, discretized macroscopic potentials, rescaled and
//! mollified kernels, and capacities.

mod capacity;
mod forms;
mod heat;
mod infinite;
mod mollify;

pub use capacity::{srw_capacity, Capacity};
pub use forms::{cell_integrals, rescaled_quadratic_form, FormOptions, FormReport, KernelSource, MacroFn};
pub use heat::{
    ctrw_kernel_1d, expm_action, free_heat_kernel, heat_column, heat_kernel_tilted, scaled_bessel_i, HeatMethod,
};
pub use infinite::Z3Green;
pub use mollify::{
    mollifier_weights, rescaled_kernel, smoothed_kernel_eval, MollifierSpec, Profile, Side, SmoothedKernel,
};

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SiteMap;
use crate::lattice::{Boundary, Domain, NeighborTable, EXTERIOR};
use crate::stats::gauss_legendre;

/// Default relative residual tolerance of the conjugate-gradient solver.
pub const CG_TOL: f64 = 1e-10;

/// Normalization of a Green's function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `g = (−Δ − V)⁻¹ δ`: expected occupation time of the rate-1-per-edge
    /// walk (and the covariance of the Gaussian field).
    Occupation,
    /// `2d·(−Δ − V)⁻¹ δ`: expected number of visits of the discrete-time walk.
    Visits,
}

impl Convention {
    pub fn factor(&self, dim: usize) -> f64 {
        match self {
            Convention::Occupation => 1.0,
            Convention::Visits => 2.0 * dim as f64,
        }
    }
}

/// The sparse operator `−Δ − V + ε` on a domain, optionally with some sites
/// pinned (excluded from the unknowns).
#[derive(Debug, Clone)]
pub struct Operator {
    nt: NeighborTable,
    diag: Vec<f64>,
    pinned: Option<Vec<bool>>,
}

impl Operator {
    pub fn new(domain: &Domain, v: &[f64], mass: f64) -> Self {
        let deg = domain.degree() as f64;
        Operator { nt: domain.neighbor_table(), diag: v.iter().map(|vi| deg - vi + mass).collect(), pinned: None }
    }

    pub fn laplacian(domain: &Domain) -> Self {
        Self::new(domain, &vec![0.0; domain.len()], 0.0)
    }

    /// Exclude `pinned` sites: they act as zero boundary values.
    pub fn with_pinned(mut self, pinned: Vec<bool>) -> Self {
        self.pinned = Some(pinned);
        self
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let deg = self.nt.degree;
        match &self.pinned {
            None => {
                for i in 0..x.len() {
                    let mut s = self.diag[i] * x[i];
                    for &j in &self.nt.idx[i * deg..(i + 1) * deg] {
                        if j != EXTERIOR {
                            s -= x[j as usize];
                        }
                    }
                    y[i] = s;
                }
            }
            Some(p) => {
                for i in 0..x.len() {
                    if p[i] {
                        y[i] = 0.0;
                        continue;
                    }
                    let mut s = self.diag[i] * x[i];
                    for &j in &self.nt.idx[i * deg..(i + 1) * deg] {
                        if j != EXTERIOR && !p[j as usize] {
                            s -= x[j as usize];
                        }
                    }
                    y[i] = s;
                }
            }
        }
    }

    /// Jacobi-preconditioned conjugate gradient for `A x = b` to relative
    /// residual `tol`. Returns `(x, iterations, relative residual)`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<(Vec<f64>, usize, f64)> {
        let n = b.len();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok((vec![0.0; n], 0, 0.0));
        }
        let pinned = |i: usize| self.pinned.as_ref().is_some_and(|p| p[i]);
        let minv: Vec<f64> = (0..n).map(|i| if pinned(i) { 0.0 } else { 1.0 / self.diag[i] }).collect();
        let mut x = vec![0.0; n];
        let mut r: Vec<f64> = (0..n).map(|i| if pinned(i) { 0.0 } else { b[i] }).collect();
        let mut z: Vec<f64> = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 20 * n + 1000;
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::Solver { residual: f64::NAN, iterations: it });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
            if rn < tol {
                return Ok((x, it, rn));
            }
            for i in 0..n {
                z[i] = r[i] * minv[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        Err(Error::Solver { residual: rn, iterations: max_iter })
    }
}

/// A discretized macroscopic potential at level `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOnLattice {
    pub values: SiteMap,
    pub level: usize,
}

/// Composite Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct UnitRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitRule {
    /// `sub` equal sub-intervals with `order` Gauss points each.
    pub fn new(order: usize, sub: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut nodes = vec![];
        let mut weights = vec![];
        let h = 1.0 / sub as f64;
        for s in 0..sub {
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(h * (s as f64 + 0.5 * (xi + 1.0)));
                weights.push(0.5 * h * wi);
            }
        }
        UnitRule { nodes, weights }
    }
}

/// `∫_{cell x} f` over the macroscopic cell `[x/N, (x+1)/N)^d` (d = 3 fast path
/// for any d via recursion over axes).
pub fn cell_integral(f: &dyn Fn(&[f64]) -> f64, x: &[i64], n: usize, rule: &UnitRule) -> f64 {
    let d = x.len();
    let inv = 1.0 / n as f64;
    let q = rule.nodes.len();
    let total = q.pow(d as u32);
    let mut z = vec![0.0; d];
    let mut s = 0.0;
    for k in 0..total {
        let mut r = k;
        let mut w = 1.0;
        for a in 0..d {
            let m = r % q;
            r /= q;
            z[a] = (x[a] as f64 + rule.nodes[m]) * inv;
            w *= rule.weights[m];
        }
        s += w * f(&z);
    }
    s * inv.powi(d as i32)
}

/// Sites whose cells meet the ball of radius `radius` (macroscopic) at level `N`.
pub fn cells_meeting_ball(radius: f64, n: usize, dim: usize) -> Vec<Vec<i64>> {
    let lo = (-radius * n as f64).floor() as i64 - 1;
    let hi = (radius * n as f64).ceil() as i64;
    let side = (hi - lo + 1) as usize;
    let inv = 1.0 / n as f64;
    let mut out = vec![];
    for k in 0..side.pow(dim as u32) {
        let mut r = k;
        let x: Vec<i64> = (0..dim)
            .map(|_| {
                let c = lo + (r % side) as i64;
                r /= side;
                c
            })
            .collect();
        // distance from the origin to the closest point of the cell
        let d2: f64 = x
            .iter()
            .map(|&c| {
                let (a, b) = (c as f64 * inv, (c + 1) as f64 * inv);
                if a > 0.0 {
                    a * a
                } else if b < 0.0 {
                    b * b
                } else {
                    0.0
                }
            })
            .sum();
        if d2 <= radius * radius {
            out.push(x);
        }
    }
    out
}

/// `V_N(x) = N^{−2} × (average of V over the cell [x/N, (x+1)/N)^d)` for a
/// macroscopic `V` supported in the ball of radius `support_radius`.
pub fn discretize_potential(
    v: &dyn Fn(&[f64]) -> f64,
    support_radius: f64,
    n: usize,
    dim: usize,
    rule: &UnitRule,
) -> PotentialOnLattice {
    let scale = (n as f64).powi(dim as i32 - 2);
    let mut values = SiteMap::new();
    for x in cells_meeting_ball(support_radius, n, dim) {
        let val = scale * cell_integral(v, &x, n, rule);
        if val != 0.0 {
            values.insert(x, val);
        }
    }
    PotentialOnLattice { values, level: n }
}

/// A Green's function on a truncated domain, solved column by column on
/// demand and cached.
pub struct LatticeGreen {
    pub domain: Domain,
    pub potential: SiteMap,
    pub convention: Convention,
    pub mass: f64,
    op: Operator,
    cache: Mutex<BTreeMap<usize, Arc<Vec<f64>>>>,
    max_residual: Mutex<f64>,
}

impl std::fmt::Debug for LatticeGreen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeGreen").field("domain", &self.domain).field("convention", &self.convention).finish()
    }
}

impl LatticeGreen {
    fn scale(&self) -> f64 {
        self.convention.factor(self.domain.dimension)
    }

    /// Column `g(·, y)`.
    pub fn column(&self, y: &[i64]) -> Result<Arc<Vec<f64>>> {
        let j = self
            .domain
            .index(y)
            .filter(|_| self.domain.contains(y))
            .ok_or_else(|| Error::Domain(format!("site {y:?} outside domain")))?;
        self.column_index(j)
    }

    pub fn column_index(&self, j: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.cache.lock().unwrap().get(&j) {
            return Ok(c.clone());
        }
        let mut b = vec![0.0; self.domain.len()];
        b[j] = self.scale();
        let (x, _, res) = self.op.solve(&b, CG_TOL)?;
        let mut m = self.max_residual.lock().unwrap();
        *m = m.max(res);
        let col = Arc::new(x);
        self.cache.lock().unwrap().insert(j, col.clone());
        Ok(col)
    }

    pub fn value(&self, x: &[i64], y: &[i64]) -> Result<f64> {
        let i = self
            .domain
            .index(x)
            .filter(|_| self.domain.contains(x))
            .ok_or_else(|| Error::Domain(format!("site {x:?} outside domain")))?;
        Ok(self.column(y)?[i])
    }

    /// `G b` for an arbitrary right-hand side.
    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        let s = self.scale();
        let rhs: Vec<f64> = b.iter().map(|v| v * s).collect();
        let (x, _, res) = self.op.solve(&rhs, CG_TOL)?;
        let mut m = self.max_residual.lock().unwrap();
        *m = m.max(res);
        Ok(x)
    }

    /// `⟨w, G w⟩` for a site map.
    pub fn quadratic(&self, w: &SiteMap) -> Result<f64> {
        let b = w.to_dense(&self.domain)?;
        let x = self.apply(&b)?;
        Ok(b.iter().zip(&x).map(|(a, c)| a * c).sum())
    }

    /// `⟨w1, G w2⟩`.
    pub fn bilinear(&self, w1: &SiteMap, w2: &SiteMap) -> Result<f64> {
        let b = w2.to_dense(&self.domain)?;
        let x = self.apply(&b)?;
        Ok(w1.pair(&self.domain, &x))
    }

    /// Apply the unscaled operator `(−Δ − V + ε)` (resolvent checks).
    pub fn apply_operator(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.op.apply(x, &mut y);
        y
    }

    /// Largest relative CG residual seen so far.
    pub fn max_residual(&self) -> f64 {
        *self.max_residual.lock().unwrap()
    }
}

/// Solve `(−Δ − V) g(·, y) = δ_y` on a Dirichlet box (columns on demand).
/// Rejects potentials with `‖(−Δ)⁻¹V₊‖∞ ≥ 1`.
pub fn green_solve(v: &SiteMap, domain: &Domain, convention: Convention) -> Result<LatticeGreen> {
    green_solve_massive(v, domain, convention, 0.0)
}

/// As [`green_solve`] with a mass `ε` (required on periodic domains).
pub fn green_solve_massive(v: &SiteMap, domain: &Domain, convention: Convention, mass: f64) -> Result<LatticeGreen> {
    domain.check()?;
    if domain.boundary == Boundary::Periodic && mass <= 0.0 {
        return Err(Error::Unsupported("periodic Green's function needs a positive mass".into()));
    }
    let vd = v.to_dense(domain)?;
    let vp: Vec<f64> = vd.iter().map(|x| x.max(0.0)).collect();
    if vp.iter().any(|&x| x > 0.0) {
        let base = Operator::new(domain, &vec![0.0; domain.len()], mass);
        let (u, _, _) = base.solve(&vp, CG_TOL)?;
        let m = u.iter().cloned().fold(0.0, f64::max);
        if m >= 1.0 {
            return Err(Error::Inadmissible(format!("||(-Δ)^-1 V+||_inf = {m:.4} >= 1")));
        }
    }
    Ok(LatticeGreen {
        domain: domain.clone(),
        potential: v.clone(),
        convention,
        mass,
        op: Operator::new(domain, &vd, mass),
        cache: Mutex::new(BTreeMap::new()),
        max_residual: Mutex::new(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_potential_discretizes_to_scaled_constant() {
        let rule = UnitRule::new(3, 1);
        let p = discretize_potential(
            &|z: &[f64]| if z.iter().map(|c| c * c).sum::<f64>() <= 1.0 { 0.3 } else { 0.0 },
            1.0,
            4,
            3,
            &rule,
        );
        assert!((p.values.get(&[0, 0, 0]) - 0.3 / 16.0).abs() < 1e-15);
        let z = discretize_potential(&|_| 0.0, 1.0, 4, 3, &rule);
        assert!(z.values.is_empty());
    }

    #[test]
    fn resolvent_identity_and_symmetry() {
        let d = Domain::centered_cube(3, 9, Boundary::Dirichlet).unwrap();
        let v = SiteMap::single(vec![0, 0, 0], 0.2);
        let g = green_solve(&v, &d, Convention::Occupation).unwrap();
        let col = g.column(&[1, 0, 0]).unwrap();
        let back = g.apply_operator(&col);
        let j = d.index(&[1, 0, 0]).unwrap();
        for (i, b) in back.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((b - target).abs() < 1e-8);
        }
        let a = g.value(&[2, 1, 0], &[0, -1, 3]).unwrap();
        let b = g.value(&[0, -1, 3], &[2, 1, 0]).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn positive_potential_increases_green() {
        let d = Domain::centered_cube(3, 9, Boundary::Dirichlet).unwrap();
        let g0 = green_solve(&SiteMap::new(), &d, Convention::Occupation).unwrap();
        let gv = green_solve(&SiteMap::single(vec![0, 0, 0], 0.3), &d, Convention::Occupation).unwrap();
        let c0 = g0.column(&[1, 0, 0]).unwrap();
        let cv = gv.column(&[1, 0, 0]).unwrap();
        assert!(c0.iter().zip(cv.iter()).all(|(a, b)| b >= a));
    }

    #[test]
    fn strong_potential_rejected() {
        let d = Domain::centered_cube(3, 9, Boundary::Dirichlet).unwrap();
        let mut v = SiteMap::new();
        for x in -1..=1 {
            for y in -1..=1 {
                for z in -1..=1 {
                    v.insert(vec![x, y, z], 2.0);
                }
            }
        }
        assert!(matches!(green_solve(&v, &d, Convention::Occupation), Err(Error::Inadmissible(_))));
    }
}
