//! Samplers for finite-volume gradient Gibbs measures and their tilts:
//! Langevin dynamics, the exact Gaussian heat bath, and an exact spectral
//! sampler for the Dirichlet Gaussian free field.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{linf_diameter, Boundary, Domain, NeighborTable, Site, EXTERIOR};
use crate::potential::Potential;
use crate::rng::{self, Rng};
use crate::stats::{self, Estimate};

/// Default admissibility threshold for `‖V₊‖∞ · diam(supp V₊)²`.
pub const DEFAULT_LAMBDA0: f64 = 0.05;

/// A finitely supported real map on sites, ordered for determinism.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(Site, f64)>", into = "Vec<(Site, f64)>")]
pub struct SiteMap(pub BTreeMap<Site, f64>);

impl From<Vec<(Site, f64)>> for SiteMap {
    fn from(v: Vec<(Site, f64)>) -> Self {
        let mut m = BTreeMap::new();
        for (s, x) in v {
            *m.entry(s).or_insert(0.0) += x;
        }
        SiteMap(m)
    }
}

impl From<SiteMap> for Vec<(Site, f64)> {
    fn from(m: SiteMap) -> Self {
        m.0.into_iter().collect()
    }
}

impl SiteMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(site: Site, value: f64) -> Self {
        SiteMap(BTreeMap::from([(site, value)]))
    }

    pub fn get(&self, s: &[i64]) -> f64 {
        self.0.get(s).copied().unwrap_or(0.0)
    }

    pub fn insert(&mut self, s: Site, v: f64) {
        self.0.insert(s, v);
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(|&v| v == 0.0)
    }

    pub fn support(&self) -> Vec<Site> {
        self.0.iter().filter(|(_, &v)| v != 0.0).map(|(s, _)| s.clone()).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> SiteMap {
        SiteMap(self.0.iter().map(|(s, v)| (s.clone(), c * v)).collect())
    }

    /// Positive part.
    pub fn positive(&self) -> SiteMap {
        SiteMap(self.0.iter().filter(|(_, &v)| v > 0.0).map(|(s, v)| (s.clone(), *v)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, &f64)> {
        self.0.iter()
    }

    /// Dense vector over a domain; errors on sites outside it.
    pub fn to_dense(&self, domain: &Domain) -> Result<Vec<f64>> {
        let mut out = vec![0.0; domain.len()];
        for (s, &v) in &self.0 {
            if v == 0.0 {
                continue;
            }
            let i = index_in(domain, s)?;
            out[i] += v;
        }
        Ok(out)
    }

    /// Sparse `(index, value)` list over a domain.
    pub fn to_sparse(&self, domain: &Domain) -> Result<Vec<(usize, f64)>> {
        self.0.iter().filter(|(_, &v)| v != 0.0).map(|(s, &v)| Ok((index_in(domain, s)?, v))).collect()
    }

    /// `⟨self, φ⟩` for a field on `domain` (sites outside the domain count as 0).
    pub fn pair(&self, domain: &Domain, phi: &[f64]) -> f64 {
        self.0.iter().filter_map(|(s, v)| domain.index(s).map(|i| v * phi[i])).sum()
    }
}

fn index_in(domain: &Domain, s: &[i64]) -> Result<usize> {
    if !domain.contains(s) {
        return Err(Error::Domain(format!("site {s:?} outside domain")));
    }
    Ok(domain.index(s).unwrap())
}

/// Tilt `exp{⟨h,φ⟩ + ½⟨V,φ²⟩ + ½⟨φ,Qφ⟩}` applied to the Gibbs measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSpec {
    #[serde(default)]
    pub h: SiteMap,
    #[serde(default)]
    pub v: SiteMap,
    /// Symmetric quadratic form entries `(x, y, Q(x,y))`; each unordered
    /// off-diagonal pair is listed once.
    #[serde(default)]
    pub q: Vec<(Site, Site, f64)>,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
}

fn default_lambda0() -> f64 {
    DEFAULT_LAMBDA0
}

impl Default for TiltSpec {
    fn default() -> Self {
        TiltSpec { h: SiteMap::new(), v: SiteMap::new(), q: vec![], lambda0: DEFAULT_LAMBDA0 }
    }
}

impl TiltSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(h: SiteMap, v: SiteMap) -> Self {
        TiltSpec { h, v, ..Self::default() }
    }

    /// `‖V₊‖∞ · max(diam_∞(supp V₊), 1)²`, the quantity bounded by `lambda0`.
    pub fn admissibility_value(&self) -> f64 {
        let vp = self.v.positive();
        let sup = vp.sup_norm();
        if sup == 0.0 {
            return 0.0;
        }
        let diam = linf_diameter(&vp.support()).max(1) as f64;
        sup * diam * diam
    }

    /// Check the admissibility constraints; lists every violation.
    pub fn check(&self, c1: f64) -> Result<()> {
        let mut errs = vec![];
        let a = self.admissibility_value();
        if a >= self.lambda0 {
            errs.push(format!("||V+||_inf * diam(supp V+)^2 = {a:.4e} >= lambda0 = {}", self.lambda0));
        }
        if !self.q.is_empty() {
            let (qmax, gap) = self.q_spectral_check();
            if qmax >= c1 * gap {
                errs.push(format!(
                    "largest eigenvalue of Q ({qmax:.4e}) not below c1 * lowest Dirichlet eigenvalue of its support box ({:.4e})",
                    c1 * gap
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Inadmissible(errs.join("; ")))
        }
    }

    /// Largest eigenvalue of `Q` (power iteration on its support) and the
    /// lowest eigenvalue of `−Δ` on the Dirichlet box spanned by the support.
    fn q_spectral_check(&self) -> (f64, f64) {
        let mut sites: Vec<Site> = vec![];
        for (x, y, _) in &self.q {
            for s in [x, y] {
                if !sites.contains(s) {
                    sites.push(s.clone());
                }
            }
        }
        let n = sites.len();
        let pos = |s: &Site| sites.iter().position(|t| t == s).unwrap();
        let mut m = vec![0.0; n * n];
        for (x, y, q) in &self.q {
            let (i, j) = (pos(x), pos(y));
            m[i * n + j] += q;
            if i != j {
                m[j * n + i] += q;
            }
        }
        // shift to make power iteration find the top of the spectrum
        let shift: f64 = (0..n).map(|i| (0..n).map(|j| m[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut v = vec![1.0; n];
        let mut lam = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>() + shift * v[i]).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lam = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        let qmax = lam - shift;
        let d = sites.first().map_or(3, |s| s.len());
        let gap: f64 = (0..d)
            .map(|a| {
                let lo = sites.iter().map(|s| s[a]).min().unwrap_or(0);
                let hi = sites.iter().map(|s| s[a]).max().unwrap_or(0);
                let len = (hi - lo + 1) as f64;
                2.0 - 2.0 * (std::f64::consts::PI / (len + 1.0)).cos()
            })
            .sum();
        (qmax, gap)
    }
}

/// Tilt resolved against a domain for the hot loops.
#[derive(Debug, Clone, Default)]
pub struct DenseTilt {
    pub h: Vec<(usize, f64)>,
    pub v: Vec<(usize, f64)>,
    pub q: Vec<(usize, usize, f64)>,
    pub v_dense: Vec<f64>,
}

impl DenseTilt {
    pub fn new(tilt: &TiltSpec, domain: &Domain) -> Result<Self> {
        let mut q = vec![];
        for (x, y, v) in &tilt.q {
            let (i, j) = (index_in(domain, x)?, index_in(domain, y)?);
            q.push((i, j, *v));
        }
        Ok(DenseTilt {
            h: tilt.h.to_sparse(domain)?,
            v: tilt.v.to_sparse(domain)?,
            q,
            v_dense: tilt.v.to_dense(domain)?,
        })
    }

    fn is_trivial(&self) -> bool {
        self.h.is_empty() && self.v.is_empty() && self.q.is_empty()
    }
}

/// A field configuration on the interior sites of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub values: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn zeros(domain: &Domain) -> Self {
        FieldState { values: vec![0.0; domain.len()], time: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `φ' = φ + f(φ)dt + √(2dt) ξ`.
    #[default]
    EulerMaruyama,
    /// `φ' = φ + f(φ)dt + √(dt/2)(ξ_n + ξ_{n+1})`: exact stationary
    /// variance for linear drifts, second-order invariant-measure bias.
    LeimkuhlerMatthews,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Langevin,
    /// Sequential single-site Gaussian heat bath (quadratic potential only).
    HeatBath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub dt: f64,
    /// Steps (or sweeps) discarded before sampling.
    pub burn_in: usize,
    /// Steps (or sweeps) between retained samples.
    pub thinning: usize,
    #[serde(default)]
    pub seed: u64,
    pub n_samples: usize,
    #[serde(default = "default_eps")]
    pub epsilon_mass: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub sampler: Sampler,
}

fn default_eps() -> f64 {
    1e-3
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            dt: 0.02,
            burn_in: 1000,
            thinning: 10,
            seed: 0,
            n_samples: 1000,
            epsilon_mass: default_eps(),
            integrator: Integrator::default(),
            sampler: Sampler::default(),
        }
    }
}

impl ChainConfig {
    /// Stability heuristic `dt·(2d·c2 + ‖V‖∞) < 0.5`.
    pub fn stability_value(&self, dim: usize, p: &Potential, tilt: &TiltSpec) -> f64 {
        self.dt * (2.0 * dim as f64 * p.c2 + tilt.v.sup_norm())
    }

    pub fn check(&self, dim: usize, p: &Potential, tilt: &TiltSpec) -> Result<()> {
        let mut errs = vec![];
        if !(self.dt > 0.0) {
            errs.push("dt must be positive".to_string());
        }
        if self.sampler == Sampler::Langevin {
            let s = self.stability_value(dim, p, tilt);
            if s >= 0.5 {
                errs.push(format!("dt*(2d*c2 + ||V||_inf) = {s:.3} >= 0.5"));
            }
        }
        if self.epsilon_mass < 0.0 {
            errs.push("epsilon_mass must be nonnegative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

/// Mass term applied at every site: `ε` on periodic boxes, 0 otherwise.
fn mass(domain: &Domain, eps: f64) -> f64 {
    if domain.boundary == Boundary::Periodic {
        eps
    } else {
        0.0
    }
}

/// Langevin drift `−Σ_y U′(φ_x−φ_y) + V(x)φ_x + h(x) (+ (Qφ)_x − εφ_x)` at `x`.
pub fn drift_at(
    phi: &FieldState,
    domain: &Domain,
    x: &[i64],
    p: &Potential,
    tilt: &TiltSpec,
    epsilon_mass: f64,
) -> Result<f64> {
    let i = index_in(domain, x)?;
    let fx = phi.values[i];
    let mut s = 0.0;
    for nb in domain.neighbors(x)? {
        let fy = if nb.exterior { 0.0 } else { phi.values[domain.index(&nb.site).unwrap()] };
        s -= p.du(fx - fy);
    }
    s += tilt.v.get(x) * fx + tilt.h.get(x) - mass(domain, epsilon_mass) * fx;
    for (a, b, q) in &tilt.q {
        if a.as_slice() == x {
            s += q * phi.values[index_in(domain, b)?];
        }
        if b.as_slice() == x && a != b {
            s += q * phi.values[index_in(domain, a)?];
        }
    }
    Ok(s)
}

/// Full drift vector.
fn drift_all(phi: &[f64], nt: &NeighborTable, p: &Potential, tilt: &DenseTilt, eps: f64, out: &mut [f64]) {
    let deg = nt.degree;
    let dims = deg / 2;
    for (o, &f) in out.iter_mut().zip(phi) {
        *o = -eps * f;
    }
    for i in 0..phi.len() {
        let fi = phi[i];
        let nb = nt.of(i);
        for a in 0..dims {
            let up = nb[2 * a];
            if up == EXTERIOR {
                out[i] -= p.du(fi);
            } else {
                let j = up as usize;
                let f = p.du(fi - phi[j]);
                out[i] -= f;
                out[j] += f;
            }
            if nb[2 * a + 1] == EXTERIOR {
                out[i] -= p.du(fi);
            }
        }
    }
    for &(i, v) in &tilt.v {
        out[i] += v * phi[i];
    }
    for &(i, h) in &tilt.h {
        out[i] += h;
    }
    for &(i, j, q) in &tilt.q {
        out[i] += q * phi[j];
        if i != j {
            out[j] += q * phi[i];
        }
    }
}

/// One Euler–Maruyama step with caller-supplied standard normal noise.
pub fn langevin_step(
    phi: &FieldState,
    domain: &Domain,
    p: &Potential,
    tilt: &TiltSpec,
    dt: f64,
    noise: &[f64],
    epsilon_mass: f64,
) -> Result<FieldState> {
    let nt = domain.neighbor_table();
    let dense = DenseTilt::new(tilt, domain)?;
    let mut drift = vec![0.0; phi.values.len()];
    drift_all(&phi.values, &nt, p, &dense, mass(domain, epsilon_mass), &mut drift);
    let s = (2.0 * dt).sqrt();
    let mut out = phi.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        *v += drift[i] * dt + s * noise[i];
        if !v.is_finite() {
            return Err(Error::Divergence { site: domain.site(i), time: phi.time + dt });
        }
    }
    out.time += dt;
    Ok(out)
}

/// Exact heat-bath resample of `φ_x` for the quadratic potential.
pub fn heat_bath_gaussian(
    phi: &FieldState,
    domain: &Domain,
    x: &[i64],
    p: &Potential,
    tilt: &TiltSpec,
    epsilon_mass: f64,
    rng: &mut Rng,
) -> Result<FieldState> {
    if !p.is_quadratic() {
        return Err(Error::Unsupported("heat bath requires the quadratic potential".into()));
    }
    let i = index_in(domain, x)?;
    let (m, var) = conditional(phi, domain, x, tilt, epsilon_mass)?;
    let mut out = phi.clone();
    let z: f64 = rng.sample(StandardNormal);
    out.values[i] = m + var.sqrt() * z;
    Ok(out)
}

/// Gaussian single-site conditional `(mean, variance)` at `x`.
pub fn conditional(
    phi: &FieldState,
    domain: &Domain,
    x: &[i64],
    tilt: &TiltSpec,
    epsilon_mass: f64,
) -> Result<(f64, f64)> {
    let mut s = tilt.h.get(x);
    for nb in domain.neighbors(x)? {
        if !nb.exterior {
            s += phi.values[domain.index(&nb.site).unwrap()];
        }
    }
    let mut prec = domain.degree() as f64 - tilt.v.get(x) + mass(domain, epsilon_mass);
    for (a, b, q) in &tilt.q {
        if a.as_slice() == x && b.as_slice() == x {
            prec -= q;
        } else if a.as_slice() == x {
            s += q * phi.values[index_in(domain, b)?];
        } else if b.as_slice() == x {
            s += q * phi.values[index_in(domain, a)?];
        }
    }
    if prec <= 0.0 {
        return Err(Error::Inadmissible(format!("conditional precision {prec} <= 0 at {x:?}")));
    }
    Ok((s / prec, 1.0 / prec))
}

type QRows = Vec<Vec<(usize, f64)>>;

fn resolve_tilt(tilt: &TiltSpec, domain: &Domain) -> Result<(DenseTilt, QRows, Vec<f64>)> {
    let dense = DenseTilt::new(tilt, domain)?;
    let n = domain.len();
    let mut q_rows = vec![vec![]; n];
    let mut q_diag = vec![0.0; n];
    for &(i, j, q) in &dense.q {
        if i == j {
            q_diag[i] += q;
        } else {
            q_rows[i].push((j, q));
            q_rows[j].push((i, q));
        }
    }
    Ok((dense, q_rows, q_diag))
}

/// A Markov chain targeting a (tilted) gradient Gibbs measure.
pub struct Chain {
    pub domain: Domain,
    pub potential: Potential,
    pub config: ChainConfig,
    pub state: FieldState,
    nt: NeighborTable,
    tilt: DenseTilt,
    eps: f64,
    rng: Rng,
    drift: Vec<f64>,
    noise: Vec<f64>,
    /// Per-site off-diagonal `Q` entries for the heat bath.
    q_rows: QRows,
    q_diag: Vec<f64>,
}

impl Chain {
    /// Validate and build a chain with the RNG stream `(seed, "chain")`.
    pub fn new(domain: &Domain, p: &Potential, tilt: &TiltSpec, config: &ChainConfig) -> Result<Self> {
        Self::with_stream(domain, p, tilt, config, &[rng::tag("chain")])
    }

    /// Build a chain with an explicit RNG task path under `config.seed`.
    pub fn with_stream(
        domain: &Domain,
        p: &Potential,
        tilt: &TiltSpec,
        config: &ChainConfig,
        path: &[u64],
    ) -> Result<Self> {
        domain.check()?;
        tilt.check(p.c1)?;
        config.check(domain.dimension, p, tilt)?;
        if config.sampler == Sampler::HeatBath && !p.is_quadratic() {
            return Err(Error::Unsupported("heat bath requires the quadratic potential".into()));
        }
        let (dense, q_rows, q_diag) = resolve_tilt(tilt, domain)?;
        let n = domain.len();
        let mut rng = rng::stream(config.seed, path);
        let mut noise = vec![0.0; n];
        if config.integrator == Integrator::LeimkuhlerMatthews {
            for z in noise.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
        }
        Ok(Chain {
            domain: domain.clone(),
            potential: p.clone(),
            config: config.clone(),
            state: FieldState::zeros(domain),
            nt: domain.neighbor_table(),
            tilt: dense,
            eps: mass(domain, config.epsilon_mass),
            rng,
            drift: vec![0.0; n],
            noise,
            q_rows,
            q_diag,
        })
    }

    pub fn neighbor_table(&self) -> &NeighborTable {
        &self.nt
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Replace the tilt in place (warm starts across a σ-grid).
    pub fn set_tilt(&mut self, tilt: &TiltSpec) -> Result<()> {
        tilt.check(self.potential.c1)?;
        self.config.check(self.domain.dimension, &self.potential, tilt)?;
        (self.tilt, self.q_rows, self.q_diag) = resolve_tilt(tilt, &self.domain)?;
        Ok(())
    }

    /// One Langevin time step, or one full heat-bath sweep.
    pub fn step(&mut self) -> Result<()> {
        match self.config.sampler {
            Sampler::Langevin => self.langevin(),
            Sampler::HeatBath => self.sweep(),
        }
    }

    fn langevin(&mut self) -> Result<()> {
        let dt = self.config.dt;
        drift_all(&self.state.values, &self.nt, &self.potential, &self.tilt, self.eps, &mut self.drift);
        let phi = &mut self.state.values;
        let mut bad = None;
        match self.config.integrator {
            Integrator::EulerMaruyama => {
                let s = (2.0 * dt).sqrt();
                for (i, v) in phi.iter_mut().enumerate() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *v += self.drift[i] * dt + s * z;
                    if !v.is_finite() {
                        bad = Some(i);
                    }
                }
            }
            Integrator::LeimkuhlerMatthews => {
                let s = (0.5 * dt).sqrt();
                for (i, v) in phi.iter_mut().enumerate() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *v += self.drift[i] * dt + s * (self.noise[i] + z);
                    self.noise[i] = z;
                    if !v.is_finite() {
                        bad = Some(i);
                    }
                }
            }
        }
        self.state.time += dt;
        if let Some(i) = bad {
            return Err(Error::Divergence { site: self.domain.site(i), time: self.state.time });
        }
        Ok(())
    }

    fn sweep(&mut self) -> Result<()> {
        let deg = self.nt.degree;
        let base = deg as f64 + self.eps;
        let phi = &mut self.state.values;
        let (vd, q_rows, q_diag) = (&self.tilt.v_dense, &self.q_rows, &self.q_diag);
        let mut h = vec![0.0; 0];
        if !self.tilt.h.is_empty() {
            h = vec![0.0; phi.len()];
            for &(i, v) in &self.tilt.h {
                h[i] += v;
            }
        }
        for i in 0..phi.len() {
            let mut s = if h.is_empty() { 0.0 } else { h[i] };
            for &j in self.nt.of(i) {
                if j != EXTERIOR {
                    s += phi[j as usize];
                }
            }
            for &(j, q) in &q_rows[i] {
                s += q * phi[j];
            }
            let prec = base - vd[i] - q_diag[i];
            let z: f64 = self.rng.sample(StandardNormal);
            phi[i] = s / prec + z / prec.sqrt();
        }
        self.state.time += 1.0;
        Ok(())
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn burn_in(&mut self) -> Result<()> {
        self.advance(self.config.burn_in)
    }

    /// Advance by the thinning interval and return the new state.
    pub fn next_sample(&mut self) -> Result<&FieldState> {
        self.advance(self.config.thinning.max(1))?;
        Ok(&self.state)
    }

    /// Whether the chain's tilt is trivial (`h = V = Q = 0`).
    pub fn untilted(&self) -> bool {
        self.tilt.is_trivial()
    }
}

/// A declared scalar observable of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `φ_x`.
    Value { site: Site },
    /// `φ_x φ_y`.
    Product { x: Site, y: Site },
    /// `⟨V, φ⟩`.
    Linear { weights: SiteMap },
    /// `⟨V, φ²⟩`.
    Quadratic { weights: SiteMap },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Value { site } => format!("phi{site:?}"),
            Observable::Product { x, y } => format!("phi{x:?}*phi{y:?}"),
            Observable::Linear { .. } => "<V,phi>".into(),
            Observable::Quadratic { .. } => "<V,phi^2>".into(),
        }
    }

    pub fn eval(&self, domain: &Domain, phi: &[f64]) -> f64 {
        let at = |s: &Site| domain.index(s).map_or(0.0, |i| phi[i]);
        match self {
            Observable::Value { site } => at(site),
            Observable::Product { x, y } => at(x) * at(y),
            Observable::Linear { weights } => weights.pair(domain, phi),
            Observable::Quadratic { weights } => weights
                .iter()
                .map(|(s, w)| {
                    let f = at(s);
                    w * f * f
                })
                .sum(),
        }
    }
}

/// Summary of one observable over a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSummary {
    pub observable: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_eff: f64,
    pub variance: Estimate,
    pub seed: u64,
}

/// Output of [`run_chain`]: per-observable series and summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub summaries: Vec<ObservableSummary>,
    #[serde(skip)]
    pub series: Vec<Vec<f64>>,
    #[serde(skip)]
    pub states: Vec<FieldState>,
}

impl ChainOutput {
    pub fn mean(&self, k: usize) -> Estimate {
        stats::batch_means(&self.series[k], stats::BATCHES)
    }
}

/// Run a chain, recording declared observables (and optionally the states).
pub fn run_chain(
    config: &ChainConfig,
    domain: &Domain,
    p: &Potential,
    tilt: &TiltSpec,
    observables: &[Observable],
    keep_states: bool,
) -> Result<ChainOutput> {
    let mut chain = Chain::new(domain, p, tilt, config)?;
    chain.burn_in()?;
    let mut series = vec![Vec::with_capacity(config.n_samples); observables.len()];
    let mut states = vec![];
    for _ in 0..config.n_samples {
        let s = chain.next_sample()?;
        for (k, o) in observables.iter().enumerate() {
            series[k].push(o.eval(domain, &s.values));
        }
        if keep_states {
            states.push(s.clone());
        }
    }
    let summaries = observables.iter().zip(&series).map(|(o, x)| summarize(&o.name(), x, config.seed)).collect();
    Ok(ChainOutput { summaries, series, states })
}

/// Batch-means summary of a correlated series, including its variance.
pub fn summarize(name: &str, x: &[f64], seed: u64) -> ObservableSummary {
    let e = stats::batch_means(x, stats::BATCHES);
    ObservableSummary {
        observable: name.to_string(),
        estimate: e.value,
        std_error: e.std_error,
        n_eff: e.n_eff,
        variance: stats::batch_covariance(x, x, stats::BATCHES),
        seed,
    }
}

/// Exact sampler for the zero-boundary Gaussian free field on a Dirichlet box
/// (covariance `(−Δ)⁻¹`), by the separable discrete sine transform.
pub struct GaussianSpectralSampler {
    domain: Domain,
    inv_sqrt_eig: Vec<f64>,
    dst: Vec<Dst1>,
}

/// Orthonormal type-I discrete sine transform of one length.
pub(crate) struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    pub(crate) fn new(n: usize, planner: &mut FftPlanner<f64>) -> Self {
        Dst1 { n, fft: planner.plan_fft_forward(2 * (n + 1)) }
    }

    /// In-place orthonormal DST-I (its own inverse).
    pub(crate) fn apply(&self, x: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        let m = 2 * (n + 1);
        buf.clear();
        buf.resize(m, Complex::new(0.0, 0.0));
        for k in 0..n {
            buf[k + 1].re = x[k];
            buf[m - 1 - k].re = -x[k];
        }
        self.fft.process(buf);
        let scale = -0.5 * (2.0 / (n as f64 + 1.0)).sqrt();
        for k in 0..n {
            x[k] = buf[k + 1].im * scale;
        }
    }
}

/// Apply the orthonormal DST-I along every axis of a flat array.
pub(crate) fn dst_all_axes(x: &mut [f64], side: &[usize], dst: &[Dst1]) {
    let dims = side.len();
    let mut buf = Vec::new();
    let mut stride = 1usize;
    for a in 0..dims {
        let n = side[a];
        let mut line = vec![0.0; n];
        let total = x.len();
        let block = stride * n;
        for start in (0..total).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for k in 0..n {
                    line[k] = x[base + k * stride];
                }
                dst[a].apply(&mut line, &mut buf);
                for k in 0..n {
                    x[base + k * stride] = line[k];
                }
            }
        }
        stride *= n;
    }
}

/// Eigenvalues of `−Δ` on a Dirichlet box, in flat-index order.
pub(crate) fn dirichlet_eigenvalues(side: &[usize]) -> Vec<f64> {
    let n: usize = side.iter().product();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut r = i;
        let mut lam = 0.0;
        for &s in side {
            let k = r % s + 1;
            r /= s;
            lam += 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (s as f64 + 1.0)).cos();
        }
        *o = lam;
    }
    out
}

impl GaussianSpectralSampler {
    pub fn new(domain: &Domain) -> Result<Self> {
        if domain.boundary != Boundary::Dirichlet {
            return Err(Error::Unsupported("spectral sampler needs a Dirichlet box".into()));
        }
        let mut planner = FftPlanner::new();
        let dst = domain.side.iter().map(|&n| Dst1::new(n, &mut planner)).collect();
        let inv_sqrt_eig = dirichlet_eigenvalues(&domain.side).iter().map(|l| 1.0 / l.sqrt()).collect();
        Ok(GaussianSpectralSampler { domain: domain.clone(), inv_sqrt_eig, dst })
    }

    /// One exact independent sample.
    pub fn sample(&self, rng: &mut Rng) -> FieldState {
        let mut x: Vec<f64> = self.inv_sqrt_eig.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        dst_all_axes(&mut x, &self.domain.side, &self.dst);
        FieldState { values: x, time: 0.0 }
    }

    /// Apply `(−Δ)⁻¹` to a vector exactly.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        dst_all_axes(&mut x, &self.domain.side, &self.dst);
        for (v, s) in x.iter_mut().zip(&self.inv_sqrt_eig) {
            *v *= s * s;
        }
        dst_all_axes(&mut x, &self.domain.side, &self.dst);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box9() -> Domain {
        Domain::centered_cube(3, 9, Boundary::Dirichlet).unwrap()
    }

    #[test]
    fn drift_examples() {
        let d = box9();
        let q = Potential::quadratic();
        let mut phi = FieldState::zeros(&d);
        assert_eq!(drift_at(&phi, &d, &[1, 2, 0], &q, &TiltSpec::none(), 0.0).unwrap(), 0.0);
        let i0 = d.index(&[0, 0, 0]).unwrap();
        phi.values[i0] = 1.0;
        let f = drift_at(&phi, &d, &[0, 0, 0], &q, &TiltSpec::none(), 0.0).unwrap();
        assert!((f + 6.0).abs() < 1e-14);
        let tilt = TiltSpec::new(SiteMap::single(vec![0, 0, 0], 0.2), SiteMap::single(vec![0, 0, 0], 0.1));
        let f = drift_at(&phi, &d, &[0, 0, 0], &q, &tilt, 0.0).unwrap();
        assert!((f + 5.7).abs() < 1e-14);
        let next = langevin_step(&phi, &d, &q, &TiltSpec::none(), 0.01, &vec![0.0; d.len()], 0.0).unwrap();
        assert!((next.values[i0] - 0.94).abs() < 1e-14);
        let zero =
            langevin_step(&FieldState::zeros(&d), &d, &q, &TiltSpec::none(), 0.01, &vec![0.0; d.len()], 0.0).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drift_all_matches_pointwise() {
        let d = Domain::centered_cube(3, 5, Boundary::Periodic).unwrap();
        let p = Potential::cosine(0.5);
        let tilt = TiltSpec::new(SiteMap::single(vec![0, 0, 0], 0.3), SiteMap::single(vec![1, 0, 0], 0.01));
        let mut r = rng::stream(3, &[]);
        let phi = FieldState { values: (0..d.len()).map(|_| r.sample::<f64, _>(StandardNormal)).collect(), time: 0.0 };
        let mut out = vec![0.0; d.len()];
        drift_all(&phi.values, &d.neighbor_table(), &p, &DenseTilt::new(&tilt, &d).unwrap(), 1e-3, &mut out);
        for i in 0..d.len() {
            let f = drift_at(&phi, &d, &d.site(i), &p, &tilt, 1e-3).unwrap();
            assert!((f - out[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_bath_conditionals() {
        let d = box9();
        let phi = FieldState::zeros(&d);
        let (m, v) = conditional(&phi, &d, &[0, 0, 0], &TiltSpec::none(), 0.0).unwrap();
        assert_eq!((m, v), (0.0, 1.0 / 6.0));
        let mut phi = phi;
        for s in [[1, 0, 0], [0, 1, 0], [0, 0, -1]] {
            phi.values[d.index(&s).unwrap()] = 1.0;
        }
        let (m, _) = conditional(&phi, &d, &[0, 0, 0], &TiltSpec::none(), 0.0).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        let mut r = rng::stream(0, &[]);
        assert!(
            heat_bath_gaussian(&phi, &d, &[0, 0, 0], &Potential::cosine(0.5), &TiltSpec::none(), 0.0, &mut r).is_err()
        );
    }

    #[test]
    fn admissibility() {
        let ok = TiltSpec::new(SiteMap::new(), SiteMap::single(vec![0, 0, 0], 0.04));
        assert!(ok.check(1.0).is_ok());
        let mut v = SiteMap::new();
        v.insert(vec![0, 0, 0], 0.01);
        v.insert(vec![3, 0, 0], 0.01);
        let bad = TiltSpec::new(SiteMap::new(), v);
        let e = bad.check(1.0).unwrap_err().to_string();
        assert!(e.contains("diam"), "{e}");
        assert!(TiltSpec::none().check(1.0).is_ok());
    }

    #[test]
    fn dst_is_orthonormal_involution() {
        let mut planner = FftPlanner::new();
        let t = Dst1::new(7, &mut planner);
        let x: Vec<f64> = (0..7).map(|k| (k as f64).sin() + 0.3).collect();
        let mut y = x.clone();
        let mut buf = vec![];
        t.apply(&mut y, &mut buf);
        let n2: f64 = y.iter().map(|v| v * v).sum();
        let n1: f64 = x.iter().map(|v| v * v).sum();
        assert!((n1 - n2).abs() < 1e-12);
        t.apply(&mut y, &mut buf);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
