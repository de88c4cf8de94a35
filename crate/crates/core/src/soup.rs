//! Desk-scale Poisson trajectory soups: interlacement-type clouds of
//! trajectories hitting a window `K`, their occupation fields, and Monte
//! Carlo checks of the sweeping identity.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Chain, ChainConfig, FieldState, SiteMap, TiltSpec};
use crate::green::{discretize_potential, srw_capacity, Capacity, MacroFn, PotentialOnLattice, UnitRule};
use crate::lattice::{linf_diameter, Domain, NeighborTable, Site, EXTERIOR};
use crate::potential::Potential;
use crate::rng::{self, Rng};
use crate::stats::{iid, Estimate};
use crate::walk::{JointSim, JointTrajectory, Jump, WalkSink, WalkerEnd};

fn default_max_rejections() -> usize {
    100_000
}

fn default_sigma_nodes() -> usize {
    16
}

fn default_escape_samples() -> usize {
    2_000
}

/// Soup parameters. The tilt couples `h ≡ V`; only its `V` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupConfig {
    pub u: f64,
    #[serde(default)]
    pub tilt: TiltSpec,
    pub window: Vec<Site>,
    pub kill_box: Domain,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Field chain used by the general (non-Gaussian) sampler.
    #[serde(default)]
    pub chain: ChainConfig,
    /// Cap on consecutive rejections when drawing one entry.
    #[serde(default = "default_max_rejections")]
    pub max_rejections: usize,
    /// Nodes of the `σ`-grid on which the escape normalizer is estimated.
    #[serde(default = "default_sigma_nodes")]
    pub sigma_nodes: usize,
    /// Proposals per `σ`-node for the escape normalizer.
    #[serde(default = "default_escape_samples")]
    pub escape_samples: usize,
    /// Keep jump records (memory heavy).
    #[serde(default)]
    pub record_jumps: bool,
}

impl SoupConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.u >= 0.0 && self.u.is_finite()) {
            return Err(Error::Config("soup level must be finite and nonnegative".into()));
        }
        self.kill_box.check()?;
        if self.window.is_empty() {
            return Err(Error::Config("soup window is empty".into()));
        }
        for s in &self.window {
            if self.kill_box.index(s).is_none() || !self.kill_box.contains(s) {
                return Err(Error::Domain(format!("window site {s:?} outside kill box")));
            }
        }
        let diam = linf_diameter(&self.window) as usize;
        if self.kill_box.side.iter().any(|&s| s < 4 * diam) {
            return Err(Error::Config(format!("kill box side must be at least 4·diam(K) = {}", 4 * diam)));
        }
        for (s, &v) in self.tilt.v.iter() {
            if v != 0.0 && !self.window.contains(s) {
                return Err(Error::Config(format!("supp V must lie in the window; {s:?} does not")));
            }
        }
        if self.sigma_nodes < 2 {
            return Err(Error::Config("need at least two σ-nodes".into()));
        }
        Ok(())
    }

    fn window_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.kill_box.len()];
        for s in &self.window {
            m[self.kill_box.index(s).unwrap()] = true;
        }
        m
    }
}

/// One soup trajectory: forward part from the entry site and backward part
/// (the time-reversed past, never visiting `K`) from the neighbour it came
/// through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupTrajectory {
    pub entry: Site,
    pub sigma: f64,
    pub forward: JointTrajectory,
    pub backward: JointTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupSample {
    pub u: f64,
    pub trajectories: Vec<SoupTrajectory>,
    /// Expected number of trajectories (`u·cap` in the Gaussian case).
    pub intensity: f64,
    /// Rejected proposals while drawing entries.
    pub rejections: usize,
}

impl SoupSample {
    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn sigma_marks(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.sigma).collect()
    }
}

/// Spatial occupation times of a soup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationField {
    pub values: SiteMap,
    pub level: f64,
}

impl OccupationField {
    pub fn get(&self, s: &[i64]) -> f64 {
        self.values.get(s)
    }

    /// `⟨V, L⟩`.
    pub fn pair(&self, v: &SiteMap) -> f64 {
        v.iter().map(|(s, w)| w * self.values.get(s)).sum()
    }
}

/// `L_x = Σ` forward and backward occupation at `x`.
pub fn occupation_field(s: &SoupSample, domain: &Domain) -> OccupationField {
    let mut dense = std::collections::BTreeMap::<usize, f64>::new();
    for t in &s.trajectories {
        for (i, occ) in t.forward.occupation.iter().chain(&t.backward.occupation) {
            *dense.entry(*i).or_insert(0.0) += occ;
        }
    }
    let mut values = SiteMap::new();
    for (i, v) in dense {
        values.insert(domain.site(i), v);
    }
    OccupationField { values, level: s.u }
}

/// `⟨L_N, V⟩ = Σ_x V_N(x)·L_x` with `V_N = N^{−2} × cell average of V`.
pub fn rescale_occupation(l: &OccupationField, v_n: &PotentialOnLattice) -> f64 {
    l.pair(&v_n.values)
}

/// As [`rescale_occupation`], discretizing a macroscopic `V` at level `N`.
pub fn rescale_occupation_fn(l: &OccupationField, n: usize, v: MacroFn) -> f64 {
    let dim = l.values.iter().next().map_or(3, |(s, _)| s.len());
    let vn = discretize_potential(v.f, v.radius, n, dim, &UnitRule::new(4, 1));
    rescale_occupation(l, &vn)
}

/// Continuous-time simple random walk (rate 1 per edge) from `start`, killed
/// on leaving the box, stopped on entering `stop`, or cut at `horizon`.
fn srw_path(
    nt: &NeighborTable,
    start: usize,
    horizon: f64,
    stop: Option<&[bool]>,
    record: bool,
    rng: &mut Rng,
) -> (JointTrajectory, WalkerEnd, usize) {
    let deg = nt.degree;
    let hold = Exp::new(deg as f64).unwrap();
    let mut occ = std::collections::BTreeMap::<usize, f64>::new();
    let mut jumps = vec![];
    let (mut pos, mut t) = (start, 0.0);
    let end = loop {
        let h: f64 = hold.sample(rng);
        if t + h >= horizon {
            *occ.entry(pos).or_insert(0.0) += horizon - t;
            t = horizon;
            break WalkerEnd::Horizon;
        }
        *occ.entry(pos).or_insert(0.0) += h;
        t += h;
        let j = nt.of(pos)[rng.random_range(0..deg)];
        if record {
            jumps.push(Jump { time: t, from: pos as u32, to: j });
        }
        if j == EXTERIOR {
            break WalkerEnd::Killed;
        }
        pos = j as usize;
        if stop.is_some_and(|m| m[pos]) {
            break WalkerEnd::Stopped;
        }
    };
    let tr = JointTrajectory {
        start,
        start_time: 0.0,
        jumps,
        end_time: t,
        killed: end == WalkerEnd::Killed,
        occupation: occ.into_iter().collect(),
        fk_integral: 0.0,
    };
    (tr, end, pos)
}

fn set_fk(tr: &mut JointTrajectory, v: &[f64]) {
    tr.fk_integral = tr.occupation.iter().map(|(i, o)| v[*i] * o).sum();
}

fn empty_path(start: usize) -> JointTrajectory {
    JointTrajectory {
        start,
        start_time: 0.0,
        jumps: vec![],
        end_time: 0.0,
        killed: true,
        occupation: vec![],
        fk_integral: 0.0,
    }
}

/// Gaussian-case soup sampler with the equilibrium measure precomputed.
#[derive(Debug, Clone)]
pub struct GaussianSoupSampler {
    pub config: SoupConfig,
    pub capacity: Capacity,
    entries: Vec<(usize, f64)>,
    mask: Vec<bool>,
    nt: NeighborTable,
    v: Vec<f64>,
}

impl GaussianSoupSampler {
    pub fn new(config: &SoupConfig) -> Result<Self> {
        config.check()?;
        let capacity = srw_capacity(&config.window, &config.kill_box)?;
        let mut acc = 0.0;
        let entries = capacity
            .equilibrium
            .iter()
            .map(|(s, e)| {
                acc += e;
                (config.kill_box.index(s).unwrap(), acc)
            })
            .collect();
        Ok(GaussianSoupSampler {
            mask: config.window_mask(),
            nt: config.kill_box.neighbor_table(),
            v: config.tilt.v.to_dense(&config.kill_box)?,
            config: config.clone(),
            capacity,
            entries,
        })
    }

    /// Soup number `replica` under the configured seed.
    pub fn sample(&self, replica: u64) -> Result<SoupSample> {
        let cfg = &self.config;
        let mut r = rng::stream(cfg.seed, &[rng::tag("gaussian-soup"), replica]);
        let intensity = cfg.u * self.capacity.capacity;
        let count = if intensity > 0.0 { Poisson::new(intensity).unwrap().sample(&mut r) as usize } else { 0 };
        let cap = self.capacity.capacity;
        let deg = self.nt.degree;
        let mut trajectories = Vec::with_capacity(count);
        let mut rejections = 0usize;
        for _ in 0..count {
            let target = r.random::<f64>() * cap;
            let k = self.entries.partition_point(|e| e.1 < target).min(self.entries.len() - 1);
            let x = self.entries[k].0;
            let (mut fwd, _, _) = srw_path(&self.nt, x, cfg.horizon, None, cfg.record_jumps, &mut r);
            set_fk(&mut fwd, &self.v);
            // backward part: first step to a neighbour outside K, then a walk
            // that escapes without returning to K
            let mut tries = 0;
            let mut bwd = loop {
                tries += 1;
                if tries > cfg.max_rejections {
                    return Err(Error::Diagnostic("backward rejection exceeded its cap; enlarge the kill box".into()));
                }
                let y = self.nt.of(x)[r.random_range(0..deg)];
                if y == EXTERIOR {
                    break empty_path(x);
                }
                if self.mask[y as usize] {
                    continue;
                }
                let (p, end, _) =
                    srw_path(&self.nt, y as usize, cfg.horizon, Some(&self.mask), cfg.record_jumps, &mut r);
                if end != WalkerEnd::Stopped {
                    break p;
                }
            };
            rejections += tries - 1;
            set_fk(&mut bwd, &self.v);
            trajectories.push(SoupTrajectory { entry: cfg.kill_box.site(x), sigma: 0.0, forward: fwd, backward: bwd });
        }
        Ok(SoupSample { u: cfg.u, trajectories, intensity, rejections })
    }
}

/// Gaussian-case soup: `Poisson(u·cap(K))` trajectories entering `K` at sites
/// drawn from the normalized equilibrium measure.
pub fn sample_gaussian_soup(cfg: &SoupConfig, replica: u64) -> Result<SoupSample> {
    GaussianSoupSampler::new(cfg)?.sample(replica)
}

/// Collects occupation times of one joint walker.
struct OccSink(std::collections::BTreeMap<usize, f64>);

impl WalkSink for OccSink {
    fn segment(&mut self, _w: usize, site: usize, t0: f64, t1: f64, _fk: f64) {
        *self.0.entry(site).or_insert(0.0) += t1 - t0;
    }
}

/// Escape normalizer `ĉ(σ)` at one `σ`-node, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeNode {
    pub sigma: f64,
    pub normalizer: Estimate,
}

/// General-case sampler: the `σ`-mixed intensity with field-dependent entry
/// laws, realized by exact rejection.
pub struct GeneralSoupSampler {
    pub config: SoupConfig,
    pub potential: Potential,
    pub nodes: Vec<EscapeNode>,
    boundary: Vec<usize>,
    mask: Vec<bool>,
    stop: Vec<usize>,
    v: Vec<f64>,
}

/// An accepted entry proposal.
struct Entry {
    x: usize,
    phi: FieldState,
    backward: JointTrajectory,
}

impl GeneralSoupSampler {
    pub fn new(config: &SoupConfig, p: &Potential) -> Result<Self> {
        config.check()?;
        p.certify()?;
        let domain = &config.kill_box;
        let mask = config.window_mask();
        let nt = domain.neighbor_table();
        let boundary: Vec<usize> = (0..domain.len())
            .filter(|&i| mask[i] && nt.of(i).iter().any(|&j| j == EXTERIOR || !mask[j as usize]))
            .collect();
        let stop: Vec<usize> = (0..domain.len()).filter(|&i| mask[i]).collect();
        let mut s = GeneralSoupSampler {
            config: config.clone(),
            potential: p.clone(),
            nodes: vec![],
            boundary,
            mask,
            stop,
            v: config.tilt.v.to_dense(domain)?,
        };
        let top = (2.0 * config.u).sqrt();
        let m = config.sigma_nodes;
        for k in 0..m {
            let sigma = top * k as f64 / (m - 1) as f64;
            let normalizer = s.estimate_normalizer(sigma, k as u64)?;
            s.nodes.push(EscapeNode { sigma, normalizer });
        }
        Ok(s)
    }

    fn tilt_at(&self, sigma: f64) -> TiltSpec {
        TiltSpec { h: self.config.tilt.v.scaled(sigma), ..self.config.tilt.clone() }
    }

    fn chain_at(&self, sigma: f64, path: &[u64]) -> Result<Option<Chain>> {
        if self.potential.is_quadratic() {
            // the entry law does not depend on the field
            return Ok(None);
        }
        let mut c =
            Chain::with_stream(&self.config.kill_box, &self.potential, &self.tilt_at(sigma), &self.config.chain, path)?;
        c.burn_in()?;
        Ok(Some(c))
    }

    /// One proposal `(x, φ, y)`; returns the entry if accepted.
    fn propose(&self, chain: &mut Option<Chain>, r: &mut Rng, path: &[u64]) -> Result<Option<Entry>> {
        let domain = &self.config.kill_box;
        let phi = match chain {
            Some(c) => c.next_sample()?.clone(),
            None => FieldState::zeros(domain),
        };
        let x = self.boundary[r.random_range(0..self.boundary.len())];
        let nt_x = domain.neighbor_table();
        let deg = nt_x.degree;
        let y = nt_x.of(x)[r.random_range(0..deg)];
        if y != EXTERIOR && self.mask[y as usize] {
            return Ok(None);
        }
        let fy = if y == EXTERIOR { 0.0 } else { phi.values[y as usize] };
        let a = self.potential.u_second(phi.values[x] - fy);
        if r.random::<f64>() * self.potential.c2 >= a {
            return Ok(None);
        }
        if y == EXTERIOR {
            return Ok(Some(Entry { x, phi, backward: empty_path(x) }));
        }
        let mut sim = JointSim::new(domain, &self.potential, &self.tilt_at(0.0), &self.config.chain, path, false)?;
        sim.chain.state = phi.clone();
        sim.chain.state.time = 0.0;
        sim.set_stop_set(Some(&self.stop));
        let mut walkers = [sim.spawn(y as usize, self.config.horizon)];
        let mut sink = OccSink(Default::default());
        sim.run(&mut walkers, &mut sink)?;
        if walkers[0].end == WalkerEnd::Stopped {
            return Ok(None);
        }
        let mut backward = JointTrajectory {
            start: y as usize,
            start_time: 0.0,
            jumps: vec![],
            end_time: walkers[0].t,
            killed: walkers[0].end == WalkerEnd::Killed,
            occupation: sink.0.into_iter().collect(),
            fk_integral: 0.0,
        };
        set_fk(&mut backward, &self.v);
        Ok(Some(Entry { x, phi, backward }))
    }

    fn estimate_normalizer(&self, sigma: f64, node: u64) -> Result<Estimate> {
        let mut chain = self.chain_at(sigma, &[rng::tag("escape-chain"), node])?;
        let mut r = rng::stream(self.config.seed, &[rng::tag("escape"), node]);
        let n = self.config.escape_samples;
        let mut hits = Vec::with_capacity(n);
        for i in 0..n {
            let acc = self.propose(&mut chain, &mut r, &[rng::tag("escape-walk"), node, i as u64])?;
            hits.push(if acc.is_some() { 1.0 } else { 0.0 });
        }
        let scale = self.boundary.len() as f64 * self.config.kill_box.degree() as f64 * self.potential.c2;
        Ok(iid(&hits).scale(scale))
    }

    /// Linear interpolation of `ĉ(σ)` between nodes.
    pub fn normalizer(&self, sigma: f64) -> f64 {
        let m = self.nodes.len();
        let top = self.nodes[m - 1].sigma;
        if top == 0.0 {
            return self.nodes[0].normalizer.value;
        }
        let pos = (sigma / top * (m - 1) as f64).clamp(0.0, (m - 1) as f64);
        let k = (pos.floor() as usize).min(m - 2);
        let f = pos - k as f64;
        (1.0 - f) * self.nodes[k].normalizer.value + f * self.nodes[k + 1].normalizer.value
    }

    /// `∫₀^{√(2u)} (√(2u) − σ) ĉ(σ) dσ` (exact for the piecewise-linear `ĉ`).
    pub fn intensity(&self) -> f64 {
        let top = (2.0 * self.config.u).sqrt();
        let mut s = 0.0;
        for w in self.nodes.windows(2) {
            let (a, b) = (w[0].sigma, w[1].sigma);
            let mid = 0.5 * (a + b);
            let f = |x: f64| (top - x) * self.normalizer(x);
            s += (b - a) / 6.0 * (f(a) + 4.0 * f(mid) + f(b));
        }
        s
    }

    pub fn sample(&self, replica: u64) -> Result<SoupSample> {
        let cfg = &self.config;
        let mut r = rng::stream(cfg.seed, &[rng::tag("general-soup"), replica]);
        let intensity = self.intensity();
        let count = if intensity > 0.0 { Poisson::new(intensity).unwrap().sample(&mut r) as usize } else { 0 };
        let top = (2.0 * cfg.u).sqrt();
        let cmax = self.nodes.iter().map(|n| n.normalizer.value).fold(0.0, f64::max);
        let mut trajectories = Vec::with_capacity(count);
        let mut rejections = 0usize;
        for k in 0..count {
            // σ ∝ (√(2u) − σ)·ĉ(σ): triangular proposal, accept ĉ/ĉ_max
            let sigma = loop {
                let s = top * (1.0 - r.random::<f64>().sqrt());
                if r.random::<f64>() * cmax < self.normalizer(s) {
                    break s;
                }
            };
            let path = [rng::tag("soup-traj"), replica, k as u64];
            let mut chain = self.chain_at(sigma, &path)?;
            let mut tries = 0usize;
            let entry = loop {
                tries += 1;
                if tries > cfg.max_rejections {
                    return Err(Error::Diagnostic(
                        "entry rejection exceeded its cap; enlarge the kill box or the cap".into(),
                    ));
                }
                if let Some(e) = self.propose(&mut chain, &mut r, &[path[0], path[1], path[2], tries as u64])? {
                    break e;
                }
            };
            rejections += tries - 1;
            // forward joint path from (x, φ)
            let mut sim = JointSim::new(
                &cfg.kill_box,
                &self.potential,
                &self.tilt_at(0.0),
                &cfg.chain,
                &[rng::tag("soup-forward"), replica, k as u64],
                false,
            )?;
            sim.chain.state = entry.phi;
            sim.chain.state.time = 0.0;
            let mut walkers = [sim.spawn(entry.x, cfg.horizon)];
            let mut sink = OccSink(Default::default());
            sim.run(&mut walkers, &mut sink)?;
            let mut forward = JointTrajectory {
                start: entry.x,
                start_time: 0.0,
                jumps: vec![],
                end_time: walkers[0].t,
                killed: walkers[0].end == WalkerEnd::Killed,
                occupation: sink.0.into_iter().collect(),
                fk_integral: 0.0,
            };
            set_fk(&mut forward, &self.v);
            trajectories.push(SoupTrajectory {
                entry: cfg.kill_box.site(entry.x),
                sigma,
                forward,
                backward: entry.backward,
            });
        }
        Ok(SoupSample { u: cfg.u, trajectories, intensity, rejections })
    }
}

/// General-case soup for potential `p` (see [`GeneralSoupSampler`]).
pub fn sample_general_soup(cfg: &SoupConfig, p: &Potential, replica: u64) -> Result<SoupSample> {
    GeneralSoupSampler::new(cfg, p)?.sample(replica)
}

/// Both sides of the sweeping identity at one entry site `z ∈ K`:
/// `Σ_x e_{K′}(x) P_x[X_{H_K} = z, H_K < ∞]` and `e_K(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepingPoint {
    pub z: Site,
    pub swept: Estimate,
    pub direct: Estimate,
    pub z_score: f64,
}

/// Monte Carlo of both sides for `K ⊂ K′` on a kill box. The swept side
/// launches walks from `e_{K′}` and records where they first enter `K`; the
/// direct side estimates `e_K(z) = 2d·P[a uniform neighbour escapes K]`.
pub fn sweeping_identity_mc(
    k: &[Site],
    k_prime: &[Site],
    kill_box: &Domain,
    samples: usize,
    seed: u64,
) -> Result<Vec<SweepingPoint>> {
    if !k.iter().all(|s| k_prime.contains(s)) {
        return Err(Error::Config("sweeping identity needs K ⊂ K′".into()));
    }
    let outer = srw_capacity(k_prime, kill_box)?;
    let nt = kill_box.neighbor_table();
    let mut mask = vec![false; kill_box.len()];
    let kidx: Vec<usize> = k
        .iter()
        .map(|s| {
            kill_box.index(s).filter(|_| kill_box.contains(s)).ok_or_else(|| Error::Domain("K outside box".into()))
        })
        .collect::<Result<_>>()?;
    for &i in &kidx {
        mask[i] = true;
    }
    let mut acc = 0.0;
    let cdf: Vec<(usize, f64)> = outer
        .equilibrium
        .iter()
        .map(|(s, e)| {
            acc += e;
            (kill_box.index(s).unwrap(), acc)
        })
        .collect();
    let mut r = rng::stream(seed, &[rng::tag("sweep-lhs")]);
    let mut lhs = vec![Vec::with_capacity(samples); kidx.len()];
    for _ in 0..samples {
        let t = r.random::<f64>() * outer.capacity;
        let x = cdf[cdf.partition_point(|e| e.1 < t).min(cdf.len() - 1)].0;
        let hit = if mask[x] {
            Some(x)
        } else {
            let (_, end, last) = srw_path(&nt, x, f64::INFINITY, Some(&mask), false, &mut r);
            (end == WalkerEnd::Stopped).then_some(last)
        };
        for (j, &z) in kidx.iter().enumerate() {
            lhs[j].push(if hit == Some(z) { outer.capacity } else { 0.0 });
        }
    }
    let deg = nt.degree;
    let mut out = vec![];
    for (j, &z) in kidx.iter().enumerate() {
        let mut rr = rng::stream(seed, &[rng::tag("sweep-rhs"), j as u64]);
        let esc: Vec<f64> = (0..samples)
            .map(|_| {
                let y = nt.of(z)[rr.random_range(0..deg)];
                if y == EXTERIOR {
                    return deg as f64;
                }
                if mask[y as usize] {
                    return 0.0;
                }
                let (_, end, _) = srw_path(&nt, y as usize, f64::INFINITY, Some(&mask), false, &mut rr);
                if end == WalkerEnd::Stopped {
                    0.0
                } else {
                    deg as f64
                }
            })
            .collect();
        let swept = iid(&lhs[j]);
        let direct = iid(&esc);
        out.push(SweepingPoint { z: kill_box.site(z), z_score: swept.z_against(&direct), swept, direct });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;

    fn config(u: f64, window: Vec<Site>, side: usize) -> SoupConfig {
        SoupConfig {
            u,
            tilt: TiltSpec::none(),
            window,
            kill_box: Domain::centered_cube(3, side, Boundary::Dirichlet).unwrap(),
            horizon: 1e6,
            seed: 5,
            chain: ChainConfig::default(),
            max_rejections: default_max_rejections(),
            sigma_nodes: 4,
            escape_samples: 400,
            record_jumps: false,
        }
    }

    #[test]
    fn empty_level_gives_empty_soup() {
        let cfg = config(0.0, vec![vec![0, 0, 0]], 9);
        let s = sample_gaussian_soup(&cfg, 0).unwrap();
        assert_eq!(s.count(), 0);
        let l = occupation_field(&s, &cfg.kill_box);
        assert!(l.values.is_empty());
        let g = sample_general_soup(&cfg, &Potential::quadratic(), 0).unwrap();
        assert_eq!(g.count(), 0);
    }

    #[test]
    fn single_site_window_enters_at_origin() {
        let cfg = config(2.0, vec![vec![0, 0, 0]], 9);
        let s = sample_gaussian_soup(&cfg, 1).unwrap();
        assert!(s.count() > 0);
        assert!(s.trajectories.iter().all(|t| t.entry == vec![0, 0, 0]));
        // backward parts never visit K
        let i0 = cfg.kill_box.index(&[0, 0, 0]).unwrap();
        assert!(s.trajectories.iter().all(|t| t.backward.occupation_at(i0) == 0.0));
    }

    #[test]
    fn rescaled_occupation_of_a_point_mass() {
        let mut values = SiteMap::new();
        values.insert(vec![0, 0, 0], 2.5);
        let l = OccupationField { values, level: 1.0 };
        let one = |_: &[f64]| 1.0;
        let v = rescale_occupation_fn(&l, 4, MacroFn { f: &one, radius: 0.5 });
        assert!((v - 2.5 / 16.0).abs() < 1e-12);
    }
}
