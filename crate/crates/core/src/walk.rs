//! The coupled process `(X_t, φ_t)`: a continuous-time walk with conductances
//! `U″(φ_t(x) − φ_t(y))` riding on the Langevin field, simulated by
//! uniformization with the global rate bound `R = 2d·c2`.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Chain, ChainConfig, FieldState, SiteMap, TiltSpec};
use crate::lattice::{Boundary, Domain, Site, EXTERIOR};
use crate::potential::Potential;
use crate::rng;
use crate::stats::{self, Estimate};

/// Conductance `U″(φ_x − φ_y)` for neighbours, 0 otherwise. Sites outside a
/// Dirichlet box carry the boundary value 0.
pub fn conductance(phi: &FieldState, domain: &Domain, x: &[i64], y: &[i64], p: &Potential) -> f64 {
    let l1: i64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    let adjacent = l1 == 1
        || (domain.boundary == Boundary::Periodic
            && domain.index(x).is_some()
            && domain
                .neighbors(x)
                .map(|nb| nb.iter().any(|n| domain.index(&n.site) == domain.index(y)))
                .unwrap_or(false));
    if !adjacent {
        return 0.0;
    }
    let val = |s: &[i64]| domain.index(s).map_or(0.0, |i| phi.values[i]);
    p.u_second(val(x) - val(y))
}

/// Starting point of the joint process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub x: Site,
    pub phi: FieldState,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub from: u32,
    /// Flat index of the target, or [`EXTERIOR`] when the walk was killed.
    pub to: u32,
}

/// A walk path with occupation times and the Feynman–Kac integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub start: usize,
    pub start_time: f64,
    pub jumps: Vec<Jump>,
    pub end_time: f64,
    /// Killed by stepping out of a Dirichlet box before the horizon.
    pub killed: bool,
    /// `(site index, time spent)`, sorted by index.
    pub occupation: Vec<(usize, f64)>,
    /// `∫ V(X_s) ds` for the tilt's `V`.
    pub fk_integral: f64,
}

impl JointTrajectory {
    pub fn occupation_at(&self, i: usize) -> f64 {
        self.occupation.binary_search_by_key(&i, |e| e.0).map_or(0.0, |k| self.occupation[k].1)
    }

    pub fn total_time(&self) -> f64 {
        self.occupation.iter().map(|e| e.1).sum()
    }

    /// Position after the last jump (the start if none; the last interior
    /// site if killed).
    pub fn final_site(&self) -> usize {
        self.jumps.iter().rev().find(|j| j.to != EXTERIOR).map_or(self.start, |j| j.to as usize)
    }
}

/// `exp(Σ_x V(x)·occupation(x))`.
pub fn feynman_kac_weight(traj: &JointTrajectory, domain: &Domain, v: &SiteMap) -> f64 {
    v.iter().filter_map(|(s, w)| domain.index(s).map(|i| w * traj.occupation_at(i))).sum::<f64>().exp()
}

/// First time the walk is in `K` (`Some(start_time)` if it starts there),
/// `None` if it never enters `K` before the end of the trajectory.
pub fn hitting_time(traj: &JointTrajectory, domain: &Domain, k: &[Site]) -> Option<f64> {
    let set: Vec<usize> = k.iter().filter_map(|s| domain.index(s)).collect();
    if set.contains(&traj.start) {
        return Some(traj.start_time);
    }
    traj.jumps.iter().find(|j| j.to != EXTERIOR && set.contains(&(j.to as usize))).map(|j| j.time)
}

/// How a walker's life ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkerEnd {
    Alive,
    /// Stepped out of the Dirichlet box.
    Killed,
    /// Entered the configured stop set.
    Stopped,
    /// Reached its horizon.
    Horizon,
}

/// One walker riding the shared environment.
#[derive(Debug, Clone)]
pub struct Walker {
    pub pos: usize,
    pub t: f64,
    next: f64,
    pub horizon: f64,
    pub fk: f64,
    pub end: WalkerEnd,
}

/// Receives every holding segment `(walker, site, t_from, t_to, fk_at_from)`
/// and every accepted jump `(walker, time, from, to)`.
pub trait WalkSink {
    fn segment(&mut self, walker: usize, site: usize, t0: f64, t1: f64, fk0: f64);
    fn jump(&mut self, _walker: usize, _time: f64, _from: usize, _to: u32) {}
}

/// Field dynamics plus any number of walkers sharing it.
pub struct JointSim {
    pub chain: Chain,
    /// The field never moves (frozen environment, or conductances constant).
    pub static_field: bool,
    rate: f64,
    c2: f64,
    v: Vec<f64>,
    exp: Exp<f64>,
    stop: Option<Vec<bool>>,
}

impl JointSim {
    /// `frozen`: keep the initial field fixed. For the quadratic potential the
    /// field is irrelevant to the walk and is never advanced.
    pub fn new(
        domain: &Domain,
        p: &Potential,
        tilt: &TiltSpec,
        config: &ChainConfig,
        path: &[u64],
        frozen: bool,
    ) -> Result<Self> {
        let chain = Chain::with_stream(domain, p, tilt, config, path)?;
        let rate = domain.degree() as f64 * p.c2;
        Ok(JointSim {
            static_field: frozen || p.is_quadratic(),
            rate,
            c2: p.c2,
            v: tilt.v.to_dense(domain)?,
            exp: Exp::new(rate).unwrap(),
            stop: None,
            chain,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.chain.domain
    }

    pub fn time(&self) -> f64 {
        self.chain.state.time
    }

    /// Walkers entering any of these sites stop (end = `Stopped`).
    pub fn set_stop_set(&mut self, sites: Option<&[usize]>) {
        self.stop = sites.map(|s| {
            let mut m = vec![false; self.chain.domain.len()];
            for &i in s {
                m[i] = true;
            }
            m
        });
    }

    /// New walker at `pos` starting now, alive until `now + horizon`.
    pub fn spawn(&mut self, pos: usize, horizon: f64) -> Walker {
        let t = self.chain.state.time;
        let next = t + self.exp.sample(self.chain.rng());
        Walker { pos, t, next, horizon: t + horizon, fk: 0.0, end: WalkerEnd::Alive }
    }

    /// Process candidate jumps of every live walker up to time `t_end`
    /// against the current (piecewise-constant) field.
    pub fn advance_walkers<S: WalkSink>(&mut self, walkers: &mut [Walker], t_end: f64, sink: &mut S) {
        let deg = self.chain.domain.degree();
        for (w_id, w) in walkers.iter_mut().enumerate() {
            if w.end != WalkerEnd::Alive {
                continue;
            }
            let limit = t_end.min(w.horizon);
            while w.next < limit {
                let (pos, s) = (w.pos, w.next);
                sink.segment(w_id, pos, w.t, s, w.fk);
                w.fk += self.v[pos] * (s - w.t);
                w.t = s;
                let rng = self.chain.rng();
                let k = rng.random_range(0..deg);
                let u: f64 = rng.random();
                w.next = s + self.exp.sample(rng);
                let j = self.chain.neighbor_table().of(pos)[k];
                let a = if self.static_field && self.chain.potential.is_quadratic() {
                    1.0
                } else {
                    let phi = &self.chain.state.values;
                    let fy = if j == EXTERIOR { 0.0 } else { phi[j as usize] };
                    self.chain.potential.u_second(phi[pos] - fy)
                };
                if u * self.c2 < a {
                    sink.jump(w_id, s, pos, j);
                    if j == EXTERIOR {
                        w.end = WalkerEnd::Killed;
                        break;
                    }
                    w.pos = j as usize;
                    if self.stop.as_ref().is_some_and(|m| m[w.pos]) {
                        w.end = WalkerEnd::Stopped;
                        break;
                    }
                }
            }
            if w.end == WalkerEnd::Alive && w.horizon <= t_end {
                sink.segment(w_id, w.pos, w.t, w.horizon, w.fk);
                w.fk += self.v[w.pos] * (w.horizon - w.t);
                w.t = w.horizon;
                w.end = WalkerEnd::Horizon;
            }
        }
    }

    /// Advance the field by one step (no-op for a static field except the clock).
    pub fn step_field(&mut self) -> Result<()> {
        if self.static_field {
            self.chain.state.time += self.chain.config.dt;
            Ok(())
        } else {
            self.chain.step()
        }
    }

    /// Run until every walker has ended.
    pub fn run<S: WalkSink>(&mut self, walkers: &mut [Walker], sink: &mut S) -> Result<()> {
        if self.static_field {
            // the environment does not change: process each walker to its end
            self.advance_walkers(walkers, f64::INFINITY, sink);
            let t_max = walkers.iter().map(|w| w.t).fold(self.time(), f64::max);
            self.chain.state.time = t_max;
            return Ok(());
        }
        let dt = self.chain.config.dt;
        while walkers.iter().any(|w| w.end == WalkerEnd::Alive) {
            let t_end = self.time() + dt;
            self.advance_walkers(walkers, t_end, sink);
            self.step_field()?;
        }
        Ok(())
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate
    }
}

/// Sink building full [`JointTrajectory`] records.
struct TrajectorySink {
    occ: std::collections::BTreeMap<usize, f64>,
    jumps: Vec<Jump>,
    record_jumps: bool,
}

impl WalkSink for TrajectorySink {
    fn segment(&mut self, _w: usize, site: usize, t0: f64, t1: f64, _fk: f64) {
        *self.occ.entry(site).or_insert(0.0) += t1 - t0;
    }
    fn jump(&mut self, _w: usize, time: f64, from: usize, to: u32) {
        if self.record_jumps {
            self.jumps.push(Jump { time, from: from as u32, to });
        }
    }
}

/// Options for [`simulate_joint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub chain: ChainConfig,
    /// Keep the initial field fixed.
    #[serde(default)]
    pub frozen: bool,
    /// RNG task path component under `chain.seed`.
    #[serde(default)]
    pub stream: u64,
}

/// Simulate one trajectory of the joint process from `start` up to `horizon`
/// (or until killed at a Dirichlet boundary).
pub fn simulate_joint(
    start: &JointState,
    domain: &Domain,
    horizon: f64,
    p: &Potential,
    tilt: &TiltSpec,
    config: &WalkConfig,
) -> Result<JointTrajectory> {
    let mut sim = JointSim::new(domain, p, tilt, &config.chain, &[rng::tag("walk"), config.stream], config.frozen)?;
    if start.phi.values.len() != domain.len() {
        return Err(Error::Domain("field does not match domain".into()));
    }
    sim.chain.state = start.phi.clone();
    sim.chain.state.time = start.t;
    let pos = domain
        .index(&start.x)
        .filter(|_| domain.contains(&start.x))
        .ok_or_else(|| Error::Domain(format!("start {:?} outside domain", start.x)))?;
    let mut sink = TrajectorySink { occ: Default::default(), jumps: vec![], record_jumps: true };
    if horizon <= 0.0 {
        return Ok(JointTrajectory {
            start: pos,
            start_time: start.t,
            jumps: vec![],
            end_time: start.t,
            killed: false,
            occupation: vec![],
            fk_integral: 0.0,
        });
    }
    let mut walkers = [sim.spawn(pos, horizon)];
    sim.run(&mut walkers, &mut sink)?;
    let w = &walkers[0];
    Ok(JointTrajectory {
        start: pos,
        start_time: start.t,
        jumps: sink.jumps,
        end_time: w.t,
        killed: w.end == WalkerEnd::Killed,
        occupation: sink.occ.into_iter().collect(),
        fk_integral: w.fk,
    })
}

/// Configuration of the two-sided covariance estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsConfig {
    /// Field chain; must be a Langevin chain. `n_samples`/`thinning` control
    /// the field-side estimate.
    pub chain: ChainConfig,
    /// Walkers launched from `x` at each launch.
    pub walkers_per_launch: usize,
    /// Field steps between launches.
    pub launch_every: usize,
    pub n_launches: usize,
    /// Walker horizon (time units); walkers are normally killed at the box
    /// boundary well before it.
    pub horizon: f64,
}

/// Both sides of the covariance identity at one target site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsPoint {
    pub y: Site,
    /// `cov(φ_x, φ_y)` from field samples.
    pub field: Estimate,
    /// `∫₀^∞ E[e^{∫V} 1{X_t = y}] dt` from walkers.
    pub walk: Estimate,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsReport {
    pub x: Site,
    pub points: Vec<HsPoint>,
    /// Fraction of walkers that reached the horizon alive.
    pub truncated_fraction: f64,
    /// Upper bound on the occupation mass lost beyond the horizon, relative
    /// to the diagonal value (heat-kernel tail `∝ t^{1−d/2}`).
    pub tail_bound: f64,
}

struct HsSink {
    targets: Vec<usize>,
    /// per-walker weighted occupation at each target
    acc: Vec<Vec<f64>>,
    v: Vec<f64>,
}

impl WalkSink for HsSink {
    fn segment(&mut self, w: usize, site: usize, t0: f64, t1: f64, fk0: f64) {
        for (k, &t) in self.targets.iter().enumerate() {
            if t == site {
                let dv = self.v[site];
                let len = t1 - t0;
                let mass = if dv == 0.0 { len } else { ((dv * len).exp_m1()) / dv };
                self.acc[w][k] += fk0.exp() * mass;
            }
        }
    }
}

/// Estimate both sides of `cov_{μ_{h,V}}(φ_x, φ_y) = ∫₀^∞ E_ρ[1{X_0=x} e^{∫V} 1{X_t=y}] dt`
/// for each `y`: the field side from chain samples, the walk side from
/// walkers launched periodically from `x` on the same stationary chain.
pub fn hs_covariance(
    x: &[i64],
    ys: &[Site],
    domain: &Domain,
    tilt: &TiltSpec,
    p: &Potential,
    config: &HsConfig,
) -> Result<HsReport> {
    let mut sim = JointSim::new(domain, p, tilt, &config.chain, &[rng::tag("hs")], false)?;
    sim.static_field = false; // the field-side estimate needs the chain even when Gaussian
    let xi = domain.index(x).filter(|_| domain.contains(x)).ok_or_else(|| Error::Domain("x outside".into()))?;
    let targets: Vec<usize> = ys
        .iter()
        .map(|y| domain.index(y).filter(|_| domain.contains(y)).ok_or_else(|| Error::Domain("y outside".into())))
        .collect::<Result<_>>()?;
    sim.chain.burn_in()?;
    let thin = config.chain.thinning.max(1);
    let mut fx = vec![];
    let mut fy = vec![vec![]; targets.len()];
    let mut walkers: Vec<Walker> = vec![];
    let mut owner: Vec<usize> = vec![]; // launch index per walker
    let mut sink = HsSink { targets: targets.clone(), acc: vec![], v: sim.v.clone() };
    let mut per_launch = vec![vec![0.0; targets.len()]; config.n_launches];
    let mut truncated = 0usize;
    let mut launched = 0usize;
    let mut step = 0usize;
    let total_walkers = config.n_launches * config.walkers_per_launch;
    loop {
        if step % config.launch_every.max(1) == 0 && launched < config.n_launches {
            for _ in 0..config.walkers_per_launch {
                walkers.push(sim.spawn(xi, config.horizon));
                owner.push(launched);
                sink.acc.push(vec![0.0; targets.len()]);
            }
            launched += 1;
        }
        if step % thin == 0 && fx.len() < config.chain.n_samples {
            let phi = &sim.chain.state.values;
            fx.push(phi[xi]);
            for (k, &t) in targets.iter().enumerate() {
                fy[k].push(phi[t]);
            }
        }
        let t_end = sim.time() + config.chain.dt;
        sim.advance_walkers(&mut walkers, t_end, &mut sink);
        // retire finished walkers
        let mut k = 0;
        while k < walkers.len() {
            if walkers[k].end != WalkerEnd::Alive {
                if walkers[k].end == WalkerEnd::Horizon {
                    truncated += 1;
                }
                let acc = sink.acc.swap_remove(k);
                let l = owner.swap_remove(k);
                walkers.swap_remove(k);
                for (a, b) in per_launch[l].iter_mut().zip(&acc) {
                    *a += b / config.walkers_per_launch as f64;
                }
            } else {
                k += 1;
            }
        }
        sim.chain.step()?;
        step += 1;
        if launched >= config.n_launches && walkers.is_empty() && fx.len() >= config.chain.n_samples {
            break;
        }
    }
    let points = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let field = stats::batch_covariance(&fx, &fy[k], stats::BATCHES);
            let series: Vec<f64> = per_launch.iter().map(|v| v[k]).collect();
            let walk = stats::batch_means(&series, stats::BATCHES);
            HsPoint { y: y.clone(), z: field.z_against(&walk), field, walk }
        })
        .collect();
    let d = domain.dimension as f64;
    Ok(HsReport {
        x: x.to_vec(),
        points,
        truncated_fraction: truncated as f64 / total_walkers.max(1) as f64,
        tail_bound: config.horizon.powf(1.0 - d / 2.0),
    })
}
