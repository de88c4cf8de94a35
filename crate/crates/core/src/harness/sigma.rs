//! Homogenized diffusivity `Σ` of the environment walk from mean-squared
//! displacements under the annealed law on a periodic box.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChainConfig, TiltSpec};
use crate::lattice::{Boundary, Domain};
use crate::potential::Potential;
use crate::rng;
use crate::stats::{linear_fit, mean, variance};
use crate::walk::{JointSim, WalkSink, Walker};

fn default_fit_from() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub dimension: usize,
    /// Side of the periodic box carrying the field.
    pub side: usize,
    pub potential: Potential,
    pub chain: ChainConfig,
    /// Independent environments; the error bars are across groups.
    pub groups: usize,
    /// Walkers sharing each environment.
    pub walkers: usize,
    pub t_max: f64,
    pub checkpoints: usize,
    /// Start of the fit window as a fraction of `t_max`.
    #[serde(default = "default_fit_from")]
    pub fit_from: f64,
}

impl SigmaConfig {
    pub fn check(&self) -> Result<()> {
        let mut errs = vec![];
        if self.groups < 2 {
            errs.push("need at least two groups for error bars".to_string());
        }
        if self.walkers == 0 {
            errs.push("need at least one walker per group".to_string());
        }
        if !(self.t_max > 0.0) {
            errs.push("t_max must be positive".to_string());
        }
        if self.checkpoints < 4 {
            errs.push("need at least four checkpoints".to_string());
        }
        if !(0.0..1.0).contains(&self.fit_from) {
            errs.push("fit_from must lie in [0, 1)".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub matrix: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub fit_window: (f64, f64),
    /// Set when early and late halves of the window disagree by over 10%.
    pub window_warning: Option<String>,
}

impl SigmaEstimate {
    /// Largest `|Σ_ij|/SE_ij` off the diagonal.
    pub fn max_offdiag_z(&self) -> f64 {
        let d = self.matrix.len();
        let mut z = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    z = z.max(self.matrix[i][j].abs() / self.std_errors[i][j]);
                }
            }
        }
        z
    }

    /// Largest pairwise separation of diagonal entries in combined SEs.
    pub fn max_diag_spread_z(&self) -> f64 {
        let d = self.matrix.len();
        let mut z = 0.0f64;
        for i in 0..d {
            for j in 0..i {
                let se = (self.std_errors[i][i].powi(2) + self.std_errors[j][j].powi(2)).sqrt();
                z = z.max((self.matrix[i][i] - self.matrix[j][j]).abs() / se);
            }
        }
        z
    }

    /// Mean of the diagonal with its standard error (entries treated as independent).
    pub fn isotropic(&self) -> (f64, f64) {
        let d = self.matrix.len() as f64;
        let m = (0..self.matrix.len()).map(|i| self.matrix[i][i]).sum::<f64>() / d;
        let se = (0..self.matrix.len()).map(|i| self.std_errors[i][i].powi(2)).sum::<f64>().sqrt() / d;
        (m, se)
    }
}

/// Unwrapped displacement of each walker, updated on every jump.
struct Displacement {
    side: usize,
    dim: usize,
    disp: Vec<Vec<i64>>,
}

impl WalkSink for Displacement {
    fn segment(&mut self, _w: usize, _site: usize, _t0: f64, _t1: f64, _fk: f64) {}
    fn jump(&mut self, w: usize, _time: f64, from: usize, to: u32) {
        let s = self.side;
        let (mut a, mut b) = (from, to as usize);
        for k in 0..self.dim {
            let diff = (b % s) as i64 - (a % s) as i64;
            if diff != 0 {
                // nearest-neighbour step, possibly across the periodic seam
                self.disp[w][k] += if diff == 1 || diff == -(s as i64 - 1) { 1 } else { -1 };
                return;
            }
            a /= s;
            b /= s;
        }
    }
}

/// Per-group second moments `E[X_i X_j]` at each checkpoint.
fn run_group(cfg: &SigmaConfig, domain: &Domain, g: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = cfg.dimension;
    let chain =
        ChainConfig { seed: rng::derive(cfg.chain.seed, &[rng::tag("sigma-group"), g as u64]), ..cfg.chain.clone() };
    let mut sim = JointSim::new(domain, &cfg.potential, &TiltSpec::none(), &chain, &[rng::tag("sigma")], false)?;
    if !sim.static_field {
        sim.chain.burn_in()?;
    }
    let t0 = sim.time();
    let mut walkers: Vec<Walker> = (0..cfg.walkers)
        .map(|_| {
            let pos = sim.chain.rng().random_range(0..domain.len());
            sim.spawn(pos, f64::INFINITY)
        })
        .collect();
    let mut sink = Displacement { side: cfg.side, dim: d, disp: vec![vec![0; d]; cfg.walkers] };
    let mut times = vec![];
    let mut moments = vec![];
    let dt = chain.dt;
    for k in 0..cfg.checkpoints {
        let target = t0 + cfg.t_max * (k + 1) as f64 / cfg.checkpoints as f64;
        if sim.static_field {
            sim.advance_walkers(&mut walkers, target, &mut sink);
            sim.chain.state.time = target;
        } else {
            while sim.time() < target - 1e-9 * dt {
                let t_end = sim.time() + dt;
                sim.advance_walkers(&mut walkers, t_end, &mut sink);
                sim.step_field()?;
            }
        }
        times.push(sim.time() - t0);
        let mut m = vec![0.0; d * d];
        for x in &sink.disp {
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] += (x[i] * x[j]) as f64;
                }
            }
        }
        moments.push(m.iter().map(|v| v / cfg.walkers as f64).collect());
    }
    Ok((times, moments))
}

/// `Σ_ij` as the slope of `E[X_i X_j]` against `t` over the fit window,
/// averaged over independent environment groups.
pub fn estimate_sigma(cfg: &SigmaConfig) -> Result<SigmaEstimate> {
    cfg.check()?;
    let d = cfg.dimension;
    let domain = Domain::cube(d, cfg.side, Boundary::Periodic)?;
    let runs: Vec<(Vec<f64>, Vec<Vec<f64>>)> =
        (0..cfg.groups).map(|g| run_group(cfg, &domain, g)).collect::<Result<_>>()?;
    let start = cfg.fit_from * cfg.t_max;
    let mut per_group = vec![vec![0.0; cfg.groups]; d * d];
    let mut early = vec![];
    let mut late = vec![];
    for (g, (times, moments)) in runs.iter().enumerate() {
        let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= start - 1e-12).collect();
        let t: Vec<f64> = idx.iter().map(|&k| times[k]).collect();
        for e in 0..d * d {
            let y: Vec<f64> = idx.iter().map(|&k| moments[k][e]).collect();
            per_group[e][g] = linear_fit(&t, &y).0;
        }
        // isotropic slope on the two halves of the window
        let half = idx.len() / 2;
        let tr = |ks: &[usize]| -> f64 {
            let tt: Vec<f64> = ks.iter().map(|&k| times[k]).collect();
            let yy: Vec<f64> =
                ks.iter().map(|&k| (0..d).map(|i| moments[k][i * d + i]).sum::<f64>() / d as f64).collect();
            linear_fit(&tt, &yy).0
        };
        if half >= 2 {
            early.push(tr(&idx[..half + 1]));
            late.push(tr(&idx[half..]));
        }
    }
    let g = cfg.groups as f64;
    let matrix: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| mean(&per_group[i * d + j])).collect()).collect();
    let std_errors: Vec<Vec<f64>> =
        (0..d).map(|i| (0..d).map(|j| (variance(&per_group[i * d + j]) / g).sqrt()).collect()).collect();
    let window_warning = if early.is_empty() {
        None
    } else {
        let (a, b) = (mean(&early), mean(&late));
        let se = ((variance(&early) + variance(&late)) / early.len() as f64).sqrt();
        ((a - b).abs() > 0.1 * b.abs() + 3.0 * se).then(|| {
            format!("MSD slope changes across the fit window ({a:.4} early vs {b:.4} late); widen or delay the window")
        })
    };
    Ok(SigmaEstimate { matrix, std_errors, fit_window: (start, cfg.t_max), window_warning })
}
