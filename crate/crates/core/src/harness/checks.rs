//! Composite checks: Green-form ladders against the continuum, the
//! isomorphism residual, the Gaussian free-energy limit and the occupation
//! limit of low-intensity soups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{with_macro, ContinuumModel, CubeDirichlet, TestFunction, Verdict};
use crate::error::{Error, Result};
use crate::field::{Chain, ChainConfig, SiteMap, TiltSpec};
use crate::green::{discretize_potential, green_solve, rescaled_quadratic_form, Convention, FormOptions, UnitRule};
use crate::lattice::{linf_diameter, Boundary, Domain, Site};
use crate::potential::Potential;
use crate::rng;
use crate::soup::{occupation_field, GaussianSoupSampler, GeneralSoupSampler, SoupConfig, SoupSample};
use crate::stats::{batch_covariance, batch_means, iid, simpson_weights, Estimate, BATCHES};

/// A doubling ladder of rescaled Green forms with its continuum reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderReport {
    pub power: u8,
    pub ns: Vec<usize>,
    pub values: Vec<f64>,
    /// `|form(2N)/form(N) − 1|` along the ladder.
    pub ratios: Vec<f64>,
    /// Ratios strictly decreasing.
    pub cauchy: bool,
    /// Observed convergence order from the last three rungs.
    pub order: f64,
    pub extrapolated: f64,
    pub continuum: f64,
    pub rel_gap: f64,
}

/// Richardson extrapolation of a doubling ladder with an estimated order.
fn extrapolate(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k < 3 {
        return (f64::NAN, *values.last().unwrap_or(&f64::NAN));
    }
    let d1 = values[k - 2] - values[k - 3];
    let d2 = values[k - 1] - values[k - 2];
    if d2 == 0.0 {
        return (f64::INFINITY, values[k - 1]);
    }
    let p = (d1 / d2).abs().log2().clamp(0.5, 4.0);
    (p, values[k - 1] + d2 / (2f64.powf(p) - 1.0))
}

/// `⟨f, (G_N^V)^power f⟩` over a doubling `N`-ladder, extrapolated and
/// compared with the continuum form of `model`.
pub fn form_ladder(
    f: &TestFunction,
    v: Option<&TestFunction>,
    ladder: &[usize],
    power: u8,
    opts: &FormOptions,
    model: &ContinuumModel,
) -> Result<LadderReport> {
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::Config("the ladder must double at each rung".into()));
    }
    let values: Vec<f64> = ladder
        .iter()
        .map(|&n| {
            with_macro(f, |fm| match v {
                Some(v) => with_macro(v, |vm| rescaled_quadratic_form(fm, Some(vm), n, 3, power, opts)),
                None => rescaled_quadratic_form(fm, None, n, 3, power, opts),
            })
            .map(|r| r.value)
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).collect();
    let cauchy = ratios.windows(2).all(|w| w[1] < w[0]);
    let (order, extrapolated) = extrapolate(&values);
    let continuum = model.form(f, v, power)?;
    Ok(LadderReport {
        power,
        ns: ladder.to_vec(),
        values,
        ratios,
        cauchy,
        order,
        extrapolated,
        continuum,
        rel_gap: (extrapolated / continuum - 1.0).abs(),
    })
}

/// `log E e^{⟨Φ_N, W⟩}` along an `N`-ladder against `½E_Σ(W, W)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaddafSpencerReport {
    pub ns: Vec<usize>,
    pub values: Vec<Estimate>,
    pub gaps: Vec<f64>,
    pub continuum: f64,
    pub extrapolated: f64,
    pub gap_decreasing: bool,
    pub rel_gap: f64,
}

impl NaddafSpencerReport {
    /// Assemble from per-`N` log-MGF estimates.
    pub fn from_rungs(ns: &[usize], values: Vec<Estimate>, continuum: f64) -> Self {
        let gaps: Vec<f64> = values.iter().map(|e| (e.value - continuum).abs()).collect();
        let gap_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        let vals: Vec<f64> = values.iter().map(|e| e.value).collect();
        let extrapolated = if ns.windows(2).all(|w| w[1] == 2 * w[0]) { extrapolate(&vals).1 } else { f64::NAN };
        let best = if extrapolated.is_finite() { extrapolated } else { *vals.last().unwrap_or(&f64::NAN) };
        NaddafSpencerReport {
            ns: ns.to_vec(),
            values,
            gaps,
            continuum,
            extrapolated,
            gap_decreasing,
            rel_gap: if continuum == 0.0 { best.abs() } else { (best / continuum - 1.0).abs() },
        }
    }
}

/// Gaussian case, both sides deterministic: `½⟨W_N, g W_N⟩` on `Z³` vs `½E_Σ(W, W)`.
pub fn naddaf_spencer_gaussian(
    w: &TestFunction,
    ladder: &[usize],
    model: &ContinuumModel,
) -> Result<NaddafSpencerReport> {
    let values: Vec<Estimate> = ladder
        .iter()
        .map(|&n| {
            with_macro(w, |m| rescaled_quadratic_form(m, None, n, 3, 1, &FormOptions::default()))
                .map(|r| Estimate::exact(0.5 * r.value))
        })
        .collect::<Result<_>>()?;
    let continuum = if w.amplitude == 0.0 { 0.0 } else { 0.5 * model.energy(w)? };
    Ok(NaddafSpencerReport::from_rungs(ladder, values, continuum))
}

fn default_sigma_nodes() -> usize {
    17
}

fn default_escape() -> usize {
    2_000
}

/// Inputs of [`isomorphism_residual`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsomorphismConfig {
    pub u: f64,
    /// Lattice potential `V`.
    pub v: SiteMap,
    /// Dirichlet box (also the soup's kill box).
    pub domain: Domain,
    pub potential: Potential,
    pub chain: ChainConfig,
    /// Soups for the direct occupation route; 0 skips it.
    #[serde(default)]
    pub soups: usize,
    /// Simpson nodes of the variance route (odd).
    #[serde(default = "default_sigma_nodes")]
    pub sigma_nodes: usize,
    /// Soup window; defaults to the support of `V`.
    #[serde(default)]
    pub window: Option<Vec<Site>>,
    #[serde(default = "default_escape")]
    pub escape_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsomorphismReport {
    pub u: f64,
    /// Soup MGF `E[e^{⟨V, L⟩}]`.
    pub occupation_route: Option<Estimate>,
    /// `e^{u⟨V,1⟩} E_{μ_V}[e^{√(2u)⟨V,φ⟩}]`.
    pub field_route: Estimate,
    /// `exp{∫₀^s (s−σ) var_{σ}(⟨V,φ⟩) dσ + u⟨V,1⟩}`, `s = √(2u)`.
    pub variance_route: Estimate,
    /// `exp{u⟨V,1⟩ + u⟨V, G^V V⟩}` (quadratic potential only).
    pub closed_form: Option<f64>,
    pub z_occupation_field: Option<f64>,
    pub z_field_variance: f64,
    pub rel_field_variance: f64,
    pub inconclusive: bool,
    pub verdict: Verdict,
}

/// The three routes to the isomorphism's generating function and their
/// pairwise residuals.
pub fn isomorphism_residual(cfg: &IsomorphismConfig) -> Result<IsomorphismReport> {
    if !(cfg.u >= 0.0) {
        return Err(Error::Config("u must be nonnegative".into()));
    }
    if cfg.domain.boundary != Boundary::Dirichlet {
        return Err(Error::Config("the isomorphism is checked on a Dirichlet box".into()));
    }
    if cfg.sigma_nodes < 3 || cfg.sigma_nodes % 2 == 0 {
        return Err(Error::Config("the variance route needs an odd number (≥ 3) of Simpson nodes".into()));
    }
    let one = Estimate::exact(1.0);
    if cfg.u == 0.0 || cfg.v.iter().all(|(_, &x)| x == 0.0) {
        return Ok(IsomorphismReport {
            u: cfg.u,
            occupation_route: (cfg.soups > 0).then_some(one),
            field_route: one,
            variance_route: one,
            closed_form: cfg.potential.is_quadratic().then_some(1.0),
            z_occupation_field: (cfg.soups > 0).then_some(0.0),
            z_field_variance: 0.0,
            rel_field_variance: 0.0,
            inconclusive: false,
            verdict: Verdict::Pass,
        });
    }
    let d = &cfg.domain;
    let ones: f64 = cfg.v.iter().map(|(_, x)| x).sum();
    let s = (2.0 * cfg.u).sqrt();
    let closed_form = if cfg.potential.is_quadratic() {
        let g = green_solve(&cfg.v, d, Convention::Occupation)?;
        Some((cfg.u * ones + cfg.u * g.quadratic(&cfg.v)?).exp())
    } else {
        None
    };
    let pair = |phi: &[f64]| cfg.v.pair(d, phi);
    // (b) the tilted field's exponential moment
    let field_route = {
        let tilt = TiltSpec::new(SiteMap::new(), cfg.v.clone());
        let chain_cfg = ChainConfig { seed: rng::derive(cfg.seed, &[rng::tag("iso-field")]), ..cfg.chain.clone() };
        let mut chain = Chain::new(d, &cfg.potential, &tilt, &chain_cfg)?;
        chain.burn_in()?;
        let mut e = Vec::with_capacity(chain_cfg.n_samples);
        for _ in 0..chain_cfg.n_samples {
            e.push((s * pair(&chain.next_sample()?.values)).exp());
        }
        batch_means(&e, BATCHES).scale((cfg.u * ones).exp())
    };
    // (c) variance route on a σ-grid with a warm-started chain
    let variance_route = {
        let k = cfg.sigma_nodes;
        let h = s / (k - 1) as f64;
        let w = simpson_weights(k, h);
        let chain_cfg = ChainConfig { seed: rng::derive(cfg.seed, &[rng::tag("iso-variance")]), ..cfg.chain.clone() };
        let mut chain = Chain::new(d, &cfg.potential, &TiltSpec::new(SiteMap::new(), cfg.v.clone()), &chain_cfg)?;
        chain.burn_in()?;
        let (mut integral, mut var_se) = (0.0, 0.0);
        for (j, wj) in w.iter().enumerate() {
            let sigma = j as f64 * h;
            chain.set_tilt(&TiltSpec::new(cfg.v.scaled(sigma), cfg.v.clone()))?;
            chain.advance(chain_cfg.burn_in / 4)?;
            let mut x = Vec::with_capacity(chain_cfg.n_samples);
            for _ in 0..chain_cfg.n_samples {
                x.push(pair(&chain.next_sample()?.values));
            }
            let var = batch_covariance(&x, &x, BATCHES);
            integral += wj * (s - sigma) * var.value;
            var_se += (wj * (s - sigma) * var.std_error).powi(2);
        }
        let c = (cfg.u * ones + integral).exp();
        Estimate { value: c, std_error: c * var_se.sqrt(), n_eff: chain_cfg.n_samples as f64 }
    };
    // (a) the soup's occupation field
    let occupation_route = if cfg.soups > 0 {
        let window = cfg.window.clone().unwrap_or_else(|| cfg.v.support());
        let soup_cfg = SoupConfig {
            u: cfg.u,
            tilt: TiltSpec::new(SiteMap::new(), cfg.v.clone()),
            window,
            kill_box: d.clone(),
            horizon: 1e12,
            seed: rng::derive(cfg.seed, &[rng::tag("iso-soup")]),
            chain: cfg.chain.clone(),
            max_rejections: 100_000,
            sigma_nodes: 16,
            escape_samples: cfg.escape_samples,
            record_jumps: false,
        };
        let draw: Box<dyn Fn(u64) -> Result<SoupSample> + Sync> = if cfg.potential.is_quadratic() {
            let sampler = GaussianSoupSampler::new(&soup_cfg)?;
            Box::new(move |r| sampler.sample(r))
        } else {
            let sampler = GeneralSoupSampler::new(&soup_cfg, &cfg.potential)?;
            Box::new(move |r| sampler.sample(r))
        };
        let e: Vec<f64> = (0..cfg.soups as u64)
            .into_par_iter()
            .map(|r| draw(r).map(|smp| occupation_field(&smp, d).pair(&cfg.v).exp()))
            .collect::<Result<_>>()?;
        Some(iid(&e))
    } else {
        None
    };
    let z_occupation_field = occupation_route.map(|a| a.z_against(&field_route));
    let z_field_variance = field_route.z_against(&variance_route);
    let rel_field_variance = (field_route.value - variance_route.value).abs() / field_route.value;
    let mut all = vec![field_route, variance_route];
    all.extend(occupation_route);
    let inconclusive = all.iter().any(|e| !(e.std_error <= 0.2 * e.value.abs()));
    let mut ok = z_field_variance <= 3.0 && z_occupation_field.is_none_or(|z| z <= 3.0);
    if let Some(cf) = closed_form {
        let exact = Estimate::exact(cf);
        ok &= field_route.agrees(&exact, 3.0) && occupation_route.is_none_or(|a| a.agrees(&exact, 3.0));
    }
    Ok(IsomorphismReport {
        u: cfg.u,
        occupation_route,
        field_route,
        variance_route,
        closed_form,
        z_occupation_field,
        z_field_variance,
        rel_field_variance,
        inconclusive,
        verdict: if inconclusive { Verdict::Inconclusive } else { Verdict::from_bool(ok) },
    })
}

fn default_nodes() -> usize {
    63
}

/// Inputs of [`occupation_limit_check`]: Gaussian soups at level `u/N` in
/// the box `[−B, B)³` at resolution `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationLimitConfig {
    pub u: f64,
    pub v: TestFunction,
    pub half_side: f64,
    pub ladder: Vec<usize>,
    pub soups: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sine modes per axis of the continuum cube solver.
    #[serde(default = "default_nodes")]
    pub spectral_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupationRung {
    pub n: usize,
    pub u_n: f64,
    /// Monte Carlo `E e^{⟨L, V_N⟩}`.
    pub mgf: Estimate,
    /// Exact lattice value `exp{u_N⟨V_N,1⟩ + u_N⟨V_N, g^{V_N} V_N⟩}`.
    pub lattice: f64,
    pub z_lattice: f64,
    /// `|lattice − continuum|`.
    pub gap: f64,
    /// `E⟨L, V_N⟩` against `u_N⟨V_N, 1⟩`.
    pub mean: Estimate,
    pub mean_expected: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupationLimitReport {
    pub rungs: Vec<OccupationRung>,
    /// `exp{u⟨V,1⟩ + u⟨V, (−∇² − V)⁻¹ V⟩}` on the cube.
    pub continuum: f64,
    pub gap_decreasing: bool,
    pub mc_consistent: bool,
    pub verdict: Verdict,
}

/// Occupation fields of soups at level `u_N = u/N` against the continuum
/// generating function, along an `N`-ladder.
pub fn occupation_limit_check(cfg: &OccupationLimitConfig) -> Result<OccupationLimitReport> {
    let (cont_ones, cont_q) =
        CubeDirichlet::new(cfg.half_side, 1.0, cfg.spectral_nodes).potential_forms(&|z| cfg.v.eval(z))?;
    let continuum = (cfg.u * (cont_ones + cont_q)).exp();
    let mut rungs = vec![];
    for &n in &cfg.ladder {
        let side = (2.0 * cfg.half_side * n as f64).round() as usize;
        let domain = Domain::centered_cube(3, side, Boundary::Dirichlet)?;
        let vn = with_macro(&cfg.v, |m| discretize_potential(m.f, m.radius, n, 3, &UnitRule::new(4, 1))).values;
        let window = vn.support();
        if window.iter().any(|s| !domain.contains(s)) {
            return Err(Error::Domain(format!("supp V_N exceeds the box at N = {n}")));
        }
        if 4 * linf_diameter(&window) as usize > side {
            return Err(Error::Config(format!("box too small for the soup window at N = {n}")));
        }
        let u_n = cfg.u / n as f64;
        let ones: f64 = vn.iter().map(|(_, x)| x).sum();
        let g = green_solve(&vn, &domain, Convention::Occupation)?;
        let lattice = (u_n * (ones + g.quadratic(&vn)?)).exp();
        let sampler = GaussianSoupSampler::new(&SoupConfig {
            u: u_n,
            tilt: TiltSpec::new(SiteMap::new(), vn.clone()),
            window,
            kill_box: domain.clone(),
            horizon: 1e12,
            seed: rng::derive(cfg.seed, &[rng::tag("occupation-limit"), n as u64]),
            chain: ChainConfig::default(),
            max_rejections: 100_000,
            sigma_nodes: 16,
            escape_samples: 0,
            record_jumps: false,
        })?;
        let pairs: Vec<f64> = (0..cfg.soups as u64)
            .into_par_iter()
            .map(|r| sampler.sample(r).map(|s| occupation_field(&s, &domain).pair(&vn)))
            .collect::<Result<_>>()?;
        let e: Vec<f64> = pairs.iter().map(|x| x.exp()).collect();
        let mgf = iid(&e);
        rungs.push(OccupationRung {
            n,
            u_n,
            mgf,
            lattice,
            z_lattice: mgf.z_against(&Estimate::exact(lattice)),
            gap: (lattice - continuum).abs(),
            mean: iid(&pairs),
            mean_expected: u_n * ones,
        });
    }
    let gap_decreasing = rungs.windows(2).all(|w| w[1].gap < w[0].gap);
    let mc_consistent = rungs.iter().all(|r| r.z_lattice <= 3.0);
    Ok(OccupationLimitReport {
        rungs,
        continuum,
        gap_decreasing,
        mc_consistent,
        verdict: Verdict::from_bool(gap_decreasing && mc_consistent),
    })
}
