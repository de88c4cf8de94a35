//! Rescaled field functionals: the linear pairing `⟨Φ_N, W⟩`, the Wick
//! square `⟨:Φ_N²:, V⟩` (optionally mollified), their generating functional,
//! Brascamp–Lieb-type bounds, and Gaussian oracles on Dirichlet boxes.

use serde::{Deserialize, Serialize};

use super::{with_macro, TestFunction};
use crate::error::{Error, Result};
use crate::field::{FieldState, GaussianSpectralSampler, SiteMap};
use crate::green::{cell_integrals, green_solve, Convention, MollifierSpec, UnitRule};
use crate::lattice::{cell_of, Boundary, Domain, Site};
use crate::stats::{batch_means, batches, jackknife, log_mean_exp, mean, Estimate, BATCHES};

/// `φ_N(z) = d^{−1/2} N^{d/2−1} φ_{⌊Nz⌋}` (zero outside a Dirichlet box).
pub fn rescale_field(phi: &FieldState, domain: &Domain, n: usize, z: &[f64]) -> f64 {
    let d = domain.dimension as f64;
    let c = d.powf(-0.5) * (n as f64).powf(d / 2.0 - 1.0);
    domain.index(&cell_of(z, n)).map_or(0.0, |i| c * phi.values[i])
}

/// Translation-invariant separable smoothing `ψ_x = Σ_o k(o₁)k(o₂)k(o₃) φ_{x+o}`
/// with `k` the per-axis cell averages of the mollifier at level `N`.
#[derive(Debug, Clone)]
struct Smoother {
    lo: i64,
    k: Vec<f64>,
}

impl Smoother {
    fn new(m: &MollifierSpec, n: usize) -> Result<Self> {
        m.check(n)?;
        let (lo, w) = m.axis_weights(n, 0.5 / n as f64);
        Ok(Smoother { lo, k: w.iter().map(|x| x / n as f64).collect() })
    }

    /// `ψ` at `sites` from the field values of `domain`.
    fn apply(&self, domain: &Domain, phi: &[f64], sites: &[Site]) -> Vec<f64> {
        let d = domain.dimension;
        let ext = self.k.len() as i64;
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for s in sites {
            for a in 0..d {
                lo[a] = lo[a].min(s[a] + self.lo);
                hi[a] = hi[a].max(s[a] + self.lo + ext - 1);
            }
        }
        let side: Vec<usize> = (0..d).map(|a| (hi[a] - lo[a] + 1) as usize).collect();
        let total: usize = side.iter().product();
        let mut buf = vec![0.0; total];
        let mut site = vec![0i64; d];
        for (i, b) in buf.iter_mut().enumerate() {
            let mut r = i;
            for a in 0..d {
                site[a] = lo[a] + (r % side[a]) as i64;
                r /= side[a];
            }
            *b = domain.index(&site).map_or(0.0, |j| phi[j]);
        }
        // correlate along each axis in turn; entries near the window edge are
        // only consumed by other edge entries
        let mut stride = 1usize;
        let mut out = vec![0.0; total];
        for a in 0..d {
            let n = side[a];
            for (i, o) in out.iter_mut().enumerate() {
                let pos = (i / stride) % n;
                let mut acc = 0.0;
                for (t, kt) in self.k.iter().enumerate() {
                    let p = pos as i64 + t as i64;
                    if p < n as i64 {
                        acc += kt * buf[i + (p as usize - pos) * stride];
                    }
                }
                *o = acc;
            }
            std::mem::swap(&mut buf, &mut out);
            stride *= n;
        }
        sites
            .iter()
            .map(|s| {
                let mut idx = 0usize;
                for a in (0..d).rev() {
                    idx = idx * side[a] + (s[a] + self.lo - lo[a]) as usize;
                }
                buf[idx]
            })
            .collect()
    }
}

/// Cell weights of the rescaled functionals at level `N` on a domain:
/// `⟨Φ_N, W⟩ = Σ b_x φ_x` with `b_x = d^{−1/2}N^{d/2−1}∫_{cell x} W`, and
/// `∫ V Φ_N² = Σ a_x φ_x²` with `a_x = d⁻¹N^{d−2}∫_{cell x} V`.
#[derive(Debug, Clone)]
pub struct FieldFunctionals {
    pub n: usize,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, f64)>,
    quad_sites: Vec<Site>,
    smoother: Option<Smoother>,
}

impl FieldFunctionals {
    pub fn new(
        domain: &Domain,
        n: usize,
        v: Option<&TestFunction>,
        w: Option<&TestFunction>,
        smoothing: Option<&MollifierSpec>,
    ) -> Result<Self> {
        let dim = domain.dimension;
        let d = dim as f64;
        let nf = n as f64;
        let rule = UnitRule::new(4, 1);
        let cells = |f: &TestFunction| with_macro(f, |m| cell_integrals(m, n, dim, &rule));
        let resolve = |m: SiteMap, c: f64| -> Result<Vec<(Site, usize, f64)>> {
            m.iter()
                .map(|(s, &x)| {
                    let i = if domain.contains(s) { domain.index(s) } else { None };
                    i.map(|i| (s.clone(), i, c * x))
                        .ok_or_else(|| Error::Domain(format!("test-function cell {s:?} outside the domain")))
                })
                .collect()
        };
        let linear = match w {
            Some(w) if w.amplitude != 0.0 => resolve(cells(w), d.powf(-0.5) * nf.powf(d / 2.0 - 1.0))?,
            _ => vec![],
        };
        let quadratic = match v {
            Some(v) if v.amplitude != 0.0 => resolve(cells(v), nf.powf(d - 2.0) / d)?,
            _ => vec![],
        };
        let smoother = match smoothing {
            Some(m) if m.epsilon > 0.0 => Some(Smoother::new(m, n)?),
            Some(m) => {
                m.check(n)?;
                None
            }
            None => None,
        };
        Ok(FieldFunctionals {
            n,
            linear: linear.iter().map(|(_, i, x)| (*i, *x)).collect(),
            quad_sites: quadratic.iter().map(|(s, _, _)| s.clone()).collect(),
            quadratic: quadratic.iter().map(|(_, i, x)| (*i, *x)).collect(),
            smoother,
        })
    }

    pub fn linear_value(&self, phi: &[f64]) -> f64 {
        self.linear.iter().map(|(i, b)| b * phi[*i]).sum()
    }

    /// `φ_x²` (or the mollified `ψ_x²`) on the support of `V`.
    pub fn squares(&self, domain: &Domain, phi: &[f64]) -> Vec<f64> {
        match &self.smoother {
            None => self.quadratic.iter().map(|(i, _)| phi[*i] * phi[*i]).collect(),
            Some(s) => s.apply(domain, phi, &self.quad_sites).iter().map(|x| x * x).collect(),
        }
    }

    /// Per-sample `⟨:Φ_N²:, V⟩`, centred by the sample means of the squares.
    pub fn wick_values(&self, domain: &Domain, samples: &[FieldState]) -> Vec<f64> {
        let sq: Vec<Vec<f64>> = samples.iter().map(|s| self.squares(domain, &s.values)).collect();
        let m = self.quadratic.len();
        let ns = samples.len().max(1) as f64;
        let means: Vec<f64> = (0..m).map(|k| sq.iter().map(|v| v[k]).sum::<f64>() / ns).collect();
        sq.iter().map(|v| (0..m).map(|k| self.quadratic[k].1 * (v[k] - means[k])).sum()).collect()
    }
}

/// Statistics of the Wick functional over a sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WickReport {
    pub n: usize,
    pub mean: Estimate,
    pub variance: Estimate,
    /// `(λ, E e^{λ⟨:Φ_N²:, V⟩})` with effective sample size in `n_eff`.
    pub mgf: Vec<(f64, Estimate)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Variance of a correlated series with a batch-means error.
fn variance_estimate(x: &[f64]) -> Estimate {
    let m = mean(x);
    let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
    let n = x.len() as f64;
    batch_means(&sq, BATCHES).scale(n / (n - 1.0).max(1.0))
}

/// `E e^{X}` with a batch error and the importance-weight effective sample size.
fn mgf_estimate(x: &[f64]) -> Estimate {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let est = batch_means(&e, BATCHES);
    let s1: f64 = e.iter().sum();
    let s2: f64 = e.iter().map(|v| v * v).sum();
    Estimate { n_eff: s1 * s1 / s2, ..est }
}

/// `⟨:Φ_N²:, V⟩` statistics over field samples (`d = 3`); `smoothing` gives
/// the mollified variant.
pub fn wick_functional(
    samples: &[FieldState],
    domain: &Domain,
    v: &TestFunction,
    n: usize,
    smoothing: Option<&MollifierSpec>,
    lambdas: &[f64],
) -> Result<WickReport> {
    if domain.dimension != 3 {
        return Err(Error::Unsupported("the Wick square is formed in d = 3".into()));
    }
    let ff = FieldFunctionals::new(domain, n, Some(v), None, smoothing)?;
    let values = ff.wick_values(domain, samples);
    let mut warnings = vec![];
    let mgf = lambdas
        .iter()
        .map(|&l| {
            let x: Vec<f64> = values.iter().map(|v| l * v).collect();
            let e = mgf_estimate(&x);
            if e.n_eff < 0.1 * values.len() as f64 {
                warnings.push(format!(
                    "λ = {l}: MGF carried by {:.0} effective samples; λ may exceed the tightness threshold",
                    e.n_eff
                ));
            }
            (l, e)
        })
        .collect();
    Ok(WickReport {
        n,
        mean: batch_means(&values, BATCHES),
        variance: variance_estimate(&values),
        mgf,
        warnings,
        values,
    })
}

/// `2 Σ_{x,y} a_x a_y g(x,y)²`: the Gaussian variance of the (unsmoothed)
/// Wick functional on a Dirichlet box, by exact spectral columns.
pub fn wick_variance_box(domain: &Domain, v: &TestFunction, n: usize) -> Result<f64> {
    let ff = FieldFunctionals::new(domain, n, Some(v), None, None)?;
    let sampler = GaussianSpectralSampler::new(domain)?;
    let mut s = 0.0;
    let mut e = vec![0.0; domain.len()];
    for &(j, aj) in &ff.quadratic {
        e[j] = 1.0;
        let col = sampler.solve(&e);
        e[j] = 0.0;
        s += aj * ff.quadratic.iter().map(|&(i, ai)| ai * col[i] * col[i]).sum::<f64>();
    }
    Ok(2.0 * s)
}

/// Brascamp–Lieb-type bound `4c₁⁻² Σ a_x a_y g(x,y)²` on the variance of the
/// Wick functional for a potential with `U″ ≥ c₁`.
pub fn bl_wick_bound(domain: &Domain, v: &TestFunction, n: usize, c1: f64) -> Result<f64> {
    Ok(2.0 / (c1 * c1) * wick_variance_box(domain, v, n)?)
}

/// Brascamp–Lieb bound `⟨w, (c₁(−Δ) − V₊)⁻¹ w⟩` on `var⟨w, φ⟩` under a
/// measure tilted by `½⟨V, φ²⟩`.
pub fn bl_linear_bound(domain: &Domain, w: &SiteMap, c1: f64, v: &SiteMap) -> Result<f64> {
    if domain.boundary != Boundary::Dirichlet {
        return Err(Error::Unsupported("linear bounds are evaluated on Dirichlet boxes".into()));
    }
    let g = green_solve(&v.positive().scaled(1.0 / c1), domain, Convention::Occupation)?;
    Ok(g.quadratic(w)? / c1)
}

/// Log-MGF of `½⟨:Φ_N²:, V⟩ + ⟨Φ_N, W⟩`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaReport {
    pub n: usize,
    pub log_mgf: Estimate,
    /// Share of `Σ e^{X}` carried by the top 1% of samples.
    pub top_share: f64,
    pub heavy_tail: bool,
}

/// `log (1/n) Σ exp{½⟨:Φ_N²:, V⟩ + ⟨Φ_N, W⟩}` with a jackknife error over
/// contiguous batches.
pub fn theta_functional(
    samples: &[FieldState],
    domain: &Domain,
    v: Option<&TestFunction>,
    w: Option<&TestFunction>,
    n: usize,
) -> Result<ThetaReport> {
    let ff = FieldFunctionals::new(domain, n, v, w, None)?;
    let wick = if ff.quadratic.is_empty() { vec![0.0; samples.len()] } else { ff.wick_values(domain, samples) };
    let x: Vec<f64> = samples.iter().zip(&wick).map(|(s, q)| 0.5 * q + ff.linear_value(&s.values)).collect();
    if x.iter().all(|&v| v == 0.0) {
        return Ok(ThetaReport { n, log_mgf: Estimate::exact(0.0), top_share: 0.0, heavy_tail: false });
    }
    let log_mgf = jackknife(&batches(&x, BATCHES), log_mean_exp);
    let top = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = x.iter().map(|v| (v - top).exp()).collect();
    w.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = (w.len() / 100).max(1);
    let top_share = w[..k].iter().sum::<f64>() / w.iter().sum::<f64>();
    Ok(ThetaReport { n, log_mgf, top_share, heavy_tail: top_share > 0.5 })
}

/// Smallest `(c, c′)` with `θ ≤ cλ² + c′τ²` over the given `(λ, τ, θ)`
/// points: `c` from the `τ = 0` points, `c′` from the `λ = 0` points, both
/// scaled up until mixed points are covered.
pub fn fit_envelope(points: &[(f64, f64, f64)]) -> (f64, f64) {
    let mut c = 0.0f64;
    let mut cp = 0.0f64;
    for &(l, t, th) in points {
        if t == 0.0 && l != 0.0 {
            c = c.max(th / (l * l));
        }
        if l == 0.0 && t != 0.0 {
            cp = cp.max(th / (t * t));
        }
    }
    let mut scale = 1.0f64;
    for &(l, t, th) in points {
        let env = c * l * l + cp * t * t;
        if env > 0.0 {
            scale = scale.max(th / env);
        }
    }
    (scale * c, scale * cp)
}

/// Empirical `‖⟨:Φ_N²:, V⟩ − ⟨:(Φ_N^ε)²:, V⟩‖_{L²}` with a delta-method error.
pub fn l2_comparison(
    samples: &[FieldState],
    domain: &Domain,
    v: &TestFunction,
    eps: f64,
    n: usize,
) -> Result<Estimate> {
    let plain = FieldFunctionals::new(domain, n, Some(v), None, None)?;
    let smooth = FieldFunctionals::new(domain, n, Some(v), None, Some(&MollifierSpec::new(eps)))?;
    let a = plain.wick_values(domain, samples);
    let b = smooth.wick_values(domain, samples);
    let d2: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).collect();
    let m = batch_means(&d2, BATCHES);
    let r = m.value.sqrt();
    Ok(Estimate { value: r, std_error: if r > 0.0 { m.std_error / (2.0 * r) } else { 0.0 }, n_eff: m.n_eff })
}

/// Gaussian value of [`l2_comparison`] on a Dirichlet box:
/// `(2 Σ a_x a_y [C² − 2(CSᵀ)² + (SCSᵀ)²]_{xy})^{1/2}` with `C = (−Δ)⁻¹` and
/// `S` the smoothing.
pub fn l2_comparison_gaussian(domain: &Domain, v: &TestFunction, eps: f64, n: usize) -> Result<f64> {
    let ff = FieldFunctionals::new(domain, n, Some(v), None, Some(&MollifierSpec::new(eps)))?;
    let sampler = GaussianSpectralSampler::new(domain)?;
    let sites = &ff.quad_sites;
    let q = &ff.quadratic;
    let smooth = |x: &[f64]| match &ff.smoother {
        Some(s) => s.apply(domain, x, sites),
        None => q.iter().map(|(i, _)| x[*i]).collect(),
    };
    let mut total = 0.0;
    let mut e = vec![0.0; domain.len()];
    for (k, &(j, aj)) in q.iter().enumerate() {
        e[j] = 1.0;
        let col = sampler.solve(&e);
        e[j] = 0.0;
        let sc = smooth(&col);
        // row of S at site j as a box vector
        let row = match &ff.smoother {
            Some(s) => {
                let mut r = vec![0.0; domain.len()];
                let d = domain.dimension;
                let len = s.k.len();
                for m in 0..len.pow(d as u32) {
                    let mut rem = m;
                    let mut site = sites[k].clone();
                    let mut w = 1.0;
                    for a in 0..d {
                        let t = rem % len;
                        rem /= len;
                        site[a] += s.lo + t as i64;
                        w *= s.k[t];
                    }
                    if let Some(i) = domain.index(&site) {
                        r[i] += w;
                    }
                }
                r
            }
            None => e.iter().enumerate().map(|(i, _)| if i == j { 1.0 } else { 0.0 }).collect(),
        };
        let ssc = smooth(&sampler.solve(&row));
        for (m, &(i, ai)) in q.iter().enumerate() {
            total += aj * ai * (col[i].powi(2) - 2.0 * sc[m].powi(2) + ssc[m].powi(2));
        }
    }
    Ok((2.0 * total).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::super::Shape;
    use super::*;
    use crate::rng;

    fn box_domain(side: usize) -> Domain {
        Domain::centered_cube(3, side, Boundary::Dirichlet).unwrap()
    }

    #[test]
    fn rescale_field_examples() {
        let d = box_domain(9);
        let mut phi = FieldState::zeros(&d);
        assert_eq!(rescale_field(&phi, &d, 4, &[0.1, 0.2, 0.3]), 0.0);
        phi.values[d.index(&[0, 0, 1]).unwrap()] = 1.0;
        let v = rescale_field(&phi, &d, 4, &[0.1, 0.2, 0.3]);
        assert!((v - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let mut twice = phi.clone();
        twice.values.iter_mut().for_each(|x| *x *= 2.0);
        assert_eq!(rescale_field(&twice, &d, 4, &[0.1, 0.2, 0.3]), 2.0 * v);
    }

    #[test]
    fn smoother_matches_direct_weights() {
        let d = box_domain(21);
        let m = MollifierSpec::new(0.25);
        let n = 8;
        let s = Smoother::new(&m, n).unwrap();
        let mut r = rng::stream(3, &[0]);
        let phi = GaussianSpectralSampler::new(&d).unwrap().sample(&mut r);
        let sites: Vec<Site> = vec![vec![0, 0, 0], vec![1, -2, 3], vec![-3, 0, 2]];
        let got = s.apply(&d, &phi.values, &sites);
        for (x, g) in sites.iter().zip(&got) {
            let z: Vec<f64> = x.iter().map(|&c| (c as f64 + 0.5) / n as f64).collect();
            let w = crate::green::mollifier_weights(&m, n, &z).unwrap();
            let direct: f64 = w.iter().map(|(y, wy)| wy / 512.0 * d.index(y).map_or(0.0, |i| phi.values[i])).sum();
            assert!((g - direct).abs() < 1e-10, "{g} vs {direct}");
        }
    }

    #[test]
    fn gaussian_wick_variance_and_theta_oracles() {
        let n = 4;
        let d = box_domain(16);
        let v = TestFunction::new(Shape::Bump, 0.5, 1.0);
        let sampler = GaussianSpectralSampler::new(&d).unwrap();
        let samples: Vec<FieldState> = (0..4000).map(|k| sampler.sample(&mut rng::stream(11, &[k]))).collect();
        let rep = wick_functional(&samples, &d, &v, n, None, &[0.1]).unwrap();
        assert!(rep.mean.value.abs() < 1e-9);
        let oracle = wick_variance_box(&d, &v, n).unwrap();
        assert!(rep.variance.agrees(&Estimate::exact(oracle), 3.0), "{:?} vs {oracle}", rep.variance);
        // V ≡ 0 gives identically zero
        let zero = wick_functional(&samples, &d, &v.scaled(0.0), n, None, &[]).unwrap();
        assert!(zero.values.iter().all(|&x| x == 0.0));
        // θ with V = 0 is ½⟨W_N, g W_N⟩
        let w = TestFunction::new(Shape::Bump, 0.5, 1.0);
        let th = theta_functional(&samples, &d, None, Some(&w), n).unwrap();
        let ff = FieldFunctionals::new(&d, n, None, Some(&w), None).unwrap();
        let mut wm = SiteMap::new();
        for &(i, b) in &ff.linear {
            wm.insert(d.site(i), b);
        }
        let half = 0.5 * green_solve(&SiteMap::new(), &d, Convention::Occupation).unwrap().quadratic(&wm).unwrap();
        assert!(th.log_mgf.agrees(&Estimate::exact(half), 3.0), "{:?} vs {half}", th.log_mgf);
        assert!(!th.heavy_tail);
        let none = theta_functional(&samples, &d, None, None, n).unwrap();
        assert_eq!(none.log_mgf.value, 0.0);
        // the BL bound with c₁ = 1 dominates
        assert!(bl_wick_bound(&d, &v, n, 1.0).unwrap() >= oracle);
    }

    #[test]
    fn l2_comparison_gaussian_oracle_and_trend() {
        let n = 8;
        let d = box_domain(20);
        let v = TestFunction::new(Shape::Bump, 0.5, 1.0);
        let sampler = GaussianSpectralSampler::new(&d).unwrap();
        let samples: Vec<FieldState> = (0..3000).map(|k| sampler.sample(&mut rng::stream(12, &[k]))).collect();
        let e = l2_comparison(&samples, &d, &v, 0.25, n).unwrap();
        let exact = l2_comparison_gaussian(&d, &v, 0.25, n).unwrap();
        assert!(e.agrees(&Estimate::exact(exact), 3.0), "{e:?} vs {exact}");
        // ε = 0 collapses the difference
        assert_eq!(l2_comparison_gaussian(&d, &v, 0.0, n).unwrap(), 0.0);
        let coarse = l2_comparison_gaussian(&d, &v, 0.5, n).unwrap();
        assert!(coarse > exact);
    }

    #[test]
    fn envelope_covers_points() {
        let pts = [(0.1, 0.0, 0.02), (0.0, 0.2, 0.01), (0.1, 0.2, 0.05)];
        let (c, cp) = fit_envelope(&pts);
        for (l, t, th) in pts {
            assert!(th <= c * l * l + cp * t * t + 1e-15);
        }
    }
}
