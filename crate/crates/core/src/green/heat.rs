//! Tilted heat kernels `q_t^V(x, y) = E_x[e^{∫₀ᵗ V(X_s) ds} 1{X_t = y}]` of the
//! rate-1-per-edge walk, by Krylov exponentiation or Monte Carlo, and the
//! one-dimensional Bessel series used as their oracle.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::Operator;
use crate::error::{Error, Result};
use crate::field::SiteMap;
use crate::lattice::{Domain, EXTERIOR};
use crate::rng;
use crate::stats::{iid, Estimate};

const KRYLOV_DIM: usize = 30;
/// Largest `τ·‖A‖` per Krylov sub-step.
const KRYLOV_SPAN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum HeatMethod {
    KrylovExpm,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `e^{−t A} b` for the symmetric operator `A = −Δ − V + ε` by restarted
/// Lanczos with `‖A‖`-bounded sub-steps.
pub fn expm_action(op: &Operator, norm_bound: f64, b: &[f64], t: f64) -> Vec<f64> {
    let steps = ((t * norm_bound) / KRYLOV_SPAN).ceil().max(1.0) as usize;
    let tau = t / steps as f64;
    let mut v = b.to_vec();
    for _ in 0..steps {
        v = lanczos_expm(op, &v, tau);
    }
    v
}

fn lanczos_expm(op: &Operator, b: &[f64], tau: f64) -> Vec<f64> {
    let n = b.len();
    let beta0 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if beta0 == 0.0 {
        return vec![0.0; n];
    }
    let mut basis: Vec<Vec<f64>> = vec![b.iter().map(|x| x / beta0).collect()];
    let mut alpha = vec![];
    let mut beta = vec![];
    let mut w = vec![0.0; n];
    for j in 0..KRYLOV_DIM.min(n) {
        op.apply(&basis[j], &mut w);
        let a: f64 = w.iter().zip(&basis[j]).map(|(p, q)| p * q).sum();
        alpha.push(a);
        // full reorthogonalization (twice is enough)
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = w.iter().zip(q).map(|(p, r)| p * r).sum();
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let bn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bn < 1e-13 * beta0.max(1.0) || j + 1 == KRYLOV_DIM.min(n) {
            break;
        }
        beta.push(bn);
        basis.push(w.iter().map(|x| x / bn).collect());
    }
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    // coefficients c = Q e^{−τΛ} Qᵀ e₁
    let coef: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .map(|k| eig.eigenvectors[(i, k)] * (-tau * eig.eigenvalues[k]).exp() * eig.eigenvectors[(0, k)])
                .sum::<f64>()
        })
        .collect();
    let mut out = vec![0.0; n];
    for (q, c) in basis.iter().zip(&coef) {
        for (o, qi) in out.iter_mut().zip(q) {
            *o += beta0 * c * qi;
        }
    }
    out
}

/// The whole column `q_t^V(·, y)` on the domain (killed at a Dirichlet
/// boundary).
pub fn heat_column(v: &SiteMap, domain: &Domain, y: &[i64], t: f64) -> Result<Vec<f64>> {
    let j = domain
        .index(y)
        .filter(|_| domain.contains(y))
        .ok_or_else(|| Error::Domain(format!("site {y:?} outside domain")))?;
    let vd = v.to_dense(domain)?;
    let op = Operator::new(domain, &vd, 0.0);
    let mut b = vec![0.0; domain.len()];
    b[j] = 1.0;
    if t == 0.0 {
        return Ok(b);
    }
    let bound = 4.0 * domain.dimension as f64 + vd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(expm_action(&op, bound, &b, t))
}

/// `q_t^V(x, y)` by the requested method.
pub fn heat_kernel_tilted(
    v: &SiteMap,
    domain: &Domain,
    x: &[i64],
    y: &[i64],
    t: f64,
    method: HeatMethod,
) -> Result<Estimate> {
    if t < 0.0 {
        return Err(Error::Config("heat kernel needs t >= 0".into()));
    }
    let (i, j) = match (domain.index(x), domain.index(y)) {
        (Some(i), Some(j)) if domain.contains(x) && domain.contains(y) => (i, j),
        _ => return Err(Error::Domain("heat kernel endpoints outside domain".into())),
    };
    match method {
        HeatMethod::KrylovExpm => Ok(Estimate::exact(heat_column(v, domain, y, t)?[i])),
        HeatMethod::MonteCarlo { samples, seed } => {
            let vd = v.to_dense(domain)?;
            let nt = domain.neighbor_table();
            let deg = nt.degree;
            let hold = Exp::new(deg as f64).unwrap();
            let mut r = rng::stream(seed, &[rng::tag("heat-mc")]);
            let w: Vec<f64> = (0..samples)
                .map(|_| {
                    let (mut pos, mut s, mut fk) = (i, 0.0, 0.0);
                    loop {
                        let h: f64 = hold.sample(&mut r);
                        if s + h >= t {
                            fk += vd[pos] * (t - s);
                            return if pos == j { fk.exp() } else { 0.0 };
                        }
                        fk += vd[pos] * h;
                        s += h;
                        let nb = nt.of(pos)[r.random_range(0..deg)];
                        if nb == EXTERIOR {
                            return 0.0;
                        }
                        pos = nb as usize;
                    }
                })
                .collect();
            Ok(iid(&w))
        }
    }
}

/// `e^{−x} I_k(x)` by Miller's backward recurrence, normalized with
/// `e^{−x}(I_0 + 2 Σ_{j≥1} I_j) = 1`.
pub fn scaled_bessel_i(k: u64, x: f64) -> f64 {
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as usize;
    let top = k.max(x as usize) + 40 + (12.0 * (x + k as f64).sqrt()) as usize;
    let (mut hi, mut cur) = (0.0f64, 1e-300f64);
    let (mut sum, mut at_k) = (0.0, 0.0);
    for j in (1..=top).rev() {
        // cur = b_j, hi = b_{j+1}
        if j == k {
            at_k = cur;
        }
        sum += 2.0 * cur;
        let lo = hi + 2.0 * j as f64 / x * cur;
        hi = cur;
        cur = lo;
        if cur > 1e250 {
            hi *= 1e-250;
            cur *= 1e-250;
            sum *= 1e-250;
            at_k *= 1e-250;
        }
    }
    sum += cur;
    if k == 0 {
        at_k = cur;
    }
    at_k / sum
}

/// Transition probability of the 1-d walk jumping at rate 1 to each side:
/// `P_0[X_t = k] = e^{−2t} I_k(2t)`.
pub fn ctrw_kernel_1d(k: i64, t: f64) -> f64 {
    scaled_bessel_i(k.unsigned_abs(), 2.0 * t)
}

/// Free heat kernel on `Z^d` as a product of 1-d kernels.
pub fn free_heat_kernel(x: &[i64], y: &[i64], t: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| ctrw_kernel_1d(a - b, t)).product()
}
