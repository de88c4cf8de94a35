//! Capacities and equilibrium measures of the simple random walk.

use serde::{Deserialize, Serialize};

use super::{Operator, CG_TOL};
use crate::error::{Error, Result};
use crate::field::SiteMap;
use crate::lattice::{linf_diameter, Domain, Site, EXTERIOR};

/// `cap(K)` together with `e_K = −Δh_K` and the hitting function `h_K`.
///
/// Normalization: unnormalized Laplacian, so `cap({0}) = 1/g(0,0)` with `g`
/// in the occupation convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Capacity {
    pub capacity: f64,
    pub equilibrium: SiteMap,
    #[serde(skip)]
    pub hitting: Vec<f64>,
}

/// Solve for `h_K = P[hit K]` with zero boundary values outside the box.
pub fn srw_capacity(k: &[Site], domain: &Domain) -> Result<Capacity> {
    if k.is_empty() {
        return Ok(Capacity { capacity: 0.0, equilibrium: SiteMap::new(), hitting: vec![0.0; domain.len()] });
    }
    let diam = linf_diameter(k) as usize;
    if domain.side.iter().any(|&s| s < 4 * diam) {
        return Err(Error::Domain(format!("box side must be at least 4·diam(K) = {}", 4 * diam)));
    }
    let mut pinned = vec![false; domain.len()];
    let mut in_k = vec![];
    for s in k {
        let i = domain
            .index(s)
            .filter(|_| domain.contains(s))
            .ok_or_else(|| Error::Domain(format!("site {s:?} outside domain")))?;
        pinned[i] = true;
        in_k.push(i);
    }
    let nt = domain.neighbor_table();
    let mut b = vec![0.0; domain.len()];
    for i in 0..domain.len() {
        if !pinned[i] {
            b[i] = nt.of(i).iter().filter(|&&j| j != EXTERIOR && pinned[j as usize]).count() as f64;
        }
    }
    let op = Operator::laplacian(domain).with_pinned(pinned.clone());
    let (mut h, _, _) = op.solve(&b, CG_TOL)?;
    for &i in &in_k {
        h[i] = 1.0;
    }
    let deg = domain.degree() as f64;
    let mut equilibrium = SiteMap::new();
    let mut capacity = 0.0;
    in_k.sort_unstable();
    in_k.dedup();
    for &i in &in_k {
        let e = deg - nt.of(i).iter().filter(|&&j| j != EXTERIOR).map(|&j| h[j as usize]).sum::<f64>();
        if e > 1e-14 {
            equilibrium.insert(domain.site(i), e);
            capacity += e;
        }
    }
    Ok(Capacity { capacity, equilibrium, hitting: h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{green_solve, Convention};
    use crate::lattice::Boundary;

    #[test]
    fn point_capacity_is_inverse_green() {
        let d = Domain::centered_cube(3, 21, Boundary::Dirichlet).unwrap();
        let c = srw_capacity(&[vec![0, 0, 0]], &d).unwrap();
        let g = green_solve(&SiteMap::new(), &d, Convention::Visits).unwrap();
        let ratio = c.capacity * g.value(&[0, 0, 0], &[0, 0, 0]).unwrap() / 6.0;
        assert!((ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn equilibrium_on_inner_boundary_and_potential_is_one() {
        let d = Domain::centered_cube(3, 21, Boundary::Dirichlet).unwrap();
        let mut k = vec![];
        for x in -1..=1 {
            for y in -1..=1 {
                for z in -1..=1 {
                    k.push(vec![x, y, z]);
                }
            }
        }
        let c = srw_capacity(&k, &d).unwrap();
        assert!(c.equilibrium.get(&[0, 0, 0]) == 0.0);
        assert!(c.equilibrium.iter().all(|(_, &e)| e > 0.0));
        let g = green_solve(&SiteMap::new(), &d, Convention::Occupation).unwrap();
        let pot = g.bilinear(&SiteMap::single(vec![1, 0, -1], 1.0), &c.equilibrium).unwrap();
        assert!((pot - 1.0).abs() < 1e-8);
    }
}
