//! Lattice geometry: boxes in `Z^d`, boundary conditions, neighbour tables and
//! the macroscopic ↔ microscopic coordinate maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site in global `Z^d` coordinates.
pub type Site = Vec<i64>;

/// Marker stored in neighbour tables for a Dirichlet exterior neighbour.
pub const EXTERIOR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    /// Zero exterior value; walks are killed on stepping outside.
    Dirichlet,
}

/// A rectangular box of sites `origin + [0, side)` with a boundary condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    pub dimension: usize,
    pub side: Vec<usize>,
    pub boundary: Boundary,
    /// Global coordinates of the first site; defaults to the origin.
    #[serde(default)]
    pub origin: Vec<i64>,
}

/// One neighbour of a site, flagged when it lies outside a Dirichlet box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbor {
    pub site: Site,
    pub exterior: bool,
}

/// Flat neighbour table: entry `2d·i + k` is the index of neighbour `k` of
/// site `i` or [`EXTERIOR`]. Neighbour `2a` is `+e_a`, `2a+1` is `−e_a`.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub degree: usize,
    pub idx: Vec<u32>,
}

impl NeighborTable {
    #[inline]
    pub fn of(&self, i: usize) -> &[u32] {
        &self.idx[i * self.degree..(i + 1) * self.degree]
    }
}

impl Domain {
    pub fn new(dimension: usize, side: Vec<usize>, boundary: Boundary) -> Result<Self> {
        let d = Domain { dimension, side, boundary, origin: vec![0; dimension] };
        d.check()?;
        Ok(d)
    }

    /// Cube of side `side` with first site at the origin.
    pub fn cube(dimension: usize, side: usize, boundary: Boundary) -> Result<Self> {
        Self::new(dimension, vec![side; dimension], boundary)
    }

    /// Cube of side `side` containing the origin at its centre
    /// (coordinates `-(side/2) ..` along every axis).
    pub fn centered_cube(dimension: usize, side: usize, boundary: Boundary) -> Result<Self> {
        let mut d = Self::cube(dimension, side, boundary)?;
        d.origin = vec![-((side / 2) as i64); dimension];
        Ok(d)
    }

    /// Validate the invariants; also normalises an empty `origin`.
    pub fn check(&self) -> Result<()> {
        if self.dimension < 3 {
            return Err(Error::Domain(format!("dimension {} < 3", self.dimension)));
        }
        if self.side.len() != self.dimension {
            return Err(Error::Domain("side must have one entry per axis".into()));
        }
        if !(self.origin.is_empty() || self.origin.len() == self.dimension) {
            return Err(Error::Domain("origin must have one entry per axis".into()));
        }
        if self.side.iter().any(|&s| s == 0) {
            return Err(Error::Domain("sides must be positive".into()));
        }
        if self.boundary == Boundary::Periodic && self.side.iter().any(|&s| s < 3) {
            return Err(Error::Domain("periodic sides must be at least 3".into()));
        }
        let n: usize = self.side.iter().product();
        if n >= EXTERIOR as usize {
            return Err(Error::Domain("domain too large".into()));
        }
        Ok(())
    }

    #[inline]
    fn origin_at(&self, a: usize) -> i64 {
        if self.origin.is_empty() {
            0
        } else {
            self.origin[a]
        }
    }

    pub fn len(&self) -> usize {
        self.side.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn degree(&self) -> usize {
        2 * self.dimension
    }

    /// Whether the box (before periodic wrapping) contains the site.
    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dimension
            && (0..self.dimension).all(|a| {
                let r = site[a] - self.origin_at(a);
                r >= 0 && r < self.side[a] as i64
            })
    }

    /// Flat index of a site; periodic boxes wrap, Dirichlet boxes return
    /// `None` for exterior sites.
    pub fn index(&self, site: &[i64]) -> Option<usize> {
        if site.len() != self.dimension {
            return None;
        }
        let mut idx = 0usize;
        for a in (0..self.dimension).rev() {
            let s = self.side[a] as i64;
            let mut r = site[a] - self.origin_at(a);
            match self.boundary {
                Boundary::Periodic => r = r.rem_euclid(s),
                Boundary::Dirichlet => {
                    if r < 0 || r >= s {
                        return None;
                    }
                }
            }
            idx = idx * self.side[a] + r as usize;
        }
        Some(idx)
    }

    /// Global coordinates of the site with flat index `idx`.
    pub fn site(&self, mut idx: usize) -> Site {
        let mut out = vec![0; self.dimension];
        for (a, o) in out.iter_mut().enumerate() {
            let s = self.side[a];
            *o = (idx % s) as i64 + self.origin_at(a);
            idx /= s;
        }
        out
    }

    /// Site at the geometric centre (rounded down).
    pub fn center(&self) -> Site {
        (0..self.dimension).map(|a| self.origin_at(a) + (self.side[a] / 2) as i64).collect()
    }

    /// Nearest neighbours of an interior site; Dirichlet exterior neighbours
    /// are reported with `exterior = true`.
    pub fn neighbors(&self, site: &[i64]) -> Result<Vec<Neighbor>> {
        if !self.contains(site) {
            return Err(Error::Domain(format!("site {site:?} outside domain")));
        }
        let mut out = Vec::with_capacity(self.degree());
        for a in 0..self.dimension {
            for step in [1i64, -1] {
                let mut y = site.to_vec();
                y[a] += step;
                match self.boundary {
                    Boundary::Periodic => {
                        let o = self.origin_at(a);
                        y[a] = o + (y[a] - o).rem_euclid(self.side[a] as i64);
                        out.push(Neighbor { site: y, exterior: false });
                    }
                    Boundary::Dirichlet => {
                        let exterior = !self.contains(&y);
                        out.push(Neighbor { site: y, exterior });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Precomputed flat neighbour table for hot loops.
    pub fn neighbor_table(&self) -> NeighborTable {
        let n = self.len();
        let deg = self.degree();
        let mut idx = vec![EXTERIOR; n * deg];
        let mut stride = vec![1usize; self.dimension];
        for a in 1..self.dimension {
            stride[a] = stride[a - 1] * self.side[a - 1];
        }
        let mut coord = vec![0usize; self.dimension];
        for i in 0..n {
            for a in 0..self.dimension {
                let s = self.side[a];
                let (up, down) = (coord[a] + 1, coord[a] as i64 - 1);
                let base = i - coord[a] * stride[a];
                let up = if up < s {
                    Some(base + up * stride[a])
                } else if self.boundary == Boundary::Periodic {
                    Some(base)
                } else {
                    None
                };
                let down = if down >= 0 {
                    Some(base + down as usize * stride[a])
                } else if self.boundary == Boundary::Periodic {
                    Some(base + (s - 1) * stride[a])
                } else {
                    None
                };
                idx[i * deg + 2 * a] = up.map_or(EXTERIOR, |j| j as u32);
                idx[i * deg + 2 * a + 1] = down.map_or(EXTERIOR, |j| j as u32);
            }
            for a in 0..self.dimension {
                coord[a] += 1;
                if coord[a] < self.side[a] {
                    break;
                }
                coord[a] = 0;
            }
        }
        NeighborTable { degree: deg, idx }
    }
}

/// ℓ∞ diameter of a finite site set (0 for a singleton, 0 for the empty set).
pub fn linf_diameter(sites: &[Site]) -> i64 {
    if sites.is_empty() {
        return 0;
    }
    let d = sites[0].len();
    (0..d)
        .map(|a| {
            let lo = sites.iter().map(|s| s[a]).min().unwrap();
            let hi = sites.iter().map(|s| s[a]).max().unwrap();
            hi - lo
        })
        .max()
        .unwrap_or(0)
}

/// Coordinate-wise `⌊N z⌋`: the lattice cell housing the macroscopic point.
pub fn cell_of(z: &[f64], n: usize) -> Site {
    z.iter().map(|&c| (c * n as f64).floor() as i64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_origin_has_six_unit_neighbors() {
        let d = Domain::cube(3, 8, Boundary::Periodic).unwrap();
        let nb = d.neighbors(&[0, 0, 0]).unwrap();
        assert_eq!(nb.len(), 6);
        for n in &nb {
            assert!(!n.exterior);
            let l1: i64 = n.site.iter().map(|&c| if c == 7 { 1 } else { c.abs() }).sum();
            assert_eq!(l1, 1);
        }
    }

    #[test]
    fn dirichlet_corner_flags_exterior() {
        let d = Domain::cube(3, 8, Boundary::Dirichlet).unwrap();
        let nb = d.neighbors(&[0, 0, 0]).unwrap();
        assert_eq!(nb.iter().filter(|n| n.exterior).count(), 3);
        assert_eq!(nb.iter().filter(|n| !n.exterior).count(), 3);
    }

    #[test]
    fn periodic_wraparound() {
        let d = Domain::cube(3, 4, Boundary::Periodic).unwrap();
        let nb = d.neighbors(&[3, 0, 0]).unwrap();
        assert_eq!(nb[0].site, vec![0, 0, 0]);
    }

    #[test]
    fn outside_site_is_error() {
        let d = Domain::cube(3, 4, Boundary::Dirichlet).unwrap();
        assert!(d.neighbors(&[4, 0, 0]).is_err());
    }

    #[test]
    fn cell_of_examples() {
        assert_eq!(cell_of(&[0.26, 0.0, 0.0], 4), vec![1, 0, 0]);
        assert_eq!(cell_of(&[-0.01, 0.0, 0.0], 10), vec![-1, 0, 0]);
        assert_eq!(cell_of(&[0.0, 0.0, 0.0], 7), vec![0, 0, 0]);
    }

    #[test]
    fn table_matches_neighbors() {
        for b in [Boundary::Periodic, Boundary::Dirichlet] {
            let d = Domain::centered_cube(3, 5, b).unwrap();
            let t = d.neighbor_table();
            for i in 0..d.len() {
                let s = d.site(i);
                assert_eq!(d.index(&s), Some(i));
                let nb = d.neighbors(&s).unwrap();
                for (k, n) in nb.iter().enumerate() {
                    let j = t.of(i)[k];
                    if n.exterior {
                        assert_eq!(j, EXTERIOR);
                    } else {
                        assert_eq!(d.site(j as usize), n.site);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_domains_rejected() {
        assert!(Domain::cube(2, 8, Boundary::Periodic).is_err());
        assert!(Domain::cube(3, 2, Boundary::Periodic).is_err());
        assert!(Domain::cube(3, 2, Boundary::Dirichlet).is_ok());
    }
}
