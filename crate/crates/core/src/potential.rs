//! Convex even interaction potentials `U` with certified bounds
//! `c1 ≤ U″ ≤ c2`.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear `U″` on a grid `0 = η_0 < η_1 < …`, extended evenly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct Table {
    pub eta: Vec<f64>,
    pub u2: Vec<f64>,
    /// `U′(η_k)`, the exact integral of the interpolant.
    u1: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    eta: Vec<f64>,
    u2: Vec<f64>,
}

impl TryFrom<RawTable> for Table {
    type Error = Error;
    fn try_from(r: RawTable) -> Result<Self> {
        Table::new(r.eta, r.u2)
    }
}

impl From<Table> for RawTable {
    fn from(t: Table) -> Self {
        RawTable { eta: t.eta, u2: t.u2 }
    }
}

impl Table {
    pub fn new(eta: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        if eta.len() < 2 || eta.len() != u2.len() {
            return Err(Error::Config("table needs ≥ 2 matching (eta, U'') rows".into()));
        }
        if eta[0] != 0.0 || eta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("table eta must start at 0 and increase".into()));
        }
        let mut t = Table { eta, u2, u1: vec![] };
        t.integrate();
        Ok(t)
    }

    fn integrate(&mut self) {
        let mut u1 = vec![0.0; self.eta.len()];
        for k in 1..self.eta.len() {
            let h = self.eta[k] - self.eta[k - 1];
            u1[k] = u1[k - 1] + 0.5 * h * (self.u2[k] + self.u2[k - 1]);
        }
        self.u1 = u1;
    }

    /// Rows `(eta, u2)` from CSV, header optional.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let (mut eta, mut u2) = (vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec?;
            let a = rec.get(0).and_then(|s| s.parse::<f64>().ok());
            let b = rec.get(1).and_then(|s| s.parse::<f64>().ok());
            match (a, b) {
                (Some(a), Some(b)) => {
                    eta.push(a);
                    u2.push(b);
                }
                _ if eta.is_empty() => continue, // header
                _ => return Err(Error::Config(format!("bad table row {rec:?}"))),
            }
        }
        Table::new(eta, u2)
    }

    fn max_eta(&self) -> f64 {
        *self.eta.last().unwrap()
    }

    #[inline]
    fn locate(&self, a: f64) -> usize {
        match self.eta.binary_search_by(|e| e.partial_cmp(&a).unwrap()) {
            Ok(k) => k.min(self.eta.len() - 2),
            Err(k) => (k - 1).min(self.eta.len() - 2),
        }
    }

    fn second(&self, eta: f64) -> f64 {
        let a = eta.abs();
        if a >= self.max_eta() {
            return *self.u2.last().unwrap();
        }
        let k = self.locate(a);
        let w = (a - self.eta[k]) / (self.eta[k + 1] - self.eta[k]);
        self.u2[k] + w * (self.u2[k + 1] - self.u2[k])
    }

    /// `U′`, extended linearly beyond the table.
    fn first(&self, eta: f64) -> f64 {
        let a = eta.abs();
        let v = if a >= self.max_eta() {
            self.u1.last().unwrap() + (a - self.max_eta()) * self.u2.last().unwrap()
        } else {
            let k = self.locate(a);
            let h = a - self.eta[k];
            let slope = (self.u2[k + 1] - self.u2[k]) / (self.eta[k + 1] - self.eta[k]);
            self.u1[k] + h * self.u2[k] + 0.5 * slope * h * h
        };
        v.copysign(eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `U(η) = η²/2`.
    Quadratic,
    /// `U(η) = η²/2 + a(1 − cos η)`.
    Cosine {
        amplitude: f64,
    },
    Tabulated(Table),
}

/// An interaction potential together with its declared ellipticity bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub c1: f64,
    pub c2: f64,
}

/// Result of sampling `U″` on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub min: f64,
    pub max: f64,
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
    /// Sampled `η` where the bounds fail (truncated to the first 32).
    pub offending: Vec<f64>,
}

impl Potential {
    pub fn quadratic() -> Self {
        Potential { kind: PotentialKind::Quadratic, c1: 1.0, c2: 1.0 }
    }

    pub fn cosine(amplitude: f64) -> Self {
        Potential { kind: PotentialKind::Cosine { amplitude }, c1: 1.0 - amplitude.abs(), c2: 1.0 + amplitude.abs() }
    }

    /// Tabulated potential; bounds are read off the table.
    pub fn tabulated(table: Table) -> Self {
        let c1 = table.u2.iter().cloned().fold(f64::INFINITY, f64::min);
        let c2 = table.u2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Potential { kind: PotentialKind::Tabulated(table), c1, c2 }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, PotentialKind::Quadratic)
    }

    /// `U′(η)`; tabulated kinds reject `η` beyond the table.
    pub fn u_prime(&self, eta: f64) -> Result<f64> {
        if let PotentialKind::Tabulated(t) = &self.kind {
            if eta.abs() > t.max_eta() {
                return Err(Error::Range(eta));
            }
        }
        Ok(self.du(eta))
    }

    /// `U″(η)`.
    #[inline]
    pub fn u_second(&self, eta: f64) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => 1.0,
            PotentialKind::Cosine { amplitude } => 1.0 + amplitude * eta.cos(),
            PotentialKind::Tabulated(t) => t.second(eta),
        }
    }

    /// Unchecked `U′` for hot loops (tabulated kinds extend linearly).
    #[inline]
    pub fn du(&self, eta: f64) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => eta,
            PotentialKind::Cosine { amplitude } => eta + amplitude * eta.sin(),
            PotentialKind::Tabulated(t) => t.first(eta),
        }
    }

    /// `U(η)`.
    pub fn u(&self, eta: f64) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => 0.5 * eta * eta,
            PotentialKind::Cosine { amplitude } => 0.5 * eta * eta + amplitude * (1.0 - eta.cos()),
            PotentialKind::Tabulated(_) => {
                // Simpson on U′ over [0, |η|]
                let a = eta.abs();
                let n = 64;
                let h = a / n as f64;
                let mut s = self.du(0.0) + self.du(a);
                for k in 1..n {
                    s += if k % 2 == 1 { 4.0 } else { 2.0 } * self.du(k as f64 * h);
                }
                s * h / 3.0
            }
        }
    }

    /// Sample `U″` on `[-range, range]` with the given step and check it
    /// against `0 < c1 ≤ U″ ≤ c2`.
    pub fn validate_ellipticity(&self, grid_step: f64, range: f64) -> Result<EllipticityReport> {
        if !(grid_step > 0.0) || !range.is_finite() {
            return Err(Error::Config("grid_step must be positive".into()));
        }
        let n = (range / grid_step).ceil() as i64;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut offending = vec![];
        let lo = self.c1.max(f64::MIN_POSITIVE);
        for k in -n..=n {
            let eta = (k as f64 * grid_step).clamp(-range, range);
            let v = self.u_second(eta);
            min = min.min(v);
            max = max.max(v);
            if (v < lo || v > self.c2 + 1e-12) && offending.len() < 32 {
                offending.push(eta);
            }
        }
        let pass = self.c1 > 0.0 && self.c1 <= self.c2 && offending.is_empty();
        Ok(EllipticityReport { min, max, c1: self.c1, c2: self.c2, pass, offending })
    }

    /// Like [`validate_ellipticity`](Self::validate_ellipticity) but an error on failure.
    pub fn certify(&self) -> Result<EllipticityReport> {
        let range = match &self.kind {
            PotentialKind::Tabulated(t) => t.max_eta(),
            _ => 2.0 * std::f64::consts::PI,
        };
        let r = self.validate_ellipticity(1e-3, range)?;
        if r.pass {
            Ok(r)
        } else {
            Err(Error::Certification(format!(
                "U'' in [{:.4}, {:.4}] vs declared [{}, {}]; offending eta {:?}",
                r.min, r.max, r.c1, r.c2, r.offending
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn examples() {
        let q = Potential::quadratic();
        assert_eq!(q.u_prime(1.7).unwrap(), 1.7);
        assert_eq!(q.u_second(3.0), 1.0);
        let c = Potential::cosine(0.5);
        assert_eq!(c.u_prime(0.0).unwrap(), 0.0);
        assert!((c.u_prime(PI / 2.0).unwrap() - (PI / 2.0 + 0.5)).abs() < 1e-14);
        assert!((c.u_second(0.0) - 1.5).abs() < 1e-14);
        assert!((c.u_second(PI) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn certification() {
        let r = Potential::quadratic().validate_ellipticity(0.01, 10.0).unwrap();
        assert!(r.pass && r.min == 1.0 && r.max == 1.0);
        let r = Potential::cosine(0.5).validate_ellipticity(0.001, 7.0).unwrap();
        assert!(r.pass);
        assert!((r.min - 0.5).abs() < 1e-5 && (r.max - 1.5).abs() < 1e-12);
        let bad = Potential::cosine(1.2);
        let r = bad.validate_ellipticity(0.01, 7.0).unwrap();
        assert!(!r.pass);
        assert!(r.offending.iter().any(|e| (e.abs() - PI).abs() < 1.0));
        assert!(bad.certify().is_err());
    }

    #[test]
    fn tabulated_matches_cosine() {
        let eta: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.005).collect();
        let u2: Vec<f64> = eta.iter().map(|e| 1.0 + 0.3 * e.cos()).collect();
        let csv: String = eta.iter().zip(&u2).map(|(a, b)| format!("{a},{b}\n")).collect();
        let t = Table::from_csv(format!("eta,u2\n{csv}").as_bytes()).unwrap();
        let p = Potential::tabulated(t);
        p.certify().unwrap();
        let c = Potential::cosine(0.3);
        for e in [-3.0, -0.5, 0.0, 1.0, 4.2] {
            assert!((p.u_prime(e).unwrap() - c.du(e)).abs() < 1e-5);
            assert!((p.u(e) - c.u(e)).abs() < 1e-5);
        }
        assert!(matches!(p.u_prime(11.0), Err(Error::Range(_))));
    }
}
