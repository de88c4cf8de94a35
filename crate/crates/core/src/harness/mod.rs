//! Verification layer: continuum references, rescaled field functionals,
//! homogenized diffusivity, isomorphism residuals and scaling-limit checks.

mod checks;
mod continuum;
mod functionals;
mod sigma;

pub use checks::{
    form_ladder, isomorphism_residual, naddaf_spencer_gaussian, occupation_limit_check, IsomorphismConfig,
    IsomorphismReport, LadderReport, NaddafSpencerReport, OccupationLimitConfig, OccupationLimitReport, OccupationRung,
};
pub use continuum::{ContinuumModel, CubeDirichlet};
pub use functionals::{
    bl_linear_bound, bl_wick_bound, fit_envelope, l2_comparison, l2_comparison_gaussian, rescale_field,
    theta_functional, wick_functional, wick_variance_box, FieldFunctionals, ThetaReport, WickReport,
};
pub use sigma::{estimate_sigma, SigmaConfig, SigmaEstimate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::MacroFn;

/// Radial profile of a test function on `[0, 1]` (value 1 at the centre,
/// 0 at and beyond radius 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `(1 − s²)²`.
    Bump,
    /// `exp(1 − 1/(1 − s²))`.
    Smooth,
}

impl Shape {
    pub fn profile(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            Shape::Bump => (1.0 - s * s).powi(2),
            Shape::Smooth => (1.0 - 1.0 / (1.0 - s * s)).exp(),
        }
    }
}

/// A radial macroscopic test function `amplitude · shape(|z − c|/L)` on `R³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub shape: Shape,
    /// Support radius `L`.
    pub radius: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub center: Option<[f64; 3]>,
}

impl TestFunction {
    pub fn new(shape: Shape, radius: f64, amplitude: f64) -> Self {
        TestFunction { shape, radius, amplitude, center: None }
    }

    /// The same function recentred at `c`.
    pub fn at(mut self, c: [f64; 3]) -> Self {
        self.center = Some(c);
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        TestFunction { amplitude: c * self.amplitude, ..self.clone() }
    }

    pub fn center(&self) -> [f64; 3] {
        self.center.unwrap_or([0.0; 3])
    }

    /// Value at distance `r` from the centre.
    pub fn radial(&self, r: f64) -> f64 {
        self.amplitude * self.shape.profile(r / self.radius)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let c = self.center();
        let r2: f64 = z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        self.radial(r2.sqrt())
    }

    /// `λ = ‖V‖_∞ · L²`.
    pub fn lambda(&self) -> f64 {
        self.amplitude.abs() * self.radius * self.radius
    }

    /// `∫ V` by radial quadrature.
    pub fn integral(&self) -> f64 {
        let (x, w) = crate::stats::gauss_legendre(64);
        let l = self.radius;
        4.0 * std::f64::consts::PI
            * x.iter()
                .zip(&w)
                .map(|(xi, wi)| {
                    let r = 0.5 * l * (xi + 1.0);
                    0.5 * l * wi * r * r * self.radial(r)
                })
                .sum::<f64>()
    }

    /// Support condition and amplitude bound `λ ≤ lambda_max`.
    pub fn check(&self, lambda_max: f64) -> Result<()> {
        let mut errs = vec![];
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            errs.push("support radius must be positive".to_string());
        }
        if !self.amplitude.is_finite() {
            errs.push("amplitude must be finite".to_string());
        }
        if self.lambda() > lambda_max {
            errs.push(format!("‖V‖_∞·L² = {:.4e} exceeds the threshold {lambda_max}", self.lambda()));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Inadmissible(errs.join("; ")))
        }
    }

    /// Radius of an origin-centred ball containing the support.
    pub fn support_radius(&self) -> f64 {
        let c = self.center();
        self.radius + c.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Run `body` with the test function viewed as a [`MacroFn`].
pub fn with_macro<T>(f: &TestFunction, body: impl FnOnce(MacroFn) -> T) -> T {
    let g = |z: &[f64]| f.eval(z);
    body(MacroFn { f: &g, radius: f.support_radius() })
}

/// Pass/fail outcome of a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_basics() {
        let f = TestFunction::new(Shape::Bump, 0.5, 2.0);
        assert_eq!(f.eval(&[0.0; 3]), 2.0);
        assert_eq!(f.eval(&[0.5, 0.0, 0.0]), 0.0);
        assert!((f.lambda() - 0.5).abs() < 1e-15);
        // ∫ (1 − r²/L²)² over the ball = 4πL³ · 8/105
        let exact = 4.0 * std::f64::consts::PI * 0.125 * 8.0 / 105.0 * 2.0;
        assert!((f.integral() / exact - 1.0).abs() < 1e-12);
        assert!(f.check(1.0).is_ok());
        assert!(matches!(f.check(0.1), Err(Error::Inadmissible(_))));
        let g = f.clone().at([1.0, 0.0, 0.0]);
        assert_eq!(g.eval(&[1.0, 0.0, 0.0]), 2.0);
        assert!((g.support_radius() - 1.5).abs() < 1e-15);
    }
}
