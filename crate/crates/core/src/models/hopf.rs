//! The controlled Hopf normal form and its closed-form response curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Section, VectorField};
use crate::wrap_angle;

/// Coefficients of the controlled Hopf normal form plus the offset between
/// the system phase and the normal-form phase (`θ = θ̂ + φ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopfCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub phi: f64,
}

/// Relative/absolute residuals of the algebraic identities every coefficient
/// set must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub radius: f64,
    pub kappa: f64,
    pub omega: f64,
}

impl ConsistencyReport {
    pub fn max(&self) -> f64 {
        self.radius.max(self.kappa).max(self.omega)
    }
}

impl HopfCoefficients {
    /// Validated constructor; `phi` is wrapped into `[0, 2π)`.
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64, phi: f64) -> Result<Self> {
        let c = Self {
            alpha,
            beta,
            a,
            b,
            phi: wrap_angle(phi),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.a, self.b, self.phi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite Hopf coefficients {self:?}")));
        }
        if !(self.a < 0.0) {
            return Err(Error::InvalidArgument(format!("cubic coefficient a must be negative, got {}", self.a)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "growth rate alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Orbit radius `sqrt(-α/a)`.
    pub fn r0(&self) -> f64 {
        (-self.alpha / self.a).sqrt()
    }

    /// Orbit angular frequency `β − αb/a`.
    pub fn omega(&self) -> f64 {
        self.beta - self.alpha * self.b / self.a
    }

    /// Slowest Floquet exponent `−2α`.
    pub fn kappa1(&self) -> f64 {
        -2.0 * self.alpha
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega()
    }

    /// Residuals of `r0² = −α/a`, `κ1 = −2α` and `ω = β − αb/a` against the
    /// derived accessors, recomputed independently.
    pub fn consistency(&self) -> ConsistencyReport {
        let r0 = self.r0();
        let radius = (r0 * r0 * self.a + self.alpha).abs() / self.alpha.abs();
        let kappa = (self.kappa1() / self.alpha + 2.0).abs();
        let omega_polar = self.beta + self.b * r0 * r0;
        let omega = (self.omega() - omega_polar).abs() / self.omega().abs().max(f64::MIN_POSITIVE);
        ConsistencyReport { radius, kappa, omega }
    }

    /// Point on the orbit at normal-form phase `θ̂`.
    pub fn orbit_point(&self, theta_hat: f64) -> [f64; 2] {
        let r0 = self.r0();
        [r0 * theta_hat.cos(), r0 * theta_hat.sin()]
    }

    /// Phase response at system phase `θ` (applies the `φ` shift).
    pub fn z_at(&self, theta: f64) -> f64 {
        hopf_z(theta - self.phi, self)
    }
}

/// Right-hand side of the controlled Hopf normal form.
pub fn hopf_rhs(state: [f64; 2], u: f64, c: &HopfCoefficients) -> [f64; 2] {
    let [x, y] = state;
    let r2 = x * x + y * y;
    [
        c.alpha * x - c.beta * y + (c.a * x - c.b * y) * r2 + u,
        c.beta * x + c.alpha * y + (c.b * x + c.a * y) * r2,
    ]
}

/// Phase response in normal-form phase `θ̂`.
pub fn hopf_z(theta_hat: f64, c: &HopfCoefficients) -> f64 {
    -(-c.a / c.alpha).sqrt() * (theta_hat.sin() + c.b / c.a * theta_hat.cos())
}

/// Amplitude response `C1 cos θ`.
pub fn hopf_i(theta: f64, c1: f64) -> f64 {
    c1 * theta.cos()
}

/// RK4 substep count used by [`hopf_flow`] for interval `dt`.
pub fn hopf_substeps(c: &HopfCoefficients, dt: f64) -> usize {
    let r2 = 8.0 * c.r0().powi(2);
    let rate = 1.0 + c.alpha.abs() + c.beta.abs() + (c.a.abs() + c.b.abs()) * r2;
    ((dt.abs() * rate / 0.01).ceil() as usize).max(1)
}

/// Flow of the normal form over `dt` under constant `u`.
pub fn hopf_flow(zeta: [f64; 2], u: f64, c: &HopfCoefficients, dt: f64) -> [f64; 2] {
    let n = hopf_substeps(c, dt);
    let h = dt / n as f64;
    let mut z = zeta;
    let add = |z: [f64; 2], k: [f64; 2], s: f64| [z[0] + s * k[0], z[1] + s * k[1]];
    for _ in 0..n {
        let k1 = hopf_rhs(z, u, c);
        let k2 = hopf_rhs(add(z, k1, 0.5 * h), u, c);
        let k3 = hopf_rhs(add(z, k2, 0.5 * h), u, c);
        let k4 = hopf_rhs(add(z, k3, h), u, c);
        z = [
            z[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            z[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
    }
    z
}

/// Affine observation `y = c0 + c1 x̂ + c2 ŷ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearOutput {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LinearOutput {
    fn default() -> Self {
        Self {
            c0: 0.0,
            c1: 0.0,
            c2: 1.0,
        }
    }
}

/// The normal form as a black-box [`VectorField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfField {
    pub coeffs: HopfCoefficients,
    pub output: LinearOutput,
}

impl HopfField {
    pub fn new(coeffs: HopfCoefficients, output: LinearOutput) -> Self {
        Self { coeffs, output }
    }

    /// Phase offset `φ ∈ [0, 2π)` that `section` induces: the orbit angle
    /// `θ̂` at the section crossing is `−φ`. Requires `ω > 0`.
    pub fn section_phase(&self, section: &Section) -> Result<f64> {
        let c = &self.coeffs;
        let o = &self.output;
        let gain = o.c1.hypot(o.c2);
        let q = (section.threshold - o.c0) / (c.r0() * gain);
        if !(c.omega() > 0.0) || !(q.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "section y = {} is not crossed transversally by the orbit",
                section.threshold
            )));
        }
        let delta = o.c2.atan2(o.c1);
        let theta_hat = delta - section.direction.sign() * q.acos();
        Ok(wrap_angle(-theta_hat))
    }
}

impl VectorField for HopfField {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &[f64], u: f64, _t: f64, dx: &mut [f64]) {
        let d = hopf_rhs([x[0], x[1]], u, &self.coeffs);
        dx[0] = d[0];
        dx[1] = d[1];
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.output.c0 + self.output.c1 * x[0] + self.output.c2 * x[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> HopfCoefficients {
        HopfCoefficients::new(1.0, 1.0, -1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let c = unit();
        assert_eq!(hopf_rhs([0.0, 0.0], 0.0, &c), [0.0, 0.0]);
        assert_eq!(hopf_rhs([0.0, 0.0], 0.2, &c), [0.2, 0.0]);
        assert_eq!(hopf_rhs([1.0, 0.0], 0.0, &c), [0.0, 1.0]);
    }

    #[test]
    fn response_curve_examples() {
        let c = unit();
        assert_eq!(hopf_z(0.0, &c), 0.0);
        assert!((hopf_z(PI / 2.0, &c) + 1.0).abs() < 1e-15);
        assert_eq!(hopf_i(0.0, 1.0), 1.0);
        assert!(hopf_i(PI / 2.0, 1.0).abs() < 1e-15);
        assert_eq!(hopf_i(PI, 2.0), -2.0);
    }

    #[test]
    fn leloup_fit_z_at_zero() {
        let c = HopfCoefficients::new(0.0224, 0.2721, -0.0106, -0.0034, 0.0).unwrap();
        // -sqrt(0.0106/0.0224) * (-0.0034/-0.0106)
        let expect = -(0.0106f64 / 0.0224).sqrt() * (0.0034 / 0.0106);
        assert!((hopf_z(0.0, &c) - expect).abs() < 1e-15);
        assert!((hopf_z(0.0, &c) + 0.2207).abs() < 1e-4);
    }

    #[test]
    fn validation() {
        assert!(HopfCoefficients::new(1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(HopfCoefficients::new(-1.0, 1.0, -1.0, 0.0, 0.0).is_err());
        assert!(HopfCoefficients::new(f64::NAN, 1.0, -1.0, 0.0, 0.0).is_err());
        let c = HopfCoefficients::new(1.0, 1.0, -1.0, 0.0, -1.0).unwrap();
        assert!((c.phi - (2.0 * PI - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn quarter_rotation_flow() {
        let z = hopf_flow([1.0, 0.0], 0.0, &unit(), PI / 2.0);
        assert!(z[0].abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6, "{z:?}");
    }

    #[test]
    fn period_map_identity() {
        let c = HopfCoefficients::new(0.0224, 0.2721, -0.0106, -0.0034, 1.0).unwrap();
        let z0 = c.orbit_point(0.7);
        let z = hopf_flow(z0, 0.0, &c, c.period());
        assert!((z[0] - z0[0]).abs() < 1e-6 && (z[1] - z0[1]).abs() < 1e-6);
        assert_eq!(hopf_flow([0.0, 0.0], 0.0, &c, 0.1), [0.0, 0.0]);
    }

    #[test]
    fn section_phase_of_linear_outputs() {
        let c = unit();
        let f = HopfField::new(c, LinearOutput::default());
        assert!(f.section_phase(&Section::rising(0.0)).unwrap().abs() < 1e-15);
        let f = HopfField::new(c, LinearOutput { c0: 0.0, c1: 1.0, c2: 0.0 });
        assert!((f.section_phase(&Section::rising(0.0)).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(f.section_phase(&Section::rising(2.0)).is_err());
    }
}
