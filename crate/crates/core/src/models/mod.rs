//! Concrete systems and fixed-point/bifurcation analysis for black-box fields.

pub mod hopf;
pub mod leloup;
pub mod population;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{jacobian, VectorField};

/// Newton solve of `F(x, u) = 0` with backtracking on the residual norm.
pub fn find_fixed_point<F: VectorField + ?Sized>(field: &F, x_guess: &[f64], u: f64) -> Result<Vec<f64>> {
    let n = field.dim();
    let mut x = DVector::from_column_slice(x_guess);
    let mut fx = vec![0.0; n];
    let norm = |x: &DVector<f64>, fx: &mut [f64]| {
        field.rhs(x.as_slice(), u, 0.0, fx);
        fx.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let mut res = norm(&x, &mut fx);
    for _ in 0..100 {
        if res < 1e-13 {
            return Ok(x.as_slice().to_vec());
        }
        let jac = jacobian(field, x.as_slice(), u, 0.0);
        let rhs = DVector::from_column_slice(&fx);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Convergence { what: "fixed point (singular Jacobian)", gap: res })?;
        let mut lambda = 1.0;
        loop {
            let trial = &x - lambda * &step;
            let r = norm(&trial, &mut fx);
            if r < res || lambda < 1e-6 {
                x = trial;
                res = r;
                break;
            }
            lambda *= 0.5;
        }
    }
    if res < 1e-9 {
        Ok(x.as_slice().to_vec())
    } else {
        Err(Error::Convergence {
            what: "fixed point",
            gap: res,
        })
    }
}

/// Eigenvalues of the finite-difference Jacobian, sorted by decreasing real
/// part.
pub fn jacobian_eigenvalues<F: VectorField + ?Sized>(field: &F, x: &[f64], u: f64) -> Vec<Complex<f64>> {
    let jac: DMatrix<f64> = jacobian(field, x, u, 0.0);
    let mut ev: Vec<Complex<f64>> = jac.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    ev
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopfBifurcation {
    pub input: f64,
    pub state: Vec<f64>,
    pub eigenvalue: Complex<f64>,
}

/// Locates the input value where the leading eigenvalue of the fixed point
/// crosses the imaginary axis, by continuation over `u_range` followed by
/// bisection.
pub fn find_hopf_bifurcation<F: VectorField + ?Sized>(
    field: &F,
    x_guess: &[f64],
    u_range: (f64, f64),
) -> Result<HopfBifurcation> {
    let (lo, hi) = u_range;
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty input range [{lo}, {hi}]")));
    }
    let leading = |x: &[f64], u: f64| jacobian_eigenvalues(field, x, u)[0];

    const SCAN: usize = 24;
    let mut x_prev = find_fixed_point(field, x_guess, hi)?;
    let mut re_prev = leading(&x_prev, hi).re;
    let mut u_prev = hi;
    let mut bracket = None;
    for k in 1..=SCAN {
        let u = hi - (hi - lo) * k as f64 / SCAN as f64;
        let x = find_fixed_point(field, &x_prev, u)?;
        let re = leading(&x, u).re;
        if re.signum() != re_prev.signum() || re == 0.0 {
            bracket = Some((u, x.clone(), re, u_prev, x_prev.clone(), re_prev));
            break;
        }
        x_prev = x;
        re_prev = re;
        u_prev = u;
    }
    let (mut ua, mut xa, mut ra, mut ub, mut xb, _rb) = bracket.ok_or_else(|| {
        Error::NotFound(format!("no eigenvalue crossing of the imaginary axis for u in [{lo}, {hi}]"))
    })?;
    for _ in 0..200 {
        let um = 0.5 * (ua + ub);
        let xm = find_fixed_point(field, &xa, um)?;
        let lm = leading(&xm, um);
        if lm.re.abs() < 1e-5 && (ub - ua).abs() < 1e-9 || lm.re == 0.0 || (ub - ua).abs() < 1e-13 {
            return Ok(HopfBifurcation {
                input: um,
                state: xm,
                eigenvalue: lm,
            });
        }
        if lm.re.signum() == ra.signum() {
            ua = um;
            xa = xm;
            ra = lm.re;
        } else {
            ub = um;
            xb = xm;
        }
    }
    let lm = leading(&xb, ub);
    Ok(HopfBifurcation {
        input: ub,
        state: xb,
        eigenvalue: lm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::hopf::{hopf_rhs, HopfCoefficients};

    /// Hopf form whose linear growth rate is shifted by the input.
    struct ShiftedHopf(HopfCoefficients);
    impl VectorField for ShiftedHopf {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, x: &[f64], u: f64, _t: f64, dx: &mut [f64]) {
            let c = HopfCoefficients {
                alpha: self.0.alpha + u,
                ..self.0
            };
            let d = hopf_rhs([x[0], x[1]], 0.0, &c);
            dx.copy_from_slice(&d);
        }
        fn output(&self, x: &[f64]) -> f64 {
            x[1]
        }
    }

    #[test]
    fn shifted_hopf_bifurcates_at_minus_alpha() {
        let c = HopfCoefficients::new(0.3, 1.0, -1.0, 0.5, 0.0).unwrap();
        let bif = find_hopf_bifurcation(&ShiftedHopf(c), &[0.01, 0.0], (-1.0, 0.0)).unwrap();
        assert!((bif.input + 0.3).abs() < 1e-8, "{}", bif.input);
        assert!(bif.eigenvalue.re.abs() < 1e-5);
        assert!((bif.eigenvalue.im.abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn no_crossing_is_not_found() {
        let c = HopfCoefficients::new(0.3, 1.0, -1.0, 0.5, 0.0).unwrap();
        let err = find_hopf_bifurcation(&ShiftedHopf(c), &[0.0, 0.0], (0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }
}
