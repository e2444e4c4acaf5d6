//! Identification of the controlled Hopf normal form from output-only pulse
//! experiments, with adjoint-based ground truth, latent-state estimation and
//! dynamic-programming control built on the identified model.

pub mod control;
pub mod error;
pub mod estimator;
pub mod ident;
pub mod models;
pub mod ode;
pub mod reduction;

pub use error::{Error, Result};
pub use models::hopf::{HopfCoefficients, HopfField, LinearOutput};
pub use models::leloup::{LeloupField, LeloupParameters};
pub use models::population::{PopulationField, PopulationParameters};
pub use ode::{Section, Slope, Trajectory, VectorField};

use std::f64::consts::TAU;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_pi(delta: f64) -> f64 {
    let w = wrap_angle(delta);
    if w > std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

/// Seed for the `index`-th independent stream derived from `base`
/// (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_angle(-0.5), TAU - 0.5);
        assert_eq!(wrap_angle(TAU), 0.0);
        assert!((wrap_pi(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
        assert_eq!(wrap_pi(PI), PI);
        assert_eq!(wrap_pi(-PI), PI);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
