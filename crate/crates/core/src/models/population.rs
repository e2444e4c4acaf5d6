//! Heterogeneous, noisy population of mean-field coupled circadian
//! oscillators. Each oscillator carries `(B, C, D, E)`; the measured output is
//! the population mean of `E`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationParameters {
    pub n_oscillators: usize,
    pub hill_n: f64,
    pub v1: f64,
    pub v2: f64,
    pub v4: f64,
    pub v6: f64,
    pub v8: f64,
    pub k3: f64,
    pub k5: f64,
    pub k7: f64,
    pub k_1: f64,
    pub k_2: f64,
    pub k_4: f64,
    pub k_6: f64,
    pub k_8: f64,
    pub h_c: f64,
    pub k_c: f64,
    pub coupling_k: f64,
    /// Variance of the per-oscillator draws of `v1, v2, v4, v6, k3, k5`.
    pub heterogeneity_variance: f64,
    /// Standard deviation of the light sensitivity around 1.
    pub sensitivity_spread: f64,
    /// Noise intensity `D`; the `B` equations receive `sqrt(2D)` white noise.
    pub noise_intensity: f64,
    pub seed: u64,
}

impl Default for PopulationParameters {
    fn default() -> Self {
        Self {
            n_oscillators: 3000,
            hill_n: 5.0,
            v1: 0.55,
            v2: 0.39,
            v4: 0.35,
            v6: 0.35,
            v8: 1.0,
            k3: 0.7,
            k5: 0.5,
            k7: 0.35,
            k_1: 1.0,
            k_2: 1.0,
            k_4: 1.0,
            k_6: 1.0,
            k_8: 1.0,
            h_c: 0.35,
            k_c: 1.0,
            coupling_k: 0.5,
            heterogeneity_variance: 1e-4,
            sensitivity_spread: 0.4,
            noise_intensity: 1e-4,
            seed: 0,
        }
    }
}

impl PopulationParameters {
    /// Identical, noiseless oscillators with unit light sensitivity.
    pub fn homogeneous(n_oscillators: usize) -> Self {
        Self {
            n_oscillators,
            heterogeneity_variance: 0.0,
            sensitivity_spread: 0.0,
            noise_intensity: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_oscillators == 0 {
            return Err(Error::InvalidArgument("population needs at least one oscillator".into()));
        }
        let rates = [
            ("hill_n", self.hill_n),
            ("v1", self.v1),
            ("v2", self.v2),
            ("v4", self.v4),
            ("v6", self.v6),
            ("v8", self.v8),
            ("k3", self.k3),
            ("k5", self.k5),
            ("k7", self.k7),
            ("k_1", self.k_1),
            ("k_2", self.k_2),
            ("k_4", self.k_4),
            ("k_6", self.k_6),
            ("k_8", self.k_8),
            ("h_c", self.h_c),
            ("k_c", self.k_c),
            ("coupling_k", self.coupling_k),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("population parameter {name} must be positive, got {v}")));
            }
        }
        let spreads = [
            ("heterogeneity_variance", self.heterogeneity_variance),
            ("sensitivity_spread", self.sensitivity_spread),
            ("noise_intensity", self.noise_intensity),
        ];
        for (name, v) in spreads {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters drawn for one oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorRates {
    pub v1: f64,
    pub v2: f64,
    pub v4: f64,
    pub v6: f64,
    pub k3: f64,
    pub k5: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone)]
pub struct PopulationField {
    pub params: PopulationParameters,
    rates: Vec<OscillatorRates>,
    noise: Vec<f64>,
    k1_n: f64,
}

impl PopulationField {
    /// Draws per-oscillator rates and sensitivities from `params.seed`.
    pub fn new(params: PopulationParameters) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let sd = params.heterogeneity_variance.sqrt();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let draw = |nominal: f64, rng: &mut ChaCha8Rng| (nominal + sd * unit.sample(rng)).max(f64::MIN_POSITIVE);
        let rates = (0..params.n_oscillators)
            .map(|_| {
                let v1 = draw(params.v1, &mut rng);
                let v2 = draw(params.v2, &mut rng);
                let v4 = draw(params.v4, &mut rng);
                let v6 = draw(params.v6, &mut rng);
                let k3 = draw(params.k3, &mut rng);
                let k5 = draw(params.k5, &mut rng);
                let sensitivity = (1.0 + params.sensitivity_spread * unit.sample(&mut rng)).max(0.0);
                OscillatorRates {
                    v1,
                    v2,
                    v4,
                    v6,
                    k3,
                    k5,
                    sensitivity,
                }
            })
            .collect();
        let amp = (2.0 * params.noise_intensity).sqrt();
        let noise = (0..4 * params.n_oscillators)
            .map(|i| if i % 4 == 0 { amp } else { 0.0 })
            .collect();
        Ok(Self {
            params,
            rates,
            noise,
            k1_n: params.k_1.powf(params.hill_n),
        })
    }

    pub fn n_oscillators(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[OscillatorRates] {
        &self.rates
    }

    /// Every oscillator at the same point of the deterministic cycle.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 * self.n_oscillators());
        for _ in 0..self.n_oscillators() {
            x.extend_from_slice(&[0.1, 0.1, 0.1, 0.1]);
        }
        x
    }

    /// Population mean of `E`, summed in index order.
    pub fn mean_field(&self, x: &[f64]) -> f64 {
        let sum: f64 = x.chunks_exact(4).map(|o| o[3]).sum();
        sum / self.n_oscillators() as f64
    }
}

impl VectorField for PopulationField {
    fn dim(&self) -> usize {
        4 * self.rates.len()
    }

    fn rhs(&self, x: &[f64], u: f64, _t: f64, dx: &mut [f64]) {
        let p = &self.params;
        let kf = p.coupling_k * self.mean_field(x);
        let coupling = p.h_c * kf / (p.k_c + kf);
        for ((o, d), r) in x.chunks_exact(4).zip(dx.chunks_exact_mut(4)).zip(&self.rates) {
            let (b, c, dn, e) = (o[0], o[1], o[2], o[3]);
            d[0] = r.v1 * self.k1_n / (self.k1_n + dn.powf(p.hill_n)) - r.v2 * b / (p.k_2 + b)
                + coupling
                + r.sensitivity * u;
            d[1] = r.k3 * b - r.v4 * c / (p.k_4 + c);
            d[2] = r.k5 * c - r.v6 * dn / (p.k_6 + dn);
            d[3] = p.k7 * b - p.v8 * e / (p.k_8 + e);
        }
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.mean_field(x)
    }

    fn noise_amplitude(&self) -> Option<&[f64]> {
        Some(&self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible() {
        let p = PopulationParameters {
            n_oscillators: 50,
            seed: 9,
            ..Default::default()
        };
        let a = PopulationField::new(p).unwrap();
        let b = PopulationField::new(p).unwrap();
        assert_eq!(a.rates(), b.rates());
        let c = PopulationField::new(PopulationParameters { seed: 10, ..p }).unwrap();
        assert_ne!(a.rates(), c.rates());
        assert!(a.rates().iter().all(|r| r.sensitivity >= 0.0 && r.v1 > 0.0));
    }

    #[test]
    fn noise_only_on_b() {
        let f = PopulationField::new(PopulationParameters {
            n_oscillators: 3,
            ..Default::default()
        })
        .unwrap();
        let amp = f.noise_amplitude().unwrap();
        assert_eq!(amp.len(), 12);
        for (i, &s) in amp.iter().enumerate() {
            assert_eq!(s > 0.0, i % 4 == 0);
        }
    }

    #[test]
    fn single_oscillator_output_is_e() {
        let f = PopulationField::new(PopulationParameters::homogeneous(1)).unwrap();
        let x = [0.3, 0.2, 0.1, 0.45];
        assert_eq!(f.output(&x), 0.45);
    }

    #[test]
    fn rejects_empty_population() {
        assert!(PopulationField::new(PopulationParameters::homogeneous(0)).is_err());
    }
}
