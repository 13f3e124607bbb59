//! Monte-Carlo side of the characteristic-function machinery.
//!
//! The frequency pairing is the discount-weighted inner product
//! `<w, r> = sum_{t=1..T} g^t w_t r_t`, where `g` is the reward-sequence
//! discount (distinct from the MDP discount). Per-sample regression targets
//! are `(cos <w, r>, sin <w, r>)`; their average is the empirical CF.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng;

/// A complex CF value as `(re, im)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CFValue {
    pub re: f64,
    pub im: f64,
}

impl CFValue {
    pub const ONE: CFValue = CFValue { re: 1.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        CFValue { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn modulus(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn conj(self) -> Self {
        CFValue { re: self.re, im: -self.im }
    }

    /// Complex modulus of the difference.
    pub fn dist(self, other: CFValue) -> f64 {
        CFValue { re: self.re - other.re, im: self.im - other.im }.modulus()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CFConfig {
    /// Reward-sequence length.
    pub t: usize,
    /// Number of frequency draws per update.
    pub kappa: usize,
    pub gamma_seq: f64,
}

impl Default for CFConfig {
    fn default() -> Self {
        CFConfig { t: 5, kappa: 256, gamma_seq: 0.8 }
    }
}

impl CFConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.kappa == 0 {
            return Err(Error::param("T and kappa must be at least 1"));
        }
        if !(self.gamma_seq > 0.0 && self.gamma_seq <= 1.0) {
            return Err(Error::param(format!("gamma_seq {} outside (0, 1]", self.gamma_seq)));
        }
        Ok(())
    }
}

/// `kappa x T` standard-normal frequencies, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaBatch {
    pub kappa: usize,
    pub t: usize,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl OmegaBatch {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.t..(k + 1) * self.t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.t)
    }
}

pub fn sample_omega(cfg: &CFConfig, seed: u64) -> Result<OmegaBatch> {
    cfg.validate()?;
    let mut rng = rng::rng_from(seed);
    let values = (0..cfg.kappa * cfg.t).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(OmegaBatch { kappa: cfg.kappa, t: cfg.t, values, seed })
}

/// `[g, g^2, ..., g^T]`.
pub fn discount_weights(t: usize, gamma_seq: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(t);
    let mut acc = 1.0;
    for _ in 0..t {
        acc *= gamma_seq;
        w.push(acc);
    }
    w
}

/// `sum_t g^t r_t`, the scalar target of the sum-based objectives.
pub fn discounted_sum(rewards: &[f64], gamma_seq: f64) -> f64 {
    discount_weights(rewards.len(), gamma_seq).iter().zip(rewards).map(|(w, r)| w * r).sum()
}

pub fn weighted_inner(omega: &[f64], rewards: &[f64], gamma_seq: f64) -> Result<f64> {
    if omega.len() != rewards.len() {
        return Err(Error::param(format!("omega has length {}, rewards have length {}", omega.len(), rewards.len())));
    }
    let w = discount_weights(omega.len(), gamma_seq);
    Ok(omega.iter().zip(rewards).zip(&w).map(|((o, r), g)| g * o * r).sum())
}

/// Per-sample regression targets `(cos u, sin u)`.
pub fn cf_target(omega: &[f64], rewards: &[f64], gamma_seq: f64) -> Result<(f64, f64)> {
    let u = weighted_inner(omega, rewards, gamma_seq)?;
    Ok((u.cos(), u.sin()))
}

pub fn empirical_cf(samples: &[Vec<f64>], omega: &[f64], gamma_seq: f64) -> Result<CFValue> {
    empirical_cf_with(Exec::default(), samples, omega, gamma_seq)
}

/// Mean of `e^{i <w, r>}` over the samples.
pub fn empirical_cf_with(exec: Exec, samples: &[Vec<f64>], omega: &[f64], gamma_seq: f64) -> Result<CFValue> {
    if samples.is_empty() {
        return Err(Error::param("empirical CF needs at least one sample"));
    }
    let terms = par::map_slice(exec, samples, |r| cf_target(omega, r, gamma_seq));
    let (mut re, mut im) = (0.0, 0.0);
    for term in terms {
        let (c, s) = term?;
        re += c;
        im += s;
    }
    let n = samples.len() as f64;
    Ok(CFValue::new(re / n, im / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn omega_shape_and_determinism() {
        let cfg = CFConfig { t: 5, kappa: 256, gamma_seq: 0.8 };
        let a = sample_omega(&cfg, 3).unwrap();
        assert_eq!(a.values.len(), 1280);
        assert_eq!(a, sample_omega(&cfg, 3).unwrap());
        let mean = a.values.iter().sum::<f64>() / 1280.0;
        assert!(mean.abs() <= 3.0 / 1280f64.sqrt(), "mean {mean}");
        let tiny = sample_omega(&CFConfig { t: 1, kappa: 1, gamma_seq: 0.8 }, 0).unwrap();
        assert_eq!(tiny.values.len(), 1);
        assert!(sample_omega(&CFConfig { t: 0, kappa: 1, gamma_seq: 0.8 }, 0).is_err());
    }

    #[test]
    fn inner_product_examples() {
        assert!((weighted_inner(&[1.0, 1.0], &[1.0, 1.0], 0.8).unwrap() - 1.44).abs() < 1e-15);
        assert_eq!(weighted_inner(&[0.3, -2.0], &[0.0, 0.0], 0.8).unwrap(), 0.0);
        assert_eq!(weighted_inner(&[2.0], &[3.0], 1.0).unwrap(), 6.0);
        assert!(matches!(weighted_inner(&[1.0], &[1.0, 2.0], 0.8), Err(Error::Parameter(_))));
    }

    #[test]
    fn target_examples() {
        assert_eq!(cf_target(&[0.0], &[1.0], 0.8).unwrap(), (1.0, 0.0));
        let (c, s) = cf_target(&[1.0], &[1.0], 0.8).unwrap();
        assert!((c - 0.696707).abs() < 1e-6 && (s - 0.717356).abs() < 1e-6);
    }

    #[test]
    fn empirical_edge_cases() {
        assert!(empirical_cf(&[], &[1.0], 0.8).is_err());
        let same = vec![vec![1.0]; 10];
        let cf = empirical_cf(&same, &[1.0], 0.8).unwrap();
        assert!((cf.re - 0.8f64.cos()).abs() < 1e-15 && (cf.im - 0.8f64.sin()).abs() < 1e-15);
        let mixed = vec![vec![0.5, 1.0], vec![0.0, 0.0]];
        assert_eq!(empirical_cf(&mixed, &[0.0, 0.0], 0.8).unwrap(), CFValue::ONE);
    }

    #[test]
    fn sequential_matches_parallel() {
        let samples: Vec<Vec<f64>> = (0..500).map(|i| vec![(i % 3) as f64 * 0.5, (i % 2) as f64]).collect();
        let a = empirical_cf_with(Exec::Sequential, &samples, &[0.7, -1.3], 0.8).unwrap();
        let b = empirical_cf_with(Exec::Parallel, &samples, &[0.7, -1.3], 0.8).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn targets_lie_on_unit_circle(w in prop::collection::vec(-10.0..10.0f64, 1..6), g in 0.01..1.0f64) {
            let r: Vec<f64> = w.iter().map(|x| x.sin()).collect();
            let (c, s) = cf_target(&w, &r, g).unwrap();
            prop_assert!((c * c + s * s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn empirical_modulus_bounded(seed in 0u64..1000, n in 1usize..40) {
            let mut rng = rng::rng_from(seed);
            let samples: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let cf = empirical_cf(&samples, &[1.0, -0.5, 2.0], 0.8).unwrap();
            prop_assert!(cf.modulus() <= 1.0 + 1e-12);
        }
    }
}
