//! Proportional-fair weights and long-run rate tracking.

use crate::{Error, Result};

/// Initial long-run rate of every MS, in bps/Hz.
pub const INITIAL_RATE: f64 = 1e-3;

/// Lower bound applied to long-run rates after each update.
pub const RATE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessState {
    pub r_bar: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub slot: u64,
}

impl FairnessState {
    pub fn new(num_ms: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("fairness exponent must be finite and >= 0, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("forgetting factor must lie in [0, 1], got {beta}")));
        }
        Ok(Self { r_bar: vec![INITIAL_RATE; num_ms], alpha, beta, slot: 0 })
    }

    /// `w_k = 1 / R̄_k^α`.
    pub fn weights(&self) -> Vec<f64> {
        if self.alpha == 0.0 {
            return vec![1.0; self.r_bar.len()];
        }
        self.r_bar.iter().map(|r| r.powf(-self.alpha)).collect()
    }

    /// `R̄ ← β R̄ + (1 − β) R`, floored, and advances the slot counter.
    pub fn update(&mut self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.r_bar.len() {
            return Err(Error::Domain(format!("{} rates for {} MSs", rates.len(), self.r_bar.len())));
        }
        if let Some(r) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::Domain(format!("achieved rate must be finite and >= 0, got {r}")));
        }
        for (rb, &r) in self.r_bar.iter_mut().zip(rates) {
            *rb = (self.beta * *rb + (1.0 - self.beta) * r).max(RATE_FLOOR);
        }
        self.slot += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(r_bar: Vec<f64>, alpha: f64, beta: f64) -> FairnessState {
        FairnessState { r_bar, alpha, beta, slot: 0 }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(state(vec![0.3, 7.0], 0.0, 0.5).weights(), vec![1.0, 1.0]);
        assert_eq!(state(vec![2.0, 4.0], 1.0, 0.5).weights(), vec![0.5, 0.25]);
        assert_eq!(state(vec![1.0; 3], 2.0, 0.5).weights(), vec![1.0; 3]);
    }

    #[test]
    fn update_examples() {
        let mut s = state(vec![2.0], 1.0, 0.5);
        s.update(&[4.0]).unwrap();
        assert_eq!(s.r_bar, vec![3.0]);
        assert_eq!(s.slot, 1);

        let mut s = state(vec![2.0], 1.0, 1.0);
        s.update(&[4.0]).unwrap();
        assert_eq!(s.r_bar, vec![2.0]);

        let mut s = state(vec![2.0, 2.0], 1.0, 0.0);
        s.update(&[4.0, 0.0]).unwrap();
        assert_eq!(s.r_bar, vec![4.0, RATE_FLOOR]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = FairnessState::new(2, 1.0, 0.5).unwrap();
        assert!(matches!(s.update(&[1.0, -0.1]), Err(Error::Domain(_))));
        assert!(s.update(&[1.0]).is_err());
        assert!(FairnessState::new(2, -1.0, 0.5).is_err());
        assert!(FairnessState::new(2, 1.0, 1.5).is_err());
        assert_eq!(FairnessState::new(2, 1.0, 0.5).unwrap().r_bar, vec![INITIAL_RATE; 2]);
    }

    proptest! {
        #[test]
        fn weights_scale_covariantly(
            r in prop::collection::vec(1e-3f64..10.0, 1..6),
            alpha in 0.0f64..3.0,
            c in 0.1f64..10.0,
        ) {
            let a = state(r.clone(), alpha, 0.5).weights();
            let b = state(r.iter().map(|v| v * c).collect(), alpha, 0.5).weights();
            for (x, y) in a.iter().zip(b) {
                prop_assert!((y - x * c.powf(-alpha)).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn update_is_a_floored_convex_combination(
            pairs in prop::collection::vec((1e-6f64..10.0, 0.0f64..10.0), 1..6),
            beta in 0.0f64..=1.0,
        ) {
            let (r_bar, rates): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut s = state(r_bar.clone(), 1.0, beta);
            s.update(&rates).unwrap();
            for ((new, old), r) in s.r_bar.iter().zip(&r_bar).zip(&rates) {
                prop_assert!(*new > 0.0);
                prop_assert!(*new >= old.min(*r) - RATE_FLOOR - 1e-12);
                prop_assert!(*new <= old.max(*r).max(RATE_FLOOR) + 1e-12);
            }
        }
    }
}
