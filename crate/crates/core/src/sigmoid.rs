//! The sigmoid nonlinearity and weighted sums of sigmoid units.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp margin applied by [`sigma_inverse`].
pub const INVERSE_CLAMP: f64 = 1e-9;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// `(1 + tanh z) / 2`, evaluated as the logistic function of `2z`.
#[inline]
pub fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * z).exp())
}

/// `atanh(2y - 1)` after clamping `y` into `[1e-9, 1 - 1e-9]`.
pub fn sigma_inverse(y: f64) -> f64 {
    let lo = INVERSE_CLAMP;
    let hi = 1.0 - INVERSE_CLAMP;
    let c = if y < lo {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        lo
    } else if y > hi {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        hi
    } else {
        y
    };
    (2.0 * c - 1.0).atanh()
}

/// Number of times [`sigma_inverse`] had to clamp its argument, process-wide.
pub fn sigma_inverse_clamp_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    #[serde(rename = "B")]
    pub outer: f64,
    #[serde(rename = "A")]
    pub weights: Vec<f64>,
    pub eta: f64,
}

impl Unit {
    #[inline]
    pub fn activation(&self, q: &[f64]) -> f64 {
        let mut z = 0.0;
        for (a, x) in self.weights.iter().zip(q) {
            z += a * x;
        }
        sigma(z - self.eta)
    }
}

/// `Σ_k B_k σ(A_k·q − η_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidSum {
    pub input_dim: usize,
    pub units: Vec<Unit>,
}

impl SigmoidSum {
    pub fn empty(input_dim: usize) -> Self {
        Self {
            input_dim,
            units: Vec::new(),
        }
    }

    pub fn new(input_dim: usize, units: Vec<Unit>) -> Result<Self> {
        let s = Self { input_dim, units };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, u) in self.units.iter().enumerate() {
            if u.weights.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    context: "sigmoid unit weights",
                    expected: self.input_dim,
                    got: u.weights.len(),
                });
            }
            let finite = u.outer.is_finite() && u.eta.is_finite() && u.weights.iter().all(|w| w.is_finite());
            if !finite {
                return Err(Error::invalid(format!("units[{k}]"), "non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn eval(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "sigmoid sum argument",
                expected: self.input_dim,
                got: q.len(),
            });
        }
        Ok(self.eval_unchecked(q))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, q: &[f64]) -> f64 {
        let mut s = 0.0;
        for u in &self.units {
            s += u.outer * u.activation(q);
        }
        s
    }

    pub fn scale_outer(&mut self, factor: f64) {
        for u in &mut self.units {
            u.outer *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_values() {
        assert_eq!(sigma(0.0), 0.5);
        for z in [-3.0, -1.0, 0.7, 2.0] {
            assert!((sigma(z) - (1.0 - sigma(-z))).abs() < 1e-15);
            assert!((sigma(z) - 0.5 * (1.0 + f64::tanh(z))).abs() < 1e-15);
        }
        // (1 + tanh 1) / 2 from a 30-digit evaluation
        assert!((sigma(1.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        assert_eq!(sigma(-1000.0), 0.0);
        assert_eq!(sigma(1000.0), 1.0);
    }

    #[test]
    fn inverse() {
        assert_eq!(sigma_inverse(0.5), 0.0);
        assert!((sigma_inverse(sigma(2.0)) - 2.0).abs() < 1e-12);
        let before = sigma_inverse_clamp_count();
        assert_eq!(sigma_inverse(1.5), sigma_inverse(1.0 - 1e-9));
        assert!(sigma_inverse_clamp_count() > before);
        assert!(sigma_inverse(-3.0).is_finite());
    }

    #[test]
    fn sum_evaluation() {
        assert_eq!(SigmoidSum::empty(1).eval(&[0.3]).unwrap(), 0.0);
        let one = SigmoidSum::new(1, vec![Unit { outer: 2.0, weights: vec![0.0], eta: 0.0 }]).unwrap();
        assert_eq!(one.eval(&[17.0]).unwrap(), 1.0);
        let cancel = SigmoidSum::new(
            1,
            vec![
                Unit { outer: 1.0, weights: vec![1.0], eta: 0.0 },
                Unit { outer: -1.0, weights: vec![1.0], eta: 0.0 },
            ],
        )
        .unwrap();
        assert_eq!(cancel.eval(&[3.0]).unwrap(), 0.0);
        assert!(cancel.eval(&[1.0, 2.0]).is_err());
        assert!(SigmoidSum::new(2, vec![Unit { outer: 1.0, weights: vec![1.0], eta: 0.0 }]).is_err());
    }

    proptest! {
        #[test]
        fn sigma_monotone(a in -15.0f64..15.0, d in 1e-6f64..5.0) {
            prop_assert!(sigma(a + d) >= sigma(a));
            prop_assert!(sigma(a) > 0.0 && sigma(a) < 1.0);
        }

        #[test]
        fn affine_in_outer_weights(
            params in proptest::collection::vec((-3.0f64..3.0, -5.0f64..5.0, -2.0f64..2.0), 1..8),
            q in -2.0f64..2.0,
        ) {
            let units: Vec<Unit> = params.iter().map(|&(b, a, e)| Unit { outer: b, weights: vec![a], eta: e }).collect();
            let s = SigmoidSum::new(1, units).unwrap();
            let mut doubled = s.clone();
            doubled.scale_outer(2.0);
            prop_assert_eq!(doubled.eval(&[q]).unwrap(), 2.0 * s.eval(&[q]).unwrap());
        }
    }
}
