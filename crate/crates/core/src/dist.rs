use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Tolerance on row sums accepted at construction.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// A validated categorical distribution over `0..len`, stored sparsely.
///
/// `support` is strictly increasing and only holds indices with positive
/// mass, so iteration order (and therefore floating-point summation order)
/// is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    len: usize,
    support: Vec<usize>,
    probs: Vec<f64>,
}

impl Categorical {
    /// Builds from a dense probability vector. Fails if any entry is negative
    /// or non-finite, or if the sum is off by more than [`SUM_TOLERANCE`].
    pub fn from_dense(p: &[f64]) -> Result<Self> {
        let mut total = 0.0;
        for (i, &x) in p.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::validation(format!("probability entry {i} is {x}")));
            }
            total += x;
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(format!("probabilities sum to {total}, expected 1")));
        }
        let (support, probs) = p
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, &x)| (i, x))
            .unzip();
        Ok(Categorical { len: p.len(), support, probs })
    }

    /// Builds from non-negative weights, normalizing explicitly.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights must be non-negative with positive sum"));
        }
        let dense: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let (support, probs) = dense
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, &x)| (i, x))
            .unzip();
        Ok(Categorical { len: weights.len(), support, probs })
    }

    pub fn point_mass(len: usize, at: usize) -> Self {
        assert!(at < len, "point mass index {at} out of range {len}");
        Categorical { len, support: vec![at], probs: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn prob(&self, i: usize) -> f64 {
        match self.support.binary_search(&i) {
            Ok(k) => self.probs[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (i, p) in self.iter() {
            out[i] = p;
        }
        out
    }

    /// Expectation of `v` (indexed densely).
    pub fn expect(&self, v: &[f64]) -> f64 {
        self.iter().map(|(i, p)| p * v[i]).sum()
    }

    /// Inverse-CDF sample. A single-point support consumes no randomness,
    /// which keeps paired streams aligned across deterministic steps.
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        if self.support.len() == 1 {
            return self.support[0];
        }
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, p) in self.iter() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        *self.support.last().expect("non-empty support")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedSpec};

    #[test]
    fn rejects_bad_rows() {
        assert!(Categorical::from_dense(&[0.5, 0.4]).is_err());
        assert!(Categorical::from_dense(&[1.2, -0.2]).is_err());
        assert!(Categorical::from_dense(&[f64::NAN, 1.0]).is_err());
        assert!(Categorical::from_dense(&[0.25, 0.75]).is_ok());
    }

    #[test]
    fn tolerance_is_tight() {
        assert!(Categorical::from_dense(&[0.5, 0.5 + 1e-13]).is_ok());
        assert!(Categorical::from_dense(&[0.5, 0.5 + 1e-10]).is_err());
    }

    #[test]
    fn sparse_support_skips_zeros() {
        let c = Categorical::from_dense(&[0.0, 0.3, 0.0, 0.7]).unwrap();
        assert_eq!(c.support(), &[1, 3]);
        assert_eq!(c.prob(2), 0.0);
        assert_eq!(c.to_dense(), vec![0.0, 0.3, 0.0, 0.7]);
    }

    #[test]
    fn point_mass_sampling_draws_nothing() {
        let spec = SeedSpec::new(9);
        let mut a = spec.stream(0, Purpose::Transition);
        let mut b = spec.stream(0, Purpose::Transition);
        let c = Categorical::point_mass(4, 2);
        assert_eq!(c.sample(&mut a), 2);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn sampling_frequencies() {
        let c = Categorical::from_dense(&[0.2, 0.5, 0.3]).unwrap();
        let mut rng = SeedSpec::new(3).stream(0, Purpose::Oracle);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[c.sample(&mut rng)] += 1;
        }
        for (i, &p) in [0.2, 0.5, 0.3].iter().enumerate() {
            let f = counts[i] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 4.0 * se, "index {i}: {f} vs {p}");
        }
    }
}
