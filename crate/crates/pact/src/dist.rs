//! Discrete probability distributions with an enforced normalization invariant.
//!
//! Every distribution handed out by this crate (priors, policies, posteriors,
//! outcome distributions) is a [`Dist`], and every `Dist` is normalized to
//! within [`NORM_EPS`] at construction time. Test suites re-check the
//! invariant through [`Dist::assert_normalized`].

use std::collections::BTreeMap;

use thiserror::Error;

/// Tolerance for treating a weight vector as normalized.
pub const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("distribution is empty")]
    Empty,
    #[error("negative weight {weight} for an outcome")]
    NegativeWeight { weight: f64 },
    #[error("weights sum to {sum}, expected 1 within {NORM_EPS}")]
    NotNormalized { sum: f64 },
    #[error("weights sum to zero, cannot normalize")]
    ZeroMass,
}

/// A discrete distribution over outcomes of type `T`.
///
/// Keys are stored in a `BTreeMap`, so iteration order (and therefore
/// sampling and serialization) is deterministic.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Dist<T: Ord>(BTreeMap<T, f64>);

impl<T: Ord> Dist<T> {
    /// Wraps weights that must already sum to 1 within [`NORM_EPS`].
    pub fn new(weights: BTreeMap<T, f64>) -> Result<Self, DistError> {
        if weights.is_empty() {
            return Err(DistError::Empty);
        }
        for &w in weights.values() {
            if w < 0.0 {
                return Err(DistError::NegativeWeight { weight: w });
            }
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > NORM_EPS {
            return Err(DistError::NotNormalized { sum });
        }
        Ok(Dist(weights))
    }

    /// Rescales arbitrary non-negative weights to a distribution.
    pub fn normalized(weights: BTreeMap<T, f64>) -> Result<Self, DistError> {
        if weights.is_empty() {
            return Err(DistError::Empty);
        }
        for &w in weights.values() {
            if w < 0.0 {
                return Err(DistError::NegativeWeight { weight: w });
            }
        }
        let sum: f64 = weights.values().sum();
        if sum <= 0.0 {
            return Err(DistError::ZeroMass);
        }
        Ok(Dist(weights.into_iter().map(|(k, w)| (k, w / sum)).collect()))
    }

    /// Uniform distribution over the given outcomes.
    pub fn uniform(items: impl IntoIterator<Item = T>) -> Result<Self, DistError> {
        let keys: Vec<T> = items.into_iter().collect();
        if keys.is_empty() {
            return Err(DistError::Empty);
        }
        let p = 1.0 / keys.len() as f64;
        Ok(Dist(keys.into_iter().map(|k| (k, p)).collect()))
    }

    /// Point mass on a single outcome.
    pub fn point(item: T) -> Self {
        let mut m = BTreeMap::new();
        m.insert(item, 1.0);
        Dist(m)
    }

    /// Probability of an outcome, 0 if it is not in the support map.
    pub fn prob(&self, item: &T) -> f64 {
        self.0.get(item).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.0.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// The shared normalization assertion: panics unless all weights are
    /// non-negative and sum to 1 within [`NORM_EPS`].
    #[track_caller]
    pub fn assert_normalized(&self) {
        assert!(!self.0.is_empty(), "empty distribution");
        for w in self.0.values() {
            assert!(*w >= 0.0, "negative probability {w}");
        }
        let sum = self.total();
        assert!(
            (sum - 1.0).abs() <= NORM_EPS,
            "distribution sums to {sum}, expected 1 within {NORM_EPS}"
        );
    }

    /// Inverse-CDF sampling in key order from a uniform draw in `[0, 1)`.
    pub fn sample(&self, u: f64) -> &T {
        let mut acc = 0.0;
        let mut last = None;
        for (k, w) in self.0.iter() {
            acc += w;
            last = Some(k);
            if u < acc {
                return k;
            }
        }
        last.expect("non-empty distribution")
    }

    /// Outcomes with the highest probability (ties included, key order).
    pub fn argmax(&self) -> Vec<&T> {
        let best = self.0.values().cloned().fold(f64::MIN, f64::max);
        self.0
            .iter()
            .filter(|(_, &w)| w == best)
            .map(|(k, _)| k)
            .collect()
    }
}

impl<'a, T: Ord> IntoIterator for &'a Dist<T> {
    type Item = (&'a T, &'a f64);
    type IntoIter = std::collections::btree_map::Iter<'a, T, f64>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized() {
        let mut w = BTreeMap::new();
        w.insert("a", 0.5);
        w.insert("b", 0.6);
        assert!(matches!(Dist::new(w), Err(DistError::NotNormalized { .. })));
    }

    #[test]
    fn normalizes_weights() {
        let mut w = BTreeMap::new();
        w.insert("a", 2.0);
        w.insert("b", 6.0);
        let d = Dist::normalized(w).unwrap();
        d.assert_normalized();
        assert!((d.prob(&"a") - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_and_point() {
        let d = Dist::uniform(vec![1, 2, 3, 4]).unwrap();
        d.assert_normalized();
        assert_eq!(d.prob(&3), 0.25);
        let p = Dist::point(7);
        p.assert_normalized();
        assert_eq!(p.prob(&7), 1.0);
    }

    #[test]
    fn zero_mass_is_an_error() {
        let mut w = BTreeMap::new();
        w.insert("a", 0.0);
        assert_eq!(Dist::normalized(w), Err(DistError::ZeroMass));
    }

    #[test]
    fn sampling_walks_the_cdf() {
        let d = Dist::uniform(vec!["x", "y"]).unwrap();
        assert_eq!(*d.sample(0.2), "x");
        assert_eq!(*d.sample(0.7), "y");
        assert_eq!(*d.sample(0.999999), "y");
    }
}
