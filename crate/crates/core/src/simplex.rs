//! The unit simplex and distances to it.

use serde::{Deserialize, Serialize};

use crate::sampling::check_dim;
use crate::{Error, Result};

/// Tolerance on `|sum x - 1|` for a [`SimplexPoint`].
pub const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        if let Some(i) = coords.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "simplex coordinate {i} is {}",
                coords[i]
            )));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("simplex coordinates sum to {sum}")));
        }
        Ok(Self(coords))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn vertex(n: usize, i: usize) -> Result<Self> {
        check_dim(n)?;
        if i >= n {
            return Err(Error::invalid(format!("vertex {i} out of range for n = {n}")));
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Ok(Self(v))
    }

    /// Skips validation; callers guarantee the invariant.
    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean projection onto the unit simplex (sort-and-threshold).
pub fn project(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Euclidean distance from `x` to the unit simplex.
pub fn distance(x: &[f64]) -> f64 {
    let p = project(x);
    x.iter()
        .zip(&p)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_points() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexPoint::new(vec![1.0]).is_err());
        assert!(SimplexPoint::new(vec![f64::NAN, 1.0]).is_err());
        assert!(SimplexPoint::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn projection_known_values() {
        assert_eq!(project(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project(&[1.0, 1.0, 1.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((distance(&[1.0, 1.0]) - (0.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(distance(&[0.2, 0.3, 0.5]), 0.0);
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_closest(x in proptest::collection::vec(-3.0f64..3.0, 2..12), seed in any::<u64>()) {
            let p = project(&x);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // no random simplex point is closer
            let mut rng = crate::RngStream::new(seed, 0);
            let d = distance(&x);
            for _ in 0..20 {
                let mut y: Vec<f64> = x.iter().map(|_| -rng.open01().ln()).collect();
                let s: f64 = y.iter().sum();
                y.iter_mut().for_each(|v| *v /= s);
                let dy = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d <= dy + 1e-12);
            }
        }
    }
}
