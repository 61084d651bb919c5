//! Running means and standard errors for Monte-Carlo checks.

use serde::Serialize;

/// Mean with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct Running {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> McEstimate {
        McEstimate {
            mean: self.mean,
            se: self.std_error(),
        }
    }

    /// Chan's parallel merge.
    pub fn merge(&mut self, other: &Running) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / total as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }
}

/// Componentwise [`Running`] over vectors of a fixed length.
#[derive(Clone, Debug)]
pub struct RunningVec(Vec<Running>);

impl RunningVec {
    pub fn new(n: usize) -> Self {
        Self(vec![Running::new(); n])
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        for (acc, v) in self.0.iter_mut().zip(x) {
            acc.push(*v);
        }
    }

    pub fn estimates(&self) -> Vec<McEstimate> {
        self.0.iter().map(Running::estimate).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.0.iter().map(Running::mean).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let mut r = Running::new();
        xs.iter().for_each(|&x| r.push(x));
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((r.mean() - mean).abs() < 1e-14);
        assert!((r.variance() - var).abs() < 1e-12);
        assert!((r.std_error() - (var / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn merge_equals_sequential() {
        let mut a = Running::new();
        let mut b = Running::new();
        let mut all = Running::new();
        for i in 0..50 {
            let x = (i as f64 * 0.37).sin();
            all.push(x);
            if i < 20 { a.push(x) } else { b.push(x) }
        }
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-14);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
        assert_eq!(a.count(), 50);
    }

    #[test]
    fn degenerate_counts() {
        let mut r = Running::new();
        assert_eq!(r.std_error(), 0.0);
        r.push(3.0);
        assert_eq!(r.variance(), 0.0);
        assert_eq!(r.mean(), 3.0);
    }
}
