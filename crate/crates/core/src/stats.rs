//! Small statistical helpers shared by the probes and the tail estimator.

/// Two-sided 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at critical value `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // clamp guards the last ulp at p = 0 and p = 1
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Half-width of the Wilson interval.
pub fn wilson_halfwidth(successes: u64, trials: u64, z: f64) -> f64 {
    let (lo, hi) = wilson_interval(successes, trials, z);
    0.5 * (hi - lo)
}

/// Running sums for the mean and standard error of a scalar statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Per-coordinate moments of a vector statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMoments {
    pub coords: Vec<Moments>,
}

impl VectorMoments {
    pub fn new(dim: usize) -> Self {
        Self { coords: vec![Moments::default(); dim] }
    }

    pub fn push(&mut self, v: &[f64]) {
        for (m, x) in self.coords.iter_mut().zip(v) {
            m.push(*x);
        }
    }

    pub fn merge(&mut self, other: &VectorMoments) {
        for (m, o) in self.coords.iter_mut().zip(&other.coords) {
            m.merge(o);
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.coords.iter().map(Moments::mean).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.coords.iter().map(Moments::standard_error).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn wilson_reference_values() {
        // 10/100 at z = 1.96, reference values from an independent evaluation
        let (lo, hi) = wilson_interval(10, 100, Z_95);
        assert_relative_eq!(lo, 0.055_229_137, epsilon = 1e-8);
        assert_relative_eq!(hi, 0.174_365_662, epsilon = 1e-8);
        let (lo, hi) = wilson_interval(0, 50, Z_95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.1);
        let (lo, hi) = wilson_interval(50, 50, Z_95);
        assert_eq!(hi, 1.0);
        assert!(lo > 0.9);
    }

    #[test]
    fn moments_basic() {
        let mut m = Moments::default();
        for v in [1.0, 2.0, 3.0, 4.0] {
            m.push(v);
        }
        assert_relative_eq!(m.mean(), 2.5);
        assert_relative_eq!(m.variance(), 5.0 / 3.0);
        assert_relative_eq!(m.standard_error(), (5.0f64 / 12.0).sqrt());
    }

    proptest! {
        #[test]
        fn wilson_brackets_point_estimate(k in 0u64..1000, extra in 0u64..1000) {
            let n = k + extra + 1;
            let (lo, hi) = wilson_interval(k, n, Z_95);
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }
    }
}
