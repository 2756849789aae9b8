//! Least-squares fits of `log p_hat(t)` against `-n_t` for candidate decay rates.

use serde::Serialize;

use super::TailEstimate;
use crate::error::{Error, Result};
use crate::theory::{DecayRate, RateSpec};

/// Points with fewer exceedances than this are too noisy to fit.
pub const MIN_EXCEED_COUNT: u64 = 30;
const MIN_POINTS: usize = 3;
// n_t involves log t, which vanishes at t = 1 and is tiny at t = 2.
const MIN_T: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCandidate {
    pub name: String,
    pub decay: DecayRate,
}

impl DecayCandidate {
    pub fn new(name: impl Into<String>, decay: DecayRate) -> Self {
        Self { name: name.into(), decay }
    }
}

impl From<&RateSpec> for DecayCandidate {
    fn from(spec: &RateSpec) -> Self {
        Self { name: spec.name.clone(), decay: spec.decay }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub candidate: String,
    /// Estimate of `c` in `p(t) ~ exp(intercept - c n_t)`.
    pub slope_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Fits each candidate on the estimable points of a tail estimate.
pub fn fit_decay(tail: &TailEstimate, candidates: &[DecayCandidate]) -> Result<Vec<DecayFit>> {
    let points: Vec<(f64, f64)> = tail
        .t_grid
        .iter()
        .zip(&tail.exceed_count)
        .zip(&tail.p_hat)
        .filter(|((_, &c), _)| c >= MIN_EXCEED_COUNT)
        .map(|((&t, _), &p)| (t as f64, p))
        .collect();
    fit_decay_points(&points, candidates)
}

/// Fits `(t, p)` pairs directly; points with `t < 3` or `p <= 0` are skipped.
pub fn fit_decay_points(points: &[(f64, f64)], candidates: &[DecayCandidate]) -> Result<Vec<DecayFit>> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, p)| t >= MIN_T && p > 0.0 && p.is_finite())
        .collect();
    if usable.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least {MIN_POINTS} usable points (t >= 3, at least {MIN_EXCEED_COUNT} exceedances), got {}",
            usable.len()
        )));
    }
    Ok(candidates
        .iter()
        .map(|c| {
            let xs: Vec<f64> = usable.iter().map(|&(t, _)| -c.decay.eval(t)).collect();
            let ys: Vec<f64> = usable.iter().map(|&(_, p)| p.ln()).collect();
            let (slope, intercept, r_squared) = least_squares(&xs, &ys);
            DecayFit {
                candidate: c.name.clone(),
                slope_hat: slope,
                intercept,
                r_squared,
                points_used: usable.len(),
            }
        })
        .collect())
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    // a flat series (up to rounding) is fitted perfectly by slope 0
    let flat = syy <= 1e-24 * n * (1.0 + my * my);
    let r_squared = if flat { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r_squared)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<DecayCandidate> {
        vec![
            DecayCandidate::new("t/log(t)", DecayRate::TOverLog),
            DecayCandidate::new("sqrt(t)", DecayRate::Sqrt),
            DecayCandidate::new("t/log^2(t)", DecayRate::TOverLogSq),
        ]
    }

    fn synthetic(c: f64, decay: DecayRate) -> Vec<(f64, f64)> {
        (3..=60).map(|t| (t as f64, (-c * decay.eval(t as f64)).exp())).collect()
    }

    #[test]
    fn recovers_t_over_log_slope() {
        let fits = fit_decay_points(&synthetic(0.5, DecayRate::TOverLog), &families()).unwrap();
        assert!((fits[0].slope_hat - 0.5).abs() < 1e-9);
        assert!(fits[0].r_squared >= 0.9999);
    }

    #[test]
    fn sqrt_tail_prefers_sqrt_candidate() {
        let fits = fit_decay_points(&synthetic(0.3, DecayRate::Sqrt), &families()).unwrap();
        assert!(fits[1].r_squared > fits[0].r_squared);
        assert!((fits[1].slope_hat - 0.3).abs() < 1e-9);
    }

    #[test]
    fn flat_tail_has_zero_slope() {
        let pts: Vec<(f64, f64)> = (3..30).map(|t| (t as f64, 0.5)).collect();
        for f in fit_decay_points(&pts, &families()).unwrap() {
            assert!(f.slope_hat.abs() < 1e-12);
            assert_eq!(f.r_squared, 1.0);
        }
    }

    #[test]
    fn too_few_points_is_insufficient_data() {
        let pts = [(1.0, 0.5), (2.0, 0.4), (3.0, 0.3), (4.0, 0.0)];
        assert!(matches!(fit_decay_points(&pts, &families()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tail_fit_drops_small_counts() {
        let tail = TailEstimate {
            config_digest: String::new(),
            n_runs: 1000,
            epsilon: 0.1,
            t_grid: vec![3, 4, 5, 6, 7],
            exceed_count: vec![500, 300, 100, 29, 10],
            p_hat: vec![0.5, 0.3, 0.1, 0.029, 0.01],
            ci_low: vec![0.0; 5],
            ci_high: vec![1.0; 5],
            diverged_count: 0,
        };
        assert_eq!(fit_decay(&tail, &families()).unwrap()[0].points_used, 3);
    }
}
