//! Ensemble execution and tail-probability estimation.
//!
//! Runs are independent and addressed by their run index, so an ensemble is a
//! data-parallel map over `0..N` whose output is collected in index order. Tail
//! counts are derived from first hitting times: `F_t > eps` exactly when the
//! hitting time of `eps` exceeds `t`.

mod enumeration;
mod fit;
mod lemmas;

pub use enumeration::{appendix_f_enumeration, enumerate_stuck_probability, lower_bound_instance, DyadicProb};
pub use fit::{fit_decay, fit_decay_points, DecayCandidate, DecayFit, MIN_EXCEED_COUNT};
pub use lemmas::{verify_lemma_suite, LemmaReport, LemmaRow, LemmaSuite, MGF_INNER_NORMS};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimizers::{run_lean, run_trajectory, RunConfig, RunSummary, TrajectoryRecord};
use crate::stats::{wilson_interval, Z_95};

/// Stable 64-bit FNV-1a digest of a run configuration's debug rendering.
pub fn config_digest(config: &RunConfig) -> String {
    let text = format!("{config:?}");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(job),
        None => job(),
    }
}

/// Lean summaries of `n` runs, in run-index order. `workers` caps the thread
/// count; the result does not depend on it.
pub fn run_ensemble(config: &RunConfig, n: u64, workers: Option<usize>) -> Ensemble {
    let runs = with_workers(workers, || {
        (0..n).into_par_iter().map(|i| run_lean(config, i)).collect::<Vec<_>>()
    });
    Ensemble {
        config_digest: config_digest(config),
        epsilon_grid: config.epsilon_grid().to_vec(),
        horizon: config.horizon(),
        runs,
    }
}

/// Full per-iterate records; only sensible for small ensembles.
pub fn run_ensemble_full(config: &RunConfig, n: u64, workers: Option<usize>) -> Vec<TrajectoryRecord> {
    with_workers(workers, || {
        (0..n).into_par_iter().map(|i| run_trajectory(config, i)).collect()
    })
}

/// Lean summaries of an ensemble plus what is needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub config_digest: String,
    pub epsilon_grid: Vec<f64>,
    pub horizon: u64,
    pub runs: Vec<RunSummary>,
}

impl Ensemble {
    pub fn diverged_count(&self) -> u64 {
        self.runs.iter().filter(|r| r.diverged).count() as u64
    }

    pub fn epsilon_index(&self, epsilon: f64) -> Result<usize> {
        self.epsilon_grid
            .iter()
            .position(|e| (e - epsilon).abs() <= 1e-12 * e.abs().max(epsilon.abs()))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "epsilon {epsilon} is not in the recorded grid {:?}",
                    self.epsilon_grid
                ))
            })
    }
}

/// Exceedance counts and Wilson 95% intervals for `P(F_t > eps)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub config_digest: String,
    pub n_runs: u64,
    pub epsilon: f64,
    pub t_grid: Vec<u64>,
    pub exceed_count: Vec<u64>,
    pub p_hat: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub diverged_count: u64,
}

impl TailEstimate {
    pub fn wilson_halfwidth(&self, i: usize) -> f64 {
        0.5 * (self.ci_high[i] - self.ci_low[i])
    }

    pub fn index_of(&self, t: u64) -> Option<usize> {
        self.t_grid.iter().position(|&s| s == t)
    }
}

pub fn estimate_tail(ensemble: &Ensemble, epsilon: f64, t_grid: &[u64]) -> Result<TailEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let k = ensemble.epsilon_index(epsilon)?;
    if t_grid.is_empty() {
        return Err(Error::invalid("t grid must not be empty"));
    }
    if !t_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("t grid must be strictly increasing"));
    }
    if t_grid[0] == 0 || *t_grid.last().unwrap() > ensemble.horizon {
        return Err(Error::invalid(format!(
            "t grid must lie in [1, {}] (the recorded horizon)",
            ensemble.horizon
        )));
    }
    let horizon = ensemble.horizon as usize;
    // hits[t] = number of runs whose hitting time equals t
    let mut hits = vec![0u64; horizon + 1];
    for run in &ensemble.runs {
        if run.diverged {
            continue;
        }
        if let Some(h) = run.hitting_times[k] {
            hits[h as usize] += 1;
        }
    }
    let n = ensemble.runs.len() as u64;
    let mut reached = 0u64;
    let mut next = 1usize;
    let mut exceed_count = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        while next <= t as usize {
            reached += hits[next];
            next += 1;
        }
        exceed_count.push(n - reached);
    }
    let p_hat: Vec<f64> = exceed_count.iter().map(|&c| c as f64 / n as f64).collect();
    assert!(
        p_hat.windows(2).all(|w| w[1] <= w[0]),
        "exceedance estimates must be non-increasing in t"
    );
    let (ci_low, ci_high) = exceed_count.iter().map(|&c| wilson_interval(c, n, Z_95)).unzip();
    Ok(TailEstimate {
        config_digest: ensemble.config_digest.clone(),
        n_runs: n,
        epsilon: ensemble.epsilon_grid[k],
        t_grid: t_grid.to_vec(),
        exceed_count,
        p_hat,
        ci_low,
        ci_high,
        diverged_count: ensemble.diverged_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::huber_cost;
    use crate::optimizers::{Method, StepSchedule};
    use crate::oracles::{NoiseModel, OracleSpec};
    use std::sync::Arc;

    fn noiseless_config(eps: f64) -> RunConfig {
        let cost = Arc::new(huber_cost(1.0, 2).unwrap());
        let oracle = OracleSpec::additive(cost, NoiseModel::sphere_bounded(2, 0.0, 0.0).unwrap()).unwrap();
        RunConfig::new(
            Method::Vanilla,
            Arc::new(oracle),
            vec![0.6, 0.0],
            60,
            StepSchedule::SgdSqrt { a: 0.5 },
            1,
            vec![eps],
        )
        .unwrap()
    }

    #[test]
    fn single_run_ensemble_is_the_run() {
        let config = noiseless_config(0.01);
        let e = run_ensemble(&config, 1, None);
        assert_eq!(e.runs, vec![run_lean(&config, 0)]);
    }

    #[test]
    fn ensembles_do_not_depend_on_worker_count() {
        let config = lower_bound_instance(1.0, vec![0.3, 0.4], 20, false).unwrap();
        let a = run_ensemble(&config, 5000, Some(1));
        let b = run_ensemble(&config, 5000, Some(4));
        let c = run_ensemble(&config, 5000, None);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn deterministic_hitting_time_in_noiseless_run() {
        // oracle: iterate r_{t+1} = (1 - alpha_t) r_t directly and find the
        // first t with r_t^2 <= eps
        let eps = 0.01;
        let mut r = 0.6f64;
        let mut t_star = 0;
        for t in 1..=60u64 {
            if r * r <= eps {
                t_star = t;
                break;
            }
            r *= 1.0 - 0.5 / ((t + 1) as f64).sqrt();
        }
        assert!(t_star > 1);
        let config = noiseless_config(eps);
        let e = run_ensemble(&config, 3, None);
        let grid: Vec<u64> = (1..=60).collect();
        let tail = estimate_tail(&e, eps, &grid).unwrap();
        for (t, p) in grid.iter().zip(&tail.p_hat) {
            assert_eq!(*p, if *t < t_star { 1.0 } else { 0.0 }, "t = {t}");
        }
    }

    #[test]
    fn tail_input_validation() {
        let config = noiseless_config(0.01);
        let e = run_ensemble(&config, 2, None);
        assert!(matches!(estimate_tail(&e, 0.02, &[1, 2]), Err(Error::InvalidArgument(_))));
        assert!(estimate_tail(&e, 0.01, &[0, 2]).is_err());
        assert!(estimate_tail(&e, 0.01, &[3, 2]).is_err());
        assert!(estimate_tail(&e, 0.01, &[61]).is_err());
        assert!(estimate_tail(&e, -1.0, &[1]).is_err());
    }

    #[test]
    fn threshold_above_stuck_value_is_never_exceeded_after_start() {
        // eps >= ||x_1||^2: every iterate already satisfies the threshold
        let config = lower_bound_instance(1.0, vec![0.3, 0.4], 10, false).unwrap();
        let config = RunConfig::new(
            *config.method(),
            Arc::new(config.oracle().clone()),
            config.init_x1().to_vec(),
            10,
            *config.step(),
            config.seed(),
            vec![0.25],
        )
        .unwrap();
        let e = run_ensemble(&config, 2000, None);
        let tail = estimate_tail(&e, 0.25, &[1, 5, 10]).unwrap();
        assert_eq!(tail.exceed_count, vec![0, 0, 0]);
    }

    #[test]
    fn stuck_event_lower_bounds_tail() {
        let x1 = vec![0.3, 0.4];
        let config = lower_bound_instance(1.0, x1, 5, false).unwrap();
        let e = run_ensemble(&config, 1 << 16, None);
        let tail = estimate_tail(&e, 0.125, &[1, 2, 3, 4, 5]).unwrap();
        let i = tail.index_of(5).unwrap();
        assert!(tail.ci_high[i] >= 0.0625);
        for (i, &t) in tail.t_grid.iter().enumerate() {
            assert!(tail.ci_low[i] <= tail.p_hat[i] && tail.p_hat[i] <= tail.ci_high[i]);
            assert!(tail.p_hat[i] + 3.0 * tail.wilson_halfwidth(i) >= crate::theory::lower_bound_exact_prob(t));
        }
    }
}
