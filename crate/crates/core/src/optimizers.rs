//! Vanilla and clipped SGD with the step-size and clipping schedules the tail
//! bounds are stated for, plus per-run statistics.
//!
//! Time is 1-based: `x_1` is the deterministic initial point, the update from
//! `x_t` to `x_{t+1}` uses `alpha_t` and `gamma_t`, and a run of horizon `T`
//! visits `x_1, ..., x_T`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{clip_in_place, OracleSpec};
use crate::rng;
use crate::vector::{all_finite, norm_sq};

/// Iterates with norm above this are treated as a divergence.
pub const DIVERGENCE_NORM: f64 = 1e9;

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::invalid(format!("p must lie in (1, 2], got {p}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `a / sqrt(t + 1)`
    SgdSqrt { a: f64 },
    /// `(t + 1)^(-p / (3p - 2))`
    CsgdPower { p: f64 },
    Constant { c: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::SgdSqrt { a } => check_positive("step coefficient a", a),
            StepSchedule::CsgdPower { p } => check_p(p),
            StepSchedule::Constant { c } => check_positive("constant step", c),
        }
    }

    /// Step size at a (possibly non-integer) time `t`.
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            StepSchedule::SgdSqrt { a } => a / (t + 1.0).sqrt(),
            StepSchedule::CsgdPower { p } => (t + 1.0).powf(-p / (3.0 * p - 2.0)),
            StepSchedule::Constant { c } => c,
        }
    }

    pub fn step_size(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        self.at(t as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClipSchedule {
    /// `2G (t+1)^((2-p)/(6p-4))` for `p < 2`, `2G sqrt(log(t+1))` for `p = 2`.
    PaperEq5 { p: f64, g: f64 },
    /// Same shapes with an arbitrary coefficient `C` in place of `2G`.
    GeneralC { p: f64, c: f64 },
    Constant { gamma: f64 },
}

fn threshold_shape(coef: f64, p: f64, t: f64) -> f64 {
    if p == 2.0 {
        coef * (t + 1.0).ln().sqrt()
    } else {
        coef * (t + 1.0).powf((2.0 - p) / (6.0 * p - 4.0))
    }
}

impl ClipSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClipSchedule::PaperEq5 { p, g } => {
                check_p(p)?;
                check_positive("clipping gradient bound G", g)
            }
            ClipSchedule::GeneralC { p, c } => {
                check_p(p)?;
                check_positive("clipping coefficient C", c)
            }
            ClipSchedule::Constant { gamma } => check_positive("constant clipping threshold", gamma),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ClipSchedule::PaperEq5 { p, g } => threshold_shape(2.0 * g, p, t),
            ClipSchedule::GeneralC { p, c } => threshold_shape(c, p, t),
            ClipSchedule::Constant { gamma } => gamma,
        }
    }

    pub fn threshold(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        self.at(t as f64)
    }

    /// Coefficient multiplying the time-dependent shape (`2G`, `C`, or the
    /// constant itself).
    pub fn coefficient(&self) -> f64 {
        match *self {
            ClipSchedule::PaperEq5 { g, .. } => 2.0 * g,
            ClipSchedule::GeneralC { c, .. } => c,
            ClipSchedule::Constant { gamma } => gamma,
        }
    }
}

/// `min{1, gamma / ||g||} g`.
pub fn clip_vector(g: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, gamma);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    Clipped { clip: ClipSchedule },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Clipped { .. } => "clipped",
        }
    }
}

/// Full specification of one optimizer run family; individual runs differ only
/// by their run index, which selects the random stream.
#[derive(Debug, Clone)]
pub struct RunConfig {
    method: Method,
    oracle: Arc<OracleSpec>,
    init_x1: Vec<f64>,
    horizon: u64,
    step: StepSchedule,
    seed: u64,
    epsilon_grid: Vec<f64>,
}

impl RunConfig {
    pub fn new(
        method: Method,
        oracle: Arc<OracleSpec>,
        init_x1: Vec<f64>,
        horizon: u64,
        step: StepSchedule,
        seed: u64,
        epsilon_grid: Vec<f64>,
    ) -> Result<Self> {
        if init_x1.len() != oracle.dim() {
            return Err(Error::invalid(format!(
                "initial point has dimension {}, cost expects {}",
                init_x1.len(),
                oracle.dim()
            )));
        }
        if !all_finite(&init_x1) {
            return Err(Error::invalid("initial point must be finite"));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        step.validate()?;
        if let StepSchedule::SgdSqrt { a } = step {
            let l = oracle.cost().smoothness_l();
            if a > 1.0 / l {
                return Err(Error::invalid(format!(
                    "step coefficient a = {a} exceeds 1/L = {} for this cost",
                    1.0 / l
                )));
            }
        }
        if let Method::Clipped { clip } = method {
            clip.validate()?;
        }
        validate_epsilon_grid(&epsilon_grid)?;
        Ok(Self { method, oracle, init_x1, horizon, step, seed, epsilon_grid })
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn oracle(&self) -> &OracleSpec {
        &self.oracle
    }

    pub fn init_x1(&self) -> &[f64] {
        &self.init_x1
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn step(&self) -> &StepSchedule {
        &self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epsilon_grid(&self) -> &[f64] {
        &self.epsilon_grid
    }

    /// Same configuration with a different method; used to pair vanilla and
    /// clipped ensembles on shared streams.
    pub fn with_method(&self, method: Method) -> Result<Self> {
        Self::new(
            method,
            self.oracle.clone(),
            self.init_x1.clone(),
            self.horizon,
            self.step,
            self.seed,
            self.epsilon_grid.clone(),
        )
    }

    pub fn with_horizon(&self, horizon: u64) -> Result<Self> {
        Self::new(
            self.method,
            self.oracle.clone(),
            self.init_x1.clone(),
            horizon,
            self.step,
            self.seed,
            self.epsilon_grid.clone(),
        )
    }
}

pub fn validate_epsilon_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("epsilon grid must not be empty"));
    }
    if !grid.iter().all(|e| *e > 0.0 && e.is_finite()) {
        return Err(Error::invalid("epsilon grid values must be positive and finite"));
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("epsilon grid must be strictly increasing"));
    }
    Ok(())
}

/// Outcome of the trajectory kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub clip_events: u64,
    pub diverged: bool,
    /// Number of iterates visited (equals `T` unless the run diverged).
    pub visited: u64,
}

/// Runs one trajectory and reports every visited iterate to `observer` as
/// `(t, x_t, ||grad f(x_t)||^2)`, with the gradient taken from the cost rather
/// than the oracle.
pub fn simulate<F>(config: &RunConfig, run_index: u64, mut observer: F) -> RunOutcome
where
    F: FnMut(u64, &[f64], f64),
{
    let oracle = config.oracle();
    let cost = oracle.cost();
    let dim = oracle.dim();
    let mut rng = rng::stream(config.seed, run_index);
    let mut x = config.init_x1.clone();
    let mut grad = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut clip_events = 0;

    for t in 1..=config.horizon {
        cost.gradient_into(&x, &mut grad);
        observer(t, &x, norm_sq(&grad));
        if t == config.horizon {
            break;
        }
        oracle.query_into(&x, &mut rng, &mut g, &mut scratch);
        if let Method::Clipped { clip } = &config.method {
            if clip_in_place(&mut g, clip.threshold(t)) {
                clip_events += 1;
            }
        }
        let alpha = config.step.step_size(t);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= alpha * gi;
        }
        if !all_finite(&x) || norm_sq(&x) > DIVERGENCE_NORM * DIVERGENCE_NORM {
            return RunOutcome { clip_events, diverged: true, visited: t };
        }
    }
    RunOutcome { clip_events, diverged: false, visited: config.horizon }
}

/// Records first hitting times `min{t : ||grad f(x_t)||^2 <= eps}` for an
/// increasing epsilon grid.
#[derive(Debug, Clone)]
pub struct HittingTimes<'a> {
    grid: &'a [f64],
    times: Vec<Option<u64>>,
    // grid[..pending] have not been hit yet
    pending: usize,
}

impl<'a> HittingTimes<'a> {
    pub fn new(grid: &'a [f64]) -> Self {
        Self { grid, times: vec![None; grid.len()], pending: grid.len() }
    }

    #[inline]
    pub fn observe(&mut self, t: u64, grad_norm_sq: f64) {
        while self.pending > 0 && grad_norm_sq <= self.grid[self.pending - 1] {
            self.pending -= 1;
            self.times[self.pending] = Some(t);
        }
    }

    pub fn finish(self) -> Vec<Option<u64>> {
        self.times
    }
}

/// Complete per-iterate record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub run_index: u64,
    /// `||grad f(x_t)||^2` for the visited iterates, index `t - 1`.
    pub grad_norm_sq: Vec<f64>,
    /// Running minimum `F_t`.
    pub running_min: Vec<f64>,
    /// Running average `A_t`.
    pub running_avg: Vec<f64>,
    pub clip_events: u64,
    /// Hitting time per epsilon in the config grid; `None` means not within `T`.
    pub hitting_times: Vec<Option<u64>>,
    pub diverged: bool,
}

impl TrajectoryRecord {
    pub fn f_t(&self, t: u64) -> f64 {
        self.running_min[(t - 1) as usize]
    }

    pub fn a_t(&self, t: u64) -> f64 {
        self.running_avg[(t - 1) as usize]
    }

    pub fn to_summary(&self) -> RunSummary {
        RunSummary {
            run_index: self.run_index,
            diverged: self.diverged,
            clip_events: self.clip_events,
            hitting_times: self.hitting_times.clone(),
            final_f: self.running_min.last().copied().unwrap_or(f64::NAN),
            final_a: self.running_avg.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Lean per-run summary used for large ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_index: u64,
    pub diverged: bool,
    pub clip_events: u64,
    pub hitting_times: Vec<Option<u64>>,
    pub final_f: f64,
    pub final_a: f64,
}

impl RunSummary {
    /// `F_t > eps_k`, with diverged runs always counted as exceeding.
    #[inline]
    pub fn exceeds(&self, eps_index: usize, t: u64) -> bool {
        if self.diverged {
            return true;
        }
        match self.hitting_times[eps_index] {
            Some(hit) => hit > t,
            None => true,
        }
    }
}

pub fn run_trajectory(config: &RunConfig, run_index: u64) -> TrajectoryRecord {
    let cap = config.horizon as usize;
    let mut grad_norm_sq = Vec::with_capacity(cap);
    let mut running_min = Vec::with_capacity(cap);
    let mut running_avg = Vec::with_capacity(cap);
    let mut hits = HittingTimes::new(&config.epsilon_grid);
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    let outcome = simulate(config, run_index, |t, _, gns| {
        min = min.min(gns);
        sum += gns;
        grad_norm_sq.push(gns);
        running_min.push(min);
        running_avg.push(sum / t as f64);
        hits.observe(t, gns);
    });
    let mut hitting_times = hits.finish();
    if outcome.diverged {
        hitting_times.iter_mut().for_each(|h| *h = None);
    }
    TrajectoryRecord {
        run_index,
        grad_norm_sq,
        running_min,
        running_avg,
        clip_events: outcome.clip_events,
        hitting_times,
        diverged: outcome.diverged,
    }
}

pub fn run_lean(config: &RunConfig, run_index: u64) -> RunSummary {
    let mut hits = HittingTimes::new(&config.epsilon_grid);
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    let mut count = 0u64;
    let outcome = simulate(config, run_index, |t, _, gns| {
        min = min.min(gns);
        sum += gns;
        count = t;
        hits.observe(t, gns);
    });
    let mut hitting_times = hits.finish();
    if outcome.diverged {
        hitting_times.iter_mut().for_each(|h| *h = None);
    }
    RunSummary {
        run_index,
        diverged: outcome.diverged,
        clip_events: outcome.clip_events,
        hitting_times,
        final_f: min,
        final_a: sum / count as f64,
    }
}
