//! Exact law of the "stuck" event on the two-atom lower-bound instance.
//!
//! With Huber threshold `G`, `0 < ||x_1|| <= G`, noise `+x_1` or `-x_1` with
//! equal probability and `alpha_t = 1 / (2 sqrt(t + 1))`, the draw `-x_1` at
//! `x_1` cancels the gradient exactly, so the iterate does not move. The
//! probability that `x_1 = ... = x_t` is `2^(1-t)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::costs::huber_cost;
use crate::error::{Error, Result};
use crate::optimizers::{ClipSchedule, Method, RunConfig, StepSchedule};
use crate::oracles::{clip_in_place, NoiseKind, NoiseModel, OracleMode, OracleSpec};
use crate::vector::{norm, norm_sq};

pub const MAX_ENUMERATION_T: u64 = 24;

/// Probability `numerator / 2^log2_denominator`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DyadicProb {
    pub t: u64,
    pub numerator: u64,
    pub log2_denominator: u32,
}

impl DyadicProb {
    pub fn value(&self) -> f64 {
        self.numerator as f64 * (-(self.log2_denominator as f64)).exp2()
    }

    /// Exact comparison with `2^(1-t)` after reducing the fraction.
    pub fn equals_closed_form(&self) -> bool {
        let (mut num, mut den) = (self.numerator, self.log2_denominator);
        while num != 0 && num % 2 == 0 && den > 0 {
            num /= 2;
            den -= 1;
        }
        num == 1 && den as u64 == self.t - 1
    }
}

/// The lower-bound construction as a run configuration. With `clipped` the
/// threshold is the constant `2G`, which the iterates never reach.
pub fn lower_bound_instance(g: f64, x1: Vec<f64>, horizon: u64, clipped: bool) -> Result<RunConfig> {
    let r = norm(&x1);
    if !(r > 0.0 && r <= g) {
        return Err(Error::invalid(format!("need 0 < ||x_1|| <= G, got ||x_1|| = {r}, G = {g}")));
    }
    let cost = Arc::new(huber_cost(g, x1.len())?);
    let oracle = OracleSpec::additive(cost, NoiseModel::two_point(x1.clone())?)?;
    let method = if clipped {
        Method::Clipped { clip: ClipSchedule::Constant { gamma: 2.0 * g } }
    } else {
        Method::Vanilla
    };
    let eps = norm_sq(&x1) / 2.0;
    RunConfig::new(method, Arc::new(oracle), x1, horizon, StepSchedule::SgdSqrt { a: 0.5 }, 0, vec![eps])
}

/// `P(x_1 = ... = x_t)` for `t = 1..=t_max`, by exhaustive propagation of the
/// two-atom noise chain. Paths are merged by exact iterate bit pattern; paths
/// that have left `x_1` are absorbed into a single bucket.
pub fn enumerate_stuck_probability(config: &RunConfig, t_max: u64) -> Result<Vec<DyadicProb>> {
    if t_max == 0 || t_max > MAX_ENUMERATION_T {
        return Err(Error::invalid(format!("t_max must lie in [1, {MAX_ENUMERATION_T}], got {t_max}")));
    }
    let oracle = config.oracle();
    let atom = match oracle.mode() {
        OracleMode::AdditiveNoise(noise) => match noise.kind() {
            NoiseKind::TwoPoint { atom } => atom.clone(),
            _ => return Err(Error::invalid("enumeration needs two-point additive noise")),
        },
        _ => return Err(Error::invalid("enumeration needs an additive-noise oracle")),
    };
    let cost = oracle.cost();
    let dim = oracle.dim();
    let x1 = config.init_x1().to_vec();
    let key = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let x1_key = key(&x1);

    // stuck states keyed by bit pattern, numerators over 2^(t-1)
    let mut stuck: BTreeMap<Vec<u64>, (Vec<f64>, u64)> = BTreeMap::new();
    stuck.insert(x1_key.clone(), (x1, 1));
    let mut escaped = 0u64;
    let mut out = vec![DyadicProb { t: 1, numerator: 1, log2_denominator: 0 }];
    let mut grad = vec![0.0; dim];
    let mut g = vec![0.0; dim];

    for t in 1..t_max {
        let alpha = config.step().step_size(t);
        let mut next: BTreeMap<Vec<u64>, (Vec<f64>, u64)> = BTreeMap::new();
        escaped *= 2;
        for (x, count) in stuck.values() {
            cost.gradient_into(x, &mut grad);
            for sign in [1.0, -1.0] {
                for ((gi, di), ai) in g.iter_mut().zip(&grad).zip(&atom) {
                    *gi = di + sign * ai;
                }
                if let Method::Clipped { clip } = config.method() {
                    clip_in_place(&mut g, clip.threshold(t));
                }
                let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
                let k = key(&y);
                if k == x1_key {
                    next.entry(k).or_insert_with(|| (y, 0)).1 += count;
                } else {
                    escaped += count;
                }
            }
        }
        stuck = next;
        let numerator: u64 = stuck.values().map(|(_, c)| c).sum();
        debug_assert_eq!(numerator + escaped, 1u64 << t);
        out.push(DyadicProb { t: t + 1, numerator, log2_denominator: t as u32 });
    }
    Ok(out)
}

/// Stuck-event law on the clipped lower-bound preset (`G = 1`, `x_1 = (0.3, 0.4)`).
pub fn appendix_f_enumeration(t_max: u64) -> Result<Vec<DyadicProb>> {
    let config = lower_bound_instance(1.0, vec![0.3, 0.4], t_max.max(1), true)?;
    enumerate_stuck_probability(&config, t_max)
}
