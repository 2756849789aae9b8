//! Monte Carlo checks of the noise and clipping lemmas.
//!
//! Statistical checks pass when the estimate is at most the bound plus
//! `NUM_SE` standard errors. Hard bounds must hold on every draw.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimizers::ClipSchedule;
use crate::oracles::{clipping_bias_probe, uniform_direction, Certificate, NoiseKind, NoiseModel, OracleMode, OracleSpec};
use crate::rng;
use crate::stats::Moments;
use crate::theory::burn_in_bp;
use crate::vector::{dot, norm, norm_sq};

pub const NUM_SE: f64 = 5.0;
/// Norms of the test vectors for the inner-product MGF check, in units of `1/M`.
/// Both sides of `4/3` are covered.
pub const MGF_INNER_NORMS: [f64; 5] = [0.1, 1.0, 4.0 / 3.0, 2.0, 5.0];
// absorbs rounding when the bound is attained exactly (constant-norm noise)
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum LemmaSuite {
    /// `E exp(||z||^2 / M^2) <= e`
    MgfBounded { noise: NoiseModel, samples: usize, seed: u64 },
    /// `E exp(<x, z>) <= exp(3 M^2 ||x||^2 / 4)` on a grid of `x`.
    MgfInner { noise: NoiseModel, norms: Vec<f64>, directions: usize, samples: usize, seed: u64 },
    /// `||E clip(g) - grad f(x)|| <= 4 sigma^p gamma^(1-p)` for each `gamma`.
    ClipBias { oracle: OracleSpec, point: Vec<f64>, gammas: Vec<f64>, samples: usize, seed: u64 },
    /// Sub-Gaussian margin of the centred clipped output is at most zero.
    ClipSubgauss { oracle: OracleSpec, point: Vec<f64>, gammas: Vec<f64>, samples: usize, seed: u64 },
    /// General-coefficient thresholds at times `t >= B_p`: the clipping bias
    /// bound holds with `gamma = gamma_t`.
    ClipBiasGeneral { oracle: OracleSpec, point: Vec<f64>, clip: ClipSchedule, g: f64, times: Vec<u64>, samples: usize, seed: u64 },
    /// Mini-batch noise satisfies `||z|| <= 2 G_l` on every query.
    BatchBound { oracle: OracleSpec, points: Vec<Vec<f64>>, queries: usize, seed: u64 },
}

impl LemmaSuite {
    pub fn name(&self) -> &'static str {
        match self {
            LemmaSuite::MgfBounded { .. } => "mgf-bounded",
            LemmaSuite::MgfInner { .. } => "mgf-inner",
            LemmaSuite::ClipBias { .. } => "clip-bias",
            LemmaSuite::ClipSubgauss { .. } => "clip-subgauss",
            LemmaSuite::ClipBiasGeneral { .. } => "clip-bias-general",
            LemmaSuite::BatchBound { .. } => "batch-bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRow {
    pub label: String,
    pub empirical: f64,
    pub bound: f64,
    pub standard_error: f64,
    /// `(bound - empirical) / standard_error`; infinite when the error is zero.
    pub slack_se: f64,
    pub violations: u64,
    pub passed: bool,
}

impl LemmaRow {
    fn statistical(label: String, empirical: f64, bound: f64, se: f64) -> Self {
        let tol = ROUNDING * bound.abs().max(1.0);
        let passed = empirical <= bound + tol + NUM_SE * se;
        let slack_se = if se > 0.0 {
            (bound - empirical) / se
        } else if empirical <= bound + tol {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        Self { label, empirical, bound, standard_error: se, slack_se, violations: 0, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub suite: String,
    pub rows: Vec<LemmaRow>,
    pub passed: bool,
}

fn report(suite: &LemmaSuite, rows: Vec<LemmaRow>) -> LemmaReport {
    let passed = rows.iter().all(|r| r.passed);
    LemmaReport { suite: suite.name().to_string(), rows, passed }
}

fn as_bound(noise: &NoiseModel) -> Result<f64> {
    match noise.certificate() {
        Certificate::AlmostSureBound { m } if m > 0.0 => Ok(m),
        _ => Err(Error::precondition(format!(
            "{} noise has no positive almost-sure norm bound",
            noise.name()
        ))),
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    Ok(())
}

/// Runs one suite. Precondition failures are returned as errors; statistical
/// failures are reported in the rows.
pub fn verify_lemma_suite(suite: &LemmaSuite) -> Result<LemmaReport> {
    match suite {
        LemmaSuite::MgfBounded { noise, samples, seed } => {
            check_samples(*samples)?;
            let m = as_bound(noise)?;
            let parts = rng::par_chunks(*samples, *seed, |len, rng| {
                let mut acc = Moments::default();
                let mut z = vec![0.0; noise.dim()];
                for _ in 0..len {
                    noise.sample_into(rng, &mut z);
                    acc.push((norm_sq(&z) / (m * m)).exp());
                }
                acc
            });
            let mut acc = Moments::default();
            parts.iter().for_each(|p| acc.merge(p));
            let row = LemmaRow::statistical(
                format!("{} M={m}", noise.name()),
                acc.mean(),
                std::f64::consts::E,
                acc.standard_error(),
            );
            Ok(report(suite, vec![row]))
        }
        LemmaSuite::MgfInner { noise, norms, directions, samples, seed } => {
            check_samples(*samples)?;
            let m = as_bound(noise)?;
            if norms.is_empty() || *directions == 0 {
                return Err(Error::invalid("need at least one norm and one direction"));
            }
            let dim = noise.dim();
            // first direction: the atom for two-point noise (the extremal
            // case), otherwise e_1; the rest uniform
            let mut dirs = Vec::with_capacity(*directions);
            let mut first = vec![0.0; dim];
            match noise.kind() {
                NoiseKind::TwoPoint { atom } if norm(atom) > 0.0 => {
                    let r = norm(atom);
                    first.iter_mut().zip(atom).for_each(|(f, a)| *f = a / r);
                }
                _ => first[0] = 1.0,
            }
            dirs.push(first);
            let mut dir_rng = rng::stream(*seed, u64::MAX);
            while dirs.len() < *directions {
                let mut u = vec![0.0; dim];
                uniform_direction(&mut dir_rng, &mut u);
                dirs.push(u);
            }
            let points: Vec<(f64, usize, Vec<f64>)> = norms
                .iter()
                .flat_map(|&k| {
                    dirs.iter().enumerate().map(move |(j, u)| (k, j, u.iter().map(|v| v * k / m).collect()))
                })
                .collect();
            let parts = rng::par_chunks(*samples, *seed, |len, rng| {
                let mut acc = vec![Moments::default(); points.len()];
                let mut z = vec![0.0; dim];
                for _ in 0..len {
                    noise.sample_into(rng, &mut z);
                    for (a, (_, _, x)) in acc.iter_mut().zip(&points) {
                        a.push(dot(x, &z).exp());
                    }
                }
                acc
            });
            let mut acc = vec![Moments::default(); points.len()];
            for part in &parts {
                acc.iter_mut().zip(part).for_each(|(a, p)| a.merge(p));
            }
            let rows = points
                .iter()
                .zip(&acc)
                .map(|((k, j, x), a)| {
                    let bound = (0.75 * m * m * norm_sq(x)).exp();
                    LemmaRow::statistical(
                        format!("{} |x|={k}/M dir={j}", noise.name()),
                        a.mean(),
                        bound,
                        a.standard_error(),
                    )
                })
                .collect();
            Ok(report(suite, rows))
        }
        LemmaSuite::ClipBias { oracle, point, gammas, samples, seed }
        | LemmaSuite::ClipSubgauss { oracle, point, gammas, samples, seed } => {
            let bias = matches!(suite, LemmaSuite::ClipBias { .. });
            let mut rows = Vec::with_capacity(gammas.len());
            for (i, &gamma) in gammas.iter().enumerate() {
                let probe = clipping_bias_probe(oracle, point, gamma, *samples, seed.wrapping_add(i as u64))?;
                let label = format!("gamma={gamma} p={}", probe.moment_p);
                rows.push(if bias {
                    LemmaRow::statistical(label, probe.bias_norm_estimate, probe.bias_bound, probe.bias_standard_error)
                } else {
                    LemmaRow::statistical(label, probe.subgaussian_margin, 0.0, probe.subgaussian_standard_error)
                });
            }
            Ok(report(suite, rows))
        }
        LemmaSuite::ClipBiasGeneral { oracle, point, clip, g, times, samples, seed } => {
            let (p, c) = match *clip {
                ClipSchedule::GeneralC { p, c } => (p, c),
                ClipSchedule::PaperEq5 { p, g } => (p, 2.0 * g),
                ClipSchedule::Constant { .. } => {
                    return Err(Error::invalid("a constant threshold has no burn-in time"))
                }
            };
            let bp = burn_in_bp(*g, c, p)?;
            let mut rows = Vec::with_capacity(times.len());
            for (i, &t) in times.iter().enumerate() {
                if (t as f64) < bp {
                    return Err(Error::precondition(format!("t = {t} is below the burn-in B_p = {bp}")));
                }
                let gamma = clip.threshold(t);
                let probe = clipping_bias_probe(oracle, point, gamma, *samples, seed.wrapping_add(i as u64))?;
                rows.push(LemmaRow::statistical(
                    format!("t={t} gamma={gamma}"),
                    probe.bias_norm_estimate,
                    probe.bias_bound,
                    probe.bias_standard_error,
                ));
            }
            Ok(report(suite, rows))
        }
        LemmaSuite::BatchBound { oracle, points, queries, seed } => {
            if !matches!(oracle.mode(), OracleMode::BatchSubsample { .. }) {
                return Err(Error::invalid("batch-bound needs a mini-batch oracle"));
            }
            let g_l = oracle
                .cost()
                .sample_grad_bound()
                .ok_or_else(|| Error::invalid("batch-bound needs a finite-sum cost"))?;
            let bound = 2.0 * g_l;
            let mut rows = Vec::with_capacity(points.len());
            for (i, x) in points.iter().enumerate() {
                let grad = oracle.cost().gradient(x)?;
                let dim = oracle.dim();
                let parts = rng::par_chunks(*queries, seed.wrapping_add(i as u64), |len, rng| {
                    let mut out = vec![0.0; dim];
                    let mut scratch = vec![0.0; dim];
                    let mut worst = 0.0f64;
                    let mut violations = 0u64;
                    for _ in 0..len {
                        oracle.query_into(x, rng, &mut out, &mut scratch);
                        out.iter_mut().zip(&grad).for_each(|(o, g)| *o -= g);
                        let r = norm(&out);
                        worst = worst.max(r);
                        if r > bound {
                            violations += 1;
                        }
                    }
                    (worst, violations)
                });
                let worst = parts.iter().map(|p| p.0).fold(0.0, f64::max);
                let violations: u64 = parts.iter().map(|p| p.1).sum();
                rows.push(LemmaRow {
                    label: format!("point {i}"),
                    empirical: worst,
                    bound,
                    standard_error: 0.0,
                    slack_se: if violations == 0 { f64::INFINITY } else { f64::NEG_INFINITY },
                    violations,
                    passed: violations == 0,
                });
            }
            Ok(report(suite, rows))
        }
    }
}
