//! Stochastic first-order oracles and the noise families behind them.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{Moments, VectorMoments};
use crate::vector::{dot, norm, norm_sq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Fixed radius times a uniform direction; `bound` is the certified `M`.
    SphereBounded { radius: f64, bound: f64 },
    /// `+atom` or `-atom` with probability 1/2 each.
    TwoPoint { atom: Vec<f64> },
    /// Uniform direction times a Pareto(`scale`, `tail_index`) radius. The
    /// certificate is the exact `moment_p`-th moment.
    SymmetrizedPareto { scale: f64, tail_index: f64, moment_p: f64 },
    /// Isotropic Gaussian with per-coordinate standard deviation `std_dev`.
    Gaussian { std_dev: f64 },
}

/// Statistical property a noise model is certified to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    /// `||z|| <= m` almost surely.
    AlmostSureBound { m: f64 },
    /// `E ||z||^p <= sigma_p`.
    Moment { p: f64, sigma_p: f64 },
}

impl Certificate {
    /// Moment pair `(p, sigma^p)` implied by the certificate; an almost-sure
    /// bound `M` implies the second moment bound `M^2`.
    pub fn moment_pair(&self) -> (f64, f64) {
        match *self {
            Certificate::AlmostSureBound { m } => (2.0, m * m),
            Certificate::Moment { p, sigma_p } => (p, sigma_p),
        }
    }
}

fn check_moment_order(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::invalid(format!("moment order p must lie in (1, 2], got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    dim: usize,
    kind: NoiseKind,
}

impl NoiseModel {
    pub fn sphere_bounded(dim: usize, radius: f64, bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("noise dimension must be positive"));
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("sphere radius must be non-negative, got {radius}")));
        }
        if !(bound >= radius && bound.is_finite()) {
            return Err(Error::invalid(format!("certified bound {bound} is below the radius {radius}")));
        }
        Ok(Self { dim, kind: NoiseKind::SphereBounded { radius, bound } })
    }

    pub fn two_point(atom: Vec<f64>) -> Result<Self> {
        if atom.is_empty() {
            return Err(Error::invalid("two-point atom must be non-empty"));
        }
        if !atom.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("two-point atom must be finite"));
        }
        Ok(Self { dim: atom.len(), kind: NoiseKind::TwoPoint { atom } })
    }

    /// Symmetrized Pareto noise certified for the `moment_p`-th moment. The
    /// tail index must exceed `moment_p`, otherwise that moment is infinite.
    pub fn symmetrized_pareto(dim: usize, scale: f64, tail_index: f64, moment_p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("noise dimension must be positive"));
        }
        check_moment_order(moment_p)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("pareto scale must be positive, got {scale}")));
        }
        if !(tail_index > moment_p && tail_index.is_finite()) {
            return Err(Error::invalid(format!(
                "pareto tail index {tail_index} must exceed p = {moment_p} for a finite p-th moment"
            )));
        }
        Ok(Self { dim, kind: NoiseKind::SymmetrizedPareto { scale, tail_index, moment_p } })
    }

    /// Pareto noise with the default tail index `p + 0.5`.
    pub fn symmetrized_pareto_default(dim: usize, scale: f64, moment_p: f64) -> Result<Self> {
        Self::symmetrized_pareto(dim, scale, moment_p + 0.5, moment_p)
    }

    pub fn gaussian(dim: usize, std_dev: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("noise dimension must be positive"));
        }
        if !(std_dev >= 0.0 && std_dev.is_finite()) {
            return Err(Error::invalid(format!("gaussian std_dev must be non-negative, got {std_dev}")));
        }
        Ok(Self { dim, kind: NoiseKind::Gaussian { std_dev } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            NoiseKind::SphereBounded { .. } => "sphere-bounded",
            NoiseKind::TwoPoint { .. } => "two-point",
            NoiseKind::SymmetrizedPareto { .. } => "symmetrized-pareto",
            NoiseKind::Gaussian { .. } => "gaussian",
        }
    }

    pub fn certificate(&self) -> Certificate {
        match &self.kind {
            NoiseKind::SphereBounded { bound, .. } => Certificate::AlmostSureBound { m: *bound },
            NoiseKind::TwoPoint { atom } => Certificate::AlmostSureBound { m: norm(atom) },
            NoiseKind::SymmetrizedPareto { moment_p, .. } => Certificate::Moment {
                p: *moment_p,
                sigma_p: self.certify_moment(*moment_p).expect("validated at construction"),
            },
            NoiseKind::Gaussian { .. } => Certificate::Moment {
                p: 2.0,
                sigma_p: self.certify_moment(2.0).expect("p = 2 is valid"),
            },
        }
    }

    /// Exact closed-form `E ||z||^p` for `p` in `(1, 2]`.
    pub fn certify_moment(&self, p: f64) -> Result<f64> {
        check_moment_order(p)?;
        match &self.kind {
            NoiseKind::SphereBounded { radius, .. } => Ok(radius.powf(p)),
            NoiseKind::TwoPoint { atom } => Ok(norm(atom).powf(p)),
            NoiseKind::SymmetrizedPareto { scale, tail_index, .. } => {
                if *tail_index <= p {
                    return Err(Error::invalid(format!(
                        "pareto tail index {tail_index} gives an infinite moment of order {p}"
                    )));
                }
                Ok(tail_index * scale.powf(p) / (tail_index - p))
            }
            NoiseKind::Gaussian { std_dev } => {
                // E ||z||^p = s^p 2^{p/2} Gamma((d+p)/2) / Gamma(d/2)
                let d = self.dim as f64;
                let log_ratio = libm::lgamma(0.5 * (d + p)) - libm::lgamma(0.5 * d);
                Ok(std_dev.powf(p) * 2f64.powf(0.5 * p) * log_ratio.exp())
            }
        }
    }

    /// Writes one draw into `out`.
    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            NoiseKind::SphereBounded { radius, .. } => {
                uniform_direction(rng, out);
                out.iter_mut().for_each(|v| *v *= radius);
            }
            NoiseKind::TwoPoint { atom } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                for (o, a) in out.iter_mut().zip(atom) {
                    *o = sign * a;
                }
            }
            NoiseKind::SymmetrizedPareto { scale, tail_index, .. } => {
                uniform_direction(rng, out);
                let radius: f64 = Pareto::new(*scale, *tail_index)
                    .expect("validated at construction")
                    .sample(rng);
                out.iter_mut().for_each(|v| *v *= radius);
            }
            NoiseKind::Gaussian { std_dev } => {
                for o in out.iter_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    *o = std_dev * n;
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        self.sample_into(rng, &mut z);
        z
    }
}

/// Uniformly distributed unit vector (a random sign in one dimension).
pub fn uniform_direction(rng: &mut Stream, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        for o in out.iter_mut() {
            *o = StandardNormal.sample(rng);
        }
        let r = norm(out);
        if r > 0.0 {
            out.iter_mut().for_each(|v| *v /= r);
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleMode {
    /// `g = grad f(x) + z` with `z` drawn from the noise model.
    AdditiveNoise(NoiseModel),
    /// Mean of per-sample gradients over a uniformly random index subset.
    BatchSubsample { batch_size: usize },
}

/// A stochastic first-order oracle attached to a cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    cost: Arc<CostSpec>,
    mode: OracleMode,
}

impl OracleSpec {
    pub fn additive(cost: Arc<CostSpec>, noise: NoiseModel) -> Result<Self> {
        if noise.dim() != cost.dim() {
            return Err(Error::invalid(format!(
                "noise dimension {} does not match cost dimension {}",
                noise.dim(),
                cost.dim()
            )));
        }
        Ok(Self { cost, mode: OracleMode::AdditiveNoise(noise) })
    }

    pub fn batch(cost: Arc<CostSpec>, batch_size: usize) -> Result<Self> {
        let m = cost
            .num_samples()
            .ok_or_else(|| Error::invalid(format!("batch oracle needs a finite-sum cost, got {}", cost.name())))?;
        if batch_size == 0 || batch_size >= m {
            return Err(Error::invalid(format!(
                "batch size must satisfy 1 <= batch_size < m = {m}, got {batch_size}"
            )));
        }
        Ok(Self { cost, mode: OracleMode::BatchSubsample { batch_size } })
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn cost_arc(&self) -> &Arc<CostSpec> {
        &self.cost
    }

    pub fn mode(&self) -> &OracleMode {
        &self.mode
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    /// Certificate for the oracle noise `g - grad f(x)`. Batch noise is bounded
    /// by `2 G_l`.
    pub fn noise_certificate(&self) -> Certificate {
        match &self.mode {
            OracleMode::AdditiveNoise(noise) => noise.certificate(),
            OracleMode::BatchSubsample { .. } => Certificate::AlmostSureBound {
                m: 2.0 * self.cost.sample_grad_bound().expect("checked at construction"),
            },
        }
    }

    /// Writes one oracle output at `x` into `out`. `scratch` must have the cost
    /// dimension; its contents are overwritten.
    pub fn query_into(&self, x: &[f64], rng: &mut Stream, out: &mut [f64], scratch: &mut [f64]) {
        match &self.mode {
            OracleMode::AdditiveNoise(noise) => {
                self.cost.gradient_into(x, out);
                noise.sample_into(rng, scratch);
                for (o, z) in out.iter_mut().zip(scratch.iter()) {
                    *o += z;
                }
            }
            OracleMode::BatchSubsample { batch_size } => {
                let m = self.cost.num_samples().expect("checked at construction");
                out.iter_mut().for_each(|o| *o = 0.0);
                let inv = 1.0 / *batch_size as f64;
                for j in index::sample(rng, m, *batch_size) {
                    self.cost.sample_gradient_into(j, x, scratch);
                    for (o, g) in out.iter_mut().zip(scratch.iter()) {
                        *o += inv * g;
                    }
                }
            }
        }
    }

    pub fn query(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "query point has dimension {}, oracle expects {}",
                x.len(),
                self.dim()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.dim()];
        self.query_into(x, rng, &mut out, &mut scratch);
        Ok(out)
    }
}

/// `min{1, gamma / ||g||} g`, in place. Returns whether the vector was scaled.
#[inline]
pub fn clip_in_place(g: &mut [f64], gamma: f64) -> bool {
    let n = norm(g);
    if n > gamma {
        let s = gamma / n;
        g.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Result of [`clipping_bias_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipBiasProbe {
    pub gamma: f64,
    pub num_samples: usize,
    pub moment_p: f64,
    pub sigma_p: f64,
    /// `|| mean(clip(g)) - grad f(x) ||`
    pub bias_norm_estimate: f64,
    /// Standard error of the bias estimate (norm of per-coordinate errors).
    pub bias_standard_error: f64,
    /// `4 sigma^p gamma^(1-p)`
    pub bias_bound: f64,
    /// Largest `log E exp(s <u, theta_u>) - 3 gamma^2 s^2` over the grid.
    pub subgaussian_margin: f64,
    /// Delta-method standard error of the log-MGF estimate at the maximising
    /// grid point.
    pub subgaussian_standard_error: f64,
}

impl ClipBiasProbe {
    pub fn bias_within(&self, num_se: f64) -> bool {
        self.bias_norm_estimate <= self.bias_bound + num_se * self.bias_standard_error
    }

    pub fn subgaussian_within(&self, num_se: f64) -> bool {
        self.subgaussian_margin <= num_se * self.subgaussian_standard_error
    }
}

pub const PROBE_MIN_SAMPLES: usize = 100_000;
/// Scale grid for the MGF check, in units of `1 / gamma`.
pub const SUBGAUSSIAN_SCALES: [f64; 6] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
pub const SUBGAUSSIAN_DIRECTIONS: usize = 8;

/// Empirical clipping bias and sub-Gaussian margin of the clipped oracle at `x`.
///
/// Draws are reproducible from `seed`; the MGF pass replays the same streams
/// after the mean of the clipped outputs is known.
pub fn clipping_bias_probe(
    oracle: &OracleSpec,
    x: &[f64],
    gamma: f64,
    num_samples: usize,
    seed: u64,
) -> Result<ClipBiasProbe> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("clipping threshold must be positive, got {gamma}")));
    }
    if num_samples < PROBE_MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "clipping probe needs at least {PROBE_MIN_SAMPLES} samples, got {num_samples}"
        )));
    }
    let grad = oracle.cost().gradient(x)?;
    let grad_norm = norm(&grad);
    if grad_norm > 0.5 * gamma {
        return Err(Error::precondition(format!(
            "||grad f(x)|| = {grad_norm} exceeds gamma / 2 = {}",
            0.5 * gamma
        )));
    }
    let dim = oracle.dim();

    let draw_clipped = |rng: &mut Stream, out: &mut [f64], scratch: &mut [f64]| {
        oracle.query_into(x, rng, out, scratch);
        clip_in_place(out, gamma);
    };

    let partials = rng::par_chunks(num_samples, seed, |len, rng| {
        let mut acc = VectorMoments::new(dim);
        let mut out = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        for _ in 0..len {
            draw_clipped(rng, &mut out, &mut scratch);
            acc.push(&out);
        }
        acc
    });
    let mut moments = VectorMoments::new(dim);
    for p in &partials {
        moments.merge(p);
    }
    let mean = moments.mean();
    let bias: Vec<f64> = mean.iter().zip(&grad).map(|(m, g)| m - g).collect();
    let bias_standard_error = norm(&moments.standard_errors());

    // Direction grid from a dedicated stream so it does not depend on the data.
    let mut dir_rng = rng::stream(seed, u64::MAX);
    let directions: Vec<Vec<f64>> = (0..SUBGAUSSIAN_DIRECTIONS)
        .map(|_| {
            let mut u = vec![0.0; dim];
            uniform_direction(&mut dir_rng, &mut u);
            u
        })
        .collect();
    let n_grid = directions.len() * SUBGAUSSIAN_SCALES.len();

    let mgf_partials = rng::par_chunks(num_samples, seed, |len, rng| {
        let mut acc = vec![Moments::default(); n_grid];
        let mut out = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        let mut proj = vec![0.0; directions.len()];
        for _ in 0..len {
            draw_clipped(rng, &mut out, &mut scratch);
            for (o, m) in out.iter_mut().zip(&mean) {
                *o -= m;
            }
            for (pj, u) in proj.iter_mut().zip(&directions) {
                *pj = dot(u, &out);
            }
            let mut k = 0;
            for pj in &proj {
                for s in SUBGAUSSIAN_SCALES {
                    acc[k].push((s / gamma * pj).exp());
                    k += 1;
                }
            }
        }
        acc
    });
    let mut mgf = vec![Moments::default(); n_grid];
    for part in &mgf_partials {
        for (m, p) in mgf.iter_mut().zip(part) {
            m.merge(p);
        }
    }

    let mut margin = f64::NEG_INFINITY;
    let mut margin_se = 0.0;
    for (k, m) in mgf.iter().enumerate() {
        let s = SUBGAUSSIAN_SCALES[k % SUBGAUSSIAN_SCALES.len()] / gamma;
        let est = m.mean();
        let value = est.ln() - 3.0 * gamma * gamma * s * s;
        if value > margin {
            margin = value;
            margin_se = m.standard_error() / est;
        }
    }

    let (moment_p, sigma_p) = oracle.noise_certificate().moment_pair();
    Ok(ClipBiasProbe {
        gamma,
        num_samples,
        moment_p,
        sigma_p,
        bias_norm_estimate: norm(&bias),
        bias_standard_error,
        bias_bound: 4.0 * sigma_p * gamma.powf(1.0 - moment_p),
        subgaussian_margin: margin,
        subgaussian_standard_error: margin_se,
    })
}

/// Mean and per-coordinate standard errors of `n` oracle outputs at `x`.
pub fn oracle_output_moments(oracle: &OracleSpec, x: &[f64], n: usize, seed: u64) -> Result<VectorMoments> {
    oracle.cost().gradient(x)?;
    let dim = oracle.dim();
    let parts = rng::par_chunks(n, seed, |len, rng| {
        let mut acc = VectorMoments::new(dim);
        let mut out = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        for _ in 0..len {
            oracle.query_into(x, rng, &mut out, &mut scratch);
            acc.push(&out);
        }
        acc
    });
    let mut total = VectorMoments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Moments of `n` raw noise draws.
pub fn noise_moments(noise: &NoiseModel, n: usize, seed: u64) -> VectorMoments {
    let dim = noise.dim();
    let parts = rng::par_chunks(n, seed, |len, rng| {
        let mut acc = VectorMoments::new(dim);
        let mut z = vec![0.0; dim];
        for _ in 0..len {
            noise.sample_into(rng, &mut z);
            acc.push(&z);
        }
        acc
    });
    let mut total = VectorMoments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Monte Carlo moments of `||z||^p`.
pub fn empirical_norm_moment(noise: &NoiseModel, p: f64, n: usize, seed: u64) -> Moments {
    let dim = noise.dim();
    let parts = rng::par_chunks(n, seed, |len, rng| {
        let mut acc = Moments::default();
        let mut z = vec![0.0; dim];
        for _ in 0..len {
            noise.sample_into(rng, &mut z);
            acc.push(norm_sq(&z).powf(0.5 * p));
        }
        acc
    });
    let mut total = Moments::default();
    for p in &parts {
        total.merge(p);
    }
    total
}
