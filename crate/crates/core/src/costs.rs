//! Smooth test costs with certified constants.
//!
//! Every [`CostSpec`] carries a smoothness constant `L`, a global gradient
//! bound `G` and a lower bound `f_star`, all exact rather than estimated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, norm, norm_sq};

/// One labelled record of a finite-sum dataset. Labels are `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `log(1 + exp(-y <phi, x>))`, globally Lipschitz with constant `||phi||`.
    LipschitzLogistic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    Huber { threshold: f64 },
    PseudoHuber { scale: f64 },
    FiniteSum { samples: Vec<LabeledSample>, loss: LossKind },
}

/// A differentiable cost together with its certified constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    kind: CostKind,
    dim: usize,
    smoothness_l: f64,
    grad_bound_g: f64,
    lower_bound_fstar: f64,
}

/// Huber cost: `||x||^2 / 2` inside the ball of radius `G`, linear growth
/// `G ||x|| - G^2 / 2` outside it.
pub fn huber_cost(threshold_g: f64, dim: usize) -> Result<CostSpec> {
    if !(threshold_g > 0.0 && threshold_g.is_finite()) {
        return Err(Error::invalid(format!("huber threshold must be positive, got {threshold_g}")));
    }
    if dim == 0 {
        return Err(Error::invalid("huber dimension must be positive"));
    }
    Ok(CostSpec {
        kind: CostKind::Huber { threshold: threshold_g },
        dim,
        smoothness_l: 2.0,
        grad_bound_g: threshold_g,
        lower_bound_fstar: 0.0,
    })
}

/// Separable pseudo-Huber cost `sum_i s^2 (sqrt(1 + (x_i/s)^2) - 1)`.
pub fn pseudo_huber_cost(scale: f64, dim: usize) -> Result<CostSpec> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("pseudo-huber scale must be positive, got {scale}")));
    }
    if dim == 0 {
        return Err(Error::invalid("pseudo-huber dimension must be positive"));
    }
    Ok(CostSpec {
        kind: CostKind::PseudoHuber { scale },
        dim,
        smoothness_l: 1.0,
        grad_bound_g: scale * (dim as f64).sqrt(),
        lower_bound_fstar: 0.0,
    })
}

/// Finite-sum cost `(1/m) sum_i loss(x; sample_i)`.
///
/// The per-sample gradient bound is `max_i ||phi_i||`, which also bounds the
/// full gradient. The smoothness constant is `max_i ||phi_i||^2 / 4`.
pub fn batch_loss_cost(dataset: Vec<LabeledSample>, loss: LossKind) -> Result<CostSpec> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::invalid("dataset must contain at least one sample"))?;
    let dim = first.features.len();
    if dim == 0 {
        return Err(Error::invalid("samples must have at least one feature"));
    }
    let mut max_norm_sq: f64 = 0.0;
    for (i, s) in dataset.iter().enumerate() {
        if s.features.len() != dim {
            return Err(Error::invalid(format!(
                "sample {i} has {} features, expected {dim}",
                s.features.len()
            )));
        }
        if !s.features.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} has non-finite features")));
        }
        if s.label != 1.0 && s.label != -1.0 {
            return Err(Error::invalid(format!("sample {i} label must be -1 or +1, got {}", s.label)));
        }
        max_norm_sq = max_norm_sq.max(norm_sq(&s.features));
    }
    if max_norm_sq == 0.0 {
        return Err(Error::invalid("all feature vectors are zero; gradient bound would vanish"));
    }
    Ok(CostSpec {
        kind: CostKind::FiniteSum { samples: dataset, loss },
        dim,
        smoothness_l: max_norm_sq / 4.0,
        grad_bound_g: max_norm_sq.sqrt(),
        lower_bound_fstar: 0.0,
    })
}

// log(1 + e^u) without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl CostSpec {
    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness_l(&self) -> f64 {
        self.smoothness_l
    }

    pub fn grad_bound_g(&self) -> f64 {
        self.grad_bound_g
    }

    pub fn lower_bound_fstar(&self) -> f64 {
        self.lower_bound_fstar
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CostKind::Huber { .. } => "huber",
            CostKind::PseudoHuber { .. } => "pseudo-huber",
            CostKind::FiniteSum { .. } => "logistic",
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, cost expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            CostKind::Huber { threshold } => {
                let r = norm(x);
                if r <= *threshold {
                    0.5 * r * r
                } else {
                    threshold * r - 0.5 * threshold * threshold
                }
            }
            CostKind::PseudoHuber { scale } => x
                .iter()
                .map(|xi| {
                    let u = xi / scale;
                    // s^2 (sqrt(1+u^2) - 1) = s^2 u^2 / (sqrt(1+u^2) + 1), stable near 0
                    scale * scale * u * u / ((1.0 + u * u).sqrt() + 1.0)
                })
                .sum(),
            CostKind::FiniteSum { samples, .. } => {
                let total: f64 = samples
                    .iter()
                    .map(|s| softplus(-s.label * dot(&s.features, x)))
                    .sum();
                total / samples.len() as f64
            }
        }
    }

    /// Writes the analytic gradient at `x` into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            CostKind::Huber { threshold } => {
                let r = norm(x);
                let factor = if r <= *threshold { 1.0 } else { threshold / r };
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = factor * xi;
                }
            }
            CostKind::PseudoHuber { scale } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    let u = xi / scale;
                    *o = xi / (1.0 + u * u).sqrt();
                }
            }
            CostKind::FiniteSum { samples, .. } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let inv_m = 1.0 / samples.len() as f64;
                for s in samples {
                    let w = -s.label * sigmoid(-s.label * dot(&s.features, x)) * inv_m;
                    for (o, phi) in out.iter_mut().zip(&s.features) {
                        *o += w * phi;
                    }
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    pub fn value_checked(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value(x))
    }

    /// Number of records for finite-sum costs.
    pub fn num_samples(&self) -> Option<usize> {
        match &self.kind {
            CostKind::FiniteSum { samples, .. } => Some(samples.len()),
            _ => None,
        }
    }

    /// Bound on every per-sample gradient, `G_l`, for finite-sum costs.
    pub fn sample_grad_bound(&self) -> Option<f64> {
        match self.kind {
            CostKind::FiniteSum { .. } => Some(self.grad_bound_g),
            _ => None,
        }
    }

    /// Gradient of the `index`-th summand. Panics if the cost is not a finite sum
    /// or `index` is out of range.
    pub fn sample_gradient_into(&self, index: usize, x: &[f64], out: &mut [f64]) {
        let CostKind::FiniteSum { samples, .. } = &self.kind else {
            panic!("sample_gradient_into called on a non finite-sum cost");
        };
        let s = &samples[index];
        let w = -s.label * sigmoid(-s.label * dot(&s.features, x));
        for (o, phi) in out.iter_mut().zip(&s.features) {
            *o = w * phi;
        }
    }

    pub fn sample_gradient(&self, index: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let m = self
            .num_samples()
            .ok_or_else(|| Error::invalid(format!("{} cost has no per-sample gradients", self.name())))?;
        if index >= m {
            return Err(Error::invalid(format!("sample index {index} out of range for {m} samples")));
        }
        let mut g = vec![0.0; self.dim];
        self.sample_gradient_into(index, x, &mut g);
        Ok(g)
    }
}

/// Central finite-difference gradient with step `1e-5 * max(1, ||x||)`.
pub fn finite_difference_gradient(cost: &CostSpec, x: &[f64]) -> Vec<f64> {
    let h = 1e-5 * norm(x).max(1.0);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = cost.value(&probe);
            probe[i] = x[i] - h;
            let down = cost.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||grad - fd|| / max(||grad||, 1)` at `x`.
pub fn gradient_check_error(cost: &CostSpec, x: &[f64]) -> f64 {
    let fd = finite_difference_gradient(cost, x);
    let mut g = vec![0.0; x.len()];
    cost.gradient_into(x, &mut g);
    crate::vector::distance(&g, &fd) / norm(&g).max(1.0)
}
