//! Closed-form rate functions, decay-rate sequences, the numerical
//! Fenchel-Legendre transform and the comparison curves for earlier tail
//! bounds.
//!
//! Every upper bound here has the shape
//! `P(F_t > eps) <= exp(-n_t I(eps) + o(n_t))`, where the rate function is the
//! conjugate of a quadratic `phi(lambda) = k lambda^2` on `lambda >= 0` (and
//! zero below), giving `I(x) = x^2 / (4k)` for `x >= 0` and `+inf` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decay-rate sequences `n_t`. Logarithms are natural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecayRate {
    /// `sqrt(t)`
    Sqrt,
    /// `t / log t`
    TOverLog,
    /// `t^beta / log t`
    PowerOverLog { beta: f64 },
    /// `t / log^2 t`
    TOverLogSq,
    /// `t`
    Linear,
    /// `sqrt(t) / log t`
    SqrtOverLog,
    /// `t^beta / log^q t`
    PowerOverLogPow { beta: f64, q: f64 },
}

impl DecayRate {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            DecayRate::Sqrt => t.sqrt(),
            DecayRate::TOverLog => t / t.ln(),
            DecayRate::PowerOverLog { beta } => t.powf(beta) / t.ln(),
            DecayRate::TOverLogSq => t / (t.ln() * t.ln()),
            DecayRate::Linear => t,
            DecayRate::SqrtOverLog => t.sqrt() / t.ln(),
            DecayRate::PowerOverLogPow { beta, q } => t.powf(beta) / t.ln().powf(q),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DecayRate::Sqrt => "sqrt(t)".into(),
            DecayRate::TOverLog => "t/log(t)".into(),
            DecayRate::PowerOverLog { beta } => format!("t^{beta}/log(t)"),
            DecayRate::TOverLogSq => "t/log^2(t)".into(),
            DecayRate::Linear => "t".into(),
            DecayRate::SqrtOverLog => "sqrt(t)/log(t)".into(),
            DecayRate::PowerOverLogPow { beta, q } => format!("t^{beta}/log^{q}(t)"),
        }
    }
}

/// Rate function `I(x) = coef x^2` for `x >= 0`, `+inf` for `x < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticRate {
    pub coef: f64,
}

impl QuadraticRate {
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            f64::INFINITY
        } else {
            self.coef * x * x
        }
    }

    /// Coefficient `k` of the generating `phi(lambda) = k lambda^2`.
    pub fn generating_coef(&self) -> f64 {
        1.0 / (4.0 * self.coef)
    }

    /// `phi(lambda) = k lambda^2` for `lambda >= 0` and `0` otherwise.
    pub fn phi(&self, lambda: f64) -> f64 {
        if lambda < 0.0 {
            0.0
        } else {
            self.generating_coef() * lambda * lambda
        }
    }
}

/// A decay-rate sequence together with its rate function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub name: String,
    pub decay: DecayRate,
    pub rate: QuadraticRate,
}

impl RateSpec {
    pub fn decay_rate(&self, t: f64) -> f64 {
        self.decay.eval(t)
    }

    pub fn rate_function(&self, x: f64) -> f64 {
        self.rate.eval(x)
    }

    /// Asymptotic slope `-I(eps)` of `log P(F_t > eps) / n_t`.
    pub fn slope(&self, eps: f64) -> f64 {
        -self.rate.eval(eps)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::invalid(format!("p must lie in (1, 2], got {p}")));
    }
    Ok(())
}

/// `beta_p = 4(p - 1) / (3p - 2)`
pub fn beta_p(p: f64) -> f64 {
    4.0 * (p - 1.0) / (3.0 * p - 2.0)
}

/// SGD under bounded noise: `n_t = t / log t`, `I(x) = x^2 / (24 M^2 G^2)`.
pub fn rate_sgd(m: f64, g: f64) -> Result<RateSpec> {
    check_positive("noise bound M", m)?;
    check_positive("gradient bound G", g)?;
    Ok(RateSpec {
        name: "sgd".into(),
        decay: DecayRate::TOverLog,
        rate: QuadraticRate { coef: 1.0 / (24.0 * m * m * g * g) },
    })
}

fn csgd_decay(p: f64) -> DecayRate {
    if p == 2.0 {
        DecayRate::TOverLogSq
    } else {
        DecayRate::PowerOverLog { beta: beta_p(p) }
    }
}

/// Denominators for the c-SGD rate function. `Theorem` matches the conjugate
/// of the generating function (768 for p < 2, 384 for p = 2); `Corollary`
/// swaps the two branches, for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsgdConstants {
    #[default]
    Theorem,
    Corollary,
}

/// c-SGD with the `2G`-scaled threshold: `x^2 / (768 G^4)` for `p < 2` and
/// `x^2 / (384 G^4)` for `p = 2`.
pub fn rate_csgd(g: f64, p: f64) -> Result<RateSpec> {
    rate_csgd_with(g, p, CsgdConstants::Theorem)
}

pub fn rate_csgd_with(g: f64, p: f64, constants: CsgdConstants) -> Result<RateSpec> {
    check_positive("gradient bound G", g)?;
    check_p(p)?;
    let heavy = p < 2.0;
    let denom = match (constants, heavy) {
        (CsgdConstants::Theorem, true) | (CsgdConstants::Corollary, false) => 768.0,
        (CsgdConstants::Theorem, false) | (CsgdConstants::Corollary, true) => 384.0,
    };
    Ok(RateSpec {
        name: format!("csgd-p{p}"),
        decay: csgd_decay(p),
        rate: QuadraticRate { coef: 1.0 / (denom * g.powi(4)) },
    })
}

/// c-SGD with threshold coefficient `C`: `x^2 / (192 C^2 G^2)` for `p < 2`,
/// `x^2 / (96 C^2 G^2)` for `p = 2`.
pub fn rate_csgd_general_c(g: f64, c: f64, p: f64) -> Result<RateSpec> {
    check_positive("gradient bound G", g)?;
    check_positive("threshold coefficient C", c)?;
    check_p(p)?;
    let denom = if p < 2.0 { 192.0 } else { 96.0 };
    Ok(RateSpec {
        name: format!("csgd-general-c-p{p}"),
        decay: csgd_decay(p),
        rate: QuadraticRate { coef: 1.0 / (denom * c * c * g * g) },
    })
}

/// Iteration after which the general-`C` threshold reaches `2G`, so the bias
/// bound applies: `(2G/C)^((6p-4)/(2-p))` for `p < 2` and
/// `exp(4G^2/C^2) - 1` for `p = 2`.
pub fn burn_in_bp(g: f64, c: f64, p: f64) -> Result<f64> {
    check_positive("gradient bound G", g)?;
    check_positive("threshold coefficient C", c)?;
    check_p(p)?;
    if p < 2.0 {
        Ok((2.0 * g / c).powf((6.0 * p - 4.0) / (2.0 - p)))
    } else {
        Ok((4.0 * g * g / (c * c)).exp() - 1.0)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Numerical Fenchel-Legendre transform `sup_lambda { x lambda - phi(lambda) }`
/// over a sorted lambda grid, refined by golden-section search in the bracket
/// around the grid maximiser. The supremum is over the grid's span.
pub fn fenchel_legendre<F>(phi: F, x_grid: &[f64], lambda_grid: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    if x_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::invalid("fenchel-legendre grids must be non-empty"));
    }
    if !lambda_grid.windows(2).all(|w| w[0] <= w[1]) || !x_grid.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::invalid("fenchel-legendre grids must be sorted"));
    }
    let phis: Vec<f64> = lambda_grid.iter().map(|&l| phi(l)).collect();
    if !phis.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("phi must be finite on the lambda grid"));
    }
    Ok(x_grid
        .iter()
        .map(|&x| {
            let (best, value) = lambda_grid
                .iter()
                .zip(&phis)
                .map(|(l, p)| x * l - p)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let lo = lambda_grid[best.saturating_sub(1)];
            let hi = lambda_grid[(best + 1).min(lambda_grid.len() - 1)];
            let objective = |l: f64| x * l - phi(l);
            value.max(golden_max(objective, lo, hi))
        })
        .collect())
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    if b <= a {
        return f(a);
    }
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

/// `P(x_t = ... = x_1) = 2^(1-t)` on the two-atom lower-bound instance.
pub fn lower_bound_exact_prob(t: u64) -> f64 {
    assert!(t >= 1, "time index starts at 1");
    2f64.powi(1 - t as i32)
}

/// Lower-bound constants `(a1, a2)` with `P(F_t > eps) >= a1 exp(-a2 t)`.
pub const LOWER_BOUND_A1: f64 = 2.0;
pub const LOWER_BOUND_A2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SotaKind {
    /// SGD with sub-Gaussian noise: rate `sqrt(t)`, slope `-eps / (12 B^2)`.
    LiuSgd,
    /// c-SGD with p-th moment noise: rate `t^(beta_p/2) / log^(2p/(3p-2)) t`,
    /// slope `-eps / (720 sigma sqrt(Delta L))`.
    NguyenCsgd,
    /// Nonlinear SGD with constant threshold: rate `sqrt(t) / log t`, slope
    /// `-min{eps, sqrt(eps)} / (16 C^4 L^2)`.
    ArmackiNsgd,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SotaParams {
    pub b: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub l: Option<f64>,
    pub c: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SotaCurve {
    pub kind: SotaKind,
    pub decay: DecayRate,
    params: SotaParams,
}

impl SotaCurve {
    /// Limsup slope of `log P(F_t > eps) / n_t`.
    pub fn slope(&self, eps: f64) -> f64 {
        let p = self.params;
        match self.kind {
            SotaKind::LiuSgd => {
                let b = p.b.unwrap();
                -eps / (12.0 * b * b)
            }
            SotaKind::NguyenCsgd => -eps / (720.0 * p.sigma.unwrap() * (p.delta.unwrap() * p.l.unwrap()).sqrt()),
            SotaKind::ArmackiNsgd => {
                let (c, l) = (p.c.unwrap(), p.l.unwrap());
                -eps.min(eps.sqrt()) / (16.0 * c.powi(4) * l * l)
            }
        }
    }
}

fn require(name: &str, v: Option<f64>) -> Result<f64> {
    let v = v.ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
    check_positive(name, v)?;
    Ok(v)
}

pub fn sota_curves(kind: SotaKind, params: SotaParams) -> Result<SotaCurve> {
    let decay = match kind {
        SotaKind::LiuSgd => {
            require("B", params.b)?;
            DecayRate::Sqrt
        }
        SotaKind::NguyenCsgd => {
            require("sigma", params.sigma)?;
            require("Delta", params.delta)?;
            require("L", params.l)?;
            let p = params.p.unwrap_or(2.0);
            check_p(p)?;
            DecayRate::PowerOverLogPow { beta: beta_p(p) / 2.0, q: 2.0 * p / (3.0 * p - 2.0) }
        }
        SotaKind::ArmackiNsgd => {
            require("C", params.c)?;
            require("L", params.l)?;
            DecayRate::SqrtOverLog
        }
    };
    Ok(SotaCurve { kind, decay, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sgd_rate_examples() {
        let r = rate_sgd(1.0, 1.0).unwrap();
        assert_relative_eq!(r.rate_function(1.0), 1.0 / 24.0);
        assert_eq!(r.rate_function(0.0), 0.0);
        assert_eq!(rate_sgd(2.0, 3.0).unwrap().rate_function(-0.1), f64::INFINITY);
        assert_eq!(r.decay, DecayRate::TOverLog);
        assert!(rate_sgd(0.0, 1.0).is_err());
    }

    #[test]
    fn csgd_rate_examples() {
        assert_relative_eq!(rate_csgd(1.0, 2.0).unwrap().rate_function(1.0), 1.0 / 384.0);
        assert_relative_eq!(rate_csgd(1.0, 1.5).unwrap().rate_function(1.0), 1.0 / 768.0);
        assert_relative_eq!(beta_p(1.5), 0.8, epsilon = 1e-15);
        assert_eq!(rate_csgd(1.0, 1.5).unwrap().decay, DecayRate::PowerOverLog { beta: beta_p(1.5) });
        assert_eq!(rate_csgd(1.0, 2.0).unwrap().decay, DecayRate::TOverLogSq);
        assert!(matches!(rate_csgd(1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(rate_csgd(1.0, 2.1).is_err());
        let swapped = rate_csgd_with(1.0, 1.5, CsgdConstants::Corollary).unwrap();
        assert_relative_eq!(swapped.rate_function(1.0), 1.0 / 384.0);
    }

    #[test]
    fn general_c_examples() {
        let g = rate_csgd_general_c(1.0, 2.0, 1.5).unwrap();
        assert_relative_eq!(g.rate_function(1.0), 1.0 / 768.0);
        assert_eq!(g.rate_function(0.0), 0.0);
        assert_relative_eq!(rate_csgd_general_c(1.0, 4.0, 2.0).unwrap().rate_function(2.0), 1.0 / 384.0);
        for p in [1.1, 1.5, 1.9, 2.0] {
            for g in [0.3, 1.0, 2.7] {
                let a = rate_csgd(g, p).unwrap();
                let b = rate_csgd_general_c(g, 2.0 * g, p).unwrap();
                for x in [0.0, 0.5, 3.0, 10.0] {
                    assert_relative_eq!(a.rate_function(x), b.rate_function(x), max_relative = 4.0 * f64::EPSILON);
                }
                assert_eq!(a.decay, b.decay);
            }
        }
    }

    #[test]
    fn burn_in_reaches_twice_gradient_bound() {
        use crate::optimizers::ClipSchedule;
        for (g, c, p) in [(1.0, 0.5, 1.5), (2.0, 1.0, 1.2), (1.0, 0.8, 2.0)] {
            let bp = burn_in_bp(g, c, p).unwrap();
            let clip = ClipSchedule::GeneralC { p, c };
            let t = bp.ceil().max(1.0);
            assert!(clip.at(t) >= 2.0 * g * (1.0 - 1e-12), "{g} {c} {p}: {}", clip.at(t));
        }
        // with C >= 2G no burn-in is needed for p < 2
        assert!(burn_in_bp(1.0, 2.0, 1.5).unwrap() <= 1.0);
    }

    #[test]
    fn fenchel_examples() {
        let lambdas: Vec<f64> = (0..=10_000).map(|i| i as f64 * 1e-4).collect();
        let phi = |l: f64| if l >= 0.0 { 6.0 * l * l } else { 0.0 };
        let v = fenchel_legendre(phi, &[0.0, 1.0], &lambdas).unwrap();
        assert_eq!(v[0], 0.0);
        assert_relative_eq!(v[1], 1.0 / 24.0, max_relative = 1e-9);
        let phi_c = |l: f64| if l >= 0.0 { 192.0 * l * l } else { 0.0 };
        let v = fenchel_legendre(phi_c, &[1.0], &lambdas).unwrap();
        assert_relative_eq!(v[0], 1.0 / 768.0, max_relative = 1e-9);
        assert!(fenchel_legendre(phi, &[], &lambdas).is_err());
        assert!(fenchel_legendre(phi, &[1.0], &[]).is_err());
        assert!(fenchel_legendre(phi, &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn lower_bound_probability() {
        assert_eq!(lower_bound_exact_prob(1), 1.0);
        assert_eq!(lower_bound_exact_prob(3), 0.25);
        assert_eq!(lower_bound_exact_prob(11), 9.765_625e-4);
        for t in 1..40u64 {
            assert_relative_eq!(
                lower_bound_exact_prob(t),
                LOWER_BOUND_A1 * (-LOWER_BOUND_A2 * t as f64).exp(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn sota_examples() {
        let liu = sota_curves(SotaKind::LiuSgd, SotaParams { b: Some(1.0), ..Default::default() }).unwrap();
        assert_relative_eq!(liu.slope(1.0), -1.0 / 12.0);
        let arm = sota_curves(
            SotaKind::ArmackiNsgd,
            SotaParams { c: Some(2.0), l: Some(3.0), ..Default::default() },
        )
        .unwrap();
        assert_relative_eq!(arm.slope(1.0), -1.0 / (16.0 * 16.0 * 9.0));
        let ng = sota_curves(
            SotaKind::NguyenCsgd,
            SotaParams { sigma: Some(1.0), delta: Some(1.0), l: Some(1.0), ..Default::default() },
        )
        .unwrap();
        assert_relative_eq!(ng.slope(2.0), -1.0 / 360.0);
        assert!(sota_curves(SotaKind::LiuSgd, SotaParams::default()).is_err());
        assert!(sota_curves(SotaKind::NguyenCsgd, SotaParams { sigma: Some(1.0), ..Default::default() }).is_err());
    }

    #[test]
    fn decay_rates_diverge() {
        let rates = [
            DecayRate::Sqrt,
            DecayRate::TOverLog,
            DecayRate::PowerOverLog { beta: 0.5 },
            DecayRate::TOverLogSq,
            DecayRate::Linear,
            DecayRate::SqrtOverLog,
        ];
        for r in rates {
            let vals: Vec<f64> = (3..=12).map(|k| r.eval(10f64.powi(k))).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "{}", r.label());
            assert!(*vals.last().unwrap() > 1e3, "{}", r.label());
        }
    }

    #[test]
    fn rate_functions_have_lower_bound_shape() {
        for r in [rate_sgd(1.3, 0.7).unwrap(), rate_csgd(2.0, 1.3).unwrap(), rate_csgd(0.5, 2.0).unwrap()] {
            assert_eq!(r.rate_function(-1e-9), f64::INFINITY);
            let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
            let vals: Vec<f64> = xs.iter().map(|&x| r.rate_function(x)).collect();
            assert!(vals.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
