//! Subcommand implementations. Each returns the files it wrote so callers and
//! tests can inspect them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use ldplab_core::costs::{batch_loss_cost, pseudo_huber_cost, LabeledSample, LossKind};
use ldplab_core::montecarlo::{
    appendix_f_enumeration, estimate_tail, fit_decay, run_ensemble, verify_lemma_suite, DecayCandidate, DecayFit,
    LemmaSuite, TailEstimate, MGF_INNER_NORMS,
};
use ldplab_core::optimizers::{ClipSchedule, Method, RunConfig};
use ldplab_core::oracles::{Certificate, NoiseModel, OracleSpec};
use ldplab_core::theory::{
    beta_p, burn_in_bp, fenchel_legendre, lower_bound_exact_prob, rate_csgd_general_c, rate_csgd_with, rate_sgd,
    sota_curves, DecayRate, RateSpec, SotaKind,
};

use crate::config::{Format, LoadedConfig};
use crate::error::{CliError, EXIT_IO, EXIT_VERIFICATION};
use crate::output::{
    csv_bytes, existing_digest, load_ensemble, num, read_file, read_tail_csv, resolve_out_dir, stamp_svg,
    traj_summary_csv, write_file, Certified, Manifest, TailRow, CONFIG_COPY, MANIFEST, TAIL_HEADER, TRAJ_SUMMARY,
};
use crate::svg::{Band, Chart, Series};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub dir: PathBuf,
    pub digest: String,
    pub runs: u64,
    pub diverged: u64,
}

fn fallback_name(loaded: &LoadedConfig) -> String {
    loaded
        .source_name()
        .trim_start_matches("preset ")
        .rsplit('/')
        .next()
        .unwrap_or("run")
        .trim_end_matches(".toml")
        .to_string()
}

/// Constants that hold for the configured cost, oracle and method.
pub fn certified_constants(config: &RunConfig, constants: ldplab_core::theory::CsgdConstants) -> Certified {
    let cost = config.oracle().cost();
    let noise = config.oracle().noise_certificate();
    let g = cost.grad_bound_g();
    let mut rate: Option<RateSpec> = None;
    let mut burn_in = None;
    match (config.method(), noise) {
        (Method::Vanilla, Certificate::AlmostSureBound { m }) if m > 0.0 => rate = rate_sgd(m, g).ok(),
        (Method::Vanilla, _) => {}
        (Method::Clipped { clip }, _) => match *clip {
            ClipSchedule::PaperEq5 { p, g: gc } => rate = rate_csgd_with(gc, p, constants).ok(),
            ClipSchedule::GeneralC { p, c } => {
                rate = rate_csgd_general_c(g, c, p).ok();
                burn_in = burn_in_bp(g, c, p).ok();
            }
            ClipSchedule::Constant { .. } => {}
        },
    }
    Certified {
        smoothness_l: cost.smoothness_l(),
        grad_bound_g: g,
        noise,
        rate_family: rate.as_ref().map(|r| r.name.clone()),
        decay_rate: rate.as_ref().map(|r| r.decay.label()),
        rate_coef: rate.as_ref().map(|r| r.rate.coef),
        burn_in,
    }
}

fn certified_rate(c: &Certified) -> Option<(String, DecayRate, f64)> {
    let decay = parse_candidate(c.decay_rate.as_deref()?)?;
    Some((c.rate_family.clone()?, decay, c.rate_coef?))
}

/// Runs the ensemble and writes `trajsummary.csv`, `manifest.toml` and the
/// canonical `config.toml`.
pub fn cmd_simulate(loaded: &LoadedConfig, opts: &RunOptions) -> Result<SimulateReport, CliError> {
    let experiment = loaded.resolve()?;
    let config = &loaded.config;
    let digest = config.digest();
    let dir = resolve_out_dir(opts.out.as_deref(), config.output.dir.as_deref(), &fallback_name(loaded));
    if let Some(old) = existing_digest(&dir) {
        if old != digest && !opts.force {
            return Err(CliError::new(
                EXIT_IO,
                format!(
                    "{} holds results for config {old}, not {digest}; pass --force to overwrite",
                    dir.display()
                ),
            ));
        }
    }
    let mut ensemble = run_ensemble(&experiment.run_config, experiment.runs, opts.workers);
    ensemble.config_digest = digest.clone();
    let diverged = ensemble.diverged_count();
    let manifest = Manifest {
        config_digest: digest.clone(),
        tool_version: crate::output::TOOL_VERSION.to_string(),
        runs: experiment.runs,
        horizon: experiment.run_config.horizon(),
        epsilon_grid: experiment.run_config.epsilon_grid().to_vec(),
        t_grid: experiment.t_grid.clone(),
        diverged_count: diverged,
        clip_events_total: ensemble.runs.iter().map(|r| r.clip_events).sum(),
        certified: certified_constants(&experiment.run_config, config.analysis.csgd_constants),
    };
    write_file(&dir.join(TRAJ_SUMMARY), &traj_summary_csv(&ensemble))?;
    write_file(&dir.join(MANIFEST), manifest.to_toml().as_bytes())?;
    let config_text = format!(
        "# config_digest={digest}\n# tool_version={}\n{}",
        crate::output::TOOL_VERSION,
        config.to_toml()
    );
    write_file(&dir.join(CONFIG_COPY), config_text.as_bytes())?;
    Ok(SimulateReport { dir, digest, runs: experiment.runs, diverged })
}

fn load_results_config(dir: &Path) -> Option<LoadedConfig> {
    let path = dir.join(CONFIG_COPY);
    let text = std::fs::read_to_string(&path).ok()?;
    LoadedConfig::from_toml(&text, &path.display().to_string()).ok()
}

fn tail_rows(tail: &TailEstimate) -> Vec<Vec<String>> {
    (0..tail.t_grid.len())
        .map(|i| {
            vec![
                tail.t_grid[i].to_string(),
                num(tail.epsilon),
                tail.n_runs.to_string(),
                tail.exceed_count[i].to_string(),
                num(tail.p_hat[i]),
                num(tail.ci_low[i]),
                num(tail.ci_high[i]),
            ]
        })
        .collect()
}

/// Tail estimates for the given thresholds (default: the whole recorded grid),
/// written to `tail.csv` and `tail.svg` in the results directory.
pub fn cmd_tail(dir: &Path, epsilons: &[f64], t_grid: Option<&[u64]>) -> Result<Vec<TailEstimate>, CliError> {
    let (manifest, ensemble) = load_ensemble(dir)?;
    let eps: Vec<f64> = if epsilons.is_empty() { manifest.epsilon_grid.clone() } else { epsilons.to_vec() };
    let grid: Vec<u64> = t_grid.map(|g| g.to_vec()).unwrap_or_else(|| manifest.t_grid.clone());
    let tails = eps
        .iter()
        .map(|&e| estimate_tail(&ensemble, e, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = tails.iter().flat_map(tail_rows).collect();
    let extra = [("diverged_count", manifest.diverged_count.to_string())];
    write_file(&dir.join("tail.csv"), &csv_bytes(&manifest.config_digest, &extra, &TAIL_HEADER, &rows))?;

    let loaded = load_results_config(dir);
    let formats = loaded.as_ref().map(|l| l.config.output.formats.clone()).unwrap_or_else(|| vec![Format::Svg]);
    if formats.contains(&Format::Svg) {
        let overlays = loaded.as_ref().map(|l| l.config.analysis.overlays.clone()).unwrap_or_default();
        let svg = tail_chart(&tails, &overlays, &manifest.certified).render();
        write_file(&dir.join("tail.svg"), stamp_svg(&svg, &manifest.config_digest).as_bytes())?;
    }
    Ok(tails)
}

fn tail_chart(tails: &[TailEstimate], overlays: &[String], certified: &Certified) -> Chart {
    let mut series = vec![];
    for tail in tails {
        series.push(Series {
            name: format!("p_hat eps={}", num(tail.epsilon)),
            points: tail.t_grid.iter().zip(&tail.p_hat).map(|(&t, &p)| (t as f64, p)).collect(),
            dashed: false,
        });
    }
    let ts: Vec<u64> = tails.first().map(|t| t.t_grid.clone()).unwrap_or_default();
    for o in overlays {
        match o.as_str() {
            "lower-bound" => series.push(Series {
                name: "2^(1-t)".into(),
                points: ts.iter().map(|&t| (t as f64, lower_bound_exact_prob(t))).collect(),
                dashed: true,
            }),
            "theory" => {
                if let (Some((name, decay, coef)), Some(tail)) = (certified_rate(certified), tails.first()) {
                    let i = coef * tail.epsilon * tail.epsilon;
                    series.push(Series {
                        name: format!("exp(-I n_t) {name}"),
                        points: ts
                            .iter()
                            .filter(|&&t| t >= 3)
                            .map(|&t| (t as f64, (-i * decay.eval(t as f64)).exp()))
                            .collect(),
                        dashed: true,
                    });
                }
            }
            _ => {}
        }
    }
    let band = tails.first().map(|t| Band {
        x: t.t_grid.iter().map(|&v| v as f64).collect(),
        lo: t.ci_low.clone(),
        hi: t.ci_high.clone(),
    });
    Chart {
        title: "P(F_t > eps)".into(),
        x_label: "t".into(),
        y_label: "exceedance probability".into(),
        log_y: true,
        series,
        band,
    }
}

/// Built-in decay-rate families used when no candidates are given.
pub const DEFAULT_CANDIDATES: [&str; 5] = ["sqrt(t)", "t/log(t)", "t/log^2(t)", "t", "sqrt(t)/log(t)"];

/// Parses a family label such as `t/log(t)` or `t^0.8/log(t)`.
pub fn parse_candidate(name: &str) -> Option<DecayRate> {
    let s: String = name.chars().filter(|c| !c.is_whitespace()).collect();
    match s.as_str() {
        "sqrt(t)" => return Some(DecayRate::Sqrt),
        "t/log(t)" => return Some(DecayRate::TOverLog),
        "t/log^2(t)" => return Some(DecayRate::TOverLogSq),
        "t" => return Some(DecayRate::Linear),
        "sqrt(t)/log(t)" => return Some(DecayRate::SqrtOverLog),
        _ => {}
    }
    let rest = s.strip_prefix("t^")?;
    let (beta, tail) = rest.split_once("/log")?;
    let beta: f64 = beta.parse().ok()?;
    if tail == "(t)" {
        return Some(DecayRate::PowerOverLog { beta });
    }
    let q: f64 = tail.strip_prefix('^')?.strip_suffix("(t)")?.parse().ok()?;
    Some(DecayRate::PowerOverLogPow { beta, q })
}

fn candidates_from(names: &[String]) -> Result<Vec<DecayCandidate>, CliError> {
    let names: Vec<String> = if names.is_empty() {
        DEFAULT_CANDIDATES.iter().map(|s| s.to_string()).collect()
    } else {
        names.to_vec()
    };
    names
        .iter()
        .map(|n| {
            parse_candidate(n)
                .map(|d| DecayCandidate::new(n.clone(), d))
                .ok_or_else(|| CliError::config(format!("unknown decay-rate family {n:?}")))
        })
        .collect()
}

fn tail_from_rows(digest: &str, rows: &[&TailRow]) -> TailEstimate {
    TailEstimate {
        config_digest: digest.to_string(),
        n_runs: rows[0].n,
        epsilon: rows[0].epsilon,
        t_grid: rows.iter().map(|r| r.t).collect(),
        exceed_count: rows.iter().map(|r| r.exceed).collect(),
        p_hat: rows.iter().map(|r| r.p_hat).collect(),
        ci_low: rows.iter().map(|r| r.ci_low).collect(),
        ci_high: rows.iter().map(|r| r.ci_high).collect(),
        diverged_count: 0,
    }
}

/// Fits every candidate to every threshold in a `tail.csv`; writes `fit.csv`
/// next to it (or to `out`). Thresholds without enough estimable points are
/// skipped; if none remain the command fails with insufficient data.
pub fn cmd_fit(tail_csv: &Path, names: &[String], out: Option<&Path>) -> Result<Vec<(f64, DecayFit)>, CliError> {
    let candidates = candidates_from(names)?;
    let (digest, rows) = read_tail_csv(tail_csv)?;
    let mut eps: Vec<f64> = vec![];
    for r in &rows {
        if !eps.contains(&r.epsilon) {
            eps.push(r.epsilon);
        }
    }
    let mut fits = vec![];
    let mut last_err = None;
    for e in eps {
        let group: Vec<&TailRow> = rows.iter().filter(|r| r.epsilon == e).collect();
        match fit_decay(&tail_from_rows(&digest, &group), &candidates) {
            Ok(f) => fits.extend(f.into_iter().map(|f| (e, f))),
            Err(err) => last_err = Some(err),
        }
    }
    if fits.is_empty() {
        return Err(last_err.map(CliError::from).unwrap_or_else(|| CliError::new(4, "tail file has no rows")));
    }
    let table: Vec<Vec<String>> = fits
        .iter()
        .map(|(e, f)| {
            vec![
                num(*e),
                f.candidate.clone(),
                num(f.slope_hat),
                num(f.intercept),
                num(f.r_squared),
                f.points_used.to_string(),
            ]
        })
        .collect();
    let path = match out {
        Some(p) => p.join("fit.csv"),
        None => tail_csv.with_file_name("fit.csv"),
    };
    let header = ["epsilon", "candidate", "slope_hat", "intercept", "r_squared", "points_used"];
    write_file(&path, &csv_bytes(&digest, &[], &header, &table))?;
    Ok(fits)
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub suite: String,
    pub label: String,
    pub empirical: f64,
    pub bound: f64,
    pub standard_error: f64,
    pub slack_se: f64,
    pub violations: u64,
    pub passed: bool,
}

pub const VERIFY_SUITES: [&str; 9] = [
    "appendix-f-enum",
    "rates",
    "mgf-bounded",
    "mgf-inner",
    "clip-bias",
    "clip-subgauss",
    "clip-bias-general",
    "batch-bound",
    "schedules",
];

fn exact_row(suite: &str, label: String, empirical: f64, bound: f64, passed: bool) -> VerifyRow {
    VerifyRow {
        suite: suite.into(),
        label,
        empirical,
        bound,
        standard_error: 0.0,
        slack_se: if passed { f64::INFINITY } else { f64::NEG_INFINITY },
        violations: u64::from(!passed),
        passed,
    }
}

fn lemma_rows(suite: &LemmaSuite) -> Result<Vec<VerifyRow>, CliError> {
    let report = verify_lemma_suite(suite)?;
    Ok(report
        .rows
        .into_iter()
        .map(|r| VerifyRow {
            suite: report.suite.clone(),
            label: r.label,
            empirical: r.empirical,
            bound: r.bound,
            standard_error: r.standard_error,
            slack_se: r.slack_se,
            violations: r.violations,
            passed: r.passed,
        })
        .collect())
}

/// Maximum relative error between the numerical conjugate of
/// `phi(lambda) = k lambda^2` (zero for negative lambda) and `closed(x)` on
/// `x` in `[0, x_max]`.
pub fn conjugate_error(k: f64, closed: impl Fn(f64) -> f64, x_max: f64) -> f64 {
    let phi = |l: f64| if l < 0.0 { 0.0 } else { k * l * l };
    let xs: Vec<f64> = (0..=200).map(|i| x_max * i as f64 / 200.0).collect();
    // the maximiser x / (2k) lies inside the grid for every x
    let lam_max = x_max / k;
    let lams: Vec<f64> = (0..=2000).map(|i| -0.1 * lam_max + 1.1 * lam_max * i as f64 / 2000.0).collect();
    let numeric = fenchel_legendre(phi, &xs, &lams).expect("grids are valid");
    xs.iter()
        .zip(&numeric)
        .map(|(&x, &n)| {
            let c = closed(x);
            if c == 0.0 && n.abs() < 1e-15 {
                0.0
            } else {
                (n - c).abs() / c.abs().max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Generating functions and the closed-form rate functions they should
/// conjugate to, as `(label, k, closed form)`.
pub fn rate_checks() -> Vec<(String, f64, RateSpec)> {
    let (m, g, c) = (1.5, 0.8, 1.2);
    vec![
        ("sgd".into(), 6.0 * m * m * g * g, rate_sgd(m, g).unwrap()),
        ("csgd p=1.5".into(), 192.0 * g.powi(4), rate_csgd_with(g, 1.5, Default::default()).unwrap()),
        ("csgd p=2".into(), 96.0 * g.powi(4), rate_csgd_with(g, 2.0, Default::default()).unwrap()),
        ("general-c p=1.5".into(), 48.0 * c * c * g * g, rate_csgd_general_c(g, c, 1.5).unwrap()),
        ("general-c p=2".into(), 24.0 * c * c * g * g, rate_csgd_general_c(g, c, 2.0).unwrap()),
    ]
}

fn logistic_dataset() -> Vec<LabeledSample> {
    (0..40)
        .map(|i| {
            let s = i as f64;
            LabeledSample {
                features: vec![(0.7 * s).cos() * (1.0 + (i % 3) as f64), (1.3 * s).sin(), 0.5 * (0.3 * s).cos()],
                label: if (0.9 * s).sin() >= 0.0 { 1.0 } else { -1.0 },
            }
        })
        .collect()
}

fn pareto_oracle(p: f64) -> OracleSpec {
    let cost = Arc::new(pseudo_huber_cost(1.0, 2).expect("valid"));
    OracleSpec::additive(cost, NoiseModel::symmetrized_pareto_default(2, 1.0, p).expect("valid")).expect("valid")
}

fn bounded_noises() -> Vec<NoiseModel> {
    vec![
        NoiseModel::two_point(vec![0.6, 0.8]).expect("valid"),
        NoiseModel::two_point(vec![2.0, -1.0, 0.5]).expect("valid"),
        NoiseModel::sphere_bounded(3, 1.0, 1.0).expect("valid"),
        NoiseModel::sphere_bounded(2, 0.5, 0.5).expect("valid"),
    ]
}

/// Runs one named suite with `samples` Monte Carlo draws per estimate.
pub fn run_verify_suite(name: &str, samples: usize, seed: u64) -> Result<Vec<VerifyRow>, CliError> {
    let point = vec![0.2, -0.1];
    let gammas = vec![1.0, 2.0, 4.0, 16.0];
    match name {
        "appendix-f-enum" => Ok(appendix_f_enumeration(20)?
            .into_iter()
            .map(|p| exact_row(name, format!("t={}", p.t), p.value(), lower_bound_exact_prob(p.t), p.equals_closed_form()))
            .collect()),
        "rates" => Ok(rate_checks()
            .into_iter()
            .map(|(label, k, spec)| {
                let err = conjugate_error(k, |x| spec.rate_function(x), 10.0);
                exact_row(name, label, err, 1e-3, err <= 1e-3)
            })
            .collect()),
        "schedules" => {
            let step = ldplab_core::optimizers::StepSchedule::SgdSqrt { a: 0.5 };
            let clip = ClipSchedule::PaperEq5 { p: 2.0, g: 1.0 };
            let checks = [
                ("alpha_3 = 0.5/sqrt(4)", step.step_size(3), 0.25),
                ("gamma_1 = 2 sqrt(ln 2)", clip.threshold(1), 2.0 * std::f64::consts::LN_2.sqrt()),
                (
                    "gamma_3 (p=1.5, G=1) = 2 * 4^0.1",
                    ClipSchedule::PaperEq5 { p: 1.5, g: 1.0 }.threshold(3),
                    2.0 * 4f64.powf(0.1),
                ),
            ];
            Ok(checks
                .into_iter()
                .map(|(label, got, want)| exact_row(name, label.into(), got, want, (got - want).abs() <= 1e-12))
                .collect())
        }
        "mgf-bounded" => {
            let mut rows = vec![];
            for (i, noise) in bounded_noises().into_iter().enumerate() {
                rows.extend(lemma_rows(&LemmaSuite::MgfBounded { noise, samples, seed: seed + i as u64 })?);
            }
            Ok(rows)
        }
        "mgf-inner" => {
            let mut rows = vec![];
            for (i, noise) in bounded_noises().into_iter().enumerate() {
                rows.extend(lemma_rows(&LemmaSuite::MgfInner {
                    noise,
                    norms: MGF_INNER_NORMS.to_vec(),
                    directions: 4,
                    samples,
                    seed: seed + i as u64,
                })?);
            }
            Ok(rows)
        }
        "clip-bias" | "clip-subgauss" => {
            let mut rows = vec![];
            for (i, p) in [1.2, 1.5, 2.0].into_iter().enumerate() {
                let oracle = pareto_oracle(p);
                let (point, gammas, samples, seed) = (point.clone(), gammas.clone(), samples, seed + i as u64);
                let suite = if name == "clip-bias" {
                    LemmaSuite::ClipBias { oracle, point, gammas, samples, seed }
                } else {
                    LemmaSuite::ClipSubgauss { oracle, point, gammas, samples, seed }
                };
                rows.extend(lemma_rows(&suite)?);
            }
            Ok(rows)
        }
        "clip-bias-general" => {
            let oracle = pareto_oracle(1.5);
            let g = oracle.cost().grad_bound_g();
            let clip = ClipSchedule::GeneralC { p: 1.5, c: 2.0 };
            let bp = burn_in_bp(g, 2.0, 1.5)?.ceil() as u64;
            lemma_rows(&LemmaSuite::ClipBiasGeneral {
                oracle,
                point,
                clip,
                g,
                times: vec![bp, 4 * bp],
                samples,
                seed,
            })
        }
        "batch-bound" => {
            let cost = Arc::new(batch_loss_cost(logistic_dataset(), LossKind::LipschitzLogistic)?);
            let oracle = OracleSpec::batch(cost, 4)?;
            let points = vec![vec![0.0, 0.0, 0.0], vec![1.0, -1.0, 2.0], vec![-3.0, 2.0, 0.5], vec![10.0, 10.0, -10.0]];
            let queries = samples.div_ceil(points.len());
            lemma_rows(&LemmaSuite::BatchBound { oracle, points, queries, seed })
        }
        other => Err(CliError::config(format!(
            "unknown verification suite {other:?}; expected all or one of {}",
            VERIFY_SUITES.join(", ")
        ))),
    }
}

/// Runs `suite` (or every suite for `all`), writes `verify.csv` under `out`
/// and fails with the verification exit code if any row fails.
pub fn cmd_verify(suite: &str, samples: usize, seed: u64, out: &Path) -> Result<Vec<VerifyRow>, CliError> {
    let names: Vec<&str> = if suite == "all" { VERIFY_SUITES.to_vec() } else { vec![suite] };
    let mut rows = vec![];
    for n in names {
        rows.extend(run_verify_suite(n, samples, seed)?);
    }
    let digest = {
        let h = Sha256::digest(format!("verify:{suite}:{samples}:{seed}").as_bytes());
        hex::encode(&h[..8])
    };
    let header = ["suite", "label", "empirical", "bound", "standard_error", "slack_se", "violations", "passed"];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.suite.clone(),
                r.label.clone(),
                num(r.empirical),
                num(r.bound),
                num(r.standard_error),
                num(r.slack_se),
                r.violations.to_string(),
                r.passed.to_string(),
            ]
        })
        .collect();
    write_file(&out.join("verify.csv"), &csv_bytes(&digest, &[], &header, &table))?;
    if rows.iter().any(|r| !r.passed) {
        let failed: Vec<String> = rows.iter().filter(|r| !r.passed).map(|r| format!("{} {}", r.suite, r.label)).collect();
        return Err(CliError::new(EXIT_VERIFICATION, format!("verification failed: {}", failed.join("; "))));
    }
    Ok(rows)
}

/// One `(t, n_t, family, epsilon, slope, log_bound)` row per grid point.
pub type RateRow = (u64, f64, String, f64, f64, f64);

const RATE_HEADER: [&str; 6] = ["t", "n_t", "family", "epsilon", "slope", "log_bound"];

fn rate_table_rows(rows: &[RateRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|(t, n, fam, e, s, lb)| vec![t.to_string(), num(*n), fam.clone(), num(*e), num(*s), num(*lb)])
        .collect()
}

fn curve_rows(family: &str, decay: DecayRate, slope: impl Fn(f64) -> f64, eps: &[f64], ts: &[u64]) -> Vec<RateRow> {
    let mut out = vec![];
    for &e in eps {
        let s = slope(e);
        for &t in ts.iter().filter(|&&t| t >= 3) {
            let n = decay.eval(t as f64);
            out.push((t, n, family.to_string(), e, s, s * n));
        }
    }
    out
}

fn bound_chart(title: &str, rows: &[RateRow], eps: f64) -> Chart {
    let mut families: Vec<String> = vec![];
    for r in rows {
        if !families.contains(&r.2) {
            families.push(r.2.clone());
        }
    }
    let series = families
        .iter()
        .map(|f| Series {
            name: f.clone(),
            points: rows
                .iter()
                .filter(|r| &r.2 == f && r.3 == eps)
                .map(|r| (r.0 as f64, r.5.exp()))
                .collect(),
            dashed: false,
        })
        .collect();
    Chart {
        title: format!("{title} (eps = {})", num(eps)),
        x_label: "t".into(),
        y_label: "exp(slope * n_t)".into(),
        log_y: true,
        series,
        band: None,
    }
}

/// Certified rate functions for the configured method; writes `rates.csv`.
pub fn cmd_rates(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Vec<RateRow>, CliError> {
    let e = loaded.resolve()?;
    let cfg = &loaded.config;
    let certified = certified_constants(&e.run_config, cfg.analysis.csgd_constants);
    let eps = e.run_config.epsilon_grid().to_vec();
    let mut rows = vec![];
    if let Some((name, decay, coef)) = certified_rate(&certified) {
        rows.extend(curve_rows(&name, decay, |x| -coef * x * x, &eps, &e.t_grid));
    }
    if let Method::Clipped { clip: ClipSchedule::PaperEq5 { p, g } } = e.run_config.method() {
        // the other reading of the c-SGD constants, for sensitivity checks
        let other = match cfg.analysis.csgd_constants {
            ldplab_core::theory::CsgdConstants::Theorem => ldplab_core::theory::CsgdConstants::Corollary,
            ldplab_core::theory::CsgdConstants::Corollary => ldplab_core::theory::CsgdConstants::Theorem,
        };
        let spec = rate_csgd_with(*g, *p, other)?;
        rows.extend(curve_rows(&format!("{}-{other:?}", spec.name).to_lowercase(), spec.decay, |x| spec.slope(x), &eps, &e.t_grid));
    }
    let dir = resolve_out_dir(opts.out.as_deref(), cfg.output.dir.as_deref(), &fallback_name(loaded));
    let digest = cfg.digest();
    write_file(&dir.join("rates.csv"), &csv_bytes(&digest, &[], &RATE_HEADER, &rate_table_rows(&rows)))?;
    if cfg.output.formats.contains(&Format::Svg) && !rows.is_empty() {
        let svg = bound_chart("Certified tail bounds", &rows, eps[0]).render();
        write_file(&dir.join("rates.svg"), stamp_svg(&svg, &digest).as_bytes())?;
    }
    Ok(rows)
}

/// The certified bound next to the published comparison bounds whose
/// parameters are configured; writes `compare_sota.csv` and `.svg`.
pub fn cmd_compare_sota(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Vec<RateRow>, CliError> {
    let e = loaded.resolve()?;
    let cfg = &loaded.config;
    let certified = certified_constants(&e.run_config, cfg.analysis.csgd_constants);
    let eps = e.run_config.epsilon_grid().to_vec();
    let mut rows = vec![];
    if let Some((name, decay, coef)) = certified_rate(&certified) {
        rows.extend(curve_rows(&name, decay, |x| -coef * x * x, &eps, &e.t_grid));
    }
    let params = cfg
        .analysis
        .sota
        .ok_or_else(|| loaded_error(loaded, "compare-sota needs an [analysis.sota] table"))?;
    for (kind, label) in [
        (SotaKind::LiuSgd, "liu-sgd"),
        (SotaKind::NguyenCsgd, "nguyen-csgd"),
        (SotaKind::ArmackiNsgd, "armacki-nsgd"),
    ] {
        // curves whose parameters are not configured are skipped
        if let Ok(curve) = sota_curves(kind, params) {
            rows.extend(curve_rows(label, curve.decay, |x| curve.slope(x), &eps, &e.t_grid));
        }
    }
    let dir = resolve_out_dir(opts.out.as_deref(), cfg.output.dir.as_deref(), &fallback_name(loaded));
    let digest = cfg.digest();
    let mut extra = vec![];
    if let Some(p) = params.p {
        extra.push(("beta_p", num(beta_p(p))));
    }
    write_file(&dir.join("compare_sota.csv"), &csv_bytes(&digest, &extra, &RATE_HEADER, &rate_table_rows(&rows)))?;
    if cfg.output.formats.contains(&Format::Svg) && !rows.is_empty() {
        let svg = bound_chart("Tail bounds", &rows, eps[0]).render();
        write_file(&dir.join("compare_sota.svg"), stamp_svg(&svg, &digest).as_bytes())?;
    }
    Ok(rows)
}

fn loaded_error(loaded: &LoadedConfig, msg: &str) -> CliError {
    CliError::config(format!("{}: {msg}", loaded.source_name()))
}

/// Tail estimates, decay fits and a Markdown summary for a results directory.
pub fn cmd_report(dir: &Path) -> Result<PathBuf, CliError> {
    let tails = cmd_tail(dir, &[], None)?;
    let manifest = Manifest::load(dir)?;
    let candidates = load_results_config(dir).map(|l| l.config.analysis.candidates).unwrap_or_default();
    let fits = match cmd_fit(&dir.join("tail.csv"), &candidates, None) {
        Ok(f) => f,
        Err(e) if e.code == crate::error::EXIT_INSUFFICIENT_DATA => vec![],
        Err(e) => return Err(e),
    };
    let mut md = String::new();
    md.push_str("# Tail report\n\n");
    md.push_str(&format!("- config digest: `{}`\n", manifest.config_digest));
    md.push_str(&format!("- tool version: {}\n", manifest.tool_version));
    md.push_str(&format!("- runs: {}, horizon: {}\n", manifest.runs, manifest.horizon));
    md.push_str(&format!("- diverged runs: {}\n", manifest.diverged_count));
    md.push_str(&format!("- clipping events: {}\n", manifest.clip_events_total));
    if let Some(f) = &manifest.certified.rate_family {
        md.push_str(&format!(
            "- certified rate: {f}, n_t = {}, I(x) = {} x^2\n",
            manifest.certified.decay_rate.as_deref().unwrap_or("?"),
            manifest.certified.rate_coef.map(num).unwrap_or_default()
        ));
    }
    for tail in &tails {
        md.push_str(&format!("\n## eps = {}\n\n| t | exceed | p_hat | 95% CI |\n|---|---|---|---|\n", num(tail.epsilon)));
        let step = (tail.t_grid.len() / 12).max(1);
        for i in (0..tail.t_grid.len()).step_by(step) {
            md.push_str(&format!(
                "| {} | {} | {:.4e} | [{:.4e}, {:.4e}] |\n",
                tail.t_grid[i], tail.exceed_count[i], tail.p_hat[i], tail.ci_low[i], tail.ci_high[i]
            ));
        }
        let rows: Vec<&(f64, DecayFit)> = fits.iter().filter(|(e, _)| *e == tail.epsilon).collect();
        if rows.is_empty() {
            md.push_str("\nToo few estimable points for a decay fit.\n");
        } else {
            md.push_str("\n| candidate | slope | R^2 | points |\n|---|---|---|---|\n");
            for (_, f) in rows {
                md.push_str(&format!("| {} | {:.4e} | {:.6} | {} |\n", f.candidate, f.slope_hat, f.r_squared, f.points_used));
            }
        }
    }
    let path = dir.join("report.md");
    write_file(&path, md.as_bytes())?;
    Ok(path)
}

/// Human-readable verification table.
pub fn format_verify(rows: &[VerifyRow]) -> String {
    let mut s = format!(
        "{:<18} {:<32} {:>14} {:>14} {:>10} {:>6}\n",
        "suite", "case", "empirical", "bound", "slack(se)", "pass"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<18} {:<32} {:>14.6e} {:>14.6e} {:>10.2} {:>6}\n",
            r.suite, r.label, r.empirical, r.bound, r.slack_se, r.passed
        ));
    }
    s
}

/// Reads a file and reports IO failures with the IO exit code.
pub fn read_config_file(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read_file(path)?;
    Ok(LoadedConfig::from_toml(&text, &path.display().to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_labels_parse() {
        for name in DEFAULT_CANDIDATES {
            assert_eq!(parse_candidate(name).unwrap().label(), name);
        }
        assert_eq!(parse_candidate("t^0.5/log(t)"), Some(DecayRate::PowerOverLog { beta: 0.5 }));
        assert_eq!(
            parse_candidate("t^0.4/log^1.2(t)"),
            Some(DecayRate::PowerOverLogPow { beta: 0.4, q: 1.2 })
        );
        assert_eq!(parse_candidate("log(t)"), None);
    }

    #[test]
    fn certified_labels_round_trip() {
        let d = DecayRate::PowerOverLog { beta: beta_p(1.5) };
        assert_eq!(parse_candidate(&d.label()), Some(d));
    }

    #[test]
    fn conjugates_match_closed_forms() {
        for (label, k, spec) in rate_checks() {
            let err = conjugate_error(k, |x| spec.rate_function(x), 10.0);
            assert!(err <= 1e-3, "{label}: {err}");
        }
        // a wrong constant is detected
        let spec = rate_sgd(1.0, 1.0).unwrap();
        assert!(conjugate_error(3.0, |x| spec.rate_function(x), 10.0) > 0.5);
    }

    #[test]
    fn fast_suites_pass() {
        for s in ["appendix-f-enum", "rates", "schedules"] {
            assert!(run_verify_suite(s, 0, 0).unwrap().iter().all(|r| r.passed), "{s}");
        }
        assert!(run_verify_suite("nope", 10, 0).is_err());
    }
}
