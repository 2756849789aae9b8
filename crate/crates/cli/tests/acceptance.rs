//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! target exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use ldplab::commands::{cmd_simulate, run_verify_suite, RunOptions, VerifyRow};
use ldplab::config::LoadedConfig;
use ldplab::presets::PRESETS;
use ldplab_core::costs::huber_cost;
use ldplab_core::montecarlo::{
    appendix_f_enumeration, estimate_tail, fit_decay, run_ensemble, DecayCandidate, TailEstimate,
};
use ldplab_core::optimizers::{run_trajectory, simulate, ClipSchedule, Method, RunConfig, StepSchedule};
use ldplab_core::oracles::{NoiseModel, OracleSpec};
use ldplab_core::theory::{beta_p, lower_bound_exact_prob, DecayRate};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rows_outcome(rows: &[VerifyRow]) -> Outcome {
    let failed: Vec<String> = rows.iter().filter(|r| !r.passed).map(|r| format!("{} {}", r.suite, r.label)).collect();
    let min_slack = rows.iter().map(|r| r.slack_se).fold(f64::INFINITY, f64::min);
    let violations: u64 = rows.iter().map(|r| r.violations).sum();
    if failed.is_empty() {
        outcome(true, format!("{} rows, min slack {min_slack:.2} se, {violations} violations", rows.len()))
    } else {
        outcome(false, format!("failed: {}", failed.join("; ")))
    }
}

fn appendix_f(horizon: u64) -> RunConfig {
    let mut loaded = LoadedConfig::from_preset("appendix-f").unwrap();
    loaded.config.ensemble.horizon = horizon;
    loaded.resolve().unwrap().run_config
}

fn c1_enumeration() -> Outcome {
    let probs = appendix_f_enumeration(20).unwrap();
    let exact = probs.len() == 20 && probs.iter().all(|p| p.equals_closed_form());
    outcome(exact, format!("{} of 20 dyadic values equal 2^(1-t)", probs.iter().filter(|p| p.equals_closed_form()).count()))
}

fn c2_monte_carlo() -> Outcome {
    let config = appendix_f(12);
    let eps = config.epsilon_grid()[0];
    let grid: Vec<u64> = (2..=12).collect();
    let tail = estimate_tail(&run_ensemble(&config, 1 << 20, None), eps, &grid).unwrap();
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for (i, &t) in grid.iter().enumerate() {
        let margin = tail.p_hat[i] - (lower_bound_exact_prob(t) - 3.0 * tail.wilson_halfwidth(i));
        worst = worst.min(margin);
        ok &= margin >= 0.0;
    }
    outcome(ok, format!("N = 2^20, smallest margin {worst:.3e}"))
}

fn c3_no_clip() -> Outcome {
    let clipped = appendix_f(100);
    assert!(matches!(clipped.method(), Method::Clipped { .. }));
    let vanilla = clipped.with_method(Method::Vanilla).unwrap();
    let mut clips = 0;
    let mut mismatches = 0;
    for run in 0..100_000 {
        let mut xs: Vec<f64> = Vec::with_capacity(200);
        let a = simulate(&clipped, run, |_, x, _| xs.extend_from_slice(x));
        let mut t_idx = 0;
        let mut same = true;
        let b = simulate(&vanilla, run, |_, x, _| {
            same &= xs[t_idx..t_idx + x.len()].iter().zip(x).all(|(u, v)| u.to_bits() == v.to_bits());
            t_idx += x.len();
        });
        clips += a.clip_events;
        if !same || t_idx != xs.len() || b.clip_events != 0 {
            mismatches += 1;
        }
    }
    outcome(clips == 0 && mismatches == 0, format!("1e5 runs, T = 100: {clips} clip events, {mismatches} differing runs"))
}

fn c4_rates() -> Outcome {
    rows_outcome(&run_verify_suite("rates", 0, 0).unwrap())
}

fn c5_subgaussian() -> Outcome {
    let mut rows = run_verify_suite("mgf-bounded", 1_000_000, 0).unwrap();
    rows.extend(run_verify_suite("mgf-inner", 1_000_000, 0).unwrap());
    rows_outcome(&rows)
}

fn c6_clipping() -> Outcome {
    let mut rows = run_verify_suite("clip-bias", 1_000_000, 0).unwrap();
    rows.extend(run_verify_suite("clip-subgauss", 1_000_000, 0).unwrap());
    rows.extend(run_verify_suite("clip-bias-general", 1_000_000, 0).unwrap());
    rows_outcome(&rows)
}

fn c7_batch() -> Outcome {
    let rows = run_verify_suite("batch-bound", 1_000_000, 0).unwrap();
    let hard = rows.iter().all(|r| r.violations == 0);
    let o = rows_outcome(&rows);
    outcome(o.passed && hard, o.detail)
}

fn c8_schedules() -> Outcome {
    let checks: [(&str, f64, f64); 6] = [
        ("sgd-sqrt a=1 t=1", StepSchedule::SgdSqrt { a: 1.0 }.step_size(1), 1.0 / 2f64.sqrt()),
        ("csgd-power p=2 t=3", StepSchedule::CsgdPower { p: 2.0 }.step_size(3), 0.5),
        ("csgd-power p=1.5 t=1", StepSchedule::CsgdPower { p: 1.5 }.step_size(1), 2f64.powf(-0.6)),
        ("eq5 p=2 G=1 t=1", ClipSchedule::PaperEq5 { p: 2.0, g: 1.0 }.threshold(1), 2.0 * 2f64.ln().sqrt()),
        ("eq5 p=1.5 G=1 t=1", ClipSchedule::PaperEq5 { p: 1.5, g: 1.0 }.threshold(1), 2.0 * 2f64.powf(0.1)),
        (
            "general-c C=4 p=2 t=e^2-1",
            ClipSchedule::GeneralC { p: 2.0, c: 4.0 }.at(std::f64::consts::E.powi(2) - 1.0),
            4.0 * 2f64.sqrt(),
        ),
    ];
    let mut bad: Vec<String> =
        checks.iter().filter(|(_, got, want)| (got - want).abs() > 1e-12).map(|(n, g, w)| format!("{n}: {g} vs {w}")).collect();
    let cost = std::sync::Arc::new(huber_cost(1.0, 2).unwrap());
    let l = cost.smoothness_l();
    let oracle = std::sync::Arc::new(OracleSpec::additive(cost, NoiseModel::sphere_bounded(2, 1.0, 1.0).unwrap()).unwrap());
    let make = |a: f64| {
        RunConfig::new(Method::Vanilla, oracle.clone(), vec![1.0, 0.0], 10, StepSchedule::SgdSqrt { a }, 0, vec![0.1])
    };
    if make(1.01 / l).is_ok() {
        bad.push("a = 1.01/L accepted".into());
    }
    if make(1.0 / l).is_err() {
        bad.push("a = 1/L rejected".into());
    }
    let ok = bad.is_empty();
    outcome(ok, if ok { "6 values within 1e-12, a = 1.01/L rejected".into() } else { bad.join("; ") })
}

fn c9_metrics() -> Outcome {
    let mut checked = 0u64;
    let mut failures = 0u64;
    for (k, name) in PRESETS.iter().enumerate() {
        let config = LoadedConfig::from_preset(name).unwrap().resolve().unwrap().run_config;
        let n = 10_000 / PRESETS.len() as u64 + u64::from(k == 0);
        for run in 0..n {
            let rec = run_trajectory(&config, run);
            let summary = rec.to_summary();
            let mut ok = rec.running_min.windows(2).all(|w| w[1] <= w[0]);
            for t in 1..=rec.running_min.len() as u64 {
                ok &= rec.f_t(t) <= rec.a_t(t) * (1.0 + 1e-12);
                for (i, &eps) in config.epsilon_grid().iter().enumerate() {
                    ok &= summary.exceeds(i, t) == (rec.f_t(t) > eps);
                }
            }
            checked += 1;
            failures += u64::from(!ok);
        }
    }
    outcome(failures == 0 && checked == 10_000, format!("{checked} trajectories, {failures} with violations"))
}

fn c10_fit() -> Outcome {
    let families = [
        DecayRate::Sqrt,
        DecayRate::TOverLog,
        DecayRate::TOverLogSq,
        DecayRate::Linear,
        DecayRate::SqrtOverLog,
        DecayRate::PowerOverLog { beta: beta_p(1.5) },
    ];
    let candidates: Vec<DecayCandidate> = families.iter().map(|d| DecayCandidate::new(d.label(), *d)).collect();
    let grid: Vec<u64> = (0..40).map(|i| (3.0 * 1.15f64.powi(i)).round() as u64).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let horizon = *grid.last().unwrap() as f64;
    let n_runs = 1u64 << 50;
    let mut bad = vec![];
    for gen in &families {
        // keep the smallest probability near e^-20
        let c = 20.0 / gen.eval(horizon);
        let p: Vec<f64> = grid.iter().map(|&t| (-c * gen.eval(t as f64)).exp()).collect();
        let tail = TailEstimate {
            config_digest: "synthetic".into(),
            n_runs,
            epsilon: 0.1,
            t_grid: grid.clone(),
            exceed_count: p.iter().map(|q| (q * n_runs as f64) as u64).collect(),
            p_hat: p.clone(),
            ci_low: p.clone(),
            ci_high: p,
            diverged_count: 0,
        };
        let fits = fit_decay(&tail, &candidates).unwrap();
        let own = fits.iter().find(|f| f.candidate == gen.label()).unwrap();
        let best = fits.iter().max_by(|a, b| a.r_squared.total_cmp(&b.r_squared)).unwrap();
        let rel = (own.slope_hat - c).abs() / c;
        if rel > 0.01 || own.r_squared < 0.9999 || best.candidate != own.candidate {
            bad.push(format!("{}: rel {rel:.2e}, R2 {:.6}, best {}", gen.label(), own.r_squared, best.candidate));
        }
    }
    let ok = bad.is_empty();
    outcome(ok, if ok { format!("{} families recovered", families.len()) } else { bad.join("; ") })
}

fn c11_reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let loaded = LoadedConfig::from_preset("csgd-pareto").unwrap();
    let mut outputs = vec![];
    for (i, workers) in [Some(1), Some(4), None].into_iter().enumerate() {
        let opts = RunOptions { workers, out: Some(dir.path().join(format!("run{i}"))), force: false };
        let report = cmd_simulate(&loaded, &opts).unwrap();
        let files: Vec<Vec<u8>> = ["trajsummary.csv", "manifest.toml", "config.toml"]
            .iter()
            .map(|f| std::fs::read(report.dir.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(same, "csgd-pareto preset at workers 1, 4 and default")
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "lower-bound law by exact enumeration", Duration::from_secs(1), c1_enumeration),
        (2, "lower-bound law by Monte Carlo", Duration::from_secs(60), c2_monte_carlo),
        (3, "clipping never fires on the lower-bound instance", Duration::from_secs(30), c3_no_clip),
        (4, "rate functions are conjugates of the generating functions", Duration::from_secs(5), c4_rates),
        (5, "bounded-noise MGF inequalities", Duration::from_secs(60), c5_subgaussian),
        (6, "clipping bias and sub-Gaussian margin under Pareto noise", Duration::from_secs(120), c6_clipping),
        (7, "mini-batch noise hard bound", Duration::from_secs(30), c7_batch),
        (8, "schedule values and step validation", Duration::from_secs(1), c8_schedules),
        (9, "running-min and running-average invariants", Duration::from_secs(60), c9_metrics),
        (10, "decay-fit self-consistency", Duration::from_secs(5), c10_fit),
        (11, "byte-identical reruns across worker counts", Duration::from_secs(60), c11_reproducible),
    ];
    let mut all = true;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = o.passed && in_time;
        all &= passed;
        println!(
            "{} criterion {id:>2}: {name} ({}; {:.2}s of {}s budget{})",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if !all {
        eprintln!("some acceptance criteria failed");
        std::process::exit(1);
    }
}
