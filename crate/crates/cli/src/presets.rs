//! Built-in experiment configurations.

use ldplab_core::optimizers::{ClipSchedule, StepSchedule};
use ldplab_core::theory::{CsgdConstants, SotaParams};

use crate::config::{
    AnalysisBlock, CostBlock, CostName, EnsembleBlock, ExperimentConfig, MethodBlock, MethodKind, OracleBlock,
    OracleKind, OutputBlock,
};

pub const PRESETS: [&str; 3] = ["appendix-f", "sgd-bounded", "csgd-pareto"];

fn oracle(kind: OracleKind) -> OracleBlock {
    OracleBlock {
        kind,
        atom: None,
        radius: None,
        bound: None,
        scale: None,
        tail_index: None,
        p: None,
        std_dev: None,
        batch_size: None,
    }
}

fn log_grid(horizon: u64) -> Vec<u64> {
    let mut grid = vec![];
    let mut t = 1.0f64;
    while (t as u64) <= horizon {
        let v = t as u64;
        if grid.last() != Some(&v) {
            grid.push(v);
        }
        t *= 1.25;
    }
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        // Huber cost with G = 1, x_1 inside the ball, noise +-x_1,
        // alpha_t = 1/(2 sqrt(t+1)) and the constant threshold 2G.
        "appendix-f" => {
            let x1 = vec![0.3, 0.4];
            Some(ExperimentConfig {
                cost: CostBlock {
                    name: CostName::Huber,
                    dim: 2,
                    threshold: Some(1.0),
                    scale: None,
                    features: None,
                    labels: None,
                },
                oracle: OracleBlock { atom: Some(x1.clone()), ..oracle(OracleKind::TwoPoint) },
                method: MethodBlock {
                    kind: MethodKind::Csgd,
                    step: StepSchedule::SgdSqrt { a: 0.5 },
                    clip: Some(ClipSchedule::Constant { gamma: 2.0 }),
                },
                ensemble: EnsembleBlock {
                    runs: 1 << 20,
                    horizon: 16,
                    seed: 0,
                    init_x1: x1,
                    epsilon_grid: vec![0.125],
                    t_grid: None,
                },
                analysis: AnalysisBlock {
                    candidates: vec!["t".into()],
                    overlays: vec!["lower-bound".into()],
                    sota: None,
                    csgd_constants: CsgdConstants::Theorem,
                },
                output: OutputBlock { dir: Some("results/appendix-f".into()), ..OutputBlock::default() },
            })
        }
        // Pseudo-Huber (L = 1, G = sqrt 2) with noise on the unit sphere.
        "sgd-bounded" => Some(ExperimentConfig {
            cost: CostBlock {
                name: CostName::PseudoHuber,
                dim: 2,
                threshold: None,
                scale: Some(1.0),
                features: None,
                labels: None,
            },
            oracle: OracleBlock { radius: Some(1.0), bound: Some(1.0), ..oracle(OracleKind::Sphere) },
            method: MethodBlock { kind: MethodKind::Sgd, step: StepSchedule::SgdSqrt { a: 1.0 }, clip: None },
            ensemble: EnsembleBlock {
                runs: 20_000,
                horizon: 2000,
                seed: 0,
                init_x1: vec![3.0, -2.0],
                epsilon_grid: vec![0.005, 0.01, 0.02],
                t_grid: Some(log_grid(2000)),
            },
            analysis: AnalysisBlock {
                candidates: vec![],
                overlays: vec!["theory".into()],
                sota: Some(SotaParams { b: Some(1.0), l: Some(1.0), c: Some(1.0), ..SotaParams::default() }),
                csgd_constants: CsgdConstants::Theorem,
            },
            output: OutputBlock { dir: Some("results/sgd-bounded".into()), ..OutputBlock::default() },
        }),
        // Same cost with symmetrized Pareto noise (p = 1.5, infinite variance).
        "csgd-pareto" => {
            let g = 2f64.sqrt();
            Some(ExperimentConfig {
                cost: CostBlock {
                    name: CostName::PseudoHuber,
                    dim: 2,
                    threshold: None,
                    scale: Some(1.0),
                    features: None,
                    labels: None,
                },
                oracle: OracleBlock {
                    scale: Some(1.0),
                    tail_index: Some(2.0),
                    p: Some(1.5),
                    ..oracle(OracleKind::Pareto)
                },
                method: MethodBlock {
                    kind: MethodKind::Csgd,
                    step: StepSchedule::CsgdPower { p: 1.5 },
                    clip: Some(ClipSchedule::PaperEq5 { p: 1.5, g }),
                },
                ensemble: EnsembleBlock {
                    runs: 20_000,
                    horizon: 2000,
                    seed: 0,
                    init_x1: vec![3.0, -2.0],
                    epsilon_grid: vec![0.005, 0.01, 0.02],
                    t_grid: Some(log_grid(2000)),
                },
                analysis: AnalysisBlock {
                    candidates: vec![],
                    overlays: vec!["theory".into()],
                    sota: Some(SotaParams {
                        sigma: Some(2.0),
                        delta: Some(5.0),
                        l: Some(1.0),
                        c: Some(2.0 * g),
                        p: Some(1.5),
                        ..SotaParams::default()
                    }),
                    csgd_constants: CsgdConstants::Theorem,
                },
                output: OutputBlock { dir: Some("results/csgd-pareto".into()), ..OutputBlock::default() },
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LoadedConfig;
    use ldplab_core::optimizers::Method;
    use ldplab_core::vector::norm;

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            let c = LoadedConfig::from_preset(name).unwrap();
            let e = c.resolve().unwrap();
            assert!(e.runs >= 1, "{name}");
            // round trip through the text format
            let text = c.config.to_toml();
            assert_eq!(LoadedConfig::from_toml(&text, name).unwrap().config, c.config);
        }
        assert!(LoadedConfig::from_preset("nope").is_err());
    }

    #[test]
    fn appendix_f_matches_the_construction() {
        let e = LoadedConfig::from_preset("appendix-f").unwrap().resolve().unwrap();
        let rc = &e.run_config;
        let g = rc.oracle().cost().grad_bound_g();
        let r = norm(rc.init_x1());
        assert!(r > 0.0 && r <= g);
        assert_eq!(rc.step().step_size(3), 0.25);
        match rc.method() {
            Method::Clipped { clip } => assert!((1..100).all(|t| clip.threshold(t) >= 2.0 * g)),
            Method::Vanilla => panic!("preset clips"),
        }
        assert_eq!(rc.epsilon_grid(), &[r * r / 2.0]);
    }

    #[test]
    fn log_grid_is_increasing_and_ends_at_horizon() {
        let g = log_grid(2000);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 2000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
