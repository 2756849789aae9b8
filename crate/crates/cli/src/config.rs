//! Experiment configuration: a TOML document with `[cost]`, `[oracle]`,
//! `[method]`, `[ensemble]`, `[analysis]` and `[output]` tables. Unknown keys
//! are rejected. Validation errors point at the offending line when the
//! configuration came from a file.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ldplab_core::costs::{batch_loss_cost, huber_cost, pseudo_huber_cost, CostSpec, LabeledSample, LossKind};
use ldplab_core::optimizers::{validate_epsilon_grid, ClipSchedule, Method, RunConfig, StepSchedule};
use ldplab_core::oracles::{NoiseModel, OracleSpec};
use ldplab_core::theory::{CsgdConstants, SotaParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cost: CostBlock,
    pub oracle: OracleBlock,
    pub method: MethodBlock,
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostName {
    Huber,
    PseudoHuber,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub name: CostName,
    pub dim: usize,
    /// Huber threshold `G`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Pseudo-Huber scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Logistic data set: one feature row per sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    TwoPoint,
    Sphere,
    Pareto,
    Gaussian,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub kind: OracleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_dev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Sgd,
    Csgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodBlock {
    pub kind: MethodKind,
    pub step: StepSchedule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    pub runs: u64,
    pub horizon: u64,
    pub seed: u64,
    pub init_x1: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Decay-rate families for `fit`; defaults to all built-in families.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    /// Extra curves on the tail chart: `lower-bound`, `theory`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlays: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sota: Option<SotaParams>,
    #[serde(default)]
    pub csgd_constants: CsgdConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Svg]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: None, formats: default_formats() }
    }
}

/// A configuration error, optionally anchored to a line of the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source_name: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source_name, line, self.message),
            None => write!(f, "{}: {}", self.source_name, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parsed configuration together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    source_name: String,
    text: Option<String>,
}

/// A configuration resolved into runnable pieces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub run_config: RunConfig,
    pub runs: u64,
    pub t_grid: Vec<u64>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line of `path` (table, key, sub-key...) in TOML text, falling back
/// to the closest enclosing table or key found.
pub fn locate(text: &str, path: &[&str]) -> Option<usize> {
    if path.is_empty() {
        return None;
    }
    let lines: Vec<&str> = text.lines().collect();
    // deepest dotted table header that is a prefix of the path
    let mut best: Option<(usize, usize)> = None;
    for depth in (1..=path.len()).rev() {
        let header = format!("[{}]", path[..depth].join("."));
        if let Some(i) = lines.iter().position(|l| l.trim() == header) {
            best = Some((i, depth));
            break;
        }
    }
    let (start, depth) = best?;
    if depth == path.len() {
        return Some(start + 1);
    }
    let key = path[depth];
    for (i, l) in lines.iter().enumerate().skip(start + 1) {
        let t = l.trim_start();
        if t.starts_with('[') {
            break;
        }
        if let Some(rest) = t.strip_prefix(key) {
            let rest = rest.trim_start();
            if rest.starts_with('=') || rest.starts_with('.') {
                return Some(i + 1);
            }
        }
    }
    Some(start + 1)
}

impl LoadedConfig {
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
            source_name: source_name.to_string(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        Ok(Self { config, source_name: source_name.to_string(), text: Some(text.to_string()) })
    }

    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        let config = crate::presets::preset(name).ok_or_else(|| ConfigError {
            source_name: "--preset".into(),
            line: None,
            message: format!("unknown preset {name:?}; expected one of {}", crate::presets::PRESETS.join(", ")),
        })?;
        Ok(Self { config, source_name: format!("preset {name}"), text: None })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    fn error(&self, path: &[&str], message: impl Into<String>) -> ConfigError {
        ConfigError {
            source_name: self.source_name.clone(),
            line: self.text.as_deref().and_then(|t| locate(t, path)),
            message: message.into(),
        }
    }

    /// Validates the configuration and builds the run configuration.
    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let c = &self.config;
        let cost = Arc::new(self.build_cost()?);
        let oracle = self.build_oracle(cost.clone())?;

        if let StepSchedule::SgdSqrt { a } = c.method.step {
            let limit = 1.0 / cost.smoothness_l();
            if a > limit {
                return Err(self.error(
                    &["method", "step", "a"],
                    format!("step coefficient a = {a} exceeds 1/L = {limit}"),
                ));
            }
        }
        c.method
            .step
            .validate()
            .map_err(|e| self.error(&["method", "step"], e.to_string()))?;
        let method = match (c.method.kind, c.method.clip) {
            (MethodKind::Sgd, None) => Method::Vanilla,
            (MethodKind::Sgd, Some(_)) => {
                return Err(self.error(&["method", "clip"], "method kind \"sgd\" takes no clip schedule"))
            }
            (MethodKind::Csgd, None) => {
                return Err(self.error(&["method", "kind"], "method kind \"csgd\" needs a clip schedule"))
            }
            (MethodKind::Csgd, Some(clip)) => {
                clip.validate().map_err(|e| self.error(&["method", "clip"], e.to_string()))?;
                Method::Clipped { clip }
            }
        };

        let e = &c.ensemble;
        if e.runs == 0 {
            return Err(self.error(&["ensemble", "runs"], "runs must be at least 1"));
        }
        validate_epsilon_grid(&e.epsilon_grid).map_err(|err| self.error(&["ensemble", "epsilon_grid"], err.to_string()))?;
        let t_grid = match &e.t_grid {
            Some(g) => {
                if g.is_empty() || !g.windows(2).all(|w| w[0] < w[1]) || g[0] == 0 || *g.last().unwrap() > e.horizon {
                    return Err(self.error(
                        &["ensemble", "t_grid"],
                        format!("t_grid must be strictly increasing within [1, horizon = {}]", e.horizon),
                    ));
                }
                g.clone()
            }
            None => (1..=e.horizon).collect(),
        };
        let run_config = RunConfig::new(
            method,
            Arc::new(oracle),
            e.init_x1.clone(),
            e.horizon,
            c.method.step,
            e.seed,
            e.epsilon_grid.clone(),
        )
        .map_err(|err| self.error(&["ensemble"], err.to_string()))?;
        Ok(Experiment { run_config, runs: e.runs, t_grid })
    }

    fn need<T: Copy>(&self, v: Option<T>, path: &[&str], what: &str) -> Result<T, ConfigError> {
        v.ok_or_else(|| self.error(&path[..1], format!("missing {what} ({})", path.join("."))))
    }

    fn build_cost(&self) -> Result<CostSpec, ConfigError> {
        let b = &self.config.cost;
        let fail = |key: &str, e: ldplab_core::Error| self.error(&["cost", key], e.to_string());
        match b.name {
            CostName::Huber => {
                let g = self.need(b.threshold, &["cost", "threshold"], "Huber threshold")?;
                huber_cost(g, b.dim).map_err(|e| fail("threshold", e))
            }
            CostName::PseudoHuber => {
                let s = self.need(b.scale, &["cost", "scale"], "pseudo-Huber scale")?;
                pseudo_huber_cost(s, b.dim).map_err(|e| fail("scale", e))
            }
            CostName::Logistic => {
                let (Some(features), Some(labels)) = (&b.features, &b.labels) else {
                    return Err(self.error(&["cost"], "logistic cost needs features and labels"));
                };
                if features.len() != labels.len() {
                    return Err(self.error(
                        &["cost", "labels"],
                        format!("{} feature rows but {} labels", features.len(), labels.len()),
                    ));
                }
                if features.iter().any(|f| f.len() != b.dim) {
                    return Err(self.error(&["cost", "features"], format!("every feature row must have dim = {}", b.dim)));
                }
                let data = features
                    .iter()
                    .zip(labels)
                    .map(|(f, &l)| LabeledSample { features: f.clone(), label: l })
                    .collect();
                batch_loss_cost(data, LossKind::LipschitzLogistic).map_err(|e| fail("features", e))
            }
        }
    }

    fn build_oracle(&self, cost: Arc<CostSpec>) -> Result<OracleSpec, ConfigError> {
        let o = &self.config.oracle;
        let dim = cost.dim();
        let noise = match o.kind {
            OracleKind::TwoPoint => {
                let atom = o.atom.clone().ok_or_else(|| self.error(&["oracle"], "two-point noise needs atom"))?;
                NoiseModel::two_point(atom).map_err(|e| self.error(&["oracle", "atom"], e.to_string()))?
            }
            OracleKind::Sphere => {
                let r = self.need(o.radius, &["oracle", "radius"], "sphere radius")?;
                let bound = o.bound.unwrap_or(r);
                NoiseModel::sphere_bounded(dim, r, bound).map_err(|e| self.error(&["oracle", "radius"], e.to_string()))?
            }
            OracleKind::Pareto => {
                let scale = self.need(o.scale, &["oracle", "scale"], "Pareto scale")?;
                let p = self.need(o.p, &["oracle", "p"], "moment order p")?;
                if !(p > 1.0 && p <= 2.0) {
                    return Err(self.error(&["oracle", "p"], format!("p must lie in (1, 2], got {p}")));
                }
                let a = o.tail_index.unwrap_or(p + 0.5);
                if a <= p {
                    return Err(self.error(
                        &["oracle", "tail_index"],
                        format!("Pareto tail index {a} must exceed p = {p}"),
                    ));
                }
                NoiseModel::symmetrized_pareto(dim, scale, a, p).map_err(|e| self.error(&["oracle"], e.to_string()))?
            }
            OracleKind::Gaussian => {
                let s = self.need(o.std_dev, &["oracle", "std_dev"], "standard deviation")?;
                NoiseModel::gaussian(dim, s).map_err(|e| self.error(&["oracle", "std_dev"], e.to_string()))?
            }
            OracleKind::Batch => {
                let k = self.need(o.batch_size, &["oracle", "batch_size"], "batch size")?;
                return OracleSpec::batch(cost, k).map_err(|e| self.error(&["oracle", "batch_size"], e.to_string()));
            }
        };
        OracleSpec::additive(cost, noise).map_err(|e| self.error(&["oracle"], e.to_string()))
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&hash[..8])
    }
}
