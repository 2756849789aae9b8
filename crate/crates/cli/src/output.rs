//! Result files: stamped CSV tables, the run manifest and the trajectory
//! summary reader.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ldplab_core::montecarlo::Ensemble;
use ldplab_core::optimizers::RunSummary;
use ldplab_core::oracles::Certificate;

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TRAJ_SUMMARY: &str = "trajsummary.csv";
pub const MANIFEST: &str = "manifest.toml";
pub const CONFIG_COPY: &str = "config.toml";

/// Shortest round-trip rendering, so values read back bit-identically.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn stamp_lines(digest: &str) -> String {
    format!("# config_digest={digest}\n# tool_version={TOOL_VERSION}\n")
}

/// CSV with `# key=value` provenance lines, a header row, LF endings.
pub fn csv_bytes(digest: &str, extra: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut buf = stamp_lines(digest).into_bytes();
    for (k, v) in extra {
        buf.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Inserts the provenance comment after the opening `<svg>` line.
pub fn stamp_svg(svg: &str, digest: &str) -> String {
    let comment = format!("<!-- config_digest={digest} tool_version={TOOL_VERSION} -->\n");
    match svg.find('\n') {
        Some(i) => format!("{}{}{}", &svg[..=i], comment, &svg[i + 1..]),
        None => svg.to_string() + &comment,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Output directory: `--out` wins; otherwise the configured directory (or
/// `results/<fallback>`) under the root given by `LDPLAB_OUT`, else `.`.
pub fn resolve_out_dir(out: Option<&Path>, configured: Option<&str>, fallback: &str) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let root = std::env::var_os("LDPLAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    match configured {
        Some(d) => root.join(d),
        None => root.join("results").join(fallback),
    }
}

/// Constants certified for the configured problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub smoothness_l: f64,
    pub grad_bound_g: f64,
    pub noise: Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<String>,
    /// `I(x) = rate_coef x^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_coef: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub tool_version: String,
    pub runs: u64,
    pub horizon: u64,
    pub epsilon_grid: Vec<f64>,
    pub t_grid: Vec<u64>,
    pub diverged_count: u64,
    pub clip_events_total: u64,
    pub certified: Certified,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = read_file(&path)?;
        toml::from_str(&text).map_err(|e| CliError::io_msg(&path, e.message().trim()))
    }
}

/// Digest recorded in an existing results directory, if any.
pub fn existing_digest(dir: &Path) -> Option<String> {
    Manifest::load(dir).ok().map(|m| m.config_digest)
}

pub fn hit_column(eps: f64) -> String {
    format!("hit_{}", num(eps))
}

pub fn traj_summary_csv(ensemble: &Ensemble) -> Vec<u8> {
    let mut header: Vec<String> = vec!["run_index".into(), "diverged".into(), "clip_events".into()];
    header.extend(ensemble.epsilon_grid.iter().map(|&e| hit_column(e)));
    header.push("final_f".into());
    header.push("final_a".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = ensemble
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![r.run_index.to_string(), (r.diverged as u8).to_string(), r.clip_events.to_string()];
            row.extend(r.hitting_times.iter().map(|h| match h {
                Some(t) => t.to_string(),
                None => "never".into(),
            }));
            row.push(num(r.final_f));
            row.push(num(r.final_a));
            row
        })
        .collect();
    csv_bytes(&ensemble.config_digest, &[], &header_refs, &rows)
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T, CliError> {
    field
        .parse()
        .map_err(|_| CliError::io_msg(path, &format!("record {line}: cannot parse {field:?}")))
}

/// Reads a results directory back into an ensemble.
pub fn load_ensemble(dir: &Path) -> Result<(Manifest, Ensemble), CliError> {
    let manifest = Manifest::load(dir)?;
    let path = dir.join(TRAJ_SUMMARY);
    let text = read_file(&path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let k = manifest.epsilon_grid.len();
    let expected = 5 + k;
    let mut runs = Vec::with_capacity(manifest.runs as usize);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io_msg(&path, &e.to_string()))?;
        if rec.len() != expected {
            return Err(CliError::io_msg(&path, &format!("record {i}: expected {expected} fields, got {}", rec.len())));
        }
        let hitting_times = (0..k)
            .map(|j| match &rec[3 + j] {
                "never" => Ok(None),
                s => parse(&path, i, s).map(Some),
            })
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(RunSummary {
            run_index: parse(&path, i, &rec[0])?,
            diverged: parse::<u8>(&path, i, &rec[1])? != 0,
            clip_events: parse(&path, i, &rec[2])?,
            hitting_times,
            final_f: parse(&path, i, &rec[3 + k])?,
            final_a: parse(&path, i, &rec[4 + k])?,
        });
    }
    if runs.len() as u64 != manifest.runs {
        return Err(CliError::io_msg(
            &path,
            &format!("manifest lists {} runs but the summary has {}", manifest.runs, runs.len()),
        ));
    }
    let ensemble = Ensemble {
        config_digest: manifest.config_digest.clone(),
        epsilon_grid: manifest.epsilon_grid.clone(),
        horizon: manifest.horizon,
        runs,
    };
    Ok((manifest, ensemble))
}

/// Parsed rows of a `tail.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub t: u64,
    pub epsilon: f64,
    pub n: u64,
    pub exceed: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const TAIL_HEADER: [&str; 7] = ["t", "epsilon", "N", "exceed", "p_hat", "ci_low", "ci_high"];

/// Reads `tail.csv`, returning the recorded digest and rows.
pub fn read_tail_csv(path: &Path) -> Result<(String, Vec<TailRow>), CliError> {
    let text = read_file(path)?;
    let digest = text
        .lines()
        .filter_map(|l| l.strip_prefix("# config_digest="))
        .next()
        .unwrap_or("unknown")
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CliError::io_msg(path, &e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TAIL_HEADER {
        return Err(CliError::io_msg(path, "unexpected tail.csv header"));
    }
    let mut rows = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io_msg(path, &e.to_string()))?;
        rows.push(TailRow {
            t: parse(path, i, &rec[0])?,
            epsilon: parse(path, i, &rec[1])?,
            n: parse(path, i, &rec[2])?,
            exceed: parse(path, i, &rec[3])?,
            p_hat: parse(path, i, &rec[4])?,
            ci_low: parse(path, i, &rec[5])?,
            ci_high: parse(path, i, &rec[6])?,
        });
    }
    Ok((digest, rows))
}
