//! TOML run configuration.
//!
//! ```toml
//! [system]
//! variant = "rank_diffusion"          # or "own_diffusion"
//! positivity_wrap = true
//! x0 = [1.0, 1.2]
//! drifts = [{ kind = "logistic2", params = [0.75, 10.0] }, ...]
//! diffusions = [{ kind = "logistic2", params = [0.125, 10.0] }, ...]
//!
//! [transform]                         # optional
//! domain = [-10.0, 10.0]
//! c_max = 1.0
//! safety = 0.5
//!
//! [sim]
//! dt = 1e-3
//! t_end = 30.0
//! seed = 1
//! scheme = "naive"                    # or "transformed"
//!
//! [analysis]                          # optional
//! kind = "ensemble"                   # "convergence" | "gap"
//! n_paths = 100
//!
//! [output]                            # optional
//! directory = "out"
//! formats = ["csv", "jsonl"]
//! ```

use std::path::{Path, PathBuf};

use rank_sde_core::analysis::DEFAULT_COLLISION_EPS;
use rank_sde_core::scheme::DEFAULT_R_EXPLODE;
use rank_sde_core::transform::DEFAULT_SAFETY;
use rank_sde_core::{CoefficientFamily, FamilySpec, Role, SchemeKind, SimConfig, SystemSpec, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable overriding `sim.seed`.
pub const SEED_ENV: &str = "RANK_SDE_SEED";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    #[serde(default)]
    transform: RawTransform,
    sim: RawSim,
    #[serde(default)]
    analysis: RawAnalysis,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    variant: Variant,
    #[serde(default)]
    positivity_wrap: bool,
    x0: Vec<f64>,
    drifts: Vec<FamilySpec>,
    diffusions: Vec<FamilySpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    domain: Option<[f64; 2]>,
    c_max: Option<f64>,
    safety: Option<f64>,
    grid_points: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: f64,
    t_end: f64,
    seed: u64,
    #[serde(default)]
    scheme: SchemeKind,
    r_explode: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    kind: Option<AnalysisKind>,
    n_paths: Option<u64>,
    trajectories: Option<usize>,
    collision_eps: Option<f64>,
    dts: Option<Vec<f64>>,
    burn_in_fraction: Option<f64>,
    hist_bins: Option<usize>,
    hist_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Ensemble,
    Convergence,
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSettings {
    pub domain: [f64; 2],
    pub c_max: Option<f64>,
    pub safety: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub kind: Option<AnalysisKind>,
    pub n_paths: u64,
    /// Trajectories written by `simulate`.
    pub trajectories: usize,
    pub collision_eps: f64,
    pub dts: Option<Vec<f64>>,
    pub burn_in_fraction: f64,
    pub hist_bins: usize,
    pub hist_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl OutputSettings {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn jsonl(&self) -> bool {
        self.formats.contains(&Format::Jsonl)
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub transform: TransformSettings,
    pub sim: SimConfig,
    pub analysis: AnalysisSettings,
    pub output: OutputSettings,
}

fn positive(key: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::constraint(key, format!("must be finite and positive, got {v}")))
    }
}

fn families(key: &str, specs: &[FamilySpec], role: Role) -> CliResult<Vec<CoefficientFamily>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| CoefficientFamily::from_spec(s, role).map_err(|e| CliError::constraint(format!("{key}[{i}]"), e.to_string())))
        .collect()
}

/// Reads and validates a config file; `seed_override` replaces `sim.seed`.
pub fn parse_config_with(path: &Path, seed_override: Option<&str>) -> CliResult<RunConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::MissingFile(path.to_path_buf())),
        Err(e) => return Err(CliError::io(format!("reading {}", path.display()), e)),
    };
    parse_str(&text, path, seed_override)
}

/// Reads and validates a config file, honouring `RANK_SDE_SEED`.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let seed = std::env::var(SEED_ENV).ok();
    parse_config_with(path, seed.as_deref())
}

pub fn parse_str(text: &str, path: &Path, seed_override: Option<&str>) -> CliResult<RunConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.message().to_string() })?;
    validate(raw, seed_override)
}

fn validate(raw: RawConfig, seed_override: Option<&str>) -> CliResult<RunConfig> {
    let s = raw.system;
    let n = s.x0.len();
    if n == 0 {
        return Err(CliError::constraint("system.x0", "at least one particle is required"));
    }
    if let Some(v) = s.x0.iter().find(|v| !v.is_finite()) {
        return Err(CliError::constraint("system.x0", format!("entries must be finite, got {v}")));
    }
    if s.x0.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::constraint("system.x0", "must be strictly increasing"));
    }
    if s.drifts.len() != n {
        return Err(CliError::constraint("system.drifts", format!("expected {n} families, got {}", s.drifts.len())));
    }
    if s.diffusions.len() != n {
        return Err(CliError::constraint("system.diffusions", format!("expected {n} families, got {}", s.diffusions.len())));
    }
    let drifts = families("system.drifts", &s.drifts, Role::Drift)?;
    let diffusions = families("system.diffusions", &s.diffusions, Role::Diffusion)?;
    let system = SystemSpec::new(s.variant, drifts, diffusions, s.positivity_wrap, s.x0)
        .map_err(|e| CliError::constraint("system", e.to_string()))?;

    let t = raw.transform;
    let domain = t.domain.unwrap_or([-10.0, 10.0]);
    if !(domain[0].is_finite() && domain[1].is_finite() && domain[0] < domain[1]) {
        return Err(CliError::constraint("transform.domain", format!("must be a finite interval, got {domain:?}")));
    }
    let c_max = t.c_max.map(|v| positive("transform.c_max", v)).transpose()?;
    let safety = t.safety.unwrap_or(DEFAULT_SAFETY);
    if !(safety > 0.0 && safety < 1.0) {
        return Err(CliError::constraint("transform.safety", format!("must lie in (0, 1), got {safety}")));
    }
    let grid_points = t.grid_points.unwrap_or(4001);
    if grid_points < 101 {
        return Err(CliError::constraint("transform.grid_points", format!("must be at least 101, got {grid_points}")));
    }
    let transform = TransformSettings { domain, c_max, safety, grid_points };

    let r = raw.sim;
    let dt = positive("sim.dt", r.dt)?;
    let t_end = positive("sim.t_end", r.t_end)?;
    if dt > t_end {
        return Err(CliError::constraint("sim.dt", format!("must not exceed sim.t_end = {t_end}, got {dt}")));
    }
    let r_explode = positive("sim.r_explode", r.r_explode.unwrap_or(DEFAULT_R_EXPLODE))?;
    let seed = match seed_override {
        Some(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::constraint(SEED_ENV, format!("must be an unsigned 64-bit integer, got {v:?}")))?,
        None => r.seed,
    };
    if r.scheme == SchemeKind::Transformed && n != 2 {
        return Err(CliError::constraint("sim.scheme", format!("the transformed scheme needs 2 particles, got {n}")));
    }
    let sim = SimConfig { dt, t_end, seed, path_index: 0, r_explode, scheme: r.scheme };

    let a = raw.analysis;
    let n_paths = a.n_paths.unwrap_or(1);
    if n_paths == 0 {
        return Err(CliError::constraint("analysis.n_paths", "must be at least 1"));
    }
    let trajectories = a.trajectories.unwrap_or(1);
    if trajectories as u64 > n_paths {
        return Err(CliError::constraint("analysis.trajectories", format!("must not exceed analysis.n_paths = {n_paths}")));
    }
    let collision_eps = positive("analysis.collision_eps", a.collision_eps.unwrap_or(DEFAULT_COLLISION_EPS))?;
    if let Some(dts) = &a.dts {
        for (i, &d) in dts.iter().enumerate() {
            positive(&format!("analysis.dts[{i}]"), d)?;
        }
    }
    let burn_in_fraction = a.burn_in_fraction.unwrap_or(0.5);
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(CliError::constraint("analysis.burn_in_fraction", format!("must lie in [0, 1), got {burn_in_fraction}")));
    }
    let hist_bins = a.hist_bins.unwrap_or(50);
    if hist_bins == 0 {
        return Err(CliError::constraint("analysis.hist_bins", "must be at least 1"));
    }
    let hist_max = a.hist_max.map(|v| positive("analysis.hist_max", v)).transpose()?;
    let analysis =
        AnalysisSettings { kind: a.kind, n_paths, trajectories, collision_eps, dts: a.dts, burn_in_fraction, hist_bins, hist_max };

    let o = raw.output;
    let formats = o.formats.unwrap_or_else(|| vec![Format::Csv, Format::Jsonl]);
    if formats.is_empty() {
        return Err(CliError::constraint("output.formats", "at least one format is required"));
    }
    let output = OutputSettings { directory: o.directory.unwrap_or_else(|| PathBuf::from("out")), formats };

    Ok(RunConfig { system, transform, sim, analysis, output })
}
