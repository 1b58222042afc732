//! Subcommand execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rank_sde_core::analysis::{self, EnsembleOptions, GapOptions};
use rank_sde_core::certify;
use rank_sde_core::{Distortion, PlanarSpec, SchemeKind, Simulator, Status, TransformParams};
use serde::Serialize;

use crate::config::{AnalysisKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{write_histogram_csv, write_jsonl, write_trajectory_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Convergence,
    Gap,
    TransformCheck,
}

impl Command {
    fn expected_kind(self) -> Option<AnalysisKind> {
        match self {
            Command::Simulate => Some(AnalysisKind::Ensemble),
            Command::Convergence => Some(AnalysisKind::Convergence),
            Command::Gap => Some(AnalysisKind::Gap),
            Command::TransformCheck => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Convergence => "convergence",
            Command::Gap => "gap",
            Command::TransformCheck => "transform-check",
        }
    }
}

/// Grid nodes per axis, half-width of the box and sample counts used by
/// `transform-check`.
pub const CHECK_GRID_NODES: usize = 201;
pub const CHECK_HALF_BOX: f64 = 5.0;
pub const CHECK_ROUND_TRIP_POINTS: usize = 10_000;
pub const CHECK_DERIVATIVE_POINTS: usize = 1000;
pub const CHECK_MIN_ABS_Y1: f64 = 1e-3;

/// Calibrates the distortion map of a two-particle config.
pub fn build_distortion(cfg: &RunConfig) -> CliResult<Distortion> {
    let planar = PlanarSpec::from_system(&cfg.system)?;
    let t = &cfg.transform;
    let params = TransformParams::calibrate(&planar, t.domain, t.grid_points, t.c_max, t.safety)?;
    Ok(Distortion::new(planar, params))
}

pub fn build_simulator(cfg: &RunConfig) -> CliResult<Simulator> {
    match cfg.sim.scheme {
        SchemeKind::Naive => Ok(Simulator::naive(cfg.system.clone())),
        SchemeKind::Transformed => Ok(Simulator::transformed(cfg.system.clone(), build_distortion(cfg)?)?),
    }
}

#[derive(Serialize)]
struct StatusRecord<'a> {
    record: &'static str,
    path: u64,
    status: &'static str,
    t_stop: f64,
    rows: usize,
    file: Option<&'a str>,
}

#[derive(Serialize)]
struct ExcludedPath {
    path: u64,
    status: &'static str,
    t: f64,
}

fn status_time(s: &Status, t_end: f64) -> f64 {
    match *s {
        Status::Completed => t_end,
        Status::ExplodedAt(t) | Status::InversionFailedAt(t) => t,
    }
}

fn excluded(list: &[(u64, Status)], t_end: f64) -> Vec<ExcludedPath> {
    list.iter().map(|(p, s)| ExcludedPath { path: *p, status: s.label(), t: status_time(s, t_end) }).collect()
}

#[derive(Serialize)]
struct EnsembleRecord {
    record: &'static str,
    scheme: SchemeKind,
    n: usize,
    n_paths: u64,
    completed_paths: u64,
    terminal_mean: Vec<f64>,
    terminal_sd: Vec<f64>,
    min_over_paths: f64,
    max_over_paths: f64,
    occupation_fraction: Option<f64>,
    strip_half_width: Option<f64>,
    near_collision_count: u64,
    collision_eps: f64,
    nonpositive_components: u64,
    wrap_violations: u64,
    status_counts: BTreeMap<String, u64>,
    excluded_paths: Vec<ExcludedPath>,
}

#[derive(Serialize)]
struct ConvergencePoint {
    record: &'static str,
    dt: f64,
    strong_error: f64,
    standard_error: f64,
}

#[derive(Serialize)]
struct ConvergenceFit<'a> {
    record: &'static str,
    scheme: SchemeKind,
    fitted_order: f64,
    fit_r2: f64,
    reference_dt: f64,
    paths_used: u64,
    excluded_paths: &'a [u64],
}

#[derive(Serialize)]
struct GapOut<'a> {
    record: &'static str,
    scheme: SchemeKind,
    gap_mean: f64,
    standard_error: f64,
    oracle_mean: f64,
    relative_deviation: f64,
    n_paths: u64,
    samples: u64,
    burn_in: f64,
    overflow: u64,
    path_means: &'a [f64],
    excluded_paths: &'a [u64],
}

#[derive(Serialize)]
struct TransformCheckRecord {
    record: &'static str,
    c: f64,
    alpha_sup: f64,
    alpha_domain: [f64; 2],
    safety: f64,
    reduced_form: bool,
    det_min: f64,
    det_argmin: [f64; 2],
    det_nodes: usize,
    round_trip_max_error: f64,
    round_trip_points: usize,
    derivative_max_rel_error: f64,
    derivative_points: usize,
    fd_step: f64,
}

/// Runs `cmd` and returns the files written under `out_dir`.
pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    if let (Some(want), Some(got)) = (cmd.expected_kind(), cfg.analysis.kind) {
        if want != got {
            return Err(CliError::constraint(
                "analysis.kind",
                format!("config is for {got:?} but the subcommand is {}", cmd.name()).to_lowercase(),
            ));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    match cmd {
        Command::Simulate => simulate(cfg, out_dir),
        Command::Convergence => convergence(cfg, out_dir),
        Command::Gap => gap(cfg, out_dir),
        Command::TransformCheck => transform_check(cfg, out_dir),
    }
}

fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let sim = build_simulator(cfg)?;
    let a = &cfg.analysis;
    let opts = EnsembleOptions {
        n_paths: a.n_paths,
        first_path: 0,
        collision_eps: a.collision_eps,
        strip_half_width: None,
        keep_trajectories: a.trajectories,
    };
    let result = analysis::run_ensemble(&sim, &cfg.sim, &opts)?;
    let mut files = Vec::new();
    let mut statuses = Vec::new();
    let names: Vec<String> = (0..result.trajectories.len()).map(|p| format!("trajectory_{p:04}.csv")).collect();
    for (p, traj) in result.trajectories.iter().enumerate() {
        let file = if cfg.output.csv() {
            let path = out.join(&names[p]);
            write_trajectory_csv(&path, traj)?;
            files.push(path);
            Some(names[p].as_str())
        } else {
            None
        };
        statuses.push(StatusRecord {
            record: "status",
            path: p as u64,
            status: traj.status.label(),
            t_stop: traj.times.last().copied().unwrap_or(0.0),
            rows: traj.len(),
            file,
        });
    }
    if cfg.output.jsonl() {
        let s = &result.stats;
        let rec = EnsembleRecord {
            record: "ensemble",
            scheme: sim.scheme(),
            n: s.n,
            n_paths: s.n_paths,
            completed_paths: s.completed_paths,
            terminal_mean: s.terminal_mean.clone(),
            terminal_sd: s.terminal_sd(),
            min_over_paths: s.min_over_paths,
            max_over_paths: s.max_over_paths,
            occupation_fraction: s.occupation_fraction(),
            strip_half_width: sim.distortion().map(|d| d.params().c),
            near_collision_count: s.near_collision_count,
            collision_eps: a.collision_eps,
            nonpositive_components: s.nonpositive_components,
            wrap_violations: s.wrap_violations,
            status_counts: s.status_counts.clone(),
            excluded_paths: excluded(&s.excluded, cfg.sim.t_end),
        };
        files.push(jsonl(out, "status.jsonl", &statuses)?);
        files.push(jsonl(out, "ensemble.jsonl", &[rec])?);
    }
    Ok(files)
}

fn jsonl<T: Serialize>(out: &Path, name: &str, records: &[T]) -> CliResult<PathBuf> {
    let path = out.join(name);
    write_jsonl(&path, records)?;
    Ok(path)
}

fn convergence(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let dts = cfg
        .analysis
        .dts
        .as_ref()
        .ok_or_else(|| CliError::constraint("analysis.dts", "the convergence analysis needs a list of step sizes"))?;
    let sim = build_simulator(cfg)?;
    let table = analysis::strong_order(&sim, &cfg.sim, dts, cfg.analysis.n_paths)?;
    let mut files = Vec::new();
    if cfg.output.jsonl() {
        let points: Vec<ConvergencePoint> = table
            .dts
            .iter()
            .zip(&table.strong_errors)
            .zip(&table.standard_errors)
            .map(|((&dt, &e), &se)| ConvergencePoint { record: "convergence", dt, strong_error: e, standard_error: se })
            .collect();
        let fit = ConvergenceFit {
            record: "convergence_fit",
            scheme: sim.scheme(),
            fitted_order: table.fitted_order,
            fit_r2: table.fit_r2,
            reference_dt: table.reference_dt,
            paths_used: table.paths_used,
            excluded_paths: &table.excluded_paths,
        };
        let path = out.join("convergence.jsonl");
        let mut lines: Vec<serde_json::Value> = points.iter().map(|p| serde_json::to_value(p).expect("plain record")).collect();
        lines.push(serde_json::to_value(&fit).expect("plain record"));
        write_jsonl(&path, &lines)?;
        files.push(path);
    }
    Ok(files)
}

fn gap(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let sim = build_simulator(cfg)?;
    let a = &cfg.analysis;
    let opts = GapOptions { n_paths: a.n_paths, burn_in_fraction: a.burn_in_fraction, hist_bins: a.hist_bins, hist_max: a.hist_max };
    let rec = analysis::gap_statistics(&sim, &cfg.sim, &opts)?;
    let mut files = Vec::new();
    if cfg.output.jsonl() {
        let out_rec = GapOut {
            record: "gap",
            scheme: sim.scheme(),
            gap_mean: rec.gap_mean,
            standard_error: rec.standard_error,
            oracle_mean: rec.oracle_mean,
            relative_deviation: (rec.gap_mean - rec.oracle_mean) / rec.oracle_mean,
            n_paths: a.n_paths,
            samples: rec.samples,
            burn_in: rec.burn_in,
            overflow: rec.overflow,
            path_means: &rec.path_means,
            excluded_paths: &rec.excluded_paths,
        };
        files.push(jsonl(out, "gap.jsonl", &[out_rec])?);
    }
    if cfg.output.csv() {
        let path = out.join("gap_hist.csv");
        write_histogram_csv(&path, &rec.histogram)?;
        files.push(path);
    }
    Ok(files)
}

fn transform_check(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let map = build_distortion(cfg)?;
    let seed = cfg.sim.seed;
    let det = certify::det_grid_minimum(&map, CHECK_HALF_BOX, CHECK_GRID_NODES)?;
    let trip = certify::round_trip(&map, CHECK_HALF_BOX, CHECK_ROUND_TRIP_POINTS, seed)?;
    let deriv = certify::derivative_check(&map, CHECK_DERIVATIVE_POINTS, CHECK_MIN_ABS_Y1.min(map.params().c), seed)?;
    let p = map.params();
    let rec = TransformCheckRecord {
        record: "transform_check",
        c: p.c,
        alpha_sup: p.alpha_sup,
        alpha_domain: p.alpha_domain,
        safety: p.safety,
        reduced_form: map.spec().uses_reduced_form(),
        det_min: det.min_det,
        det_argmin: det.argmin,
        det_nodes: det.nodes,
        round_trip_max_error: trip.max_scaled_error,
        round_trip_points: trip.points,
        derivative_max_rel_error: deriv.max_rel_error,
        derivative_points: deriv.points,
        fd_step: deriv.step,
    };
    // the report is the product of this subcommand, so it is always written
    Ok(vec![jsonl(out, "transform_check.jsonl", &[rec])?])
}
