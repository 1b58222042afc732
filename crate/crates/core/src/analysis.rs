//! Monte Carlo harness: ensembles, strong convergence order and stationary
//! gap statistics.
//!
//! Paths are simulated independently (in parallel through rayon) and folded
//! in path-index order, so results do not depend on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{FamilyKind, SystemSpec};
use crate::error::{Error, Result};
use crate::scheme::noise::{CounterStream, NoiseSource};
use crate::scheme::{SimConfig, Simulator, Status, Trajectory};

pub const DEFAULT_COLLISION_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub n_paths: u64,
    /// First path index; paths `first_path .. first_path + n_paths` are run.
    pub first_path: u64,
    /// Threshold on adjacent gaps for the near-collision count (N >= 3).
    pub collision_eps: f64,
    /// Half-width of the strip around the diagonal for the occupation
    /// fraction (N = 2). Defaults to the transform's `c` when there is one.
    pub strip_half_width: Option<f64>,
    /// Number of leading paths whose full trajectories are returned.
    pub keep_trajectories: usize,
}

impl EnsembleOptions {
    pub fn new(n_paths: u64) -> Self {
        Self {
            n_paths,
            first_path: 0,
            collision_eps: DEFAULT_COLLISION_EPS,
            strip_half_width: None,
            keep_trajectories: 0,
        }
    }
}

/// Mergeable ensemble summary.
///
/// Terminal moments are taken over completed paths only; extremes and
/// occupation statistics cover every recorded iterate of every path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n: usize,
    pub n_paths: u64,
    pub completed_paths: u64,
    pub terminal_mean: Vec<f64>,
    /// Sum of squared deviations from the terminal mean, per particle.
    pub terminal_m2: Vec<f64>,
    pub min_over_paths: f64,
    pub max_over_paths: f64,
    /// Iterates inside the strip and iterates inspected (N = 2 with a strip).
    pub strip_iterates: u64,
    pub total_iterates: u64,
    pub occupation_tracked: bool,
    pub near_collision_count: u64,
    /// Recorded coordinates that were `<= 0`.
    pub nonpositive_components: u64,
    /// Diffusion coefficients found nonzero at nonpositive components
    /// (checked only under positivity wrapping).
    pub wrap_violations: u64,
    pub status_counts: BTreeMap<String, u64>,
    /// Paths that did not complete, with their status.
    pub excluded: Vec<(u64, Status)>,
}

impl EnsembleStats {
    pub fn empty(n: usize, occupation_tracked: bool) -> Self {
        Self {
            n,
            n_paths: 0,
            completed_paths: 0,
            terminal_mean: vec![0.0; n],
            terminal_m2: vec![0.0; n],
            min_over_paths: f64::INFINITY,
            max_over_paths: f64::NEG_INFINITY,
            strip_iterates: 0,
            total_iterates: 0,
            occupation_tracked,
            near_collision_count: 0,
            nonpositive_components: 0,
            wrap_violations: 0,
            status_counts: BTreeMap::new(),
            excluded: Vec::new(),
        }
    }

    /// Sample standard deviation of the terminal state (0 for fewer than
    /// two completed paths).
    pub fn terminal_sd(&self) -> Vec<f64> {
        if self.completed_paths < 2 {
            return vec![0.0; self.n];
        }
        let denom = (self.completed_paths - 1) as f64;
        self.terminal_m2.iter().map(|m2| (m2 / denom).sqrt()).collect()
    }

    pub fn occupation_fraction(&self) -> Option<f64> {
        if !self.occupation_tracked || self.total_iterates == 0 {
            return None;
        }
        Some(self.strip_iterates as f64 / self.total_iterates as f64)
    }

    /// Pools two summaries over disjoint sets of paths.
    pub fn merge(&mut self, other: &EnsembleStats) {
        assert_eq!(self.n, other.n, "merging ensembles of different dimension");
        let (na, nb) = (self.completed_paths as f64, other.completed_paths as f64);
        let total = na + nb;
        if nb > 0.0 {
            for i in 0..self.n {
                let delta = other.terminal_mean[i] - self.terminal_mean[i];
                self.terminal_mean[i] += delta * nb / total;
                self.terminal_m2[i] += other.terminal_m2[i] + delta * delta * na * nb / total;
            }
        }
        self.n_paths += other.n_paths;
        self.completed_paths += other.completed_paths;
        self.min_over_paths = self.min_over_paths.min(other.min_over_paths);
        self.max_over_paths = self.max_over_paths.max(other.max_over_paths);
        self.strip_iterates += other.strip_iterates;
        self.total_iterates += other.total_iterates;
        self.occupation_tracked &= other.occupation_tracked;
        self.near_collision_count += other.near_collision_count;
        self.nonpositive_components += other.nonpositive_components;
        self.wrap_violations += other.wrap_violations;
        for (k, v) in &other.status_counts {
            *self.status_counts.entry(k.clone()).or_insert(0) += v;
        }
        self.excluded.extend(other.excluded.iter().copied());
    }
}

/// Per-path observer collecting the ensemble diagnostics.
struct PathScan<'a> {
    spec: &'a SystemSpec,
    strip: Option<f64>,
    collision_eps: f64,
    stats: EnsembleStats,
    last: Vec<f64>,
    sorted: Vec<f64>,
    diff: Vec<f64>,
    keep: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> PathScan<'a> {
    fn new(spec: &'a SystemSpec, strip: Option<f64>, collision_eps: f64, keep: bool) -> Self {
        let n = spec.n_particles();
        Self {
            spec,
            strip,
            collision_eps,
            stats: EnsembleStats::empty(n, strip.is_some()),
            last: vec![0.0; n],
            sorted: vec![0.0; n],
            diff: vec![0.0; n],
            keep: keep.then(|| (Vec::new(), Vec::new())),
        }
    }

    fn observe(&mut self, t: f64, x: &[f64]) {
        let s = &mut self.stats;
        for &v in x {
            s.min_over_paths = s.min_over_paths.min(v);
            s.max_over_paths = s.max_over_paths.max(v);
        }
        if let Some(c) = self.strip {
            s.total_iterates += 1;
            if (x[0] - x[1]).abs() * std::f64::consts::FRAC_1_SQRT_2 < c {
                s.strip_iterates += 1;
            }
        }
        if x.len() >= 3 {
            self.sorted.copy_from_slice(x);
            self.sorted.sort_by(f64::total_cmp);
            let eps = self.collision_eps;
            if self.sorted.windows(3).any(|w| w[1] - w[0] < eps && w[2] - w[1] < eps) {
                s.near_collision_count += 1;
            }
        }
        let nonpositive = x.iter().filter(|&&v| v <= 0.0).count() as u64;
        s.nonpositive_components += nonpositive;
        if nonpositive > 0
            && self.spec.positivity_wrap()
            && self.spec.diffusion_coeffs(x).map(|d| self.diff.copy_from_slice(&d)).is_ok()
        {
            s.wrap_violations += x.iter().zip(&self.diff).filter(|(&v, &d)| v <= 0.0 && d != 0.0).count() as u64;
        }
        self.last.copy_from_slice(x);
        if let Some((times, states)) = &mut self.keep {
            times.push(t);
            states.extend_from_slice(x);
        }
    }

    fn finish(mut self, path: u64, status: Status) -> (EnsembleStats, Option<Trajectory>) {
        let s = &mut self.stats;
        s.n_paths = 1;
        *s.status_counts.entry(status.label().to_string()).or_insert(0) += 1;
        if status.is_completed() {
            s.completed_paths = 1;
            s.terminal_mean.copy_from_slice(&self.last);
        } else {
            s.excluded.push((path, status));
        }
        let n = s.n;
        let traj = self.keep.map(|(times, states)| Trajectory { times, states, n, status });
        (self.stats, traj)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub stats: EnsembleStats,
    /// Trajectories of the first `keep_trajectories` paths, in path order.
    pub trajectories: Vec<Trajectory>,
}

/// Simulates paths `first_path .. first_path + n_paths` and aggregates them.
pub fn run_ensemble(sim: &Simulator, cfg: &SimConfig, opts: &EnsembleOptions) -> Result<EnsembleOutput> {
    if opts.n_paths == 0 {
        return Err(Error::Analysis("an ensemble needs at least one path".into()));
    }
    cfg.validate()?;
    let strip = match (opts.strip_half_width, sim.spec().n_particles()) {
        (_, n) if n != 2 => None,
        (Some(c), _) => Some(c),
        (None, _) => sim.distortion().map(|d| d.params().c),
    };
    let per_path: Vec<(EnsembleStats, Option<Trajectory>)> = (opts.first_path..opts.first_path + opts.n_paths)
        .into_par_iter()
        .map(|path| {
            let keep = path - opts.first_path < opts.keep_trajectories as u64;
            let mut scan = PathScan::new(sim.spec(), strip, opts.collision_eps, keep);
            let mut noise = CounterStream::new(cfg.seed, path);
            let status = sim.run(&cfg.with_path(path), &mut noise, |t, x| scan.observe(t, x))?;
            Ok(scan.finish(path, status))
        })
        .collect::<Result<_>>()?;
    let mut stats = EnsembleStats::empty(sim.spec().n_particles(), strip.is_some());
    let mut trajectories = Vec::new();
    for (s, traj) in per_path {
        stats.merge(&s);
        trajectories.extend(traj);
    }
    Ok(EnsembleOutput { stats, trajectories })
}

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::Analysis(format!("a fit needs at least 3 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Analysis("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub dts: Vec<f64>,
    /// Mean terminal Euclidean distance to the reference, per dt.
    pub strong_errors: Vec<f64>,
    /// Monte Carlo standard errors of `strong_errors`.
    pub standard_errors: Vec<f64>,
    pub fitted_order: f64,
    pub fit_r2: f64,
    pub reference_dt: f64,
    pub paths_used: u64,
    pub excluded_paths: Vec<u64>,
}

/// Ratio of the coarse to the reference step each dt must be.
pub const REFERENCE_REFINEMENT: u64 = 64;

/// Brownian increments of one path on the reference grid, replayed at any
/// coarser dyadic step by summing consecutive blocks.
struct FineBuffer {
    increments: Vec<f64>,
    n: usize,
    factor: u64,
}

impl NoiseSource for FineBuffer {
    fn increments(&mut self, step: u64, _dt: f64, out: &mut [f64]) {
        let f = self.factor as usize;
        let start = step as usize * f;
        out.fill(0.0);
        for j in start..start + f {
            for (o, v) in out.iter_mut().zip(&self.increments[j * self.n..(j + 1) * self.n]) {
                *o += v;
            }
        }
    }
}

fn exact_steps(t_end: f64, dt: f64) -> Option<u64> {
    let ratio = t_end / dt;
    let k = ratio.round();
    ((ratio - k).abs() <= 1e-9 * k.max(1.0) && k >= 1.0).then_some(k as u64)
}

/// Empirical strong order at `base_cfg.t_end` against a reference run at
/// `min(dts) / 64` driven by the same Brownian path.
///
/// `dts` must be strictly decreasing, differ from the reference step by
/// powers of two, and divide `t_end`. Paths that fail to complete at any
/// step size are excluded and listed.
pub fn strong_order(sim: &Simulator, base_cfg: &SimConfig, dts: &[f64], n_paths: u64) -> Result<ConvergenceTable> {
    if dts.len() < 3 {
        return Err(Error::Analysis(format!("need at least 3 step sizes for a fit, got {}", dts.len())));
    }
    if n_paths == 0 {
        return Err(Error::Analysis("need at least one path".into()));
    }
    if dts.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Analysis("step sizes must be strictly decreasing".into()));
    }
    let t_end = base_cfg.t_end;
    let reference_dt = dts[dts.len() - 1] / REFERENCE_REFINEMENT as f64;
    let ref_steps = exact_steps(t_end, reference_dt)
        .ok_or_else(|| Error::Analysis(format!("reference step {reference_dt} does not divide t_end = {t_end}")))?;
    let mut factors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let ratio = dt / reference_dt;
        let k = ratio.round() as u64;
        if (ratio - k as f64).abs() > 1e-9 * ratio || !k.is_power_of_two() {
            return Err(Error::Analysis(format!("step {dt} is not a dyadic multiple of the reference {reference_dt}")));
        }
        if exact_steps(t_end, dt).is_none() {
            return Err(Error::Analysis(format!("step {dt} does not divide t_end = {t_end}")));
        }
        factors.push(k);
    }
    let n = sim.spec().n_particles();
    let cfg_at = |dt: f64, path: u64| SimConfig { dt, path_index: path, ..*base_cfg };

    let terminal = |cfg: &SimConfig, noise: &mut FineBuffer| -> Result<Option<Vec<f64>>> {
        let mut last = vec![0.0; n];
        let status = sim.run(cfg, noise, |_, x| last.copy_from_slice(x))?;
        Ok(status.is_completed().then_some(last))
    };

    let per_path: Vec<Option<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut stream = CounterStream::new(base_cfg.seed, path);
            let mut increments = vec![0.0; ref_steps as usize * n];
            for (m, chunk) in increments.chunks_exact_mut(n).enumerate() {
                stream.increments(m as u64, reference_dt, chunk);
            }
            let mut buffer = FineBuffer { increments, n, factor: 1 };
            let Some(reference) = terminal(&cfg_at(reference_dt, path), &mut buffer)? else {
                return Ok(None);
            };
            let mut errors = Vec::with_capacity(dts.len());
            for (&dt, &k) in dts.iter().zip(&factors) {
                buffer.factor = k;
                let Some(x) = terminal(&cfg_at(dt, path), &mut buffer)? else {
                    return Ok(None);
                };
                errors.push(x.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
            }
            Ok(Some(errors))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; dts.len()];
    let mut sq_sums = vec![0.0; dts.len()];
    let mut used = 0u64;
    let mut excluded = Vec::new();
    for (path, errs) in per_path.into_iter().enumerate() {
        match errs {
            Some(errs) => {
                used += 1;
                for (j, e) in errs.into_iter().enumerate() {
                    sums[j] += e;
                    sq_sums[j] += e * e;
                }
            }
            None => excluded.push(path as u64),
        }
    }
    if used == 0 {
        return Err(Error::Analysis("every path failed to complete".into()));
    }
    let m = used as f64;
    let strong_errors: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let standard_errors: Vec<f64> = sums
        .iter()
        .zip(&sq_sums)
        .map(|(s, q)| if used < 2 { 0.0 } else { ((q - s * s / m) / (m - 1.0)).max(0.0).sqrt() / m.sqrt() })
        .collect();
    if let Some(j) = strong_errors.iter().position(|e| !(*e > 0.0)) {
        return Err(Error::Analysis(format!("strong error at dt = {} is {}, cannot fit", dts[j], strong_errors[j])));
    }
    let lx: Vec<f64> = dts.iter().map(|d| d.log2()).collect();
    let ly: Vec<f64> = strong_errors.iter().map(|e| e.log2()).collect();
    let fit = linear_fit(&lx, &ly)?;
    Ok(ConvergenceTable {
        dts: dts.to_vec(),
        strong_errors,
        standard_errors,
        fitted_order: fit.slope,
        fit_r2: fit.r2,
        reference_dt,
        paths_used: used,
        excluded_paths: excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapOptions {
    pub n_paths: u64,
    /// Fraction of `[0, t_end]` discarded before averaging.
    pub burn_in_fraction: f64,
    pub hist_bins: usize,
    /// Upper edge of the histogram; defaults to eight times the oracle mean.
    pub hist_max: Option<f64>,
}

impl GapOptions {
    pub fn new(n_paths: u64) -> Self {
        Self { n_paths, burn_in_fraction: 0.5, hist_bins: 50, hist_max: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    /// Time-averaged gap after burn-in, averaged over paths.
    pub gap_mean: f64,
    /// Standard error of `gap_mean` from the spread of per-path averages.
    pub standard_error: f64,
    /// Stationary mean of a reflected Brownian motion with the same drift
    /// and variance: `(s1^2 + s2^2) / (2 (b1 - b2))`.
    pub oracle_mean: f64,
    pub path_means: Vec<f64>,
    pub samples: u64,
    pub burn_in: f64,
    pub histogram: Vec<HistogramBin>,
    /// Samples beyond the last bin.
    pub overflow: u64,
    pub excluded_paths: Vec<u64>,
}

fn constant_value(spec: &SystemSpec, drift: bool, k: usize) -> Option<f64> {
    let f = if drift { &spec.drifts()[k] } else { &spec.diffusions()[k] };
    (f.kind() == FamilyKind::Constant).then(|| f.params()[0])
}

/// Stationary mean of `X^(2) - X^(1)` for a two-particle system with
/// constant coefficients.
pub fn gap_oracle(spec: &SystemSpec) -> Result<f64> {
    if spec.n_particles() != 2 {
        return Err(Error::Analysis(format!("gap statistics need N = 2, got {}", spec.n_particles())));
    }
    let values: Option<Vec<f64>> = [(true, 0), (true, 1), (false, 0), (false, 1)]
        .iter()
        .map(|&(d, k)| constant_value(spec, d, k))
        .collect();
    let v = values.ok_or_else(|| Error::Analysis("gap statistics need constant coefficients".into()))?;
    let (b1, b2, s1, s2) = (v[0], v[1], v[2], v[3]);
    if !(b1 > b2) {
        return Err(Error::Analysis(format!("no stationary gap unless b1 > b2 (b1 = {b1}, b2 = {b2})")));
    }
    if s1 == 0.0 && s2 == 0.0 {
        return Err(Error::Analysis("gap statistics need nonzero diffusion".into()));
    }
    Ok((s1 * s1 + s2 * s2) / (2.0 * (b1 - b2)))
}

/// Long-run time average of the gap between the two particles.
pub fn gap_statistics(sim: &Simulator, cfg: &SimConfig, opts: &GapOptions) -> Result<GapRecord> {
    let oracle = gap_oracle(sim.spec())?;
    if opts.n_paths == 0 {
        return Err(Error::Analysis("need at least one path".into()));
    }
    if !(opts.burn_in_fraction >= 0.0 && opts.burn_in_fraction < 1.0) {
        return Err(Error::Analysis(format!("burn-in fraction must lie in [0, 1), got {}", opts.burn_in_fraction)));
    }
    if opts.hist_bins == 0 {
        return Err(Error::Analysis("histogram needs at least one bin".into()));
    }
    cfg.validate()?;
    let hist_max = opts.hist_max.unwrap_or(8.0 * oracle);
    if !(hist_max > 0.0 && hist_max.is_finite()) {
        return Err(Error::Analysis(format!("histogram range must be positive, got {hist_max}")));
    }
    let burn_in = opts.burn_in_fraction * cfg.t_end;
    let width = hist_max / opts.hist_bins as f64;

    let per_path: Vec<(u64, f64, u64, Vec<u64>, u64, Status)> = (0..opts.n_paths)
        .into_par_iter()
        .map(|path| {
            let (mut sum, mut count, mut overflow) = (0.0, 0u64, 0u64);
            let mut counts = vec![0u64; opts.hist_bins];
            let status = sim.run(&cfg.with_path(path), &mut CounterStream::new(cfg.seed, path), |t, x| {
                if t < burn_in {
                    return;
                }
                let gap = (x[1] - x[0]).abs();
                sum += gap;
                count += 1;
                let bin = (gap / width) as usize;
                match counts.get_mut(bin) {
                    Some(c) => *c += 1,
                    None => overflow += 1,
                }
            })?;
            Ok((path, sum, count, counts, overflow, status))
        })
        .collect::<Result<_>>()?;

    let mut path_means = Vec::new();
    let mut excluded = Vec::new();
    let mut histogram: Vec<HistogramBin> = (0..opts.hist_bins)
        .map(|b| HistogramBin { left: b as f64 * width, right: (b + 1) as f64 * width, count: 0 })
        .collect();
    let (mut samples, mut overflow) = (0u64, 0u64);
    for (path, sum, count, counts, over, status) in per_path {
        if !status.is_completed() || count == 0 {
            excluded.push(path);
            continue;
        }
        path_means.push(sum / count as f64);
        samples += count;
        overflow += over;
        for (h, c) in histogram.iter_mut().zip(counts) {
            h.count += c;
        }
    }
    if path_means.is_empty() {
        return Err(Error::Analysis("no path produced gap samples".into()));
    }
    let m = path_means.len() as f64;
    let gap_mean = path_means.iter().sum::<f64>() / m;
    let standard_error = if path_means.len() < 2 {
        0.0
    } else {
        (path_means.iter().map(|v| (v - gap_mean) * (v - gap_mean)).sum::<f64>() / (m - 1.0) / m).sqrt()
    };
    Ok(GapRecord {
        gap_mean,
        standard_error,
        oracle_mean: oracle,
        path_means,
        samples,
        burn_in,
        histogram,
        overflow,
        excluded_paths: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientFamily, Role, Variant};
    use crate::transform::{Distortion, PlanarSpec, TransformParams, DEFAULT_SAFETY};
    use approx::assert_relative_eq;

    fn constants(values: &[f64], role: Role) -> Vec<CoefficientFamily> {
        values.iter().map(|&v| CoefficientFamily::constant(v, role).unwrap()).collect()
    }

    fn system(b: &[f64], s: &[f64], x0: &[f64]) -> SystemSpec {
        SystemSpec::new(Variant::OwnDiffusion, constants(b, Role::Drift), constants(s, Role::Diffusion), false, x0.to_vec())
            .unwrap()
    }

    fn transformed(spec: &SystemSpec) -> Simulator {
        let planar = PlanarSpec::from_system(spec).unwrap();
        let params = TransformParams::calibrate(&planar, [-10.0, 10.0], 1001, Some(1.0), DEFAULT_SAFETY).unwrap();
        Simulator::transformed(spec.clone(), Distortion::new(planar, params)).unwrap()
    }

    #[test]
    fn single_deterministic_path() {
        let spec = system(&[0.5, 0.5, 0.5], &[0.0, 0.0, 0.0], &[0.0, 1.0, 2.0]);
        let cfg = SimConfig::new(0.01, 2.0, 1).unwrap();
        let out = run_ensemble(&Simulator::naive(spec), &cfg, &EnsembleOptions::new(1)).unwrap();
        let s = out.stats;
        for (i, m) in s.terminal_mean.iter().enumerate() {
            assert_relative_eq!(*m, i as f64 + 1.0, epsilon = 1e-12);
        }
        assert_eq!(s.terminal_sd(), vec![0.0; 3]);
        assert_eq!(s.status_counts["completed"], 1);
        assert_eq!(s.occupation_fraction(), None);
    }

    #[test]
    fn merge_matches_single_ensemble() {
        let spec = system(&[1.0, -0.5, 0.0], &[1.0, 0.5, 0.8], &[0.0, 1.0, 2.0]);
        let sim = Simulator::naive(spec);
        let cfg = SimConfig::new(0.01, 1.0, 3).unwrap();
        let whole = run_ensemble(&sim, &cfg, &EnsembleOptions::new(20)).unwrap().stats;
        let mut a = run_ensemble(&sim, &cfg, &EnsembleOptions::new(7)).unwrap().stats;
        let b = run_ensemble(&sim, &cfg, &EnsembleOptions { first_path: 7, ..EnsembleOptions::new(13) }).unwrap().stats;
        a.merge(&b);
        assert_eq!(a.n_paths, 20);
        assert_eq!(a.min_over_paths, whole.min_over_paths);
        assert_eq!(a.max_over_paths, whole.max_over_paths);
        assert_eq!(a.near_collision_count, whole.near_collision_count);
        assert_eq!(a.status_counts, whole.status_counts);
        for i in 0..3 {
            assert_relative_eq!(a.terminal_mean[i], whole.terminal_mean[i], epsilon = 1e-12);
            assert_relative_eq!(a.terminal_sd()[i], whole.terminal_sd()[i], epsilon = 1e-12);
        }
        // direct two-pass moments of the terminal states
        let finals: Vec<Vec<f64>> =
            (0..20).map(|p| crate::scheme::simulate_naive(sim.spec(), &cfg.with_path(p)).unwrap().last().to_vec()).collect();
        for i in 0..3 {
            let mean = finals.iter().map(|f| f[i]).sum::<f64>() / 20.0;
            let var = finals.iter().map(|f| (f[i] - mean).powi(2)).sum::<f64>() / 19.0;
            assert_relative_eq!(whole.terminal_mean[i], mean, epsilon = 1e-12);
            assert_relative_eq!(whole.terminal_sd()[i], var.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn kept_trajectories_match_direct_simulation() {
        let spec = system(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 0.5]);
        let sim = Simulator::naive(spec.clone());
        let cfg = SimConfig::new(0.01, 0.5, 8).unwrap();
        let out = run_ensemble(&sim, &cfg, &EnsembleOptions { keep_trajectories: 2, ..EnsembleOptions::new(4) }).unwrap();
        assert_eq!(out.trajectories.len(), 2);
        assert_eq!(out.trajectories[1], crate::scheme::simulate_naive(&spec, &cfg.with_path(1)).unwrap());
    }

    #[test]
    fn occupation_fraction_positive_near_diagonal() {
        let spec = system(&[0.3, 0.3], &[1.0, 1.0], &[0.0, 0.01]);
        let sim = Simulator::naive(spec);
        let cfg = SimConfig::new(1e-3, 2.0, 4).unwrap();
        let opts = EnsembleOptions { strip_half_width: Some(0.05), ..EnsembleOptions::new(10) };
        let f = run_ensemble(&sim, &cfg, &opts).unwrap().stats.occupation_fraction().unwrap();
        assert!(f > 0.0 && f <= 1.0, "{f}");
    }

    #[test]
    fn occupation_uses_transform_strip() {
        let spec = system(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.01]);
        let sim = transformed(&spec);
        let cfg = SimConfig::new(1e-3, 1.0, 4).unwrap();
        let s = run_ensemble(&sim, &cfg, &EnsembleOptions::new(4)).unwrap().stats;
        let f = s.occupation_fraction().unwrap();
        assert!(f > 0.0 && f < 1.0, "{f}");
    }

    #[test]
    fn wrapped_diffusion_vanishes_below_zero() {
        // sigma(x) = x wrapped at 0, pushed down by a constant drift
        let d = CoefficientFamily::constant(-1.0, Role::Drift).unwrap();
        let s = CoefficientFamily::affine(0.0, 1.0, Role::Diffusion).unwrap();
        let spec = SystemSpec::new(Variant::RankDiffusion, vec![d.clone(), d], vec![s.clone(), s], true, vec![0.1, 0.2]).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 5).unwrap();
        let st = run_ensemble(&Simulator::naive(spec), &cfg, &EnsembleOptions::new(3)).unwrap().stats;
        assert!(st.nonpositive_components > 0);
        assert_eq!(st.wrap_violations, 0);
        assert!(st.min_over_paths < 0.0);
    }

    #[test]
    fn no_near_collisions_for_spread_particles() {
        let spec = system(&[1.0, 0.0, -1.0], &[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]);
        let cfg = SimConfig::new(1e-4, 1e-3, 2).unwrap();
        let s = run_ensemble(&Simulator::naive(spec), &cfg, &EnsembleOptions::new(50)).unwrap().stats;
        assert_eq!(s.near_collision_count, 0);
    }

    #[test]
    fn near_collisions_counted_for_coincident_start() {
        let spec = system(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 1e-4, 2e-4]);
        let cfg = SimConfig::new(0.1, 1.0, 2).unwrap();
        let s = run_ensemble(&Simulator::naive(spec), &cfg, &EnsembleOptions::new(1)).unwrap().stats;
        assert_eq!(s.near_collision_count, 11);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(fit.slope, 0.5, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, -1.0, epsilon = 1e-14);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-14);
        assert!(linear_fit(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn strong_order_rejects_degenerate_inputs() {
        let sim = Simulator::naive(system(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.1]));
        let cfg = SimConfig::new(0.125, 1.0, 0).unwrap();
        assert!(strong_order(&sim, &cfg, &[0.125], 4).is_err());
        assert!(strong_order(&sim, &cfg, &[0.125, 0.0625], 4).is_err());
        assert!(strong_order(&sim, &cfg, &[0.125, 0.25, 0.0625], 4).is_err());
        assert!(strong_order(&sim, &cfg, &[0.125, 0.1, 0.0625], 4).is_err());
    }

    #[test]
    fn deterministic_euler_has_order_one() {
        // dx = -x dt away from the diagonal; Euler error ~ dt
        let b = CoefficientFamily::affine(0.0, -1.0, Role::Drift).unwrap();
        let spec = SystemSpec::new(
            Variant::OwnDiffusion,
            vec![b.clone(), b],
            constants(&[0.0, 0.0], Role::Diffusion),
            false,
            vec![1.0, 5.0],
        )
        .unwrap();
        let cfg = SimConfig::new(0.125, 1.0, 0).unwrap();
        let table = strong_order(&Simulator::naive(spec), &cfg, &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 1).unwrap();
        assert!((table.fitted_order - 1.0).abs() < 0.05, "{table:?}");
        assert!(table.fit_r2 > 0.999);
        assert_eq!(table.reference_dt, 1.0 / 4096.0);
    }

    #[test]
    fn coarse_run_matches_refined_stream() {
        use crate::scheme::noise::Refined;
        let spec = system(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.1]);
        let cfg = SimConfig::new(1.0 / 16.0, 1.0, 9).unwrap().with_path(2);
        let steps = 16 * 64;
        let mut stream = CounterStream::new(9, 2);
        let mut increments = vec![0.0; steps * 2];
        for (m, chunk) in increments.chunks_exact_mut(2).enumerate() {
            stream.increments(m as u64, 1.0 / 1024.0, chunk);
        }
        let mut buffer = FineBuffer { increments, n: 2, factor: 64 };
        let a = crate::scheme::simulate_naive_with(&spec, &cfg, &mut buffer).unwrap();
        let b = crate::scheme::simulate_naive_with(&spec, &cfg, &mut Refined::new(CounterStream::new(9, 2), 64)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gap_oracle_requires_ordered_drifts() {
        assert_relative_eq!(gap_oracle(&system(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0])).unwrap(), 1.0);
        assert_relative_eq!(gap_oracle(&system(&[2.0, 0.0], &[1.0, 1.0], &[0.0, 1.0])).unwrap(), 0.5);
        assert!(gap_oracle(&system(&[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0])).is_err());
        assert!(gap_oracle(&system(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 1.0])).is_err());
        assert!(gap_oracle(&system(&[1.0, 0.0, -1.0], &[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0])).is_err());
    }

    #[test]
    fn gap_samples_are_nonnegative_and_binned() {
        let sim = Simulator::naive(system(&[2.0, 0.0], &[1.0, 1.0], &[0.0, 0.5]));
        let cfg = SimConfig::new(1e-2, 200.0, 6).unwrap();
        let rec = gap_statistics(&sim, &cfg, &GapOptions::new(4)).unwrap();
        assert_eq!(rec.histogram.iter().map(|h| h.count).sum::<u64>() + rec.overflow, rec.samples);
        assert!(rec.histogram[0].left == 0.0);
        assert!(rec.gap_mean > 0.0);
        // loose check against the exponential law; tight checks run at scale
        assert!((rec.gap_mean - 0.5).abs() < 0.15, "{}", rec.gap_mean);
    }
}
