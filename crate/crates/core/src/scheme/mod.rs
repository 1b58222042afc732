//! Euler-Maruyama time stepping.
//!
//! Two schemes share one Brownian stream contract:
//!
//! * `naive` steps `X` directly for any number of particles;
//! * `transformed` (two particles only) steps `Z = G(X)`, whose coefficients
//!   are locally Lipschitz, and maps each iterate back with `G^{-1}`.

pub mod noise;

use serde::{Deserialize, Serialize};

use crate::coefficients::{RankAssignment, SystemSpec};
use crate::error::{Error, Result};
use crate::transform::Distortion;
use noise::{CounterStream, NoiseSource};

pub const DEFAULT_R_EXPLODE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Naive,
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub path_index: u64,
    /// Runs stop with an explosion status once `|x|` exceeds this.
    pub r_explode: f64,
    pub scheme: SchemeKind,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Result<Self> {
        let cfg = Self { dt, t_end, seed, path_index: 0, r_explode: DEFAULT_R_EXPLODE, scheme: SchemeKind::Naive };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: SchemeKind) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_path(mut self, path_index: u64) -> Self {
        self.path_index = path_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSimConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidSimConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::InvalidSimConfig(format!("dt = {} exceeds t_end = {}", self.dt, self.t_end)));
        }
        if !(self.r_explode > 0.0) {
            return Err(Error::InvalidSimConfig(format!("r_explode must be positive, got {}", self.r_explode)));
        }
        Ok(())
    }

    /// Number of steps, `ceil(t_end / dt)` up to rounding noise in the ratio.
    pub fn step_count(&self) -> u64 {
        let ratio = self.t_end / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as u64
        } else {
            ratio.ceil() as u64
        }
    }

    /// Time at the end of step `m` (so `time(0) = 0`, `time(step_count()) = t_end`).
    pub fn time(&self, m: u64) -> f64 {
        if m >= self.step_count() {
            self.t_end
        } else {
            m as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "t", rename_all = "snake_case")]
pub enum Status {
    Completed,
    ExplodedAt(f64),
    InversionFailedAt(f64),
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::ExplodedAt(_) => "exploded",
            Status::InversionFailedAt(_) => "inversion_failed",
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }
}

/// A simulated path: `times[m]` and the `N` coordinates of row `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major, `times.len() * n` entries.
    pub states: Vec<f64>,
    pub n: usize,
    pub status: Status,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.states[m * self.n..(m + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.states.chunks_exact(self.n))
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }
}

fn escaped(x: &[f64], r_explode: f64) -> bool {
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    !norm_sq.is_finite() || norm_sq.sqrt() > r_explode
}

/// Euler-Maruyama on `X`:
/// `x_{m+1} = x_m + B(x_m) dt + Sigma(x_m) * dW_m` componentwise.
///
/// `observe` sees `(t, x)` for the initial state and every accepted step.
pub fn run_naive<S, F>(spec: &SystemSpec, cfg: &SimConfig, noise: &mut S, mut observe: F) -> Result<Status>
where
    S: NoiseSource + ?Sized,
    F: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    let n = spec.n_particles();
    let mut x = spec.x0().to_vec();
    let mut drift = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut ranks = RankAssignment::default();
    observe(0.0, &x);
    let steps = cfg.step_count();
    for m in 0..steps {
        let (t0, t1) = (cfg.time(m), cfg.time(m + 1));
        let h = t1 - t0;
        spec.drift_into(&x, &mut ranks, &mut drift)?;
        spec.diffusion_with_ranks(&x, &ranks, &mut diff)?;
        noise.increments(m, h, &mut dw);
        for i in 0..n {
            x[i] = x[i] + drift[i] * h + diff[i] * dw[i];
        }
        if escaped(&x, cfg.r_explode) {
            return Ok(Status::ExplodedAt(t1));
        }
        observe(t1, &x);
    }
    Ok(Status::Completed)
}

/// Euler-Maruyama on `Z = G(X)` started at `G(x0)`; `observe` receives the
/// back-transformed states `G^{-1}(z_m)`.
pub fn run_transformed<S, F>(
    map: &Distortion,
    x0: [f64; 2],
    cfg: &SimConfig,
    noise: &mut S,
    mut observe: F,
) -> Result<Status>
where
    S: NoiseSource + ?Sized,
    F: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    let mut x = x0;
    let mut z = map.apply(x0)?;
    let mut dw = [0.0; 2];
    observe(0.0, &x);
    let steps = cfg.step_count();
    for m in 0..steps {
        let (t0, t1) = (cfg.time(m), cfg.time(m + 1));
        let h = t1 - t0;
        let zc = map.coefficients_at(x)?;
        noise.increments(m, h, &mut dw);
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = *zk + zc.drift[k] * h + (zc.diffusion[k][0] * dw[0] + zc.diffusion[k][1] * dw[1]);
        }
        if escaped(&z, cfg.r_explode) {
            return Ok(Status::ExplodedAt(t1));
        }
        x = match map.inverse(z) {
            Ok(x) => x,
            Err(Error::InversionFailed { .. }) | Err(Error::AlphaUnbounded { .. }) => {
                return Ok(Status::InversionFailedAt(t1))
            }
            Err(e) => return Err(e),
        };
        if escaped(&x, cfg.r_explode) {
            return Ok(Status::ExplodedAt(t1));
        }
        observe(t1, &x);
    }
    Ok(Status::Completed)
}

fn recorder(n: usize, capacity: usize) -> (Vec<f64>, Vec<f64>, usize) {
    (Vec::with_capacity(capacity), Vec::with_capacity(capacity * n), n)
}

/// Naive scheme with the counter-based stream of `cfg.path_index`.
pub fn simulate_naive(spec: &SystemSpec, cfg: &SimConfig) -> Result<Trajectory> {
    let mut noise = CounterStream::new(cfg.seed, cfg.path_index);
    simulate_naive_with(spec, cfg, &mut noise)
}

pub fn simulate_naive_with<S: NoiseSource + ?Sized>(spec: &SystemSpec, cfg: &SimConfig, noise: &mut S) -> Result<Trajectory> {
    let (mut times, mut states, n) = recorder(spec.n_particles(), cfg.step_count() as usize + 1);
    let status = run_naive(spec, cfg, noise, |t, x| {
        times.push(t);
        states.extend_from_slice(x);
    })?;
    Ok(Trajectory { times, states, n, status })
}

/// Transformed scheme with the counter-based stream of `cfg.path_index`.
pub fn simulate_transformed(map: &Distortion, x0: [f64; 2], cfg: &SimConfig) -> Result<Trajectory> {
    let mut noise = CounterStream::new(cfg.seed, cfg.path_index);
    simulate_transformed_with(map, x0, cfg, &mut noise)
}

pub fn simulate_transformed_with<S: NoiseSource + ?Sized>(
    map: &Distortion,
    x0: [f64; 2],
    cfg: &SimConfig,
    noise: &mut S,
) -> Result<Trajectory> {
    let (mut times, mut states, n) = recorder(2, cfg.step_count() as usize + 1);
    let status = run_transformed(map, x0, cfg, noise, |t, x| {
        times.push(t);
        states.extend_from_slice(x);
    })?;
    Ok(Trajectory { times, states, n, status })
}

/// A system ready to simulate under either scheme.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: SystemSpec,
    map: Option<Distortion>,
}

impl Simulator {
    pub fn naive(spec: SystemSpec) -> Self {
        Self { spec, map: None }
    }

    /// The transformed scheme; `spec` must be the two-particle system `map`
    /// was built for.
    pub fn transformed(spec: SystemSpec, map: Distortion) -> Result<Self> {
        if spec.n_particles() != 2 {
            return Err(Error::InvalidSimConfig("the transformed scheme needs N = 2".into()));
        }
        Ok(Self { spec, map: Some(map) })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn distortion(&self) -> Option<&Distortion> {
        self.map.as_ref()
    }

    pub fn scheme(&self) -> SchemeKind {
        if self.map.is_some() {
            SchemeKind::Transformed
        } else {
            SchemeKind::Naive
        }
    }

    pub fn run<S, F>(&self, cfg: &SimConfig, noise: &mut S, observe: F) -> Result<Status>
    where
        S: NoiseSource + ?Sized,
        F: FnMut(f64, &[f64]),
    {
        match &self.map {
            None => run_naive(&self.spec, cfg, noise, observe),
            Some(map) => {
                let x0 = [self.spec.x0()[0], self.spec.x0()[1]];
                run_transformed(map, x0, cfg, noise, observe)
            }
        }
    }

    pub fn trajectory_with<S: NoiseSource + ?Sized>(&self, cfg: &SimConfig, noise: &mut S) -> Result<Trajectory> {
        let (mut times, mut states, n) = recorder(self.spec.n_particles(), cfg.step_count() as usize + 1);
        let status = self.run(cfg, noise, |t, x| {
            times.push(t);
            states.extend_from_slice(x);
        })?;
        Ok(Trajectory { times, states, n, status })
    }

    pub fn trajectory(&self, cfg: &SimConfig) -> Result<Trajectory> {
        self.trajectory_with(cfg, &mut CounterStream::new(cfg.seed, cfg.path_index))
    }
}
