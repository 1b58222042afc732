//! Reproducible Brownian increments.
//!
//! Every draw is a pure function of `(seed, path_index, step, component)`:
//! a Philox4x32-10 block keyed on the seed and counted by the remaining three
//! coordinates, mapped to a standard normal by Box-Muller. Paths and steps can
//! therefore be generated in any order, on any thread, with identical results.
//!
//! Path indices are assumed to fit in 32 bits; higher bits are folded into
//! the key.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox4x32 bijection with 10 rounds.
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    ctr = philox_round(ctr, key);
    for _ in 1..10 {
        key = [key[0].wrapping_add(PHILOX_W0), key[1].wrapping_add(PHILOX_W1)];
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// Standard normal draw addressed by `(seed, path_index, step, component)`.
pub fn standard_normal(seed: u64, path_index: u64, step: u64, component: u32) -> f64 {
    let key = [seed as u32, (seed >> 32) as u32 ^ (path_index >> 32) as u32];
    let ctr = [component, step as u32, (step >> 32) as u32, path_index as u32];
    let r = philox4x32_10(ctr, key);
    let a = ((u64::from(r[0]) << 32) | u64::from(r[1])) >> 11;
    let b = ((u64::from(r[2]) << 32) | u64::from(r[3])) >> 11;
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = (a as f64 + 1.0) * SCALE;
    let u2 = b as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw on `[0, 1)` addressed by `(seed, stream, index, component)`.
///
/// Keyed apart from [`standard_normal`], so the two never share blocks.
pub fn uniform01(seed: u64, stream: u64, index: u64, component: u32) -> f64 {
    const DOMAIN: u32 = 0x5EED_0001;
    let key = [seed as u32, (seed >> 32) as u32 ^ (stream >> 32) as u32 ^ DOMAIN];
    let ctr = [component, index as u32, (index >> 32) as u32, stream as u32];
    let r = philox4x32_10(ctr, key);
    let bits = ((u64::from(r[0]) << 32) | u64::from(r[1])) >> 11;
    bits as f64 / (1u64 << 53) as f64
}

/// `n` independent `Normal(0, dt)` increments for one time step of one path.
pub fn brownian_increments(seed: u64, path_index: u64, step: u64, n: usize, dt: f64) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..n).map(|c| sd * standard_normal(seed, path_index, step, c as u32)).collect()
}

/// Supplier of Brownian increments to the time steppers.
pub trait NoiseSource {
    /// Fill `out` with the increments of step `step`, which has length `dt`.
    fn increments(&mut self, step: u64, dt: f64, out: &mut [f64]);
}

/// The counter-based stream of a single path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterStream {
    pub seed: u64,
    pub path_index: u64,
}

impl CounterStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        Self { seed, path_index }
    }
}

impl NoiseSource for CounterStream {
    fn increments(&mut self, step: u64, dt: f64, out: &mut [f64]) {
        let sd = dt.sqrt();
        for (c, o) in out.iter_mut().enumerate() {
            *o = sd * standard_normal(self.seed, self.path_index, step, c as u32);
        }
    }
}

/// Coarse-grid increments built as sums of `factor` consecutive fine
/// increments of an underlying source, so that runs at different step sizes
/// see the same Brownian path.
#[derive(Debug, Clone)]
pub struct Refined<S> {
    fine: S,
    factor: u64,
    scratch: Vec<f64>,
}

impl<S: NoiseSource> Refined<S> {
    pub fn new(fine: S, factor: u64) -> Self {
        assert!(factor >= 1, "refinement factor must be at least 1");
        Self { fine, factor, scratch: Vec::new() }
    }
}

impl<S: NoiseSource> NoiseSource for Refined<S> {
    fn increments(&mut self, step: u64, dt: f64, out: &mut [f64]) {
        let fine_dt = dt / self.factor as f64;
        self.scratch.resize(out.len(), 0.0);
        out.fill(0.0);
        for j in 0..self.factor {
            self.fine.increments(step * self.factor + j, fine_dt, &mut self.scratch);
            for (o, s) in out.iter_mut().zip(&self.scratch) {
                *o += s;
            }
        }
    }
}

/// Relabels the components of an underlying source: component `i` of the
/// output is component `perm[i]` of the source.
#[derive(Debug, Clone)]
pub struct Permuted<S> {
    inner: S,
    perm: Vec<usize>,
    scratch: Vec<f64>,
}

impl<S: NoiseSource> Permuted<S> {
    pub fn new(inner: S, perm: Vec<usize>) -> Self {
        let n = perm.len();
        Self { inner, perm, scratch: vec![0.0; n] }
    }
}

impl<S: NoiseSource> NoiseSource for Permuted<S> {
    fn increments(&mut self, step: u64, dt: f64, out: &mut [f64]) {
        self.inner.increments(step, dt, &mut self.scratch);
        for (o, &p) in out.iter_mut().zip(&self.perm) {
            *o = self.scratch[p];
        }
    }
}

/// Deterministic zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Silent;

impl NoiseSource for Silent {
    fn increments(&mut self, _step: u64, _dt: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 library.
    #[test]
    fn philox_known_answers() {
        assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32_10([0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344], [0xa4093822, 0x299f31d0]),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn increments_are_reproducible() {
        let a = brownian_increments(7, 3, 11, 5, 0.01);
        let b = brownian_increments(7, 3, 11, 5, 0.01);
        assert_eq!(a, b);
        let mut s = CounterStream::new(7, 3);
        let mut out = vec![0.0; 5];
        s.increments(11, 0.01, &mut out);
        assert_eq!(a, out);
        assert_ne!(a, brownian_increments(7, 4, 11, 5, 0.01));
        assert_ne!(a, brownian_increments(8, 3, 11, 5, 0.01));
    }

    #[test]
    fn sample_variance_matches_dt() {
        // Var of the sample variance of n Gaussians: 2 sigma^4 / n.
        let dt: f64 = 0.01;
        let n = 1_000_000u64;
        let sd = dt.sqrt();
        let (mut s1, mut s2) = (0.0, 0.0);
        for step in 0..n {
            let v = sd * standard_normal(2024, 0, step, 0);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let tol = 3.0 * (2f64.sqrt() * dt / 1000.0);
        assert!((var - dt).abs() < tol, "variance {var}");
        assert!(mean.abs() < 4.0 * sd / 1000.0, "mean {mean}");
    }

    #[test]
    fn distinct_paths_are_uncorrelated() {
        let n = 100_000u64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for step in 0..n {
            let x = standard_normal(1, 0, step, 0);
            let y = standard_normal(1, 1, step, 0);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.01, "correlation {rho}");
    }

    #[test]
    fn uniform_draws_fill_the_unit_interval() {
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n).map(|i| uniform01(3, 0, i, 0)).collect();
        assert!(draws.iter().all(|&u| (0.0..1.0).contains(&u)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // sd of the mean is 1 / sqrt(12 n)
        assert!((mean - 0.5).abs() < 4.0 / (12.0 * n as f64).sqrt(), "{mean}");
        let below = draws.iter().filter(|&&u| u < 0.1).count() as f64 / n as f64;
        assert!((below - 0.1).abs() < 0.004, "{below}");
        assert_eq!(uniform01(3, 0, 5, 1), uniform01(3, 0, 5, 1));
        assert_ne!(uniform01(3, 0, 5, 1), uniform01(3, 1, 5, 1));
    }

    #[test]
    fn refined_sums_fine_increments() {
        let fine_dt = 0.25_f64.powi(3);
        let mut coarse = Refined::new(CounterStream::new(5, 2), 4);
        let mut out = vec![0.0; 3];
        coarse.increments(6, 4.0 * fine_dt, &mut out);
        let mut expected = vec![0.0; 3];
        for j in 0..4 {
            let inc = brownian_increments(5, 2, 24 + j, 3, fine_dt);
            for (e, v) in expected.iter_mut().zip(inc) {
                *e += v;
            }
        }
        assert_eq!(out, expected);
    }

    #[test]
    fn permuted_relabels_components() {
        let mut p = Permuted::new(CounterStream::new(1, 0), vec![1, 0]);
        let mut out = vec![0.0; 2];
        p.increments(3, 0.5, &mut out);
        let base = brownian_increments(1, 0, 3, 2, 0.5);
        assert_eq!(out, vec![base[1], base[0]]);
    }
}
