//! The planar drift-removal transform.
//!
//! For two particles with drifts `b1` (bottom) and `b2` (top) and per-particle
//! diffusions `s1`, `s2`, the drift jumps across the diagonal
//! `x1 = x2`. The map
//!
//! ```text
//! G(x) = x + (1/sqrt2) (x1 - x2)^2 sgn(x1 - x2) phi((x1 - x2)/(sqrt2 c)) alpha((x1 + x2)/2) (1, -1)
//! alpha(u) = (b1(u) - b2(u)) / (sqrt2 (s1(u)^2 + s2(u)^2))
//! phi(u) = (1 - u^2)^4 on [-1, 1], 0 elsewhere
//! ```
//!
//! displaces states along the diagonal's normal inside the strip of
//! half-width `c` so that `Z = G(X)` has a continuous drift. Everything is
//! computed in the rotated coordinates `y = S(x) = ((x1 - x2)/sqrt2, (x1 + x2)/2)`,
//! where `G` becomes `g(y) = (y1 + d(y), y2)` with
//! `d(y) = 2 y1^2 sgn(y1) phi(y1/c) alpha(y2)`.
//!
//! `G` is a diffeomorphism as long as `c < 1 / (16 sup|alpha|)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::coefficients::{CoefficientFamily, Role, SystemSpec, Variant};
use crate::error::{Error, Result};
use crate::roots::newton_bisect;

/// Offset used to evaluate alpha on both sides of a removable singularity.
const ALPHA_LIMIT_OFFSET: f64 = 1e-8;
/// Largest admissible disagreement between the two one-sided limits.
const ALPHA_LIMIT_TOL: f64 = 1e-4;
const INVERSION_MAX_ITER: usize = 100;
const INVERSION_X_TOL: f64 = 1e-15;

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The compactly supported bump `(1 - u^2)^4` and its first two derivatives.
pub fn bump_phi(u: f64, order: usize) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let v = 1.0 - u * u;
    match order {
        0 => v.powi(4),
        1 => -8.0 * u * v.powi(3),
        2 => v * v * (56.0 * u * u - 8.0),
        _ => panic!("bump_phi supports derivative orders 0, 1 and 2"),
    }
}

#[inline]
fn bump_jet(u: f64) -> [f64; 3] {
    if u.abs() >= 1.0 {
        return [0.0; 3];
    }
    let v = 1.0 - u * u;
    let v2 = v * v;
    [v2 * v2, -8.0 * u * v2 * v, v2 * (56.0 * u * u - 8.0)]
}

/// Rotation into diagonal-aligned coordinates: `S(x) = ((x1 - x2)/sqrt2, (x1 + x2)/2)`.
#[inline]
pub fn rotate_s(x: [f64; 2]) -> [f64; 2] {
    [(x[0] - x[1]) * FRAC_1_SQRT_2, 0.5 * (x[0] + x[1])]
}

/// Inverse of [`rotate_s`]: `tau(y) = (y1/sqrt2 + y2, -y1/sqrt2 + y2)`.
#[inline]
pub fn rotate_tau(y: [f64; 2]) -> [f64; 2] {
    [y[0] * FRAC_1_SQRT_2 + y[1], -y[0] * FRAC_1_SQRT_2 + y[1]]
}

/// Linear part of `S`, used to map derivatives between coordinates.
const S_JAC: [[f64; 2]; 2] = [[FRAC_1_SQRT_2, -FRAC_1_SQRT_2], [0.5, 0.5]];

/// Two-particle system with rank-dependent drift and per-particle diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSpec {
    drift: [CoefficientFamily; 2],
    diffusion: [CoefficientFamily; 2],
    /// All four families share a root factor, so alpha is evaluated from the
    /// reduced forms.
    reduced: bool,
}

impl PlanarSpec {
    pub fn new(
        b1: CoefficientFamily,
        b2: CoefficientFamily,
        s1: CoefficientFamily,
        s2: CoefficientFamily,
    ) -> Result<Self> {
        if b1.role() != Role::Drift || b2.role() != Role::Drift {
            return Err(Error::InvalidSystem("planar drifts must have the drift role".into()));
        }
        if s1.role() != Role::Diffusion || s2.role() != Role::Diffusion {
            return Err(Error::InvalidSystem("planar diffusions must have the diffusion role".into()));
        }
        let factors = [b1.root_factor(), b2.root_factor(), s1.root_factor(), s2.root_factor()];
        let reduced = factors[0].is_some() && factors.iter().all(|f| *f == factors[0]);
        Ok(Self { drift: [b1, b2], diffusion: [s1, s2], reduced })
    }

    /// The planar restriction of a two-particle system with per-particle
    /// diffusion.
    pub fn from_system(spec: &SystemSpec) -> Result<Self> {
        if spec.n_particles() != 2 {
            return Err(Error::InvalidSystem(format!(
                "the transform needs exactly 2 particles, got {}",
                spec.n_particles()
            )));
        }
        if spec.variant() != Variant::OwnDiffusion {
            return Err(Error::InvalidSystem("the transform needs per-particle (own) diffusion".into()));
        }
        if spec.positivity_wrap() {
            return Err(Error::InvalidSystem("the transform does not support positivity wrapping".into()));
        }
        let (b, s) = (spec.drifts(), spec.diffusions());
        Self::new(b[0].clone(), b[1].clone(), s[0].clone(), s[1].clone())
    }

    /// The equivalent two-particle [`SystemSpec`] started at `x0`.
    pub fn to_system(&self, x0: [f64; 2]) -> Result<SystemSpec> {
        SystemSpec::new(Variant::OwnDiffusion, self.drift.to_vec(), self.diffusion.to_vec(), false, x0.to_vec())
    }

    pub fn drift_families(&self) -> &[CoefficientFamily; 2] {
        &self.drift
    }

    pub fn diffusion_families(&self) -> &[CoefficientFamily; 2] {
        &self.diffusion
    }

    /// Planar drift with the indicator convention: particle 1 uses `b1`
    /// when `x1 <= x2`, particle 2 uses `b2` when `x2 >= x1`.
    pub fn drift(&self, x: [f64; 2]) -> [f64; 2] {
        let [b1, b2] = &self.drift;
        if x[0] <= x[1] {
            [b1.eval(x[0]), b2.eval(x[1])]
        } else {
            [b2.eval(x[0]), b1.eval(x[1])]
        }
    }

    /// Diagonal of the diffusion matrix, `(s1(x1), s2(x2))`.
    pub fn diffusion(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for i in 0..2 {
            let v = self.diffusion[i].eval(x[i]);
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativeDiffusion { particle: i, x: x[i], value: v });
            }
            out[i] = v;
        }
        Ok(out)
    }

    /// Derivative of order 0, 1 or 2 of alpha at `u`.
    pub fn alpha(&self, u: f64, order: usize) -> Result<f64> {
        Ok(self.alpha_jet(u)?[order.min(2)])
    }

    /// Alpha and its first two derivatives.
    ///
    /// Families sharing a root factor are divided through by it first. Other
    /// singular points are resolved by averaging the two one-sided values at
    /// `u +- 1e-8`, checked against the average at `u +- 1e-6`; derivatives
    /// fall back to central differences when the quotient rule is not finite.
    pub fn alpha_jet(&self, u: f64) -> Result<[f64; 3]> {
        if !u.is_finite() {
            return Err(Error::AlphaUnbounded { u });
        }
        let jet = if self.reduced { self.reduced_quotient(u) } else { self.direct_quotient(u) };
        if jet.iter().all(|v| v.is_finite()) {
            return Ok(jet);
        }
        let value = if jet[0].is_finite() { jet[0] } else { self.limit_value(u)? };
        let h = 1e-5_f64.max(1e-5 * u.abs());
        let (fp, fm) = (self.alpha_value(u + h)?, self.alpha_value(u - h)?);
        let d1 = if jet[1].is_finite() { jet[1] } else { (fp - fm) / (2.0 * h) };
        let d2 = if jet[2].is_finite() { jet[2] } else { (fp - 2.0 * value + fm) / (h * h) };
        Ok([value, d1, d2])
    }

    fn alpha_value(&self, u: f64) -> Result<f64> {
        let v = if self.reduced { self.reduced_quotient(u)[0] } else { self.direct_quotient(u)[0] };
        if v.is_finite() {
            Ok(v)
        } else {
            self.limit_value(u)
        }
    }

    fn limit_value(&self, u: f64) -> Result<f64> {
        // a removable singularity gives the same two-sided average at two
        // scales; a pole does not
        let near = self.two_sided(u, ALPHA_LIMIT_OFFSET)?;
        let far = self.two_sided(u, 100.0 * ALPHA_LIMIT_OFFSET)?;
        if (near - far).abs() > ALPHA_LIMIT_TOL * near.abs().max(1.0) {
            return Err(Error::AlphaUnbounded { u });
        }
        Ok(near)
    }

    fn two_sided(&self, u: f64, h: f64) -> Result<f64> {
        let left = self.direct_quotient(u - h)[0];
        let right = self.direct_quotient(u + h)[0];
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::AlphaUnbounded { u });
        }
        let mid = 0.5 * (left + right);
        if (left - right).abs() > ALPHA_LIMIT_TOL * mid.abs().max(1.0) {
            return Err(Error::AlphaUnbounded { u });
        }
        Ok(mid)
    }

    fn direct_quotient(&self, u: f64) -> [f64; 3] {
        let n = sub3(self.drift[0].jet(u), self.drift[1].jet(u));
        let d = sum_squares3(self.diffusion[0].jet(u), self.diffusion[1].jet(u));
        quotient3(n, d)
    }

    fn reduced_quotient(&self, u: f64) -> [f64; 3] {
        let r = |f: &CoefficientFamily| f.reduced_jet(u).expect("reduced form checked at construction");
        let n = sub3(r(&self.drift[0]), r(&self.drift[1]));
        let d = sum_squares3(r(&self.diffusion[0]), r(&self.diffusion[1]));
        quotient3(n, d)
    }

    /// Whether alpha is evaluated through a shared root factor.
    pub fn uses_reduced_form(&self) -> bool {
        self.reduced
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Jet of `f^2 + g^2`.
fn sum_squares3(f: [f64; 3], g: [f64; 3]) -> [f64; 3] {
    [
        f[0] * f[0] + g[0] * g[0],
        2.0 * (f[0] * f[1] + g[0] * g[1]),
        2.0 * (f[1] * f[1] + f[0] * f[2] + g[1] * g[1] + g[0] * g[2]),
    ]
}

/// Jet of `n / (sqrt2 d)`.
fn quotient3(n: [f64; 3], d: [f64; 3]) -> [f64; 3] {
    if d[0] == 0.0 {
        return [f64::NAN; 3];
    }
    let q = n[0] / d[0];
    let q1 = (n[1] - q * d[1]) / d[0];
    let q2 = (n[2] - 2.0 * q1 * d[1] - q * d[2]) / d[0];
    [q * FRAC_1_SQRT_2, q1 * FRAC_1_SQRT_2, q2 * FRAC_1_SQRT_2]
}

/// Maximum of `|alpha|` over a uniform grid on `domain`, refined once at 4x
/// density around the grid maximiser, inflated by 10%.
pub fn estimate_alpha_sup(spec: &PlanarSpec, domain: [f64; 2], grid_points: usize) -> Result<f64> {
    let [lo, hi] = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidTransform(format!("alpha domain [{lo}, {hi}] is not a proper interval")));
    }
    if grid_points < 101 {
        return Err(Error::InvalidTransform(format!("alpha scan needs at least 101 points, got {grid_points}")));
    }
    let h = (hi - lo) / (grid_points - 1) as f64;
    let node = |j: usize| if j + 1 == grid_points { hi } else { lo + j as f64 * h };
    let mut best = (0usize, -1.0f64);
    for j in 0..grid_points {
        let a = spec.alpha(node(j), 0)?.abs();
        if a > best.1 {
            best = (j, a);
        }
    }
    let centre = node(best.0);
    let mut sup = best.1;
    for k in -4i32..=4 {
        let u = centre + f64::from(k) * h / 4.0;
        if u >= lo && u <= hi {
            sup = sup.max(spec.alpha(u, 0)?.abs());
        }
    }
    Ok(1.1 * sup)
}

/// Bump half-width `safety / (16 alpha_sup)`, capped at `c_max`. With
/// `alpha_sup = 0` the transform is the identity and `c_max` (default 1) is
/// returned.
pub fn select_c(alpha_sup: f64, c_max: Option<f64>, safety: f64) -> f64 {
    let cap = c_max.unwrap_or(1.0);
    if alpha_sup <= 0.0 {
        return cap;
    }
    let c = safety / (16.0 * alpha_sup);
    match c_max {
        Some(m) => c.min(m),
        None => c,
    }
}

pub const DEFAULT_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    /// Half-width of the strip around the diagonal where the map acts.
    pub c: f64,
    /// Upper estimate of `sup |alpha|`.
    pub alpha_sup: f64,
    /// Interval scanned to estimate `alpha_sup`.
    pub alpha_domain: [f64; 2],
    pub safety: f64,
}

impl TransformParams {
    pub fn new(c: f64, alpha_sup: f64, alpha_domain: [f64; 2], safety: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidTransform(format!("c must be positive, got {c}")));
        }
        if !(alpha_sup >= 0.0 && alpha_sup.is_finite()) {
            return Err(Error::InvalidTransform(format!("alpha_sup must be finite and >= 0, got {alpha_sup}")));
        }
        if !(safety > 0.0 && safety < 1.0) {
            return Err(Error::InvalidTransform(format!("safety must lie in (0, 1), got {safety}")));
        }
        if !(alpha_domain[0] < alpha_domain[1]) {
            return Err(Error::InvalidTransform("alpha domain must satisfy lo < hi".into()));
        }
        if 16.0 * alpha_sup * c >= 1.0 {
            return Err(Error::InvalidTransform(format!(
                "c = {c} violates c < 1/(16 alpha_sup) = {}",
                1.0 / (16.0 * alpha_sup)
            )));
        }
        Ok(Self { c, alpha_sup, alpha_domain, safety })
    }

    /// Scan alpha over `domain` and pick `c` from the resulting bound.
    pub fn calibrate(
        spec: &PlanarSpec,
        domain: [f64; 2],
        grid_points: usize,
        c_max: Option<f64>,
        safety: f64,
    ) -> Result<Self> {
        let alpha_sup = estimate_alpha_sup(spec, domain, grid_points)?;
        let c = select_c(alpha_sup, c_max, safety);
        Self::new(c, alpha_sup, domain, safety)
    }
}

/// Derivatives of `g(y) = (y1 + d(y), y2)`, as full vector fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GJet {
    pub value: [f64; 2],
    pub d_y1: [f64; 2],
    pub d_y2: [f64; 2],
    pub d_y1y1: [f64; 2],
    pub d_y2y2: [f64; 2],
    pub d_y1y2: [f64; 2],
}

/// Derivatives of the scalar displacement `d(y)`.
#[derive(Debug, Clone, Copy, Default)]
struct DisplacementJet {
    d: f64,
    d1: f64,
    d2: f64,
    d11: f64,
    d22: f64,
    d12: f64,
}

/// Drift and diffusion of the transformed process at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZCoefficients {
    pub drift: [f64; 2],
    /// Row-major 2x2 matrix multiplying `(dW1, dW2)`.
    pub diffusion: [[f64; 2]; 2],
}

/// The distortion map `G` for a planar system and fixed parameters.
#[derive(Debug, Clone)]
pub struct Distortion {
    spec: PlanarSpec,
    params: TransformParams,
}

impl Distortion {
    pub fn new(spec: PlanarSpec, params: TransformParams) -> Self {
        Self { spec, params }
    }

    pub fn spec(&self) -> &PlanarSpec {
        &self.spec
    }

    pub fn params(&self) -> &TransformParams {
        &self.params
    }

    /// `sign_at_zero` is the value taken by `sgn(y1)` when `y1 = 0`.
    fn displacement(&self, y: [f64; 2], sign_at_zero: f64) -> Result<DisplacementJet> {
        let c = self.params.c;
        let y1 = y[0];
        if y1.abs() >= c {
            return Ok(DisplacementJet::default());
        }
        let [a, a1, a2] = self.spec.alpha_jet(y[1])?;
        let s = if y1 == 0.0 { sign_at_zero } else { sgn(y1) };
        let [p, p1, p2] = bump_jet(y1 / c);
        let y1sq = y1 * y1;
        // common factors of the y1-derivatives
        let base = 2.0 * y1sq * s * p;
        let first = 4.0 * y1 * s * p + 2.0 / c * y1sq * s * p1;
        let second = 4.0 * s * p + 8.0 / c * y1 * s * p1 + 2.0 / (c * c) * y1sq * s * p2;
        Ok(DisplacementJet {
            d: base * a,
            d1: first * a,
            d2: base * a1,
            d11: second * a,
            d22: base * a2,
            d12: first * a1,
        })
    }

    /// `g = S o G o tau` and all first and second derivatives, with `sgn(0) = 0`.
    pub fn g_jet(&self, y: [f64; 2]) -> Result<GJet> {
        let j = self.displacement(y, 0.0)?;
        Ok(GJet {
            value: [y[0] + j.d, y[1]],
            d_y1: [1.0 + j.d1, 0.0],
            d_y2: [j.d2, 1.0],
            d_y1y1: [j.d11, 0.0],
            d_y2y2: [j.d22, 0.0],
            d_y1y2: [j.d12, 0.0],
        })
    }

    pub fn g(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        Ok(self.g_jet(y)?.value)
    }

    /// `G(x)`; the identity outside the strip `|x1 - x2| < sqrt2 c`.
    pub fn apply(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let y = rotate_s(x);
        if y[0].abs() >= self.params.c {
            return Ok(x);
        }
        let shift = self.displacement(y, 0.0)?.d * FRAC_1_SQRT_2;
        Ok([x[0] + shift, x[1] - shift])
    }

    /// Jacobian `G'(x)`, row-major.
    pub fn jacobian(&self, x: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let j = self.displacement(rotate_s(x), 0.0)?;
        Ok(jacobian_from(&j))
    }

    pub fn det_jacobian(&self, x: [f64; 2]) -> Result<f64> {
        let j = self.jacobian(x)?;
        Ok(j[0][0] * j[1][1] - j[0][1] * j[1][0])
    }

    /// Hessians `[G_1'', G_2'']` with `sgn(0) = 0` on the diagonal.
    pub fn hessians(&self, x: [f64; 2]) -> Result<[[[f64; 2]; 2]; 2]> {
        let j = self.displacement(rotate_s(x), 0.0)?;
        Ok(hessians_from(&j))
    }

    /// `G^{-1}(z)`.
    ///
    /// `G` preserves `x1 + x2`, so `S(G^{-1}(z))` keeps the second rotated
    /// coordinate of `z` and only the scalar, strictly increasing equation
    /// `y1 + d(y1, w2) = w1` has to be solved.
    pub fn inverse(&self, z: [f64; 2]) -> Result<[f64; 2]> {
        let c = self.params.c;
        let w = rotate_s(z);
        if w[0].abs() >= c {
            return Ok(z);
        }
        let a = self.spec.alpha(w[1], 0)?;
        if a == 0.0 {
            return Ok(z);
        }
        let target = w[0];
        let residual = |t: f64| {
            if t.abs() >= c {
                return (t - target, 1.0);
            }
            let s = sgn(t);
            let [p, p1, _] = bump_jet(t / c);
            let h = t + 2.0 * t * t * s * p * a;
            let dh = 1.0 + (4.0 * t * s * p + 2.0 / c * t * t * s * p1) * a;
            (h - target, dh)
        };
        // |d| <= 2 c^2 sup(phi) |a| < c/8 under the c bound
        let y1 = newton_bisect(residual, target - 0.25 * c, target + 0.25 * c, target, INVERSION_X_TOL, INVERSION_MAX_ITER)
            .map_err(|_| Error::InversionFailed { z })?;
        Ok(rotate_tau([y1, w[1]]))
    }

    /// Coefficients of the `Z = G(X)` equation at the preimage `x = G^{-1}(z)`.
    ///
    /// On the diagonal the one-sided limit from `x1 < x2` is used for the
    /// second derivative, the side the planar drift assigns ties to, which
    /// keeps the drift continuous there.
    pub fn coefficients_at(&self, x: [f64; 2]) -> Result<ZCoefficients> {
        let b = self.spec.drift(x);
        let s = self.spec.diffusion(x)?;
        let y = rotate_s(x);
        if y[0].abs() >= self.params.c {
            return Ok(ZCoefficients { drift: b, diffusion: [[s[0], 0.0], [0.0, s[1]]] });
        }
        let j = self.displacement(y, -1.0)?;
        let jac = jacobian_from(&j);
        let hess = hessians_from(&j);
        let mut drift = [0.0; 2];
        for k in 0..2 {
            let trace = s[0] * s[0] * hess[k][0][0] + s[1] * s[1] * hess[k][1][1];
            drift[k] = jac[k][0] * b[0] + jac[k][1] * b[1] + 0.5 * trace;
        }
        let diffusion = [[jac[0][0] * s[0], jac[0][1] * s[1]], [jac[1][0] * s[0], jac[1][1] * s[1]]];
        Ok(ZCoefficients { drift, diffusion })
    }

    /// Coefficients of the `Z` equation at `z`.
    pub fn z_coefficients(&self, z: [f64; 2]) -> Result<ZCoefficients> {
        self.coefficients_at(self.inverse(z)?)
    }

    /// Drift of `g(Y)`, the transformed process in rotated coordinates, at the
    /// rotated preimage `y = S(x)`.
    pub fn rotated_drift(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        let d = self.coefficients_at(rotate_tau(y))?.drift;
        Ok([(d[0] - d[1]) * FRAC_1_SQRT_2, 0.5 * (d[0] + d[1])])
    }
}

/// `G' = I + (1, -1)^T grad_x(d) / sqrt2`.
fn jacobian_from(j: &DisplacementJet) -> [[f64; 2]; 2] {
    let gx = [
        j.d1 * S_JAC[0][0] + j.d2 * S_JAC[1][0],
        j.d1 * S_JAC[0][1] + j.d2 * S_JAC[1][1],
    ];
    let r = [gx[0] * FRAC_1_SQRT_2, gx[1] * FRAC_1_SQRT_2];
    [[1.0 + r[0], r[1]], [-r[0], 1.0 - r[1]]]
}

/// `G_1'' = S'^T H_y(d) S' / sqrt2` and `G_2'' = -G_1''`.
fn hessians_from(j: &DisplacementJet) -> [[[f64; 2]; 2]; 2] {
    let hy = [[j.d11, j.d12], [j.d12, j.d22]];
    let mut hx = [[0.0; 2]; 2];
    for (r, row) in hx.iter_mut().enumerate() {
        for (col, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += S_JAC[a][r] * hy[a][b] * S_JAC[b][col];
                }
            }
            *out = acc / SQRT_2;
        }
    }
    let neg = [[-hx[0][0], -hx[0][1]], [-hx[1][0], -hx[1][1]]];
    [hx, neg]
}
