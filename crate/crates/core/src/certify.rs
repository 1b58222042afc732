//! Numerical certificates for a distortion map: the sign of `det G'` near the
//! diagonal, round-trip accuracy of `G^{-1}`, and agreement of the analytic
//! derivatives of `g` with central differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::noise::uniform01;
use crate::transform::{rotate_tau, Distortion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetGridReport {
    pub min_det: f64,
    /// Grid node (in `x` coordinates) attaining the minimum.
    pub argmin: [f64; 2],
    pub nodes: usize,
}

/// Minimum of `det G'` over a `nodes x nodes` grid on `|y1| <= c`,
/// `|y2| <= half_box` in rotated coordinates, which covers the strip
/// intersected with the box `[-half_box, half_box]^2`.
pub fn det_grid_minimum(map: &Distortion, half_box: f64, nodes: usize) -> Result<DetGridReport> {
    if nodes < 2 || !(half_box > 0.0) {
        return Err(Error::Analysis(format!("invalid grid: {nodes} nodes over half-width {half_box}")));
    }
    let c = map.params().c;
    let step = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (nodes - 1) as f64;
    let mut report = DetGridReport { min_det: f64::INFINITY, argmin: [0.0; 2], nodes: nodes * nodes };
    for i in 0..nodes {
        let y1 = step(-c, c, i);
        for j in 0..nodes {
            let x = rotate_tau([y1, step(-half_box, half_box, j)]);
            let det = map.det_jacobian(x)?;
            if det < report.min_det || det.is_nan() {
                report.min_det = det;
                report.argmin = x;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    /// Largest `|G^{-1}(G(x)) - x| / (1 + |x|)`.
    pub max_scaled_error: f64,
    pub worst: [f64; 2],
    pub points: usize,
}

/// Round trip through `G` and `G^{-1}` at `points` pseudo-random points:
/// half uniform on the box, half uniform on the strip inside it.
pub fn round_trip(map: &Distortion, half_box: f64, points: usize, seed: u64) -> Result<RoundTripReport> {
    let c = map.params().c;
    let mut report = RoundTripReport { max_scaled_error: 0.0, worst: [0.0; 2], points };
    for k in 0..points as u64 {
        let (u, v) = (uniform01(seed, 1, k, 0), uniform01(seed, 1, k, 1));
        let x = if k % 2 == 0 {
            [half_box * (2.0 * u - 1.0), half_box * (2.0 * v - 1.0)]
        } else {
            rotate_tau([c * (2.0 * u - 1.0), half_box * (2.0 * v - 1.0)])
        };
        let back = map.inverse(map.apply(x)?)?;
        let err = ((back[0] - x[0]).powi(2) + (back[1] - x[1]).powi(2)).sqrt();
        let scaled = err / (1.0 + (x[0] * x[0] + x[1] * x[1]).sqrt());
        if scaled > report.max_scaled_error || scaled.is_nan() {
            report.max_scaled_error = scaled;
            report.worst = x;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    /// Largest `|analytic - fd| / max(|analytic|, |fd|, 1)` over all first
    /// and second derivatives of both components of `g`.
    pub max_rel_error: f64,
    pub worst: [f64; 2],
    pub points: usize,
    pub step: f64,
}

/// Step of the central differences, relative to `c`.
pub const FD_RELATIVE_STEP: f64 = 1e-5;

fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

/// Compares the analytic first and second derivatives of `g` with central
/// differences at `points` pseudo-random points of `[-4c, 4c]^2` having
/// `|y1| > min_abs_y1` (the second derivatives jump across `y1 = 0`).
///
/// First derivatives are differenced from values of `g`, second derivatives
/// from the analytic first derivatives.
pub fn derivative_check(map: &Distortion, points: usize, min_abs_y1: f64, seed: u64) -> Result<DerivativeReport> {
    let c = map.params().c;
    let half = 4.0 * c;
    if !(min_abs_y1 < half) {
        return Err(Error::Analysis(format!("no sample region: |y1| > {min_abs_y1} within [-{half}, {half}]")));
    }
    let h = FD_RELATIVE_STEP * c;
    let mut report = DerivativeReport { max_rel_error: 0.0, worst: [0.0; 2], points, step: h };
    let mut k = 0u64;
    let mut accepted = 0;
    while accepted < points {
        let y = [half * (2.0 * uniform01(seed, 2, k, 0) - 1.0), half * (2.0 * uniform01(seed, 2, k, 1) - 1.0)];
        k += 1;
        if y[0].abs() <= min_abs_y1 {
            continue;
        }
        accepted += 1;
        let jet = map.g_jet(y)?;
        let at = |dy: [f64; 2]| map.g_jet([y[0] + dy[0], y[1] + dy[1]]);
        let (p1, m1) = (at([h, 0.0])?, at([-h, 0.0])?);
        let (p2, m2) = (at([0.0, h])?, at([0.0, -h])?);
        let fd = |p: [f64; 2], m: [f64; 2], i: usize| (p[i] - m[i]) / (2.0 * h);
        let mut worst = 0.0f64;
        for i in 0..2 {
            worst = worst
                .max(rel_error(jet.d_y1[i], fd(p1.value, m1.value, i)))
                .max(rel_error(jet.d_y2[i], fd(p2.value, m2.value, i)))
                .max(rel_error(jet.d_y1y1[i], fd(p1.d_y1, m1.d_y1, i)))
                .max(rel_error(jet.d_y2y2[i], fd(p2.d_y2, m2.d_y2, i)))
                .max(rel_error(jet.d_y1y2[i], fd(p2.d_y1, m2.d_y1, i)))
                .max(rel_error(jet.d_y1y2[i], fd(p1.d_y2, m1.d_y2, i)));
        }
        if worst > report.max_rel_error || worst.is_nan() {
            report.max_rel_error = worst;
            report.worst = y;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientFamily, Role};
    use crate::transform::{PlanarSpec, TransformParams};

    fn atlas(b1: f64, b2: f64, c: f64) -> Distortion {
        let k = |v, r| CoefficientFamily::constant(v, r).unwrap();
        let spec = PlanarSpec::new(k(b1, Role::Drift), k(b2, Role::Drift), k(1.0, Role::Diffusion), k(1.0, Role::Diffusion))
            .unwrap();
        let alpha_sup = spec.alpha(0.0, 0).unwrap().abs();
        Distortion::new(spec, TransformParams::new(c, alpha_sup, [-10.0, 10.0], 0.5).unwrap())
    }

    #[test]
    fn identity_map_certifies_trivially() {
        let map = atlas(0.5, 0.5, 1.0);
        let det = det_grid_minimum(&map, 5.0, 21).unwrap();
        assert_eq!(det.min_det, 1.0);
        assert_eq!(det.nodes, 441);
        assert_eq!(round_trip(&map, 5.0, 100, 1).unwrap().max_scaled_error, 0.0);
        // differences of an affine map carry only rounding error
        assert!(derivative_check(&map, 100, 1e-3, 1).unwrap().max_rel_error < 1e-10);
    }

    #[test]
    fn valid_map_has_positive_determinant_and_accurate_derivatives() {
        let map = atlas(1.0, -1.0, 0.05);
        assert!(det_grid_minimum(&map, 5.0, 51).unwrap().min_det > 0.0);
        assert!(round_trip(&map, 5.0, 1000, 2).unwrap().max_scaled_error <= 1e-10);
        let d = derivative_check(&map, 200, 1e-3, 3).unwrap();
        assert!(d.max_rel_error <= 1e-6, "{d:?}");
    }

    #[test]
    fn oversized_strip_is_caught() {
        // alpha = 20 / (2 sqrt2) with c = 1 is far beyond the determinant bound
        let k = |v, r| CoefficientFamily::constant(v, r).unwrap();
        let spec = PlanarSpec::new(k(20.0, Role::Drift), k(0.0, Role::Drift), k(1.0, Role::Diffusion), k(1.0, Role::Diffusion))
            .unwrap();
        let params = TransformParams { c: 1.0, alpha_sup: 0.0, alpha_domain: [-10.0, 10.0], safety: 0.5 };
        let map = Distortion::new(spec, params);
        assert!(det_grid_minimum(&map, 1.0, 201).unwrap().min_det < 0.0);
    }
}
