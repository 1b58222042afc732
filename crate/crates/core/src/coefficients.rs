//! Coefficient families, rank partitions and the full-system drift and
//! diffusion of rank-based interacting particle systems.
//!
//! Particle `i` with rank `k` (its position among the order statistics of the
//! current state) moves with drift `b_k(x_i)`. Its diffusion is either
//! `sigma_k(x_i)` (rank-dependent) or `sigma_i(x_i)` (attached to the particle).
//!
//! Ranks are 0-based throughout: rank 0 is the smallest coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed parametric shapes a coefficient can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// `[a]`: `f(x) = a`.
    Constant,
    /// `[a0, a1]`: `f(x) = a0 + a1 x`.
    Affine,
    /// Drift `[r, x_max]`: `r x^2 max(1 - x/x_max, 0)`. Diffusion `[s0]`: `s0 x`.
    Logistic1,
    /// Drift `[r, x_max]`: `r x^2 (1 - x/x_max)^2`. Diffusion `[s0, x_max]`:
    /// `s0 x (1 - x/x_max)`.
    Logistic2,
    /// `[c0, c1, ..., cd]`: `f(x) = c0 + c1 x + ... + cd x^d`.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Drift,
    Diffusion,
}

/// Serializable `{kind, params}` form of a family; the role comes from where
/// the family is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub params: Vec<f64>,
}

/// Common vanishing factor `w(x)` shared by a drift (as `w^2`) and a
/// diffusion (as `w`). Used to cancel removable singularities of alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RootFactor {
    /// `w(x) = x`
    Linear,
    /// `w(x) = x (1 - x/x_max)`
    Logistic { x_max: f64 },
}

/// A scalar coefficient function with analytic derivatives up to order two.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFamily {
    kind: FamilyKind,
    params: Vec<f64>,
    role: Role,
}

impl CoefficientFamily {
    pub fn new(kind: FamilyKind, params: Vec<f64>, role: Role) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidFamily(format!("{kind:?} ({role:?}): {msg}")));
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return bad(&format!("parameter {p} is not finite"));
        }
        let expected = match (kind, role) {
            (FamilyKind::Constant, _) => Some(1),
            (FamilyKind::Affine, _) => Some(2),
            (FamilyKind::Logistic1, Role::Drift) => Some(2),
            (FamilyKind::Logistic1, Role::Diffusion) => Some(1),
            (FamilyKind::Logistic2, _) => Some(2),
            (FamilyKind::Polynomial, _) => None,
        };
        match expected {
            Some(n) if params.len() != n => {
                return bad(&format!("expected {n} parameters, got {}", params.len()))
            }
            None if params.is_empty() => return bad("needs at least one coefficient"),
            _ => {}
        }
        match (kind, role) {
            (FamilyKind::Constant, Role::Diffusion) if params[0] < 0.0 => {
                return bad("diffusion constant must be nonnegative")
            }
            (FamilyKind::Logistic1 | FamilyKind::Logistic2, Role::Drift) if params[1] <= 0.0 => {
                return bad("x_max must be positive")
            }
            (FamilyKind::Logistic1 | FamilyKind::Logistic2, Role::Diffusion) => {
                if params[0] < 0.0 {
                    return bad("sigma0 must be nonnegative");
                }
                if kind == FamilyKind::Logistic2 && params[1] <= 0.0 {
                    return bad("x_max must be positive");
                }
            }
            _ => {}
        }
        Ok(Self { kind, params, role })
    }

    pub fn from_spec(spec: &FamilySpec, role: Role) -> Result<Self> {
        Self::new(spec.kind, spec.params.clone(), role)
    }

    pub fn constant(value: f64, role: Role) -> Result<Self> {
        Self::new(FamilyKind::Constant, vec![value], role)
    }

    pub fn affine(a0: f64, a1: f64, role: Role) -> Result<Self> {
        Self::new(FamilyKind::Affine, vec![a0, a1], role)
    }

    pub fn logistic1_drift(r: f64, x_max: f64) -> Result<Self> {
        Self::new(FamilyKind::Logistic1, vec![r, x_max], Role::Drift)
    }

    pub fn logistic1_diffusion(sigma0: f64) -> Result<Self> {
        Self::new(FamilyKind::Logistic1, vec![sigma0], Role::Diffusion)
    }

    pub fn logistic2_drift(r: f64, x_max: f64) -> Result<Self> {
        Self::new(FamilyKind::Logistic2, vec![r, x_max], Role::Drift)
    }

    pub fn logistic2_diffusion(sigma0: f64, x_max: f64) -> Result<Self> {
        Self::new(FamilyKind::Logistic2, vec![sigma0, x_max], Role::Diffusion)
    }

    /// Coefficients in ascending order of degree.
    pub fn polynomial(coeffs: Vec<f64>, role: Role) -> Result<Self> {
        Self::new(FamilyKind::Polynomial, coeffs, role)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn spec(&self) -> FamilySpec {
        FamilySpec { kind: self.kind, params: self.params.clone() }
    }

    /// Interval on which the family is declared valid. Diffusion families are
    /// nonnegative there.
    pub fn domain(&self) -> (f64, f64) {
        match (self.kind, self.role) {
            (FamilyKind::Logistic1, Role::Diffusion) => (0.0, f64::INFINITY),
            (FamilyKind::Logistic2, Role::Diffusion) => (0.0, self.params[1]),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match (self.kind, self.role) {
            (FamilyKind::Constant, _) => self.params[0],
            (FamilyKind::Affine, _) => self.params[0] + self.params[1] * x,
            (FamilyKind::Logistic1, Role::Drift) => {
                let (r, x_max) = (self.params[0], self.params[1]);
                r * x * x * (1.0 - x / x_max).max(0.0)
            }
            (FamilyKind::Logistic1, Role::Diffusion) => self.params[0] * x,
            (FamilyKind::Logistic2, Role::Drift) => {
                let (r, x_max) = (self.params[0], self.params[1]);
                let w = x * (1.0 - x / x_max);
                r * w * w
            }
            (FamilyKind::Logistic2, Role::Diffusion) => {
                let (s0, x_max) = (self.params[0], self.params[1]);
                s0 * x * (1.0 - x / x_max)
            }
            (FamilyKind::Polynomial, _) => self.params.iter().rev().fold(0.0, |acc, &c| acc * x + c),
        }
    }

    /// Value, first and second derivative at `x`.
    pub fn jet(&self, x: f64) -> [f64; 3] {
        match (self.kind, self.role) {
            (FamilyKind::Constant, _) => [self.params[0], 0.0, 0.0],
            (FamilyKind::Affine, _) => [self.eval(x), self.params[1], 0.0],
            (FamilyKind::Logistic1, Role::Drift) => {
                let (r, x_max) = (self.params[0], self.params[1]);
                if x < x_max {
                    [
                        r * x * x * (1.0 - x / x_max),
                        r * (2.0 * x - 3.0 * x * x / x_max),
                        r * (2.0 - 6.0 * x / x_max),
                    ]
                } else {
                    [0.0, 0.0, 0.0]
                }
            }
            (FamilyKind::Logistic1, Role::Diffusion) => [self.params[0] * x, self.params[0], 0.0],
            (FamilyKind::Logistic2, Role::Drift) => {
                let (r, x_max) = (self.params[0], self.params[1]);
                let [w, dw, ddw] = logistic_factor(x, x_max);
                [r * w * w, 2.0 * r * w * dw, 2.0 * r * (dw * dw + w * ddw)]
            }
            (FamilyKind::Logistic2, Role::Diffusion) => {
                let (s0, x_max) = (self.params[0], self.params[1]);
                let [w, dw, ddw] = logistic_factor(x, x_max);
                [s0 * w, s0 * dw, s0 * ddw]
            }
            (FamilyKind::Polynomial, _) => {
                // Horner on value and both derivatives at once.
                let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
                for &c in self.params.iter().rev() {
                    ddp = ddp * x + 2.0 * dp;
                    dp = dp * x + p;
                    p = p * x + c;
                }
                [p, dp, ddp]
            }
        }
    }

    pub fn derivative(&self, x: f64, order: usize) -> f64 {
        self.jet(x)[order.min(2)]
    }

    pub(crate) fn root_factor(&self) -> Option<RootFactor> {
        match (self.kind, self.role) {
            (FamilyKind::Logistic1, _) => Some(RootFactor::Linear),
            (FamilyKind::Logistic2, _) => Some(RootFactor::Logistic { x_max: self.params[1] }),
            _ => None,
        }
    }

    /// Jet of the family divided by its root factor (squared for drifts).
    pub(crate) fn reduced_jet(&self, x: f64) -> Option<[f64; 3]> {
        match (self.kind, self.role) {
            (FamilyKind::Logistic1, Role::Drift) => {
                let (r, x_max) = (self.params[0], self.params[1]);
                Some(if x < x_max { [r * (1.0 - x / x_max), -r / x_max, 0.0] } else { [0.0; 3] })
            }
            (FamilyKind::Logistic2, Role::Drift) => Some([self.params[0], 0.0, 0.0]),
            (FamilyKind::Logistic1 | FamilyKind::Logistic2, Role::Diffusion) => {
                Some([self.params[0], 0.0, 0.0])
            }
            _ => None,
        }
    }
}

fn logistic_factor(x: f64, x_max: f64) -> [f64; 3] {
    [x * (1.0 - x / x_max), 1.0 - 2.0 * x / x_max, -2.0 / x_max]
}

/// Ranks of the particles: `rank_of[i] = k` means particle `i` is the `k`-th
/// smallest (0-based); `index_of` is the inverse permutation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankAssignment {
    pub rank_of: Vec<usize>,
    pub index_of: Vec<usize>,
}

impl RankAssignment {
    /// Recompute the ranks for `x`, reusing the allocations.
    ///
    /// Ties are broken by particle index. For two particles this matches the
    /// planar indicator convention: particle 1 takes the bottom drift when
    /// `x1 <= x2`, particle 2 the top drift when `x2 >= x1`.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidState { index, value });
        }
        let n = x.len();
        self.index_of.clear();
        self.index_of.extend(0..n);
        // stable: equal values keep index order
        self.index_of.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
        self.rank_of.resize(n, 0);
        for (k, &i) in self.index_of.iter().enumerate() {
            self.rank_of[i] = k;
        }
        Ok(())
    }

    pub fn is_permutation(&self) -> bool {
        let n = self.rank_of.len();
        let mut seen = vec![false; n];
        for &k in &self.rank_of {
            if k >= n || seen[k] {
                return false;
            }
            seen[k] = true;
        }
        self.index_of.len() == n && self.index_of.iter().enumerate().all(|(k, &i)| self.rank_of[i] == k)
    }
}

/// Rank partition of `x`: which order statistic each particle currently is.
pub fn rank_partition(x: &[f64]) -> Result<RankAssignment> {
    let mut ranks = RankAssignment::default();
    ranks.update(x)?;
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Diffusion looked up by rank, `sigma_k(x_i)`.
    RankDiffusion,
    /// Diffusion attached to the particle, `sigma_i(x_i)`.
    OwnDiffusion,
}

/// A rank-based interacting system of `N` particles.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    variant: Variant,
    drifts: Vec<CoefficientFamily>,
    diffusions: Vec<CoefficientFamily>,
    positivity_wrap: bool,
    x0: Vec<f64>,
}

impl SystemSpec {
    pub fn new(
        variant: Variant,
        drifts: Vec<CoefficientFamily>,
        diffusions: Vec<CoefficientFamily>,
        positivity_wrap: bool,
        x0: Vec<f64>,
    ) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::InvalidSystem("at least one particle is required".into()));
        }
        if drifts.len() != n || diffusions.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{n} particles need {n} drift and {n} diffusion families, got {} and {}",
                drifts.len(),
                diffusions.len()
            )));
        }
        if drifts.iter().any(|f| f.role() != Role::Drift)
            || diffusions.iter().any(|f| f.role() != Role::Diffusion)
        {
            return Err(Error::InvalidSystem("family role does not match its slot".into()));
        }
        if let Some((index, &value)) = x0.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidState { index, value });
        }
        if x0.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSystem("x0 must be strictly increasing".into()));
        }
        Ok(Self { variant, drifts, diffusions, positivity_wrap, x0 })
    }

    pub fn n_particles(&self) -> usize {
        self.x0.len()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn drifts(&self) -> &[CoefficientFamily] {
        &self.drifts
    }

    pub fn diffusions(&self) -> &[CoefficientFamily] {
        &self.diffusions
    }

    pub fn positivity_wrap(&self) -> bool {
        self.positivity_wrap
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.n_particles() {
            return Err(Error::DimensionMismatch { expected: self.n_particles(), got: x0.len() });
        }
        self.x0 = x0;
        Self::new(self.variant, self.drifts, self.diffusions, self.positivity_wrap, self.x0)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_particles() {
            return Err(Error::DimensionMismatch { expected: self.n_particles(), got: x.len() });
        }
        Ok(())
    }

    /// `B_i(x) = b_{rank(i)}(x_i)`.
    pub fn drift_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ranks = RankAssignment::default();
        let mut out = vec![0.0; x.len()];
        self.drift_into(x, &mut ranks, &mut out)?;
        Ok(out)
    }

    pub fn drift_into(&self, x: &[f64], ranks: &mut RankAssignment, out: &mut [f64]) -> Result<()> {
        self.check_len(x)?;
        ranks.update(x)?;
        for ((o, &xi), &k) in out.iter_mut().zip(x).zip(&ranks.rank_of) {
            *o = self.drifts[k].eval(xi);
        }
        Ok(())
    }

    /// Per-particle diffusion coefficient; multiplies the particle's own
    /// Brownian increment.
    pub fn diffusion_coeffs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ranks = RankAssignment::default();
        let mut out = vec![0.0; x.len()];
        self.diffusion_into(x, &mut ranks, &mut out)?;
        Ok(out)
    }

    /// Allocation-free form of [`Self::diffusion_coeffs`].
    pub fn diffusion_into(&self, x: &[f64], ranks: &mut RankAssignment, out: &mut [f64]) -> Result<()> {
        self.check_len(x)?;
        if self.variant == Variant::RankDiffusion {
            ranks.update(x)?;
        }
        self.diffusion_with_ranks(x, ranks, out)
    }

    /// Diffusion coefficients using a rank assignment already computed for `x`.
    pub(crate) fn diffusion_with_ranks(&self, x: &[f64], ranks: &RankAssignment, out: &mut [f64]) -> Result<()> {
        for (i, (o, &xi)) in out.iter_mut().zip(x).enumerate() {
            let family = match self.variant {
                Variant::RankDiffusion => &self.diffusions[ranks.rank_of[i]],
                Variant::OwnDiffusion => &self.diffusions[i],
            };
            let arg = if self.positivity_wrap { xi.max(0.0) } else { xi };
            let value = family.eval(arg);
            if value < 0.0 || value.is_nan() {
                return Err(Error::NegativeDiffusion { particle: i, x: xi, value });
            }
            *o = value;
        }
        Ok(())
    }
}
