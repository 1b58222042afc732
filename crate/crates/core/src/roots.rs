//! Safeguarded Newton iteration for scalar roots inside a sign-change bracket.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootError {
    /// `f(lo)` and `f(hi)` have the same strict sign.
    NotBracketed { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    /// A function value came back NaN.
    NonFinite { x: f64 },
    IterationLimit { last_x: f64 },
}

impl fmt::Display for RootError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RootError::NotBracketed { lo, hi, f_lo, f_hi } => {
                write!(f, "no sign change on [{lo}, {hi}] (f = {f_lo}, {f_hi})")
            }
            RootError::NonFinite { x } => write!(f, "non-finite function value at {x}"),
            RootError::IterationLimit { last_x } => write!(f, "iteration limit reached near {last_x}"),
        }
    }
}

impl std::error::Error for RootError {}

/// Finds a root of `f` in `[lo, hi]`, starting from `guess`.
///
/// `f` returns the value and the derivative. A Newton step is taken whenever
/// it lands strictly inside the current bracket, otherwise the bracket is
/// bisected. Terminates when the step falls below `x_tol * (1 + |x|)`.
pub fn newton_bisect<F>(mut f: F, mut lo: f64, mut hi: f64, guess: f64, x_tol: f64, max_iter: usize) -> Result<f64, RootError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let f_lo = f(lo).0;
    let f_hi = f(hi).0;
    if f_lo.is_nan() {
        return Err(RootError::NonFinite { x: lo });
    }
    if f_hi.is_nan() {
        return Err(RootError::NonFinite { x: hi });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(RootError::NotBracketed { lo, hi, f_lo, f_hi });
    }
    let lo_sign = f_lo.signum();

    let mut x = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx.is_nan() {
            return Err(RootError::NonFinite { x });
        }
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= x_tol * (1.0 + x.abs()) || (hi - lo).abs() <= x_tol * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(RootError::IterationLimit { last_x: x })
}
