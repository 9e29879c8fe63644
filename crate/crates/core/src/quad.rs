//! Adaptive Simpson quadrature.
//!
//! Subintervals that reach the depth limit without meeting their share of
//! the tolerance are accepted, and their error estimates are pooled. The
//! integral is reported as non-convergent only when the pooled estimate
//! exceeds the requested tolerance, so an integrable kink (e.g. `|x|^a`
//! at an endpoint) does not fail just because one branch bottoms out.

use thiserror::Error;

pub const DEFAULT_ABS_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_DEPTH: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    /// Relative tolerance against the running magnitude of the integral.
    /// Zero means purely absolute.
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: 0.0,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature on [{a}, {b}] did not converge: estimated error {error:e} > tolerance {tol:e}")]
    NotConverged { a: f64, b: f64, error: f64, tol: f64 },
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct State<F> {
    f: F,
    evaluations: usize,
    unresolved: f64,
    non_finite: Option<f64>,
}

impl<F: Fn(f64) -> f64> State<F> {
    fn eval(&mut self, x: f64) -> f64 {
        self.evaluations += 1;
        let y = (self.f)(x);
        if !y.is_finite() && self.non_finite.is_none() {
            self.non_finite = Some(x);
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        rel_tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm);
        let frm = self.eval(rm);
        let h = b - a;
        let left = h / 12.0 * (fa + 4.0 * flm + fm);
        let right = h / 12.0 * (fm + 4.0 * frm + fb);
        let both = left + right;
        let diff = both - whole;
        let target = tol.max(rel_tol * both.abs());
        if self.non_finite.is_some() {
            return both;
        }
        if diff.abs() <= 15.0 * target {
            return both + diff / 15.0;
        }
        if depth == 0 || m <= a || m >= b {
            self.unresolved += diff.abs() / 15.0;
            return both + diff / 15.0;
        }
        self.recurse(a, m, fa, flm, fm, left, 0.5 * tol, rel_tol, depth - 1)
            + self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, rel_tol, depth - 1)
    }
}

/// Integrates `f` over `[a, b]` (either orientation).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    if b < a {
        return integrate(f, b, a, opts).map(|r| QuadResult { value: -r.value, ..r });
    }
    let mut st = State {
        f,
        evaluations: 0,
        unresolved: 0.0,
        non_finite: None,
    };
    let fa = st.eval(a);
    let fb = st.eval(b);
    let m = 0.5 * (a + b);
    let fm = st.eval(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let value = st.recurse(a, b, fa, fm, fb, whole, opts.abs_tol, opts.rel_tol, opts.max_depth);
    if let Some(x) = st.non_finite {
        return Err(QuadError::NonFinite { x });
    }
    let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
    if st.unresolved > tol {
        return Err(QuadError::NotConverged {
            a,
            b,
            error: st.unresolved,
            tol,
        });
    }
    Ok(QuadResult {
        value,
        error: st.unresolved,
        evaluations: st.evaluations,
    })
}

/// Shorthand for [`integrate`] with default options, returning the value only.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64, QuadError> {
    integrate(f, a, b, QuadOptions::default()).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomials_up_to_cubic_are_exact() {
        let v = simpson(|x| 3.0 * x * x * x - x + 2.0, -1.0, 2.0).unwrap();
        // 3/4 (16 - 1) - (4 - 1)/2 + 6
        assert_abs_diff_eq!(v, 11.25 - 1.5 + 6.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_integral() {
        let v = simpson(|x| (-x * x).exp(), -10.0, 10.0).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::PI.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let a = simpson(f64::sin, 0.0, 1.0).unwrap();
        let b = simpson(f64::sin, 1.0, 0.0).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn endpoint_kink_converges() {
        let v = simpson(|x: f64| x.abs().sqrt(), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = simpson(|x| 1.0 / x, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, QuadError::NonFinite { x } if x == 0.0));
    }

    #[test]
    fn tiny_depth_budget_fails() {
        let opts = QuadOptions {
            max_depth: 1,
            abs_tol: 1e-14,
            rel_tol: 0.0,
        };
        let err = integrate(|x: f64| (20.0 * x).sin(), 0.0, 3.0, opts).unwrap_err();
        assert!(matches!(err, QuadError::NotConverged { .. }));
    }
}
