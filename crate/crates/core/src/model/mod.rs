//! Diffusion models `dX = σ(X) dW + b(X) dt`, their invariant density,
//! recurrence classification and admissible smoothing kernels.

mod kernel;

pub use kernel::{kernel_validate, Kernel, KernelCheck, KernelReport, KernelShape};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quad::{self, QuadError, QuadOptions};

/// Default spatial truncation used by tail and scale-function tests.
pub const DEFAULT_X_MAX: f64 = 50.0;
/// Default divergence threshold for the scale function.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

const BOUNDS_GRID_POINTS: usize = 10_001;
const BOUNDS_GRID_HALF_WIDTH: f64 = 50.0;
const HOLDER_GRID_POINTS: usize = 2_001;
const HOLDER_RATIO_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("sigma must be strictly positive, got sigma({x}) = {value}")]
    NonPositiveSigma { x: f64, value: f64 },
    #[error("growth bound violated at x = {x}: {what}")]
    GrowthViolation { x: f64, what: String },
    #[error("Hölder condition violated at x = {x}: ratio {ratio} exceeds gamma = {gamma}")]
    HolderViolation { x: f64, ratio: f64, gamma: f64 },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature failed while evaluating the invariant density at x = {x}: {source}")]
    Quadrature {
        x: f64,
        #[source]
        source: QuadError,
    },
    #[error("invalid interval [{a}, {b}]: need a < b")]
    InvalidInterval { a: f64, b: f64 },
}

/// Drift families. `Linear { theta }` is the mean-reverting `b(x) = -θx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    Linear {
        theta: f64,
    },
    Constant {
        c: f64,
    },
    /// `c (1 - x²)²` on `|x| ≤ 1`, zero outside.
    CompactBump {
        c: f64,
    },
    /// `-sign(x) min(|x|^α, 1)`.
    HolderKink {
        alpha_b: f64,
    },
    /// Piecewise-linear interpolation of `(x, b)` knots, flat outside.
    Tabulated {
        x: Vec<f64>,
        b: Vec<f64>,
    },
}

impl Drift {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Linear { theta } => -theta * x,
            Drift::Constant { c } => *c,
            Drift::CompactBump { c } => {
                if x.abs() <= 1.0 {
                    let u = 1.0 - x * x;
                    c * u * u
                } else {
                    0.0
                }
            }
            Drift::HolderKink { alpha_b } => {
                let m = x.abs().powf(*alpha_b).min(1.0);
                if x > 0.0 {
                    -m
                } else if x < 0.0 {
                    m
                } else {
                    0.0
                }
            }
            Drift::Tabulated { x: xs, b } => interpolate(xs, b, x),
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match self {
            Drift::HolderKink { alpha_b } if !(*alpha_b > 0.0 && *alpha_b <= 1.0) => Err(ModelError::InvalidParameter(
                format!("holder_kink alpha_b = {alpha_b} not in (0, 1]"),
            )),
            Drift::Tabulated { x, b } => {
                if x.len() < 2 || x.len() != b.len() {
                    return Err(ModelError::InvalidParameter(
                        "tabulated drift needs at least two knots and matching x/b lengths".into(),
                    ));
                }
                if x.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ModelError::InvalidParameter(
                        "tabulated drift knots must be strictly increasing".into(),
                    ));
                }
                if x.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(ModelError::InvalidParameter(
                        "tabulated drift has non-finite entries".into(),
                    ));
                }
                Ok(())
            }
            Drift::Linear { theta: p } | Drift::Constant { c: p } | Drift::CompactBump { c: p } if !p.is_finite() => {
                Err(ModelError::InvalidParameter(format!(
                    "drift parameter {p} is not finite"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&k| k <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}

/// Diffusion coefficient families. The affine envelope is
/// `σ(x) = sqrt(s0² + s1² x²)`, which sits between `max(s0, s1|x|)` and
/// `s0 + s1|x|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sigma {
    Constant { s: f64 },
    AffineEnvelope { s0: f64, s1: f64 },
}

impl Sigma {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Sigma::Constant { s } => *s,
            Sigma::AffineEnvelope { s0, s1 } => (s0 * s0 + s1 * s1 * x * x).sqrt(),
        }
    }
}

/// Local Hölder metadata for the drift around `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holder {
    pub x0: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionModel {
    pub drift: Drift,
    pub sigma: Sigma,
    pub growth_constant: f64,
    pub holder: Holder,
}

impl DiffusionModel {
    /// Builds and validates a model.
    pub fn new(drift: Drift, sigma: Sigma, growth_constant: f64, holder: Holder) -> Result<Self, ModelError> {
        let m = Self {
            drift,
            sigma,
            growth_constant,
            holder,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn brownian() -> Self {
        Self::new(
            Drift::Zero,
            Sigma::Constant { s: 1.0 },
            1.0,
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: 1.0,
                delta: 1.0,
            },
        )
        .expect("brownian motion is a valid model")
    }

    pub fn ornstein_uhlenbeck(theta: f64) -> Result<Self, ModelError> {
        Self::new(
            Drift::Linear { theta },
            Sigma::Constant { s: 1.0 },
            theta.abs().max(1.0),
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: theta.abs(),
                delta: 0.5,
            },
        )
    }

    pub fn compact_bump(c: f64) -> Result<Self, ModelError> {
        Self::new(
            Drift::CompactBump { c },
            Sigma::Constant { s: 1.0 },
            c.abs().max(1.0),
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: c.abs(),
                delta: 0.5,
            },
        )
    }

    pub fn holder_kink(alpha_b: f64) -> Result<Self, ModelError> {
        Self::new(
            Drift::HolderKink { alpha_b },
            Sigma::Constant { s: 1.0 },
            1.0,
            Holder {
                x0: 0.0,
                alpha: alpha_b,
                gamma: 1.0,
                delta: 0.5,
            },
        )
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.sigma.eval(x)
    }

    /// 64-bit identifier derived from the model's parameters.
    pub fn id(&self) -> u64 {
        let text = format!("{:?}", self);
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Checks positivity, linear-growth and local Hölder hypotheses on
    /// fixed validation grids.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.drift.check()?;
        match self.sigma {
            Sigma::Constant { s } if !s.is_finite() => {
                return Err(ModelError::InvalidParameter(format!("sigma s = {s} is not finite")))
            }
            Sigma::AffineEnvelope { s0, s1 } if !(s0.is_finite() && s1.is_finite()) => {
                return Err(ModelError::InvalidParameter(
                    "affine envelope parameters must be finite".into(),
                ))
            }
            _ => {}
        }
        let c = self.growth_constant;
        if !(c > 0.0 && c.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "growth constant must be positive, got {c}"
            )));
        }
        let h = self.holder;
        if !(h.alpha > 0.0 && h.alpha <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "Hölder exponent alpha = {} not in (0, 1]",
                h.alpha
            )));
        }
        if !(h.gamma > 0.0 && h.delta > 0.0 && h.x0.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "Hölder gamma and delta must be positive".into(),
            ));
        }

        let step = 2.0 * BOUNDS_GRID_HALF_WIDTH / (BOUNDS_GRID_POINTS - 1) as f64;
        for i in 0..BOUNDS_GRID_POINTS {
            let x = -BOUNDS_GRID_HALF_WIDTH + i as f64 * step;
            let s = self.sigma(x);
            if !(s > 0.0) {
                return Err(ModelError::NonPositiveSigma { x, value: s });
            }
            let bound = c * (1.0 + x * x);
            if s * s > bound * (1.0 + 1e-12) {
                return Err(ModelError::GrowthViolation {
                    x,
                    what: format!("sigma^2 = {} > C(1+x^2) = {}", s * s, bound),
                });
            }
            let b = self.b(x);
            let bound = c * (1.0 + x.abs());
            if !(b.abs() <= bound * (1.0 + 1e-12)) {
                return Err(ModelError::GrowthViolation {
                    x,
                    what: format!("|b| = {} > C(1+|x|) = {}", b.abs(), bound),
                });
            }
        }

        let b0 = self.b(h.x0);
        let step = 2.0 * h.delta / (HOLDER_GRID_POINTS - 1) as f64;
        for i in 0..HOLDER_GRID_POINTS {
            if 2 * i == HOLDER_GRID_POINTS - 1 {
                continue;
            }
            let x = h.x0 - h.delta + i as f64 * step;
            let ratio = (self.b(x) - b0).abs() / (x - h.x0).abs().powf(h.alpha);
            if ratio > h.gamma * (1.0 + HOLDER_RATIO_SLACK) {
                return Err(ModelError::HolderViolation {
                    x,
                    ratio,
                    gamma: h.gamma,
                });
            }
        }
        Ok(())
    }

    /// `∫₀ˣ 2b/σ²`.
    fn log_speed_exponent(&self, x: f64) -> Result<f64, QuadError> {
        if matches!(self.drift, Drift::Zero) {
            return Ok(0.0);
        }
        quad::simpson(
            |v| {
                let s = self.sigma(v);
                2.0 * self.b(v) / (s * s)
            },
            0.0,
            x,
        )
    }
}

/// Density of the invariant measure, `(2/σ²(x)) exp(∫₀ˣ 2b/σ²)`.
pub fn invariant_density(model: &DiffusionModel, x: f64) -> Result<f64, ModelError> {
    let e = model
        .log_speed_exponent(x)
        .map_err(|source| ModelError::Quadrature { x, source })?;
    let s = model.sigma(x);
    Ok(2.0 / (s * s) * e.exp())
}

/// Total mass outcome. The tail test runs over `[X_max, 2 X_max]` in both
/// directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TotalMass {
    Finite(f64),
    Infinite,
    Inconclusive,
}

impl TotalMass {
    pub fn is_finite(&self) -> bool {
        matches!(self, TotalMass::Finite(_))
    }
}

/// `μ([a, b])`.
pub fn invariant_mass(model: &DiffusionModel, a: f64, b: f64) -> Result<f64, ModelError> {
    if !(a < b) {
        return Err(ModelError::InvalidInterval { a, b });
    }
    // Reuse the exponent between neighbouring points by integrating the
    // density directly; inner quadrature errors surface with their x.
    let failure = std::cell::Cell::new(None);
    let r = quad::simpson(
        |x| match invariant_density(model, x) {
            Ok(v) => v,
            Err(e) => {
                if failure.take().is_none() {
                    failure.set(Some(e));
                }
                f64::NAN
            }
        },
        a,
        b,
    );
    if let Some(e) = failure.take() {
        return Err(e);
    }
    r.map_err(|source| ModelError::Quadrature { x: a, source })
}

const TAIL_SAMPLES: usize = 8;
const TAIL_DECAY_RATIO: f64 = 0.5;

/// `μ(ℝ)` with truncation at `x_max` and a tail test on `[x_max, 2 x_max]`.
///
/// The tail is finite when the density decays at least geometrically
/// (each of eight equal steps shrinks it by half or it underflows),
/// infinite when it is non-decreasing, and inconclusive otherwise.
pub fn invariant_mass_total(model: &DiffusionModel, x_max: f64) -> Result<TotalMass, ModelError> {
    let mut conclusive_finite = true;
    for sign in [1.0, -1.0] {
        let mut prev = invariant_density(model, sign * x_max)?;
        let mut decaying = true;
        let mut flat = true;
        for k in 1..=TAIL_SAMPLES {
            let x = sign * x_max * (1.0 + k as f64 / TAIL_SAMPLES as f64);
            let cur = invariant_density(model, x)?;
            if prev > 0.0 {
                let r = cur / prev;
                if r > TAIL_DECAY_RATIO {
                    decaying = false;
                }
                if r < 1.0 - 1e-9 {
                    flat = false;
                }
            } else if cur > 0.0 {
                decaying = false;
                flat = false;
            } else {
                flat = false;
            }
            prev = cur;
        }
        if flat {
            return Ok(TotalMass::Infinite);
        }
        if !decaying {
            conclusive_finite = false;
        }
    }
    if !conclusive_finite {
        return Ok(TotalMass::Inconclusive);
    }
    invariant_mass(model, -x_max, x_max).map(TotalMass::Finite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrence {
    Recurrent,
    /// Scale function converges at +∞ only: the path escapes to +∞.
    TransientPlus,
    TransientMinus,
    TransientBoth,
    Inconclusive,
}

impl std::fmt::Display for Recurrence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Recurrence::Recurrent => "recurrent",
            Recurrence::TransientPlus => "transient_plus",
            Recurrence::TransientMinus => "transient_minus",
            Recurrence::TransientBoth => "transient_both",
            Recurrence::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RecurrenceOptions {
    pub x_max: f64,
    pub divergence_threshold: f64,
    pub convergence_rtol: f64,
    /// Number of doublings from the first grid point up to `x_max`.
    pub doublings: u32,
}

impl Default for RecurrenceOptions {
    fn default() -> Self {
        Self {
            x_max: DEFAULT_X_MAX,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            convergence_rtol: 1e-6,
            doublings: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tail {
    Diverges,
    Converges,
    Unknown,
}

/// Classifies recurrence from the scale function
/// `s(x) = ∫₀ˣ exp(-∫₀ʸ 2b/σ²) dy` on a geometric grid in each direction.
///
/// A direction diverges when `|s|` passes the threshold, or when the
/// increments over the last three doublings are non-decreasing (linear or
/// logarithmic growth never reaches the threshold inside `x_max`). It
/// converges when one doubling changes `s` by less than `convergence_rtol`.
pub fn classify_recurrence(model: &DiffusionModel, opts: RecurrenceOptions) -> Result<Recurrence, ModelError> {
    let plus = scale_tail(model, 1.0, &opts)?;
    let minus = scale_tail(model, -1.0, &opts)?;
    Ok(match (plus, minus) {
        (Tail::Diverges, Tail::Diverges) => Recurrence::Recurrent,
        (Tail::Converges, Tail::Diverges) => Recurrence::TransientPlus,
        (Tail::Diverges, Tail::Converges) => Recurrence::TransientMinus,
        (Tail::Converges, Tail::Converges) => Recurrence::TransientBoth,
        _ => Recurrence::Inconclusive,
    })
}

fn scale_tail(model: &DiffusionModel, sign: f64, opts: &RecurrenceOptions) -> Result<Tail, ModelError> {
    let scale_density = |y: f64| -> Result<f64, ModelError> {
        let e = model
            .log_speed_exponent(y)
            .map_err(|source| ModelError::Quadrature { x: y, source })?;
        Ok((-e).exp())
    };
    let mut x_prev = 0.0;
    let mut s = 0.0_f64;
    let mut increments: Vec<f64> = Vec::new();
    let x_first = opts.x_max / 2f64.powi(opts.doublings as i32);
    let mut x = x_first;
    while x <= opts.x_max * (1.0 + 1e-12) {
        let failure = std::cell::Cell::new(None);
        let qopts = QuadOptions {
            rel_tol: 1e-10,
            ..QuadOptions::default()
        };
        let piece = quad::integrate(
            |y| match scale_density(sign * y) {
                Ok(v) => v,
                Err(e) => {
                    if failure.take().is_none() {
                        failure.set(Some(e));
                    }
                    f64::NAN
                }
            },
            x_prev,
            x,
            qopts,
        );
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let piece = match piece {
            Ok(r) => r.value,
            // overflow of exp(...) means the scale function has blown up
            Err(QuadError::NonFinite { .. }) => f64::INFINITY,
            Err(source) => return Err(ModelError::Quadrature { x: sign * x, source }),
        };
        let previous = s;
        s += piece;
        if s > opts.divergence_threshold && piece > 0.0 {
            return Ok(Tail::Diverges);
        }
        if x_prev > 0.0 && previous > 0.0 && piece <= opts.convergence_rtol * previous {
            return Ok(Tail::Converges);
        }
        if x_prev > 0.0 {
            increments.push(piece);
        }
        x_prev = x;
        x *= 2.0;
    }
    let n = increments.len();
    if n >= 3 && increments[n - 3..].windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)) {
        return Ok(Tail::Diverges);
    }
    Ok(Tail::Unknown)
}
