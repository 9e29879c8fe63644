//! Monte Carlo diagnostics: coverage of tightness bands, ratio limits of
//! additive functionals, uniform convergence of normalized local time,
//! kernel-functional limits and log-log rate regression.
//!
//! Sample matrices are laid out checkpoint-major (`samples[t][replicate]`)
//! unless stated otherwise; NaN marks an undefined entry.

use thiserror::Error;

use crate::estimate::{
    adaptive_with_observable, bandwidth_and_rate, AdaptiveParams, AdaptiveTrace, EquivalentCurve, EquivalentSpec,
    EstimateError,
};
use crate::functionals::{
    run_accumulator, Accumulator, FieldAcc, FunctionalError, IndicatorAcc, KernelAfAcc, OccupationAcc,
};
use crate::model::{invariant_density, invariant_mass, DiffusionModel, Kernel, ModelError};
use crate::par::try_replicate_map;
use crate::sim::{checkpoint_steps, PathConfig, PathStream, Step};
use crate::stats;

/// Fewest replicates accepted by [`tightness_curve`].
pub const MIN_REPLICATES: usize = 30;
/// Fewest defined replicates per horizon accepted by [`rate_regression`].
pub const MIN_DEFINED_PER_HORIZON: usize = 50;
/// Number of dyadic bandwidths `δ 2^{-j}` considered by [`h_grid`].
pub const H_GRID_LEVELS: i32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("no samples")]
    Empty,
    #[error("need at least {min} replicates, got {n}")]
    TooFewReplicates { n: usize, min: usize },
    #[error("sample layout does not match the checkpoints")]
    Shape,
    #[error("thresholds must be positive and strictly increasing")]
    InvalidThresholds,
    #[error("grid point {y} lies outside the Hölder window [{lo}, {hi}]")]
    GridOutsideWindow { y: f64, lo: f64, hi: f64 },
    #[error("deterministic equivalent is zero at t = {t}; checkpoint too early")]
    ZeroEquivalent { t: f64 },
    #[error("bandwidth rule gives h = {h} at t = {t}, outside (0, {delta}]")]
    InvalidBandwidthRule { t: f64, h: f64, delta: f64 },
    #[error("rate regression needs at least 3 horizons, got {0}")]
    TooFewHorizons(usize),
    #[error("horizon T = {t} has {n} defined replicates, need at least {min}")]
    TooFewDefined { t: f64, n: usize, min: usize },
    #[error("error quantile at T = {t} is {q}; cannot take its logarithm")]
    NonPositiveQuantile { t: f64, q: f64 },
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("interval [{a}, {b}] has zero invariant mass")]
    ZeroMass { a: f64, b: f64 },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<DiagnosticsError>,
    },
}

fn in_replicate<E: Into<DiagnosticsError>>(replicate: u64) -> impl FnOnce(E) -> DiagnosticsError {
    move |e| DiagnosticsError::Replicate {
        replicate,
        source: Box::new(e.into()),
    }
}

/// Shape of the acceptance band of a statistic at threshold `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// `1/m < S < m`.
    Ratio,
    /// `|S| < m`.
    Symmetric,
    /// `S < m` for nonnegative statistics.
    Upper,
}

impl Band {
    #[inline]
    pub fn contains(self, s: f64, m: f64) -> bool {
        match self {
            Band::Ratio => s > 1.0 / m && s < m,
            Band::Symmetric => s.abs() < m,
            Band::Upper => s < m,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Ratio => "ratio",
            Band::Symmetric => "symmetric",
            Band::Upper => "upper",
        }
    }
}

/// Empirical band coverage. `coverage[i][j]` is the fraction of all
/// replicates whose statistic at `checkpoints[j]` is defined and inside the
/// band at `thresholds[i]`; undefined entries are never covered and are
/// reported in `undefined_fraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightnessCurve {
    pub statistic_name: String,
    pub band: Band,
    pub checkpoints: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub coverage: Vec<Vec<f64>>,
    pub undefined_fraction: Vec<f64>,
    pub n_reps: usize,
}

impl TightnessCurve {
    /// Coverage at threshold `m` and the last checkpoint, if `m` is one of
    /// the thresholds.
    pub fn final_coverage(&self, m: f64) -> Option<f64> {
        let i = self.thresholds.iter().position(|&x| x == m)?;
        self.coverage[i].last().copied()
    }
}

fn check_layout(checkpoints: &[f64], samples: &[Vec<f64>]) -> Result<usize, DiagnosticsError> {
    if samples.is_empty() || samples[0].is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    let n = samples[0].len();
    if samples.len() != checkpoints.len() || samples.iter().any(|r| r.len() != n) {
        return Err(DiagnosticsError::Shape);
    }
    Ok(n)
}

pub fn tightness_curve(
    statistic_name: &str,
    band: Band,
    checkpoints: &[f64],
    samples: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<TightnessCurve, DiagnosticsError> {
    let n = check_layout(checkpoints, samples)?;
    if n < MIN_REPLICATES {
        return Err(DiagnosticsError::TooFewReplicates { n, min: MIN_REPLICATES });
    }
    if thresholds.is_empty() || thresholds[0] <= 0.0 || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DiagnosticsError::InvalidThresholds);
    }
    let coverage = thresholds
        .iter()
        .map(|&m| {
            samples
                .iter()
                .map(|row| row.iter().filter(|s| !s.is_nan() && band.contains(**s, m)).count() as f64 / n as f64)
                .collect()
        })
        .collect();
    let undefined_fraction = samples
        .iter()
        .map(|row| row.iter().filter(|s| s.is_nan()).count() as f64 / n as f64)
        .collect();
    Ok(TightnessCurve {
        statistic_name: statistic_name.to_string(),
        band,
        checkpoints: checkpoints.to_vec(),
        thresholds: thresholds.to_vec(),
        coverage,
        undefined_fraction,
        n_reps: n,
    })
}

fn positive_mass(model: &DiffusionModel, (a, b): (f64, f64)) -> Result<f64, DiagnosticsError> {
    let m = invariant_mass(model, a, b)?;
    if m > 0.0 {
        Ok(m)
    } else {
        Err(DiagnosticsError::ZeroMass { a, b })
    }
}

/// Per-checkpoint summary of `∫f(X)/∫g(X)` across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    pub checkpoints: Vec<f64>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// Replicates excluded because the denominator was zero.
    pub excluded: Vec<usize>,
    pub n_paths: usize,
    /// `μ(f)/μ(g)`.
    pub theoretical: f64,
}

impl RatioSummary {
    /// Builds the summary from per-replicate `(numerator, denominator)`
    /// series.
    pub fn from_replicates(checkpoints: &[f64], per_rep: &[(Vec<f64>, Vec<f64>)], theoretical: f64) -> Self {
        let mut s = Self {
            checkpoints: checkpoints.to_vec(),
            median: Vec::new(),
            q25: Vec::new(),
            q75: Vec::new(),
            excluded: Vec::new(),
            n_paths: per_rep.len(),
            theoretical,
        };
        for j in 0..checkpoints.len() {
            let ratios: Vec<f64> = per_rep
                .iter()
                .filter(|(_, g)| g[j] > 0.0)
                .map(|(f, g)| f[j] / g[j])
                .collect();
            s.excluded.push(per_rep.len() - ratios.len());
            s.median.push(stats::median(&ratios));
            s.q25.push(stats::quantile(&ratios, 0.25));
            s.q75.push(stats::quantile(&ratios, 0.75));
        }
        s
    }
}

/// Ratio of the occupation times of `f_interval` and `g_interval` along
/// replicates `0..n_paths` of `template`, against `μ(f)/μ(g)`.
pub fn chacon_ornstein_check(
    model: &DiffusionModel,
    f_interval: (f64, f64),
    g_interval: (f64, f64),
    template: &PathConfig,
    n_paths: u64,
    workers: Option<usize>,
) -> Result<RatioSummary, DiagnosticsError> {
    if n_paths == 0 {
        return Err(DiagnosticsError::Empty);
    }
    let theoretical = positive_mass(model, f_interval)? / positive_mass(model, g_interval)?;
    template.validate().map_err(FunctionalError::from)?;
    let steps = checkpoint_steps(&template.checkpoints, template.dt).map_err(FunctionalError::from)?;
    let per_rep = try_replicate_map(n_paths, workers, |i| {
        let cfg = template.replicate(i);
        let stream = PathStream { model, config: &cfg };
        let mut acc = (
            IndicatorAcc::new(f_interval.0, f_interval.1, 1.0, cfg.dt),
            IndicatorAcc::new(g_interval.0, g_interval.1, 1.0, cfg.dt),
        );
        let snaps = run_accumulator(&stream, &steps, &mut acc).map_err(in_replicate(i))?;
        Ok::<_, DiagnosticsError>(snaps.into_iter().unzip())
    })?;
    Ok(RatioSummary::from_replicates(
        &template.checkpoints,
        &per_rep,
        theoretical,
    ))
}

/// `sup_y |L̄_t^y / v̂_t - σ²(y)μ(y)|` per checkpoint, with a Monte Carlo
/// noise scale `max_y SE(L^y - l(y) V) / v̂_t` for the same quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoError {
    pub checkpoints: Vec<f64>,
    pub grid: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub sup_error: Vec<f64>,
    pub noise: Vec<f64>,
    /// Grid point attaining the supremum.
    pub argmax: Vec<f64>,
    /// `L̄_t^y / v̂_t`, `normalized[i][j]` at `grid[i]`, `checkpoints[j]`.
    pub normalized: Vec<Vec<f64>>,
    /// `σ²(y)μ(y)` on the grid.
    pub target: Vec<f64>,
}

impl ScoError {
    /// Whether `e_{k+1} ≤ e_k + factor · max(noise_k, noise_{k+1})` along
    /// the checkpoints.
    pub fn nonincreasing_within_noise(&self, factor: f64) -> bool {
        (1..self.sup_error.len())
            .all(|k| self.sup_error[k] <= self.sup_error[k - 1] + factor * self.noise[k - 1].max(self.noise[k]))
    }
}

fn check_window(model: &DiffusionModel, grid: &[f64]) -> Result<(), DiagnosticsError> {
    let h = &model.holder;
    let (lo, hi) = (h.x0 - h.delta, h.x0 + h.delta);
    let slack = 1e-12 * h.delta.max(1.0);
    match grid.iter().find(|&&y| y < lo - slack || y > hi + slack) {
        Some(&y) => Err(DiagnosticsError::GridOutsideWindow { y, lo, hi }),
        None => Ok(()),
    }
}

/// Uniform error from per-replicate local-time fields (`fields[rep][y][t]`)
/// and observable values (`v[rep][t]`) on the same replicates.
pub fn sco_from_samples(
    model: &DiffusionModel,
    grid: &[f64],
    checkpoints: &[f64],
    fields: &[Vec<Vec<f64>>],
    v: &[Vec<f64>],
) -> Result<ScoError, DiagnosticsError> {
    if fields.is_empty() || grid.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    if fields.len() != v.len() {
        return Err(DiagnosticsError::Shape);
    }
    check_window(model, grid)?;
    let target = grid
        .iter()
        .map(|&y| Ok(model.sigma(y).powi(2) * invariant_density(model, y)?))
        .collect::<Result<Vec<f64>, DiagnosticsError>>()?;
    let curve = EquivalentCurve::from_replicates(checkpoints, v);
    let mut out = ScoError {
        checkpoints: checkpoints.to_vec(),
        grid: grid.to_vec(),
        v_hat: curve.v_hat.clone(),
        sup_error: Vec::new(),
        noise: Vec::new(),
        argmax: Vec::new(),
        normalized: vec![Vec::new(); grid.len()],
        target: target.clone(),
    };
    for (j, &t) in checkpoints.iter().enumerate() {
        let vh = curve.v_hat[j];
        if !(vh > 0.0) {
            return Err(DiagnosticsError::ZeroEquivalent { t });
        }
        let (mut sup, mut arg, mut noise) = (0.0f64, grid[0], 0.0f64);
        for (i, &y) in grid.iter().enumerate() {
            let l: Vec<f64> = fields.iter().map(|f| f[i][j]).collect();
            let ratio = stats::mean(&l) / vh;
            out.normalized[i].push(ratio);
            let err = (ratio - target[i]).abs();
            if err > sup {
                sup = err;
                arg = y;
            }
            let resid: Vec<f64> = l.iter().zip(v).map(|(li, vi)| li - target[i] * vi[j]).collect();
            noise = noise.max(stats::std_error(&resid) / vh);
        }
        out.sup_error.push(sup);
        out.argmax.push(arg);
        out.noise.push(noise);
    }
    Ok(out)
}

/// Uniform convergence check of `E L_t^y / v_t` on `grid`, which must lie in
/// the model's Hölder window.
pub fn uniform_sco_error(
    model: &DiffusionModel,
    spec: &EquivalentSpec,
    grid: &[f64],
    epsilon: f64,
    template: &PathConfig,
    n_paths: u64,
    workers: Option<usize>,
) -> Result<ScoError, DiagnosticsError> {
    if n_paths == 0 || grid.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    check_window(model, grid)?;
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FunctionalError::InvalidGrid.into());
    }
    if !(epsilon > 0.0) {
        return Err(FunctionalError::InvalidEpsilon(epsilon).into());
    }
    let base = PathConfig {
        x_init: spec.x_init,
        ..template.clone()
    };
    base.validate().map_err(FunctionalError::from)?;
    let steps = checkpoint_steps(&base.checkpoints, base.dt).map_err(FunctionalError::from)?;
    let per_rep = try_replicate_map(n_paths, workers, |i| {
        let cfg = base.replicate(i);
        let stream = PathStream { model, config: &cfg };
        let mut acc = (spec.accumulator(cfg.dt), FieldAcc::new(model, grid, epsilon, cfg.dt));
        let snaps = run_accumulator(&stream, &steps, &mut acc).map_err(in_replicate(i))?;
        let (v, cols): (Vec<f64>, Vec<Vec<f64>>) = snaps.into_iter().unzip();
        let field = (0..grid.len()).map(|y| cols.iter().map(|c| c[y]).collect()).collect();
        Ok::<_, DiagnosticsError>((field, v))
    })?;
    let (fields, v): (Vec<_>, Vec<_>) = per_rep.into_iter().unzip();
    sco_from_samples(model, grid, &base.checkpoints, &fields, &v)
}

/// `E ∫ φ((X - x0)/h_t) ψ(X) ds / (h_t v̂_t)` per checkpoint, against the
/// limit `ψ(x0) μ(x0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelAfLimit {
    pub checkpoints: Vec<f64>,
    pub h: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub target: f64,
}

struct WeightedKernelAcc<'p> {
    x0: f64,
    h: f64,
    kernel: Kernel,
    psi: &'p (dyn Fn(f64) -> f64 + Sync),
    dt: f64,
    sum: f64,
}

impl Accumulator for WeightedKernelAcc<'_> {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        let u = (s.x - self.x0) / self.h;
        if u.abs() < 1.0 {
            self.sum += self.kernel.phi(u) * (self.psi)(s.x);
        }
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.sum * self.dt
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kernel_af_limit_check(
    model: &DiffusionModel,
    x0: f64,
    psi: &(dyn Fn(f64) -> f64 + Sync),
    h_rule: &dyn Fn(f64) -> f64,
    kernel: Kernel,
    spec: &EquivalentSpec,
    template: &PathConfig,
    n_paths: u64,
    workers: Option<usize>,
) -> Result<KernelAfLimit, DiagnosticsError> {
    if n_paths == 0 {
        return Err(DiagnosticsError::Empty);
    }
    let base = PathConfig {
        x_init: spec.x_init,
        ..template.clone()
    };
    base.validate().map_err(FunctionalError::from)?;
    let steps = checkpoint_steps(&base.checkpoints, base.dt).map_err(FunctionalError::from)?;
    let delta = model.holder.delta;
    let h: Vec<f64> = base.checkpoints.iter().map(|&t| h_rule(t)).collect();
    for (&t, &h) in base.checkpoints.iter().zip(&h) {
        if !(h > 0.0 && h <= delta) {
            return Err(DiagnosticsError::InvalidBandwidthRule { t, h, delta });
        }
    }
    let per_rep = try_replicate_map(n_paths, workers, |i| {
        let cfg = base.replicate(i);
        let stream = PathStream { model, config: &cfg };
        // one accumulator per checkpoint, each read at its own checkpoint
        let bank: Vec<WeightedKernelAcc> = h
            .iter()
            .map(|&h| WeightedKernelAcc {
                x0,
                h,
                kernel,
                psi,
                dt: cfg.dt,
                sum: 0.0,
            })
            .collect();
        let mut acc = (spec.accumulator(cfg.dt), bank);
        let snaps = run_accumulator(&stream, &steps, &mut acc).map_err(in_replicate(i))?;
        let v: Vec<f64> = snaps.iter().map(|s| s.0).collect();
        let a: Vec<f64> = snaps.iter().enumerate().map(|(j, s)| s.1[j]).collect();
        Ok::<_, DiagnosticsError>((v, a))
    })?;
    let (v, a): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_rep.into_iter().unzip();
    let curve = EquivalentCurve::from_replicates(&base.checkpoints, &v);
    let mut value = Vec::new();
    let mut stderr = Vec::new();
    for (j, &t) in base.checkpoints.iter().enumerate() {
        let norm = h[j] * curve.v_hat[j];
        if !(curve.v_hat[j] > 0.0) {
            return Err(DiagnosticsError::ZeroEquivalent { t });
        }
        let col: Vec<f64> = a.iter().map(|r| r[j]).collect();
        value.push(stats::mean(&col) / norm);
        stderr.push(stats::std_error(&col) / norm);
    }
    Ok(KernelAfLimit {
        checkpoints: base.checkpoints.clone(),
        h,
        value,
        stderr,
        target: psi(x0) * invariant_density(model, x0)?,
    })
}

/// Least-squares fit of `log q-quantile(|b̂ - b(x0)|)` against `log T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub quantile_used: f64,
    pub t_grid: Vec<f64>,
}

/// `abs_errors[k]` holds the replicate errors at horizon `t_grid[k]`; NaN
/// entries are undefined and skipped.
pub fn rate_regression(abs_errors: &[Vec<f64>], t_grid: &[f64], q: f64) -> Result<RateFit, DiagnosticsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(DiagnosticsError::InvalidQuantile(q));
    }
    if t_grid.len() < 3 {
        return Err(DiagnosticsError::TooFewHorizons(t_grid.len()));
    }
    if abs_errors.len() != t_grid.len() {
        return Err(DiagnosticsError::Shape);
    }
    let mut xs = Vec::with_capacity(t_grid.len());
    let mut ys = Vec::with_capacity(t_grid.len());
    for (errs, &t) in abs_errors.iter().zip(t_grid) {
        let defined: Vec<f64> = errs.iter().copied().filter(|e| !e.is_nan()).collect();
        if defined.len() < MIN_DEFINED_PER_HORIZON {
            return Err(DiagnosticsError::TooFewDefined {
                t,
                n: defined.len(),
                min: MIN_DEFINED_PER_HORIZON,
            });
        }
        let qv = stats::quantile(&defined, q);
        if !(qv > 0.0 && qv.is_finite()) {
            return Err(DiagnosticsError::NonPositiveQuantile { t, q: qv });
        }
        xs.push(t.ln());
        ys.push(qv.ln());
    }
    let (slope, intercept, stderr_slope) = ols(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        stderr_slope,
        quantile_used: q,
        t_grid: t_grid.to_vec(),
    })
}

/// Simple linear regression `y = a + b x`; returns `(b, a, se(b))`.
fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = stats::mean(xs);
    let my = stats::mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = if n > 2.0 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, se)
}

/// `R_t |b̂ - b(x0)|` per checkpoint and replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledErrorSamples {
    pub checkpoints: Vec<f64>,
    /// `values[t][replicate]`; NaN where the estimator is undefined.
    pub values: Vec<Vec<f64>>,
    /// Replicates with `V_t = 0`, whose statistic is 0 by convention.
    pub pre_entry: Vec<usize>,
    /// Replicates with an undefined estimator after entry.
    pub undefined: Vec<usize>,
}

pub fn scaled_error_samples(traces: &[AdaptiveTrace], b_true: f64) -> Result<ScaledErrorSamples, DiagnosticsError> {
    let first = traces.first().ok_or(DiagnosticsError::Empty)?;
    let checkpoints: Vec<f64> = first.rows.iter().map(|r| r.t).collect();
    let same = |tr: &AdaptiveTrace| {
        tr.rows.len() == checkpoints.len() && tr.rows.iter().zip(&checkpoints).all(|(r, &t)| r.t == t)
    };
    if !traces.iter().all(same) {
        return Err(DiagnosticsError::Shape);
    }
    let mut out = ScaledErrorSamples {
        checkpoints: checkpoints.clone(),
        values: vec![Vec::with_capacity(traces.len()); checkpoints.len()],
        pre_entry: vec![0; checkpoints.len()],
        undefined: vec![0; checkpoints.len()],
    };
    for tr in traces {
        for (j, row) in tr.rows.iter().enumerate() {
            let s = if row.r == 0.0 {
                out.pre_entry[j] += 1;
                0.0
            } else if !row.defined {
                out.undefined[j] += 1;
                f64::NAN
            } else {
                row.r * (row.b_hat - b_true).abs()
            };
            out.values[j].push(s);
        }
    }
    Ok(out)
}

/// Positive bandwidths `δ 2^{-j}`, `j < 16`, that the step `dt` resolves
/// (`h ≥ sqrt(dt)`), in decreasing order.
pub fn h_grid(delta: f64, dt: f64) -> Vec<f64> {
    let floor = dt.sqrt();
    (0..H_GRID_LEVELS)
        .map(|j| delta * 2f64.powi(-j))
        .filter(|&h| h >= floor)
        .collect()
}

/// What the tightness ensemble records besides the adaptive estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    /// Interval whose occupation time is the generic additive functional.
    pub af_interval: (f64, f64),
    /// Local-time grid.
    pub grid: Vec<f64>,
    pub epsilon: f64,
    /// Positive bandwidths; the `h = 0` endpoint is appended automatically.
    pub h_grid: Vec<f64>,
}

/// Everything the tightness statistics need from one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    /// Observable functional `V_t`.
    pub v: Vec<f64>,
    /// Occupation time of the AF interval.
    pub af: Vec<f64>,
    /// Occupation local time, `field[y][t]`.
    pub field: Vec<Vec<f64>>,
    /// `(1/h) A_t^h`, `kernel_af[h][t]`; the last row is the `h = 0` limit
    /// `L_t^{x0}/σ²(x0)`.
    pub kernel_af: Vec<Vec<f64>>,
    pub trace: AdaptiveTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub checkpoints: Vec<f64>,
    pub options: EnsembleOptions,
    pub params: AdaptiveParams,
    pub records: Vec<ReplicateRecord>,
}

/// A statistic's replicate samples and the band it is judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticSamples {
    pub name: &'static str,
    pub band: Band,
    pub samples: Vec<Vec<f64>>,
}

/// Runs every replicate in two passes: the first records `V_t` and all
/// bandwidth-free functionals, the second the adaptive estimator.
pub fn run_ensemble(
    model: &DiffusionModel,
    spec: &EquivalentSpec,
    params: AdaptiveParams,
    template: &PathConfig,
    n_paths: u64,
    workers: Option<usize>,
    options: &EnsembleOptions,
) -> Result<Ensemble, DiagnosticsError> {
    if n_paths == 0 {
        return Err(DiagnosticsError::Empty);
    }
    if options.grid.is_empty() || options.grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FunctionalError::InvalidGrid.into());
    }
    if !(options.epsilon > 0.0) {
        return Err(FunctionalError::InvalidEpsilon(options.epsilon).into());
    }
    if let Some(&h) = options.h_grid.iter().find(|&&h| !(h > 0.0)) {
        return Err(FunctionalError::InvalidBandwidth(h).into());
    }
    let base = PathConfig {
        x_init: spec.x_init,
        ..template.clone()
    };
    base.validate().map_err(FunctionalError::from)?;
    let steps = checkpoint_steps(&base.checkpoints, base.dt).map_err(FunctionalError::from)?;
    let s0 = model.sigma(params.x0).powi(2);
    let records = try_replicate_map(n_paths, workers, |i| {
        let cfg = base.replicate(i);
        let stream = PathStream { model, config: &cfg };
        let dt = cfg.dt;
        let (a, b) = options.af_interval;
        let mut acc = (
            spec.accumulator(dt),
            IndicatorAcc::new(a, b, 1.0, dt),
            FieldAcc::new(model, &options.grid, options.epsilon, dt),
            options
                .h_grid
                .iter()
                .map(|&h| KernelAfAcc::new(params.x0, h, params.kernel, dt))
                .collect::<Vec<_>>(),
            OccupationAcc::new(model, params.x0, options.epsilon, dt),
        );
        let snaps = run_accumulator(&stream, &steps, &mut acc).map_err(in_replicate(i))?;
        let v: Vec<f64> = snaps.iter().map(|s| s.0).collect();
        let af = snaps.iter().map(|s| s.1).collect();
        let field = (0..options.grid.len())
            .map(|y| snaps.iter().map(|s| s.2[y]).collect())
            .collect();
        let mut kernel_af: Vec<Vec<f64>> = options
            .h_grid
            .iter()
            .enumerate()
            .map(|(k, &h)| snaps.iter().map(|s| s.3[k] / h).collect())
            .collect();
        kernel_af.push(snaps.iter().map(|s| s.4 / s0).collect());
        let trace =
            adaptive_with_observable(&stream, Some(model), params, &v, &base.checkpoints).map_err(in_replicate(i))?;
        Ok::<_, DiagnosticsError>(ReplicateRecord {
            v,
            af,
            field,
            kernel_af,
            trace,
        })
    })?;
    Ok(Ensemble {
        checkpoints: base.checkpoints,
        options: options.clone(),
        params,
        records,
    })
}

/// `max(sup/v, v/inf)`: inside `(1/m, m)` exactly when both the infimum and
/// the supremum of the normalized family are.
fn joint_band(values: impl Iterator<Item = f64>, v: f64) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    (hi / v).max(v / lo)
}

impl Ensemble {
    pub fn equivalent(&self) -> EquivalentCurve {
        let v: Vec<Vec<f64>> = self.records.iter().map(|r| r.v.clone()).collect();
        EquivalentCurve::from_replicates(&self.checkpoints, &v)
    }

    pub fn traces(&self) -> Vec<AdaptiveTrace> {
        self.records.iter().map(|r| r.trace.clone()).collect()
    }

    pub fn sco_error(&self, model: &DiffusionModel) -> Result<ScoError, DiagnosticsError> {
        let fields: Vec<_> = self.records.iter().map(|r| r.field.clone()).collect();
        let v: Vec<_> = self.records.iter().map(|r| r.v.clone()).collect();
        sco_from_samples(model, &self.options.grid, &self.checkpoints, &fields, &v)
    }

    /// Positive bandwidths followed by the `h = 0` endpoint.
    pub fn bandwidths(&self) -> Vec<f64> {
        let mut h = self.options.h_grid.clone();
        h.push(0.0);
        h
    }

    /// Normalized statistics that should stay tight as t grows,
    /// each with its band, plus the scaled estimation error.
    pub fn statistics(&self, b_true: f64) -> Result<Vec<StatisticSamples>, DiagnosticsError> {
        let v_hat = self.equivalent().v_hat;
        if let Some(j) = v_hat.iter().position(|v| !(*v > 0.0)) {
            return Err(DiagnosticsError::ZeroEquivalent { t: self.checkpoints[j] });
        }
        let h_det = v_hat
            .iter()
            .map(|&v| bandwidth_and_rate(v, self.params.alpha, self.params.delta).map(|(h, _)| h))
            .collect::<Result<Vec<_>, _>>()?;
        let per_t = |f: &dyn Fn(&ReplicateRecord, usize) -> f64| -> Vec<Vec<f64>> {
            (0..self.checkpoints.len())
                .map(|j| self.records.iter().map(|r| f(r, j)).collect())
                .collect()
        };
        let scaled = scaled_error_samples(&self.traces(), b_true)?;
        Ok(vec![
            StatisticSamples {
                name: "af_ratio",
                band: Band::Ratio,
                samples: per_t(&|r, j| r.af[j] / v_hat[j]),
            },
            StatisticSamples {
                name: "local_time_band",
                band: Band::Ratio,
                samples: per_t(&|r, j| joint_band(r.field.iter().map(|row| row[j]), v_hat[j])),
            },
            StatisticSamples {
                name: "kernel_af_band",
                band: Band::Ratio,
                samples: per_t(&|r, j| joint_band(r.kernel_af.iter().map(|row| row[j]), v_hat[j])),
            },
            StatisticSamples {
                name: "kernel_af_random_h",
                band: Band::Ratio,
                samples: per_t(&|r, j| r.trace.rows[j].denom / (r.trace.rows[j].h * v_hat[j])),
            },
            StatisticSamples {
                name: "kernel_martingale_random_h",
                band: Band::Symmetric,
                samples: per_t(&|r, j| r.trace.rows[j].martingale / (h_det[j] * v_hat[j]).sqrt()),
            },
            StatisticSamples {
                name: "scaled_error",
                band: Band::Upper,
                samples: scaled.values,
            },
        ])
    }

    pub fn tightness(&self, b_true: f64, thresholds: &[f64]) -> Result<Vec<TightnessCurve>, DiagnosticsError> {
        self.statistics(b_true)?
            .into_iter()
            .map(|s| tightness_curve(s.name, s.band, &self.checkpoints, &s.samples, thresholds))
            .collect()
    }
}
