//! Path functionals: additive functionals, kernel additive functionals and
//! martingales, and two local-time estimators.
//!
//! Every functional is an [`Accumulator`] fed by one pass over a
//! [`StepSource`]; tuples of accumulators share a single pass, which is how
//! the experiment drivers compute many statistics per replicate.

use thiserror::Error;

use crate::model::{DiffusionModel, Kernel};
use crate::sim::{checkpoint_steps, SimError, Step, StepSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("integrand is not finite at step {step} (x = {x})")]
    NonFinite { step: usize, x: f64 },
    #[error("path carries no driving-noise increments")]
    MissingNoise,
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("window half-width must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("local-time grid must be nonempty and sorted")]
    InvalidGrid,
    #[error("checkpoint step {step} is beyond the path length {n}")]
    CheckpointBeyondPath { step: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalKind {
    Af,
    LocalTimeTanaka,
    LocalTimeOccupation,
    KernelAf,
    KernelMartingale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSeries {
    pub checkpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: FunctionalKind,
}

/// Spatial-grid local-time estimates; `values[i][j]` is the estimate at
/// `grid[i]` and time `t[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    pub grid: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub epsilon: f64,
}

/// Default occupation window half-width, `5 sqrt(dt)`.
pub fn default_epsilon(dt: f64) -> f64 {
    5.0 * dt.sqrt()
}

/// Streaming state of a path functional.
pub trait Accumulator {
    type Output;
    fn step(&mut self, s: &Step);
    /// Value at the current time; `x_now` is the state at that time.
    fn snapshot(&mut self, x_now: f64) -> Self::Output;
}

/// Feeds `src` through `acc`, taking a snapshot at each checkpoint step.
pub fn run_accumulator<S: StepSource, A: Accumulator>(
    src: &S,
    steps: &[usize],
    acc: &mut A,
) -> Result<Vec<A::Output>, FunctionalError> {
    let n = src.n_steps();
    if let Some(&step) = steps.iter().find(|&&s| s > n) {
        return Err(FunctionalError::CheckpointBeyondPath { step, n });
    }
    let mut out = Vec::with_capacity(steps.len());
    let mut next = 0;
    let mut x_last = src.x_init();
    src.for_each_step(|s| {
        while next < steps.len() && steps[next] == s.k {
            out.push(acc.snapshot(s.x));
            next += 1;
        }
        acc.step(s);
        x_last = s.x_next;
    })?;
    while next < steps.len() {
        out.push(acc.snapshot(x_last));
        next += 1;
    }
    Ok(out)
}

macro_rules! tuple_accumulator {
    ($($name:ident : $idx:tt),+) => {
        impl<$($name: Accumulator),+> Accumulator for ($($name,)+) {
            type Output = ($($name::Output,)+);
            #[inline]
            fn step(&mut self, s: &Step) {
                $(self.$idx.step(s);)+
            }
            fn snapshot(&mut self, x_now: f64) -> Self::Output {
                ($(self.$idx.snapshot(x_now),)+)
            }
        }
    };
}

tuple_accumulator!(A: 0, B: 1);
tuple_accumulator!(A: 0, B: 1, C: 2);
tuple_accumulator!(A: 0, B: 1, C: 2, D: 3);
tuple_accumulator!(A: 0, B: 1, C: 2, D: 3, E: 4);
tuple_accumulator!(A: 0, B: 1, C: 2, D: 3, E: 4, G: 5);

impl<A: Accumulator> Accumulator for Vec<A> {
    type Output = Vec<A::Output>;
    #[inline]
    fn step(&mut self, s: &Step) {
        for a in self.iter_mut() {
            a.step(s);
        }
    }
    fn snapshot(&mut self, x_now: f64) -> Self::Output {
        self.iter_mut().map(|a| a.snapshot(x_now)).collect()
    }
}

/// `Σ f(x_k) dt` over steps before the snapshot.
pub struct AdditiveAcc<F> {
    f: F,
    dt: f64,
    sum: f64,
    bad: Option<(usize, f64)>,
}

impl<F: Fn(f64) -> f64> AdditiveAcc<F> {
    pub fn new(f: F, dt: f64) -> Self {
        Self {
            f,
            dt,
            sum: 0.0,
            bad: None,
        }
    }

    pub fn error(&self) -> Option<FunctionalError> {
        self.bad.map(|(step, x)| FunctionalError::NonFinite { step, x })
    }
}

impl<F: Fn(f64) -> f64> Accumulator for AdditiveAcc<F> {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        let v = (self.f)(s.x);
        if !v.is_finite() && self.bad.is_none() {
            self.bad = Some((s.k, s.x));
        }
        self.sum += v;
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.sum * self.dt
    }
}

/// Occupation time of `[a, b]` scaled by `c`.
pub struct IndicatorAcc {
    a: f64,
    b: f64,
    scale: f64,
    count: u64,
}

impl IndicatorAcc {
    pub fn new(a: f64, b: f64, c: f64, dt: f64) -> Self {
        Self {
            a,
            b,
            scale: c * dt,
            count: 0,
        }
    }
}

impl Accumulator for IndicatorAcc {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        if s.x >= self.a && s.x <= self.b {
            self.count += 1;
        }
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.count as f64 * self.scale
    }
}

/// `Σ φ((x_k - x0)/h) dt`.
pub struct KernelAfAcc {
    x0: f64,
    h: f64,
    kernel: Kernel,
    dt: f64,
    sum: f64,
}

impl KernelAfAcc {
    pub fn new(x0: f64, h: f64, kernel: Kernel, dt: f64) -> Self {
        Self {
            x0,
            h,
            kernel,
            dt,
            sum: 0.0,
        }
    }
}

impl Accumulator for KernelAfAcc {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        let u = (s.x - self.x0) / self.h;
        if u.abs() < 1.0 {
            self.sum += self.kernel.phi(u);
        }
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.sum * self.dt
    }
}

/// Left-point Itô sum `Σ φ((x_k - x0)/h) σ(x_k) dw_k`.
pub struct KernelMartingaleAcc<'m> {
    model: &'m DiffusionModel,
    x0: f64,
    h: f64,
    kernel: Kernel,
    sum: f64,
}

impl<'m> KernelMartingaleAcc<'m> {
    pub fn new(model: &'m DiffusionModel, x0: f64, h: f64, kernel: Kernel) -> Self {
        Self {
            model,
            x0,
            h,
            kernel,
            sum: 0.0,
        }
    }
}

impl Accumulator for KernelMartingaleAcc<'_> {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        let u = (s.x - self.x0) / self.h;
        if u.abs() < 1.0 {
            self.sum += self.kernel.phi(u) * self.model.sigma(s.x) * s.dw;
        }
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.sum
    }
}

/// Discrete Tanaka formula
/// `2[(x_n - y)⁺ - (x_0 - y)⁺ - Σ 1{x_k ≥ y}(x_{k+1} - x_k)]`.
pub struct TanakaAcc {
    y: f64,
    start: f64,
    sum: f64,
}

impl TanakaAcc {
    pub fn new(y: f64, x_init: f64) -> Self {
        Self {
            y,
            start: (x_init - y).max(0.0),
            sum: 0.0,
        }
    }
}

impl Accumulator for TanakaAcc {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        // ≥ rather than >: differs only on exact hits of y, which makes the
        // formula exact for monotone paths crossing y on a grid point
        if s.x >= self.y {
            self.sum += s.x_next - s.x;
        }
    }
    fn snapshot(&mut self, x_now: f64) -> f64 {
        2.0 * ((x_now - self.y).max(0.0) - self.start - self.sum)
    }
}

/// `σ²(y)/(2ε) Σ 1{|x_k - y| ≤ ε} dt`.
pub struct OccupationAcc {
    y: f64,
    eps: f64,
    scale: f64,
    dt: f64,
    count: u64,
}

impl OccupationAcc {
    pub fn new(model: &DiffusionModel, y: f64, eps: f64, dt: f64) -> Self {
        let s = model.sigma(y);
        Self {
            y,
            eps,
            scale: s * s / (2.0 * eps),
            dt,
            count: 0,
        }
    }
}

impl Accumulator for OccupationAcc {
    type Output = f64;
    #[inline]
    fn step(&mut self, s: &Step) {
        if (s.x - self.y).abs() <= self.eps {
            self.count += 1;
        }
    }
    fn snapshot(&mut self, _: f64) -> f64 {
        self.scale * (self.count as f64 * self.dt)
    }
}

/// Occupation estimator over a sorted grid in one pass. Each step adds one
/// to the contiguous run of grid points within `ε` of `x_k`, recorded in a
/// difference array, so the counts equal those of per-point estimators.
pub struct FieldAcc {
    grid: Vec<f64>,
    eps: f64,
    scales: Vec<f64>,
    dt: f64,
    diff: Vec<i64>,
}

impl FieldAcc {
    pub fn new(model: &DiffusionModel, grid: &[f64], eps: f64, dt: f64) -> Self {
        let scales = grid
            .iter()
            .map(|&y| {
                let s = model.sigma(y);
                s * s / (2.0 * eps)
            })
            .collect();
        Self {
            grid: grid.to_vec(),
            eps,
            scales,
            dt,
            diff: vec![0; grid.len() + 1],
        }
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut run = 0i64;
        self.diff[..self.grid.len()]
            .iter()
            .map(|d| {
                run += d;
                run as u64
            })
            .collect()
    }
}

impl Accumulator for FieldAcc {
    type Output = Vec<f64>;
    #[inline]
    fn step(&mut self, s: &Step) {
        let x = s.x;
        let eps = self.eps;
        let lo = self.grid.partition_point(|&y| x - y > eps);
        let hi = self.grid.partition_point(|&y| y - x <= eps);
        if lo < hi {
            self.diff[lo] += 1;
            self.diff[hi] -= 1;
        }
    }
    fn snapshot(&mut self, _: f64) -> Vec<f64> {
        let dt = self.dt;
        self.counts()
            .into_iter()
            .zip(&self.scales)
            .map(|(c, s)| s * (c as f64 * dt))
            .collect()
    }
}

fn series<S: StepSource, A: Accumulator<Output = f64>>(
    src: &S,
    checkpoints: &[f64],
    mut acc: A,
    kind: FunctionalKind,
) -> Result<(FunctionalSeries, A), FunctionalError> {
    let steps = checkpoint_steps(checkpoints, src.dt())?;
    let values = run_accumulator(src, &steps, &mut acc)?;
    Ok((
        FunctionalSeries {
            checkpoints: checkpoints.to_vec(),
            values,
            kind,
        },
        acc,
    ))
}

fn check_h(h: f64) -> Result<(), FunctionalError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(FunctionalError::InvalidBandwidth(h))
    }
}

/// `A_t = ∫₀ᵗ f(X_s) ds` as a left-point Riemann sum.
pub fn additive_functional<S: StepSource, F: Fn(f64) -> f64>(
    src: &S,
    f: F,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, FunctionalError> {
    let acc = AdditiveAcc::new(f, src.dt());
    let (out, acc) = series(src, checkpoints, acc, FunctionalKind::Af)?;
    match acc.error() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `A_t^h = ∫₀ᵗ φ((X_s - x0)/h) ds`.
pub fn kernel_af<S: StepSource>(
    src: &S,
    x0: f64,
    h: f64,
    kernel: Kernel,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, FunctionalError> {
    check_h(h)?;
    let acc = KernelAfAcc::new(x0, h, kernel, src.dt());
    series(src, checkpoints, acc, FunctionalKind::KernelAf).map(|(s, _)| s)
}

/// `M_t^h = ∫₀ᵗ φ((X_s - x0)/h) σ(X_s) dW_s`, Itô left-point sum.
pub fn kernel_martingale<S: StepSource>(
    src: &S,
    model: &DiffusionModel,
    x0: f64,
    h: f64,
    kernel: Kernel,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, FunctionalError> {
    check_h(h)?;
    if !src.has_noise() {
        return Err(FunctionalError::MissingNoise);
    }
    let acc = KernelMartingaleAcc::new(model, x0, h, kernel);
    series(src, checkpoints, acc, FunctionalKind::KernelMartingale).map(|(s, _)| s)
}

/// Local time at `y` from the discrete Tanaka formula. Small negative
/// values are discretization noise; values below `-10 sqrt(dt)` are logged.
pub fn tanaka_local_time<S: StepSource>(
    src: &S,
    y: f64,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, FunctionalError> {
    let acc = TanakaAcc::new(y, src.x_init());
    let (out, _) = series(src, checkpoints, acc, FunctionalKind::LocalTimeTanaka)?;
    let floor = -10.0 * src.dt().sqrt();
    for (t, v) in out.checkpoints.iter().zip(&out.values) {
        if *v < floor {
            log::warn!("Tanaka local time at y = {y}, t = {t} is {v}, below {floor}");
        }
    }
    Ok(out)
}

/// Local time at `y` from the occupation of `[y - ε, y + ε]`, scaled by
/// `σ²(y)/(2ε)`.
pub fn occupation_local_time<S: StepSource>(
    src: &S,
    model: &DiffusionModel,
    y: f64,
    epsilon: f64,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, FunctionalError> {
    if !(epsilon > 0.0) {
        return Err(FunctionalError::InvalidEpsilon(epsilon));
    }
    let acc = OccupationAcc::new(model, y, epsilon, src.dt());
    series(src, checkpoints, acc, FunctionalKind::LocalTimeOccupation).map(|(s, _)| s)
}

/// Occupation local time at every grid point, sharing one pass.
pub fn local_time_field<S: StepSource>(
    src: &S,
    model: &DiffusionModel,
    grid: &[f64],
    epsilon: f64,
    checkpoints: &[f64],
) -> Result<LocalTimeField, FunctionalError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FunctionalError::InvalidGrid);
    }
    if !(epsilon > 0.0) {
        return Err(FunctionalError::InvalidEpsilon(epsilon));
    }
    let steps = checkpoint_steps(checkpoints, src.dt())?;
    let mut acc = FieldAcc::new(model, grid, epsilon, src.dt());
    let snaps = run_accumulator(src, &steps, &mut acc)?;
    let values = (0..grid.len())
        .map(|i| snaps.iter().map(|col| col[i]).collect())
        .collect();
    Ok(LocalTimeField {
        grid: grid.to_vec(),
        t: checkpoints.to_vec(),
        values,
        epsilon,
    })
}
