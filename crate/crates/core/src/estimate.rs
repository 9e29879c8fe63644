//! Deterministic equivalent, observable normalizing functional, the
//! bandwidth/rate rule and the Nadaraya–Watson drift estimator.

use thiserror::Error;

use crate::functionals::{
    run_accumulator, Accumulator, FunctionalError, FunctionalKind, FunctionalSeries, IndicatorAcc,
};
use crate::model::{invariant_mass, DiffusionModel, Kernel, ModelError};
use crate::par::try_replicate_map;
use crate::sim::{checkpoint_steps, PathConfig, PathStream, Step, StepSource};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Hölder exponent alpha = {0} is outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("bandwidth cap delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("observable functional value must be nonnegative, got {0}")]
    NegativeV(f64),
    #[error("at least one replicate is required")]
    NoReplicates,
    #[error("normalizing interval [{a}, {b}] has zero invariant mass")]
    ZeroMass { a: f64, b: f64 },
    #[error("normalization c = {c} does not match 1/μ([a, b]) = {expected}")]
    Normalization { c: f64, expected: f64 },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<EstimateError>,
    },
}

/// `g = c 1_[a,b]` with `μ(g) = 1` (or `c = 1` in blind mode), and the
/// initial point of the path (the initial law is a point mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalentSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x_init: f64,
}

impl EquivalentSpec {
    pub fn normalized(model: &DiffusionModel, a: f64, b: f64, x_init: f64) -> Result<Self, EstimateError> {
        let mass = invariant_mass(model, a, b)?;
        if !(mass > 0.0) {
            return Err(EstimateError::ZeroMass { a, b });
        }
        Ok(Self {
            a,
            b,
            c: 1.0 / mass,
            x_init,
        })
    }

    /// Unnormalized occupation time of `[a, b]`.
    pub fn blind(a: f64, b: f64, x_init: f64) -> Self {
        Self { a, b, c: 1.0, x_init }
    }

    pub fn validate(&self, model: &DiffusionModel) -> Result<(), EstimateError> {
        let expected = 1.0 / invariant_mass(model, self.a, self.b)?;
        if ((self.c - expected) / expected).abs() > 1e-8 {
            return Err(EstimateError::Normalization { c: self.c, expected });
        }
        Ok(())
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        if x >= self.a && x <= self.b {
            self.c
        } else {
            0.0
        }
    }

    pub fn accumulator(&self, dt: f64) -> IndicatorAcc {
        IndicatorAcc::new(self.a, self.b, self.c, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentCurve {
    pub checkpoints: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: u64,
}

impl EquivalentCurve {
    /// Builds the curve from per-replicate observable values, one vector per
    /// replicate.
    pub fn from_replicates(checkpoints: &[f64], per_rep: &[Vec<f64>]) -> Self {
        let cols: Vec<Vec<f64>> = (0..checkpoints.len())
            .map(|j| per_rep.iter().map(|r| r[j]).collect())
            .collect();
        Self {
            checkpoints: checkpoints.to_vec(),
            v_hat: cols.iter().map(|c| stats::mean(c)).collect(),
            stderr: cols.iter().map(|c| stats::std_error(c)).collect(),
            n_paths: per_rep.len() as u64,
        }
    }
}

/// Monte Carlo estimate of `v_t = E ∫₀ᵗ g(X_s) ds` over replicates
/// `0..n_paths` of `template` started from `spec.x_init`.
pub fn deterministic_equivalent(
    model: &DiffusionModel,
    spec: &EquivalentSpec,
    template: &PathConfig,
    n_paths: u64,
    workers: Option<usize>,
) -> Result<EquivalentCurve, EstimateError> {
    if n_paths == 0 {
        return Err(EstimateError::NoReplicates);
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
        let mut acc = spec.accumulator(cfg.dt);
        run_accumulator(&stream, &steps, &mut acc).map_err(|e| EstimateError::Replicate {
            replicate: i,
            source: Box::new(e.into()),
        })
    })?;
    Ok(EquivalentCurve::from_replicates(&base.checkpoints, &per_rep))
}

/// `V_t = ∫₀ᵗ g(X_s) ds` along one path.
pub fn observable_iaf<S: StepSource>(
    src: &S,
    spec: &EquivalentSpec,
    checkpoints: &[f64],
) -> Result<FunctionalSeries, EstimateError> {
    let steps = checkpoint_steps(checkpoints, src.dt()).map_err(FunctionalError::from)?;
    let mut acc = spec.accumulator(src.dt());
    let values = run_accumulator(src, &steps, &mut acc)?;
    Ok(FunctionalSeries {
        checkpoints: checkpoints.to_vec(),
        values,
        kind: FunctionalKind::Af,
    })
}

pub fn check_alpha(alpha: f64) -> Result<(), EstimateError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(EstimateError::InvalidAlpha(alpha))
    }
}

/// Bandwidth `H = V^{-1/(2α+1)} ∧ δ` and rate `R = V^{α/(2α+1)}`, with
/// `H = δ`, `R = 0` when `V = 0`.
pub fn bandwidth_and_rate(v: f64, alpha: f64, delta: f64) -> Result<(f64, f64), EstimateError> {
    check_alpha(alpha)?;
    if !(delta > 0.0) {
        return Err(EstimateError::InvalidDelta(delta));
    }
    if !(v >= 0.0) {
        return Err(EstimateError::NegativeV(v));
    }
    if v == 0.0 {
        return Ok((delta, 0.0));
    }
    let p = 2.0 * alpha + 1.0;
    let h = v.powf(-1.0 / p).min(delta);
    let r = v.powf(alpha / p);
    Ok((h, r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwEstimate {
    /// NaN when undefined.
    pub b_hat: f64,
    pub denom: f64,
    pub defined: bool,
}

/// Streaming Nadaraya–Watson sums, frozen after step `until`.
pub struct NwAcc<'m> {
    x0: f64,
    h: f64,
    kernel: Kernel,
    dt: f64,
    until: usize,
    model: Option<&'m DiffusionModel>,
    num: f64,
    den: f64,
    mart: f64,
}

impl<'m> NwAcc<'m> {
    pub fn new(x0: f64, h: f64, kernel: Kernel, dt: f64) -> Self {
        Self {
            x0,
            h,
            kernel,
            dt,
            until: usize::MAX,
            model: None,
            num: 0.0,
            den: 0.0,
            mart: 0.0,
        }
    }

    /// Also accumulate the kernel martingale `Σ φ σ dw`.
    pub fn with_martingale(mut self, model: &'m DiffusionModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn until(mut self, step: usize) -> Self {
        self.until = step;
        self
    }

    pub fn estimate(&self) -> NwEstimate {
        let denom = self.den * self.dt;
        let defined = denom > 0.0;
        NwEstimate {
            b_hat: if defined { self.num / denom } else { f64::NAN },
            denom,
            defined,
        }
    }

    pub fn martingale(&self) -> f64 {
        if self.model.is_some() {
            self.mart
        } else {
            f64::NAN
        }
    }
}

impl Accumulator for NwAcc<'_> {
    type Output = NwEstimate;
    #[inline]
    fn step(&mut self, s: &Step) {
        if s.k >= self.until {
            return;
        }
        let u = (s.x - self.x0) / self.h;
        if u.abs() < 1.0 {
            let w = self.kernel.phi(u);
            self.num += w * (s.x_next - s.x);
            self.den += w;
            if let Some(m) = self.model {
                self.mart += w * m.sigma(s.x) * s.dw;
            }
        }
    }
    fn snapshot(&mut self, _: f64) -> NwEstimate {
        self.estimate()
    }
}

/// `b̂ = Σ φ((x_k - x0)/h)(x_{k+1} - x_k) / Σ φ((x_k - x0)/h) dt` over the
/// whole path. Undefined when the path never charges the kernel window.
pub fn nadaraya_watson<S: StepSource>(src: &S, x0: f64, h: f64, kernel: Kernel) -> Result<NwEstimate, EstimateError> {
    if !(h > 0.0) {
        return Err(FunctionalError::InvalidBandwidth(h).into());
    }
    let mut acc = NwAcc::new(x0, h, kernel, src.dt());
    let out = run_accumulator(src, &[src.n_steps()], &mut acc)?;
    Ok(out[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub v: f64,
    pub h: f64,
    pub r: f64,
    pub b_hat: f64,
    pub denom: f64,
    pub defined: bool,
    /// Kernel martingale at bandwidth `h` (NaN without driving noise).
    pub martingale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTrace {
    pub rows: Vec<TraceRow>,
}

/// Parameters of the adaptive estimator at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    pub x0: f64,
    pub alpha: f64,
    pub delta: f64,
    pub kernel: Kernel,
}

/// Nadaraya–Watson with the random bandwidth `H_t` built from `V_t`.
///
/// Two passes: the first computes `V_t` at each checkpoint, the second runs
/// one estimator per checkpoint with its own `H_t`, each frozen at its
/// checkpoint. `H_t` only uses data up to `t`.
pub fn adaptive_estimate<S: StepSource>(
    src: &S,
    model: Option<&DiffusionModel>,
    params: AdaptiveParams,
    spec: &EquivalentSpec,
    checkpoints: &[f64],
) -> Result<AdaptiveTrace, EstimateError> {
    check_alpha(params.alpha)?;
    let v = observable_iaf(src, spec, checkpoints)?.values;
    adaptive_with_observable(src, model, params, &v, checkpoints)
}

/// Second pass of [`adaptive_estimate`], given `V_t` at every checkpoint.
pub fn adaptive_with_observable<S: StepSource>(
    src: &S,
    model: Option<&DiffusionModel>,
    params: AdaptiveParams,
    v: &[f64],
    checkpoints: &[f64],
) -> Result<AdaptiveTrace, EstimateError> {
    check_alpha(params.alpha)?;
    let steps = checkpoint_steps(checkpoints, src.dt()).map_err(FunctionalError::from)?;
    let hr = v
        .iter()
        .map(|&v| bandwidth_and_rate(v, params.alpha, params.delta))
        .collect::<Result<Vec<_>, _>>()?;
    let model = model.filter(|_| src.has_noise());
    let mut bank: Vec<NwAcc> = hr
        .iter()
        .zip(&steps)
        .map(|(&(h, _), &n)| {
            let acc = NwAcc::new(params.x0, h, params.kernel, src.dt()).until(n);
            match model {
                Some(m) => acc.with_martingale(m),
                None => acc,
            }
        })
        .collect();
    run_accumulator(src, &[src.n_steps()], &mut bank)?;
    let rows = bank
        .iter()
        .enumerate()
        .map(|(j, acc)| {
            let est = acc.estimate();
            TraceRow {
                t: checkpoints[j],
                v: v[j],
                h: hr[j].0,
                r: hr[j].1,
                b_hat: est.b_hat,
                denom: est.denom,
                defined: est.defined,
                martingale: acc.martingale(),
            }
        })
        .collect();
    Ok(AdaptiveTrace { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drift, Holder, Sigma};
    use crate::sim::{simulate_path, Path};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn drifting_path() -> Path {
        // dX = 2 dt from -1 to 1 over t = 1
        let dt = 1e-3;
        let x: Vec<f64> = (0..=1000).map(|k| -1.0 + 2.0 * k as f64 * dt).collect();
        Path::from_states(dt, x)
    }

    #[test]
    fn bandwidth_examples() {
        let (h, r) = bandwidth_and_rate(1000.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(h, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-12);
        let (h, r) = bandwidth_and_rate(10_000.0, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(h, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-12);
        assert_eq!(bandwidth_and_rate(0.0, 1.0, 0.3).unwrap(), (0.3, 0.0));
        assert_eq!(
            bandwidth_and_rate(1.0, 1.5, 0.3).unwrap_err(),
            EstimateError::InvalidAlpha(1.5)
        );
        assert!(bandwidth_and_rate(-1.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn nw_on_deterministic_drift() {
        let p = drifting_path();
        let est = nadaraya_watson(&p, 0.0, 0.2, Kernel::QUARTIC).unwrap();
        assert!(est.defined);
        assert_abs_diff_eq!(est.b_hat, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn nw_undefined_outside_the_window() {
        let p = drifting_path();
        let est = nadaraya_watson(&p, 5.0, 0.2, Kernel::QUARTIC).unwrap();
        assert!(!est.defined);
        assert_eq!(est.denom, 0.0);
        assert!(est.b_hat.is_nan());
    }

    #[test]
    fn nw_is_invariant_under_kernel_scaling() {
        let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let p = simulate_path(&m, &PathConfig::new(0.0, 20.0, 5)).unwrap();
        let a = nadaraya_watson(&p, 0.1, 0.3, Kernel::QUARTIC).unwrap();
        for c in [0.5, 3.0, 1e6] {
            let b = nadaraya_watson(&p, 0.1, 0.3, Kernel::QUARTIC.scaled(c)).unwrap();
            assert_abs_diff_eq!(a.b_hat, b.b_hat, epsilon = 1e-12 * a.b_hat.abs().max(1.0));
        }
    }

    #[test]
    fn nw_is_invariant_under_relabeling_space() {
        // shifting the path and x0 together leaves the estimate unchanged
        let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let p = simulate_path(&m, &PathConfig::new(0.0, 20.0, 6)).unwrap();
        let shifted = Path::from_states(p.dt, p.x.iter().map(|x| x + 0.25).collect());
        let a = nadaraya_watson(&p, 0.0, 0.3, Kernel::QUARTIC).unwrap();
        let b = nadaraya_watson(&shifted, 0.25, 0.3, Kernel::QUARTIC).unwrap();
        assert_abs_diff_eq!(a.b_hat, b.b_hat, epsilon = 1e-9);
    }

    #[test]
    fn observable_iaf_examples() {
        let spec = EquivalentSpec::blind(0.0, 1.0, 0.0);
        let spec = EquivalentSpec { c: 0.7, ..spec };
        let outside = Path::from_states(1e-3, vec![3.0; 2001]);
        assert_eq!(observable_iaf(&outside, &spec, &[2.0]).unwrap().values, vec![0.0]);
        let inside = Path::from_states(1e-3, vec![0.5; 2001]);
        assert_abs_diff_eq!(
            observable_iaf(&inside, &spec, &[2.0]).unwrap().values[0],
            1.4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn spec_normalization() {
        let ou = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let spec = EquivalentSpec::normalized(&ou, 0.0, 1.0, 0.0).unwrap();
        spec.validate(&ou).unwrap();
        let bm = DiffusionModel::brownian();
        let spec = EquivalentSpec::normalized(&bm, 0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(spec.c, 0.5, epsilon = 1e-12);
        let bad = EquivalentSpec { c: 0.6, ..spec };
        assert!(bad.validate(&bm).is_err());
    }

    #[test]
    fn one_step_equivalent_is_bounded() {
        let bm = DiffusionModel::brownian();
        let spec = EquivalentSpec::normalized(&bm, 0.0, 1.0, 0.5).unwrap();
        let cfg = PathConfig::new(0.0, 1.0, 3).with_checkpoints(vec![1e-3, 1.0]);
        let curve = deterministic_equivalent(&bm, &spec, &cfg, 50, Some(2)).unwrap();
        assert!(curve.v_hat[0] >= 0.0 && curve.v_hat[0] <= 1e-3 * spec.c + 1e-15);
        assert!(curve.v_hat[0] <= curve.v_hat[1]);
        assert_eq!(
            deterministic_equivalent(&bm, &spec, &cfg, 0, None).unwrap_err(),
            EstimateError::NoReplicates
        );
    }

    #[test]
    fn adaptive_trace_before_entry_and_on_drift_paths() {
        let spec = EquivalentSpec::blind(10.0, 11.0, -1.0);
        let p = drifting_path();
        let params = AdaptiveParams {
            x0: 0.0,
            alpha: 1.0,
            delta: 0.3,
            kernel: Kernel::QUARTIC,
        };
        let trace = adaptive_estimate(&p, None, params, &spec, &[0.25, 1.0]).unwrap();
        let first = trace.rows[0];
        assert_eq!((first.h, first.r), (0.3, 0.0));
        // by t = 0.25 the path is at -0.5 and has not charged [-0.3, 0.3]
        assert!(!first.defined);
        let last = trace.rows[1];
        assert!(last.defined);
        assert_abs_diff_eq!(last.b_hat, 2.0, epsilon = 1e-6);

        let spec = EquivalentSpec::blind(-1.0, 1.0, -1.0);
        let trace = adaptive_estimate(&p, None, params, &spec, &[0.6, 0.8, 1.0]).unwrap();
        for row in &trace.rows {
            assert!(row.h <= 0.3);
            if row.defined {
                assert_abs_diff_eq!(row.b_hat, 2.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn adaptive_matches_fixed_bandwidth_nw() {
        let m = DiffusionModel::new(
            Drift::Linear { theta: 1.0 },
            Sigma::Constant { s: 1.0 },
            1.0,
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: 1.0,
                delta: 0.5,
            },
        )
        .unwrap();
        let cfg = PathConfig::new(0.0, 50.0, 12);
        let p = simulate_path(&m, &cfg).unwrap();
        let spec = EquivalentSpec::normalized(&m, 0.0, 1.0, 0.0).unwrap();
        let params = AdaptiveParams {
            x0: 0.0,
            alpha: 1.0,
            delta: 0.5,
            kernel: Kernel::QUARTIC,
        };
        let trace = adaptive_estimate(&p, Some(&m), params, &spec, &[50.0]).unwrap();
        let row = trace.rows[0];
        let direct = nadaraya_watson(&p, 0.0, row.h, Kernel::QUARTIC).unwrap();
        assert_eq!(direct.b_hat, row.b_hat);
        let mart = crate::functionals::kernel_martingale(&p, &m, 0.0, row.h, Kernel::QUARTIC, &[50.0]).unwrap();
        assert_abs_diff_eq!(mart.values[0], row.martingale, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn h_and_r_are_monotone_and_balanced(
            v1 in 0.0f64..1e8, v2 in 0.0f64..1e8, alpha in 0.01f64..=1.0, delta in 0.01f64..2.0
        ) {
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            let (h_lo, r_lo) = bandwidth_and_rate(lo, alpha, delta).unwrap();
            let (h_hi, r_hi) = bandwidth_and_rate(hi, alpha, delta).unwrap();
            prop_assert!(h_hi <= h_lo);
            prop_assert!(r_hi >= r_lo);
            prop_assert!(h_hi > 0.0 && h_hi <= delta);
            if hi > 0.0 && hi.powf(-1.0 / (2.0 * alpha + 1.0)) < delta {
                prop_assert!((r_hi * h_hi.powf(alpha) - 1.0).abs() < 1e-12);
            }
        }
    }
}
