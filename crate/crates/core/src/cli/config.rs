//! Run configuration: a TOML file with `model`, `sim`, `estimate`,
//! `diagnostics` and `output` tables. Unknown keys are rejected; every
//! default is resolved at load time so the echoed config is complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::EnsembleOptions;
use crate::estimate::{check_alpha, AdaptiveParams, EquivalentSpec, EstimateError};
use crate::functionals::default_epsilon;
use crate::model::{DiffusionModel, Kernel, ModelError};
use crate::sim::{default_dt, step_index, PathConfig, SimError};

pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_KERNEL: &str = "quartic";
pub const DEFAULT_THRESHOLDS: [f64; 5] = [2.0, 5.0, 10.0, 20.0, 50.0];
pub const DEFAULT_QUANTILE: f64 = 0.5;
pub const DEFAULT_GRID_POINTS: usize = 21;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("estimate: {0}")]
    Estimate(#[from] EstimateError),
    #[error("{block}: {message}")]
    Invalid { block: &'static str, message: String },
}

fn invalid(block: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        block,
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: DiffusionModel,
    sim: RawSim,
    #[serde(default)]
    estimate: RawEstimate,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(default)]
    x_init: f64,
    t_max: f64,
    dt: Option<f64>,
    checkpoint_count: Option<usize>,
    checkpoint_min: Option<f64>,
    checkpoint_times: Option<Vec<f64>>,
    seed: u64,
    replications: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimate {
    x0: Option<f64>,
    alpha: Option<f64>,
    delta: Option<f64>,
    g_interval: Option<[f64; 2]>,
    kernel: Option<String>,
    #[serde(default)]
    blind_mode: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    thresholds: Option<Vec<f64>>,
    quantile: Option<f64>,
    grid: Option<GridSpec>,
    epsilon: Option<f64>,
    t_grid: Option<Vec<f64>>,
    f_interval: Option<[f64; 2]>,
    af_interval: Option<[f64; 2]>,
    psi: Option<Psi>,
    h_rule: Option<HRule>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
}

/// Equispaced spatial grid `lo, ..., hi` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.hi
                } else {
                    self.lo + i as f64 * step
                }
            })
            .collect()
    }
}

/// Weight of the kernel additive functional in the `kernel-af` diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    One,
    Sigma2,
}

impl Psi {
    pub fn eval(self, model: &DiffusionModel, x: f64) -> f64 {
        match self {
            Psi::One => 1.0,
            Psi::Sigma2 => model.sigma(x).powi(2),
        }
    }
}

/// Deterministic bandwidth `h_t = scale t^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HRule {
    pub scale: f64,
    pub exponent: f64,
}

impl HRule {
    pub fn eval(&self, t: f64) -> f64 {
        self.scale * t.powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub x_init: f64,
    pub t_max: f64,
    pub dt: f64,
    #[serde(rename = "checkpoint_times")]
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub replications: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateBlock {
    pub x0: f64,
    pub alpha: f64,
    pub delta: f64,
    pub g_interval: [f64; 2],
    pub kernel: String,
    pub blind_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    pub thresholds: Vec<f64>,
    pub quantile: f64,
    pub grid: GridSpec,
    pub epsilon: f64,
    pub t_grid: Vec<f64>,
    pub f_interval: [f64; 2],
    pub af_interval: [f64; 2],
    pub psi: Psi,
    pub h_rule: HRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: DiffusionModel,
    pub sim: SimBlock,
    pub estimate: EstimateBlock,
    pub diagnostics: DiagnosticsBlock,
    pub output: OutputBlock,
}

/// `k` log-spaced times in `[t_min, t_max]`, rounded down to multiples of
/// `dt`, with zeros and duplicates dropped.
pub fn log_spaced_checkpoints(t_min: f64, t_max: f64, k: usize, dt: f64) -> Vec<f64> {
    let n_max = (t_max / dt).round() as u64;
    let mut steps: Vec<u64> = (0..k)
        .map(|i| {
            if i + 1 == k {
                return n_max;
            }
            let t = t_min * (t_max / t_min).powf(i as f64 / (k - 1) as f64);
            ((t / dt) * (1.0 + 1e-12)).floor() as u64
        })
        .filter(|&n| n > 0)
        .collect();
    steps.dedup();
    steps.into_iter().map(|n| n as f64 * dt).collect()
}

fn check_interval(block: &'static str, name: &str, [a, b]: [f64; 2]) -> Result<(), ConfigError> {
    if a < b && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(invalid(block, format!("{name} = [{a}, {b}] needs a < b")))
    }
}

fn check_times(block: &'static str, name: &str, times: &[f64], dt: f64, t_max: f64) -> Result<(), ConfigError> {
    if times.is_empty() {
        return Err(invalid(block, format!("{name} must not be empty")));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev && t <= t_max * (1.0 + 1e-12)) {
            return Err(invalid(
                block,
                format!("{name}: {t} must be increasing and within (0, {t_max}]"),
            ));
        }
        step_index(t, dt).map_err(|_| invalid(block, format!("{name}: {t} is not a multiple of dt = {dt}")))?;
        prev = t;
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        Self::resolve(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let model = raw.model;
        model.validate()?;

        let s = raw.sim;
        if s.replications < 1 {
            return Err(invalid("sim", "replications must be at least 1"));
        }
        if !(s.t_max > 0.0 && s.t_max.is_finite()) {
            return Err(invalid("sim", format!("t_max must be positive, got {}", s.t_max)));
        }
        let dt = s.dt.unwrap_or_else(|| default_dt(s.t_max));
        let checkpoints = match (s.checkpoint_times, s.checkpoint_count) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "sim",
                    "give either checkpoint_times or checkpoint_count, not both",
                ));
            }
            (Some(times), None) => times,
            (None, count) => {
                let k = count.unwrap_or(1);
                if k < 1 {
                    return Err(invalid("sim", "checkpoint_count must be at least 1"));
                }
                let t_min = s
                    .checkpoint_min
                    .unwrap_or_else(|| (s.t_max * 10f64.powi(1 - k as i32)).max(dt));
                log_spaced_checkpoints(t_min, s.t_max, k, dt)
            }
        };
        let sim = SimBlock {
            x_init: s.x_init,
            t_max: s.t_max,
            dt,
            checkpoints,
            seed: s.seed,
            replications: s.replications,
        };
        if sim.checkpoints.is_empty() {
            return Err(invalid("sim", "checkpoint rule produced no checkpoints"));
        }
        sim.path_config().validate()?;

        let e = raw.estimate;
        let estimate = EstimateBlock {
            x0: e.x0.unwrap_or(model.holder.x0),
            alpha: e.alpha.unwrap_or(model.holder.alpha),
            delta: e.delta.unwrap_or(DEFAULT_DELTA),
            g_interval: e.g_interval.unwrap_or([0.0, 1.0]),
            kernel: e.kernel.unwrap_or_else(|| DEFAULT_KERNEL.to_string()),
            blind_mode: e.blind_mode,
        };
        check_alpha(estimate.alpha)?;
        if !(estimate.delta > 0.0) {
            return Err(EstimateError::InvalidDelta(estimate.delta).into());
        }
        if Kernel::from_name(&estimate.kernel).is_none() {
            return Err(invalid("estimate", format!("unknown kernel {:?}", estimate.kernel)));
        }
        check_interval("estimate", "g_interval", estimate.g_interval)?;

        let d = raw.diagnostics;
        let h = model.holder;
        let diagnostics = DiagnosticsBlock {
            thresholds: d.thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()),
            quantile: d.quantile.unwrap_or(DEFAULT_QUANTILE),
            grid: d.grid.unwrap_or(GridSpec {
                lo: h.x0 - h.delta,
                hi: h.x0 + h.delta,
                points: DEFAULT_GRID_POINTS,
            }),
            epsilon: d.epsilon.unwrap_or_else(|| default_epsilon(dt)),
            t_grid: d.t_grid.unwrap_or_else(|| sim.checkpoints.clone()),
            f_interval: d.f_interval.unwrap_or([0.0, 2.0]),
            af_interval: d.af_interval.unwrap_or([h.x0 - 1.0, h.x0 + 1.0]),
            psi: d.psi.unwrap_or(Psi::One),
            h_rule: d.h_rule.unwrap_or(HRule {
                scale: 1.0,
                exponent: -1.0 / 3.0,
            }),
        };
        let th = &diagnostics.thresholds;
        if th.is_empty() || th[0] <= 0.0 || th.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid(
                "diagnostics",
                "thresholds must be positive and strictly increasing",
            ));
        }
        if !(diagnostics.quantile > 0.0 && diagnostics.quantile < 1.0) {
            return Err(invalid(
                "diagnostics",
                format!("quantile {} is outside (0, 1)", diagnostics.quantile),
            ));
        }
        let g = diagnostics.grid;
        if g.points < 1 || !(g.lo <= g.hi) || (g.points > 1 && g.lo == g.hi) {
            return Err(invalid("diagnostics", "grid needs lo < hi and at least one point"));
        }
        if !(diagnostics.epsilon > 0.0) {
            return Err(invalid(
                "diagnostics",
                format!("epsilon must be positive, got {}", diagnostics.epsilon),
            ));
        }
        check_times("diagnostics", "t_grid", &diagnostics.t_grid, dt, sim.t_max)?;
        check_interval("diagnostics", "f_interval", diagnostics.f_interval)?;
        check_interval("diagnostics", "af_interval", diagnostics.af_interval)?;
        if !(diagnostics.h_rule.scale > 0.0) {
            return Err(invalid("diagnostics", "h_rule.scale must be positive"));
        }

        let cfg = RunConfig {
            model,
            sim,
            estimate,
            diagnostics,
            output: OutputBlock {
                directory: raw.output.directory.unwrap_or_else(|| PathBuf::from("out")),
            },
        };
        cfg.equivalent_spec()?;
        Ok(cfg)
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::from_name(&self.estimate.kernel).expect("kernel validated at load")
    }

    pub fn equivalent_spec(&self) -> Result<EquivalentSpec, EstimateError> {
        let [a, b] = self.estimate.g_interval;
        if self.estimate.blind_mode {
            Ok(EquivalentSpec::blind(a, b, self.sim.x_init))
        } else {
            EquivalentSpec::normalized(&self.model, a, b, self.sim.x_init)
        }
    }

    pub fn adaptive_params(&self) -> AdaptiveParams {
        AdaptiveParams {
            x0: self.estimate.x0,
            alpha: self.estimate.alpha,
            delta: self.estimate.delta,
            kernel: self.kernel(),
        }
    }

    pub fn ensemble_options(&self) -> EnsembleOptions {
        let d = &self.diagnostics;
        EnsembleOptions {
            af_interval: (d.af_interval[0], d.af_interval[1]),
            grid: d.grid.points(),
            epsilon: d.epsilon,
            h_grid: crate::diagnostics::h_grid(self.estimate.delta, self.sim.dt),
        }
    }
}

impl SimBlock {
    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            x_init: self.x_init,
            t_max: self.t_max,
            dt: self.dt,
            checkpoints: self.checkpoints.clone(),
            seed: self.seed,
            replicate_index: 0,
        }
    }
}
