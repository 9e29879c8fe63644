//! Euler–Maruyama paths with stored driving noise.
//!
//! Replicate `i` of a run with seed `s` draws its Gaussian increments from
//! the ChaCha8 stream `(s, i)`: the key comes from the seed and the stream
//! id is the replicate index, so a replicate's noise never depends on which
//! worker produced it or in what order.
//!
//! Paths can be materialized ([`Path`]) or replayed lazily
//! ([`PathStream`]); both feed functionals through [`StepSource`] and yield
//! identical steps.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::DiffusionModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at step {step} (x = {x})")]
    NonFinite { step: usize, x: f64 },
    #[error("checkpoint t = {t} is not a multiple of dt = {dt}")]
    MisalignedCheckpoint { t: f64, dt: f64 },
    #[error("checkpoint t = {t} is outside (0, t_max = {t_max}]")]
    CheckpointOutOfRange { t: f64, t_max: f64 },
    #[error("checkpoints must be strictly increasing (saw {prev} then {next})")]
    UnsortedCheckpoints { prev: f64, next: f64 },
    #[error("invalid path configuration: {0}")]
    InvalidConfig(String),
}

/// `1e-3` up to `t_max = 1e3`, `1e-2` beyond.
pub fn default_dt(t_max: f64) -> f64 {
    if t_max <= 1e3 {
        1e-3
    } else {
        1e-2
    }
}

/// The RNG stream of replicate `replicate` under `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Step index of time `t`, or an error when `t` is not on the `dt` lattice.
pub fn step_index(t: f64, dt: f64) -> Result<usize, SimError> {
    let r = t / dt;
    let n = r.round();
    if (r - n).abs() > 1e-9 * n.max(1.0) || n < 0.0 {
        return Err(SimError::MisalignedCheckpoint { t, dt });
    }
    Ok(n as usize)
}

/// Step indices of sorted checkpoint times.
pub fn checkpoint_steps(checkpoints: &[f64], dt: f64) -> Result<Vec<usize>, SimError> {
    checkpoints.iter().map(|&t| step_index(t, dt)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub x_init: f64,
    pub t_max: f64,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub replicate_index: u64,
}

impl PathConfig {
    /// Config with `checkpoints = [t_max]` and the default step for `t_max`.
    pub fn new(x_init: f64, t_max: f64, seed: u64) -> Self {
        Self {
            x_init,
            t_max,
            dt: default_dt(t_max),
            checkpoints: vec![t_max],
            seed,
            replicate_index: 0,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<f64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn replicate(&self, index: u64) -> Self {
        Self {
            replicate_index: index,
            ..self.clone()
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.dt > self.t_max {
            return Err(SimError::InvalidConfig(format!(
                "dt = {} exceeds t_max = {}",
                self.dt, self.t_max
            )));
        }
        if !self.x_init.is_finite() {
            return Err(SimError::InvalidConfig("x_init must be finite".into()));
        }
        step_index(self.t_max, self.dt)?;
        let mut prev = 0.0;
        for &t in &self.checkpoints {
            if !(t > 0.0 && t <= self.t_max * (1.0 + 1e-12)) {
                return Err(SimError::CheckpointOutOfRange { t, t_max: self.t_max });
            }
            if t <= prev {
                return Err(SimError::UnsortedCheckpoints { prev, next: t });
            }
            step_index(t, self.dt)?;
            prev = t;
        }
        Ok(())
    }
}

/// One Euler step: state `x` at step `k`, its increment `dw` and the next
/// state. `dw` is NaN for paths built from observations only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub k: usize,
    pub x: f64,
    pub dw: f64,
    pub x_next: f64,
}

/// Anything that can replay a discretized path step by step.
pub trait StepSource {
    fn dt(&self) -> f64;
    fn n_steps(&self) -> usize;
    fn x_init(&self) -> f64;
    fn has_noise(&self) -> bool;
    fn for_each_step<F: FnMut(&Step)>(&self, f: F) -> Result<(), SimError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub dt: f64,
    pub x: Vec<f64>,
    /// Driving-noise increments; `None` for observation-only paths.
    pub dw: Option<Vec<f64>>,
    pub model_id: u64,
    pub config: PathConfig,
}

impl Path {
    /// A path known only through its states, e.g. a deterministic test
    /// trajectory. Martingale functionals reject it.
    pub fn from_states(dt: f64, x: Vec<f64>) -> Self {
        let n = x.len().saturating_sub(1);
        let config = PathConfig {
            x_init: x.first().copied().unwrap_or(0.0),
            t_max: n as f64 * dt,
            dt,
            checkpoints: Vec::new(),
            seed: 0,
            replicate_index: 0,
        };
        Self {
            dt,
            x,
            dw: None,
            model_id: 0,
            config,
        }
    }

    pub fn t_max(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    /// Writes the little-endian binary dump: five 64-bit header fields
    /// (model id, seed, replicate, dt, N), then N+1 states and N increments.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.n_steps() as u64;
        w.write_all(&self.model_id.to_le_bytes())?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        w.write_all(&self.config.replicate_index.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        for v in &self.x {
            w.write_all(&v.to_le_bytes())?;
        }
        let nan = vec![f64::NAN; self.n_steps()];
        for v in self.dw.as_ref().unwrap_or(&nan) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> io::Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let model_id = u64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let replicate_index = u64::from_le_bytes(next(&mut r)?);
        let dt = f64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let mut x = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            x.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut dw = Vec::with_capacity(n);
        for _ in 0..n {
            dw.push(f64::from_le_bytes(next(&mut r)?));
        }
        let dw = if dw.iter().all(|v| v.is_nan()) && n > 0 {
            None
        } else {
            Some(dw)
        };
        Ok(Self {
            dt,
            config: PathConfig {
                x_init: x[0],
                t_max: n as f64 * dt,
                dt,
                checkpoints: Vec::new(),
                seed,
                replicate_index,
            },
            x,
            dw,
            model_id,
        })
    }
}

impl StepSource for Path {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn n_steps(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    fn x_init(&self) -> f64 {
        self.x[0]
    }

    fn has_noise(&self) -> bool {
        self.dw.is_some()
    }

    fn for_each_step<F: FnMut(&Step)>(&self, mut f: F) -> Result<(), SimError> {
        let n = self.n_steps();
        match &self.dw {
            Some(dw) => {
                #[allow(clippy::needless_range_loop)] // x is read at k and k + 1
                for k in 0..n {
                    f(&Step {
                        k,
                        x: self.x[k],
                        dw: dw[k],
                        x_next: self.x[k + 1],
                    });
                }
            }
            None => {
                for k in 0..n {
                    f(&Step {
                        k,
                        x: self.x[k],
                        dw: f64::NAN,
                        x_next: self.x[k + 1],
                    });
                }
            }
        }
        Ok(())
    }
}

/// A path regenerated on demand from `(model, config)`. Every replay
/// produces the same steps, so multi-pass functionals can run without
/// holding the path in memory.
#[derive(Debug, Clone, Copy)]
pub struct PathStream<'a> {
    pub model: &'a DiffusionModel,
    pub config: &'a PathConfig,
}

impl<'a> PathStream<'a> {
    pub fn new(model: &'a DiffusionModel, config: &'a PathConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self { model, config })
    }
}

impl StepSource for PathStream<'_> {
    fn dt(&self) -> f64 {
        self.config.dt
    }

    fn n_steps(&self) -> usize {
        self.config.n_steps()
    }

    fn x_init(&self) -> f64 {
        self.config.x_init
    }

    fn has_noise(&self) -> bool {
        true
    }

    fn for_each_step<F: FnMut(&Step)>(&self, mut f: F) -> Result<(), SimError> {
        let dt = self.config.dt;
        let sqrt_dt = dt.sqrt();
        let mut rng = replicate_rng(self.config.seed, self.config.replicate_index);
        let mut x = self.config.x_init;
        for k in 0..self.n_steps() {
            let xi: f64 = rng.sample(StandardNormal);
            let dw = sqrt_dt * xi;
            let x_next = x + self.model.b(x) * dt + self.model.sigma(x) * dw;
            if !x_next.is_finite() {
                return Err(SimError::NonFinite { step: k + 1, x: x_next });
            }
            f(&Step { k, x, dw, x_next });
            x = x_next;
        }
        Ok(())
    }
}

/// Simulates and materializes one path.
pub fn simulate_path(model: &DiffusionModel, cfg: &PathConfig) -> Result<Path, SimError> {
    let stream = PathStream::new(model, cfg)?;
    let n = stream.n_steps();
    let mut x = Vec::with_capacity(n + 1);
    let mut dw = Vec::with_capacity(n);
    x.push(cfg.x_init);
    stream.for_each_step(|s| {
        dw.push(s.dw);
        x.push(s.x_next);
    })?;
    Ok(Path {
        dt: cfg.dt,
        x,
        dw: Some(dw),
        model_id: model.id(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drift, Holder, Sigma};

    fn bm() -> DiffusionModel {
        DiffusionModel::brownian()
    }

    #[test]
    fn nearly_deterministic_constant_drift() {
        let m = DiffusionModel::new(
            Drift::Constant { c: 2.0 },
            Sigma::Constant { s: 1e-12 },
            2.0,
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: 1.0,
                delta: 0.5,
            },
        )
        .unwrap();
        let cfg = PathConfig::new(0.0, 1.0, 7).with_dt(0.001);
        let p = simulate_path(&m, &cfg).unwrap();
        assert_eq!(p.x.len(), 1001);
        assert!((p.x[1000] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn initial_condition_is_exact() {
        let p = simulate_path(&bm(), &PathConfig::new(5.0, 1.0, 3)).unwrap();
        assert_eq!(p.x[0], 5.0);
    }

    #[test]
    fn same_seed_same_path() {
        let cfg = PathConfig::new(0.0, 2.0, 42);
        let a = simulate_path(&bm(), &cfg).unwrap();
        let b = simulate_path(&bm(), &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dw, b.dw);
    }

    #[test]
    fn replicate_index_changes_the_path() {
        let cfg = PathConfig::new(0.0, 1.0, 42);
        let a = simulate_path(&bm(), &cfg).unwrap();
        let b = simulate_path(&bm(), &cfg.replicate(1)).unwrap();
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn stream_matches_materialized_path() {
        let m = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let cfg = PathConfig::new(0.3, 3.0, 9).replicate(4);
        let p = simulate_path(&m, &cfg).unwrap();
        let s = PathStream::new(&m, &cfg).unwrap();
        let mut steps = Vec::new();
        s.for_each_step(|st| steps.push(*st)).unwrap();
        let mut replay = Vec::new();
        p.for_each_step(|st| replay.push(*st)).unwrap();
        assert_eq!(steps, replay);
    }

    #[test]
    fn increment_variance_is_dt() {
        let cfg = PathConfig::new(0.0, 100.0, 11);
        let p = simulate_path(&bm(), &cfg).unwrap();
        let dw = p.dw.unwrap();
        assert_eq!(dw.len(), 100_000);
        let mean = dw.iter().sum::<f64>() / dw.len() as f64;
        let var = dw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (dw.len() - 1) as f64;
        assert!((var / cfg.dt - 1.0).abs() < 0.05, "var/dt = {}", var / cfg.dt);
    }

    #[test]
    fn terminal_mean_of_brownian_replicates() {
        let cfg = PathConfig::new(1.5, 1.0, 2024).with_dt(0.01);
        let n = 10_000;
        let model = bm();
        let mut sum = 0.0;
        for i in 0..n {
            let c = cfg.replicate(i);
            let s = PathStream::new(&model, &c).unwrap();
            let mut last = 0.0;
            s.for_each_step(|st| last = st.x_next).unwrap();
            sum += last;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.5).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn config_validation() {
        let cfg = PathConfig::new(0.0, 1.0, 0).with_checkpoints(vec![0.5, 0.25]);
        assert!(matches!(cfg.validate(), Err(SimError::UnsortedCheckpoints { .. })));
        let cfg = PathConfig::new(0.0, 1.0, 0).with_checkpoints(vec![0.0005]);
        assert!(matches!(cfg.validate(), Err(SimError::MisalignedCheckpoint { .. })));
        let cfg = PathConfig::new(0.0, 1.0, 0).with_checkpoints(vec![2.0]);
        assert!(matches!(cfg.validate(), Err(SimError::CheckpointOutOfRange { .. })));
        let cfg = PathConfig::new(0.0, 1.0, 0).with_dt(2.0);
        assert!(matches!(cfg.validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn overflow_reports_the_step() {
        // explosive linear drift, admissible for a huge growth constant
        let m = DiffusionModel::new(
            Drift::Linear { theta: -1e300 },
            Sigma::Constant { s: 1.0 },
            1e300,
            Holder {
                x0: 0.0,
                alpha: 1.0,
                gamma: 1e300,
                delta: 0.5,
            },
        )
        .unwrap();
        let cfg = PathConfig::new(1.0, 1.0, 1).with_dt(1e-3);
        let err = simulate_path(&m, &cfg).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { step, .. } if step > 1));
    }

    #[test]
    fn dump_round_trip() {
        let cfg = PathConfig::new(0.1, 0.05, 5).with_dt(0.01).replicate(3);
        let p = simulate_path(&bm(), &cfg).unwrap();
        let mut buf = Vec::new();
        p.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (5 + 6 + 5));
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        let q = Path::read_dump(buf.as_slice()).unwrap();
        assert_eq!(q.x, p.x);
        assert_eq!(q.dw, p.dw);
        assert_eq!(q.model_id, p.model_id);
        assert_eq!(q.config.seed, 5);
    }
}
