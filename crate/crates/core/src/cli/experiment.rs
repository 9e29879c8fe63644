//! Experiment orchestration: runs a command over all replicates of a
//! configuration and writes CSV tables plus a manifest.
//!
//! Column sets per command:
//!
//! | file | columns |
//! |---|---|
//! | `paths.csv` | replicate, t, x, min, max, v |
//! | `traces.csv` | replicate, t, v, h, r, b_hat, denom, defined, martingale |
//! | `chacon_ornstein.csv` | t, median, q25, q75, excluded, n_paths, theoretical |
//! | `local_time.csv` | t, y, normalized, target |
//! | `sco.csv` | t, v_hat, sup_error, noise, argmax |
//! | `equivalent.csv` | t, v_hat, stderr, n_paths |
//! | `coverage.csv` | statistic, band, t, m, coverage, undefined_fraction, n_reps |
//! | `kernel_af.csv` | t, h, value, stderr, target |
//! | `errors_T{T}.csv` | replicate, v, h, r, b_hat, defined, abs_error, scaled_error |
//! | `ratefit.csv` | slope, intercept, stderr_slope, quantile, t_grid, regime, target_exponent |
//!
//! Floats carry 17 significant digits.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::RunConfig;
use crate::diagnostics::{
    chacon_ornstein_check, kernel_af_limit_check, rate_regression, run_ensemble, scaled_error_samples, tightness_curve,
    uniform_sco_error, Band, DiagnosticsError, TightnessCurve,
};
use crate::estimate::{adaptive_estimate, AdaptiveTrace, EstimateError};
use crate::functionals::{run_accumulator, Accumulator, FunctionalError};
use crate::model::{invariant_mass_total, DiffusionModel, ModelError, TotalMass, DEFAULT_X_MAX};
use crate::par::try_replicate_map;
use crate::sim::{checkpoint_steps, simulate_path, PathConfig, PathStream, SimError, Step};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv output {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<RunError>,
    },
}

fn in_replicate<E: Into<RunError>>(replicate: u64) -> impl FnOnce(E) -> RunError {
    move |e| RunError::Replicate {
        replicate,
        source: Box::new(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnoseKind {
    ChaconOrnstein,
    LocalTime,
    Tightness,
    KernelAf,
}

impl DiagnoseKind {
    pub const ALL: [DiagnoseKind; 4] = [
        DiagnoseKind::ChaconOrnstein,
        DiagnoseKind::LocalTime,
        DiagnoseKind::Tightness,
        DiagnoseKind::KernelAf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiagnoseKind::ChaconOrnstein => "chacon-ornstein",
            DiagnoseKind::LocalTime => "local-time",
            DiagnoseKind::Tightness => "tightness",
            DiagnoseKind::KernelAf => "kernel-af",
        }
    }
}

impl FromStr for DiagnoseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown diagnostic {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Diagnose(DiagnoseKind),
    RateStudy,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Simulate => f.write_str("simulate"),
            Command::Estimate => f.write_str("estimate"),
            Command::Diagnose(k) => write!(f, "diagnose:{}", k.name()),
            Command::RateStudy => f.write_str("rate-study"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the global pool (available parallelism) when `None`.
    pub workers: Option<usize>,
    /// Write binary path dumps (simulate only).
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub replications: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| s.push_str(&format!("{k} = {v}\n"));
        kv("version", &self.version);
        kv("command", &self.command);
        kv("config_digest", &self.config_digest);
        kv("seed", &self.seed);
        kv("replications", &self.replications);
        kv("workers", &self.workers);
        kv("wall_clock_seconds", &format!("{:.3}", self.wall_clock_seconds));
        kv("files", &self.files.len());
        for f in &self.files {
            kv(&format!("file.{}.rows", f.name), &f.rows);
            kv(&format!("file.{}.sha256", f.name), &f.sha256);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = std::collections::BTreeMap::new();
        let mut order = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            order.push(k.to_string());
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| map.get(k).cloned().ok_or_else(|| format!("missing key {k}"));
        let num = |k: &str| -> Result<u64, String> { get(k)?.parse().map_err(|_| format!("bad value for {k}")) };
        let mut files = Vec::new();
        for k in &order {
            if let Some(name) = k.strip_prefix("file.").and_then(|r| r.strip_suffix(".rows")) {
                files.push(FileEntry {
                    name: name.to_string(),
                    rows: num(k)? as usize,
                    sha256: get(&format!("file.{name}.sha256"))?,
                });
            }
        }
        if files.len() as u64 != num("files")? {
            return Err("file count does not match the file entries".into());
        }
        Ok(Self {
            version: get("version")?,
            command: get("command")?,
            config_digest: get("config_digest")?,
            seed: num("seed")?,
            replications: num("replications")?,
            workers: num("workers")? as usize,
            wall_clock_seconds: get("wall_clock_seconds")?
                .parse()
                .map_err(|_| "bad value for wall_clock_seconds".to_string())?,
            files,
        })
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Files of one run, held in memory until the command has succeeded so a
/// failed run leaves no partial output behind.
struct Output {
    files: Vec<(FileEntry, Vec<u8>)>,
}

impl Output {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn write_bytes(&mut self, name: &str, bytes: Vec<u8>, rows: usize) {
        let entry = FileEntry {
            name: name.to_string(),
            rows,
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        self.files.push((entry, bytes));
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        let csv_err = |source| RunError::Csv {
            path: PathBuf::from(name),
            source,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Io {
            path: PathBuf::from(name),
            source: e.into_error(),
        })?;
        self.write_bytes(name, bytes, rows.len());
        Ok(())
    }

    fn flush(&self, dir: &Path, extra: &[(&str, String)]) -> Result<(), RunError> {
        let io = |path: PathBuf| move |source| RunError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let files = self.files.iter().map(|(e, b)| (e.name.as_str(), b.as_slice()));
        for (name, bytes) in files.chain(extra.iter().map(|(n, s)| (*n, s.as_bytes()))) {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io(path))?;
        }
        Ok(())
    }
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($v.to_string()),*] };
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

/// Runs `command` and writes its tables, `config.toml` and the manifest to
/// the configured output directory.
pub fn run_experiment(cfg: &RunConfig, command: Command, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let start = Instant::now();
    let mut out = Output::new();
    log::info!(
        "{command}: {} replicates, t_max = {}, dt = {}",
        cfg.sim.replications,
        cfg.sim.t_max,
        cfg.sim.dt
    );
    match command {
        Command::Simulate => simulate(cfg, opts, &mut out)?,
        Command::Estimate => estimate(cfg, opts, &mut out)?,
        Command::Diagnose(DiagnoseKind::ChaconOrnstein) => chacon_ornstein(cfg, opts, &mut out)?,
        Command::Diagnose(DiagnoseKind::LocalTime) => local_time(cfg, opts, &mut out)?,
        Command::Diagnose(DiagnoseKind::Tightness) => tightness(cfg, opts, &mut out)?,
        Command::Diagnose(DiagnoseKind::KernelAf) => kernel_af(cfg, opts, &mut out)?,
        Command::RateStudy => rate_study(cfg, opts, &mut out)?,
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_digest: cfg.digest(),
        seed: cfg.sim.seed,
        replications: cfg.sim.replications,
        workers: opts.workers.unwrap_or_else(rayon::current_num_threads),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: out.files.iter().map(|(e, _)| e.clone()).collect(),
    };
    out.flush(
        &cfg.output.directory,
        &[(CONFIG_FILE, cfg.to_toml()), (MANIFEST_FILE, manifest.to_text())],
    )?;
    Ok(manifest)
}

/// Running minimum and maximum of the state.
struct RangeAcc {
    min: f64,
    max: f64,
}

impl Accumulator for RangeAcc {
    type Output = (f64, f64, f64);
    fn step(&mut self, s: &Step) {
        self.min = self.min.min(s.x_next);
        self.max = self.max.max(s.x_next);
    }
    fn snapshot(&mut self, x_now: f64) -> (f64, f64, f64) {
        (x_now, self.min, self.max)
    }
}

fn simulate(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let model = &cfg.model;
    let spec = cfg.equivalent_spec()?;
    let base = cfg.sim.path_config();
    let steps = checkpoint_steps(&base.checkpoints, base.dt)?;
    let per_rep = try_replicate_map(cfg.sim.replications, opts.workers, |i| {
        let pc = base.replicate(i);
        let stream = PathStream { model, config: &pc };
        let mut acc = (
            RangeAcc {
                min: pc.x_init,
                max: pc.x_init,
            },
            spec.accumulator(pc.dt),
        );
        run_accumulator(&stream, &steps, &mut acc).map_err(in_replicate(i))
    })?;
    let mut rows = Vec::new();
    for (i, snaps) in per_rep.iter().enumerate() {
        for (&t, ((x, lo, hi), v)) in base.checkpoints.iter().zip(snaps) {
            rows.push(row![i, f(t), f(*x), f(*lo), f(*hi), f(*v)]);
        }
    }
    out.write_csv("paths.csv", &["replicate", "t", "x", "min", "max", "v"], &rows)?;
    if opts.dump {
        for i in 0..cfg.sim.replications {
            let path = simulate_path(model, &base.replicate(i)).map_err(in_replicate(i))?;
            let mut bytes = Vec::new();
            path.write_dump(&mut bytes).expect("writing to memory");
            out.write_bytes(&format!("path_{i:05}.bin"), bytes, path.x.len());
        }
    }
    Ok(())
}

fn traces(cfg: &RunConfig, pc: &PathConfig, opts: &RunOptions) -> Result<Vec<AdaptiveTrace>, RunError> {
    let model = &cfg.model;
    let spec = cfg.equivalent_spec()?;
    let params = cfg.adaptive_params();
    try_replicate_map(cfg.sim.replications, opts.workers, |i| {
        let rc = pc.replicate(i);
        let stream = PathStream { model, config: &rc };
        adaptive_estimate(&stream, Some(model), params, &spec, &rc.checkpoints).map_err(in_replicate(i))
    })
}

fn estimate(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let all = traces(cfg, &cfg.sim.path_config(), opts)?;
    let mut rows = Vec::new();
    for (i, tr) in all.iter().enumerate() {
        for r in &tr.rows {
            rows.push(row![
                i,
                f(r.t),
                f(r.v),
                f(r.h),
                f(r.r),
                f(r.b_hat),
                f(r.denom),
                r.defined,
                f(r.martingale)
            ]);
        }
    }
    out.write_csv(
        "traces.csv",
        &[
            "replicate",
            "t",
            "v",
            "h",
            "r",
            "b_hat",
            "denom",
            "defined",
            "martingale",
        ],
        &rows,
    )
}

fn chacon_ornstein(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let [fa, fb] = cfg.diagnostics.f_interval;
    let [ga, gb] = cfg.estimate.g_interval;
    let s = chacon_ornstein_check(
        &cfg.model,
        (fa, fb),
        (ga, gb),
        &cfg.sim.path_config(),
        cfg.sim.replications,
        opts.workers,
    )?;
    let rows: Vec<_> = (0..s.checkpoints.len())
        .map(|j| {
            row![
                f(s.checkpoints[j]),
                f(s.median[j]),
                f(s.q25[j]),
                f(s.q75[j]),
                s.excluded[j],
                s.n_paths,
                f(s.theoretical)
            ]
        })
        .collect();
    out.write_csv(
        "chacon_ornstein.csv",
        &["t", "median", "q25", "q75", "excluded", "n_paths", "theoretical"],
        &rows,
    )
}

fn local_time(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let spec = cfg.equivalent_spec()?;
    let s = uniform_sco_error(
        &cfg.model,
        &spec,
        &cfg.diagnostics.grid.points(),
        cfg.diagnostics.epsilon,
        &cfg.sim.path_config(),
        cfg.sim.replications,
        opts.workers,
    )?;
    let mut rows = Vec::new();
    for (j, &t) in s.checkpoints.iter().enumerate() {
        for (i, &y) in s.grid.iter().enumerate() {
            rows.push(row![f(t), f(y), f(s.normalized[i][j]), f(s.target[i])]);
        }
    }
    out.write_csv("local_time.csv", &["t", "y", "normalized", "target"], &rows)?;
    let rows: Vec<_> = (0..s.checkpoints.len())
        .map(|j| {
            row![
                f(s.checkpoints[j]),
                f(s.v_hat[j]),
                f(s.sup_error[j]),
                f(s.noise[j]),
                f(s.argmax[j])
            ]
        })
        .collect();
    out.write_csv("sco.csv", &["t", "v_hat", "sup_error", "noise", "argmax"], &rows)
}

fn coverage_rows(curves: &[TightnessCurve]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in curves {
        for (j, &t) in c.checkpoints.iter().enumerate() {
            for (i, &m) in c.thresholds.iter().enumerate() {
                rows.push(row![
                    c.statistic_name,
                    c.band.name(),
                    f(t),
                    f(m),
                    f(c.coverage[i][j]),
                    f(c.undefined_fraction[j]),
                    c.n_reps
                ]);
            }
        }
    }
    rows
}

const COVERAGE_HEADER: [&str; 7] = [
    "statistic",
    "band",
    "t",
    "m",
    "coverage",
    "undefined_fraction",
    "n_reps",
];

fn tightness(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let model = &cfg.model;
    let spec = cfg.equivalent_spec()?;
    let ens = run_ensemble(
        model,
        &spec,
        cfg.adaptive_params(),
        &cfg.sim.path_config(),
        cfg.sim.replications,
        opts.workers,
        &cfg.ensemble_options(),
    )?;
    let eq = ens.equivalent();
    let rows: Vec<_> = (0..eq.checkpoints.len())
        .map(|j| row![f(eq.checkpoints[j]), f(eq.v_hat[j]), f(eq.stderr[j]), eq.n_paths])
        .collect();
    out.write_csv("equivalent.csv", &["t", "v_hat", "stderr", "n_paths"], &rows)?;
    let curves = ens.tightness(model.b(cfg.estimate.x0), &cfg.diagnostics.thresholds)?;
    out.write_csv("coverage.csv", &COVERAGE_HEADER, &coverage_rows(&curves))
}

fn kernel_af(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let model = &cfg.model;
    let psi_kind = cfg.diagnostics.psi;
    let psi = move |x: f64| psi_kind.eval(model, x);
    let rule = cfg.diagnostics.h_rule;
    let r = kernel_af_limit_check(
        model,
        cfg.estimate.x0,
        &psi,
        &|t| rule.eval(t),
        cfg.kernel(),
        &cfg.equivalent_spec()?,
        &cfg.sim.path_config(),
        cfg.sim.replications,
        opts.workers,
    )?;
    let rows: Vec<_> = (0..r.checkpoints.len())
        .map(|j| {
            row![
                f(r.checkpoints[j]),
                f(r.h[j]),
                f(r.value[j]),
                f(r.stderr[j]),
                f(r.target)
            ]
        })
        .collect();
    out.write_csv("kernel_af.csv", &["t", "h", "value", "stderr", "target"], &rows)
}

/// Ergodic or null-recurrent regime and the matching rate exponent of the
/// drift estimator: `-α/(2α+1)` when the invariant measure is finite,
/// `-α/(4α+2)` when it is infinite.
pub fn target_exponent(model: &DiffusionModel, alpha: f64) -> Result<(&'static str, f64), ModelError> {
    Ok(match invariant_mass_total(model, DEFAULT_X_MAX)? {
        TotalMass::Finite(_) => ("ergodic", -alpha / (2.0 * alpha + 1.0)),
        TotalMass::Infinite => ("null_recurrent", -alpha / (4.0 * alpha + 2.0)),
        TotalMass::Inconclusive => ("inconclusive", f64::NAN),
    })
}

/// `T` as it appears in file names: `100`, `1000`, `0.5`.
pub fn horizon_label(t: f64) -> String {
    format!("{t}")
}

fn rate_study(cfg: &RunConfig, opts: &RunOptions, out: &mut Output) -> Result<(), RunError> {
    let t_grid = &cfg.diagnostics.t_grid;
    let t_last = *t_grid.last().expect("t_grid validated nonempty");
    // one path per replicate up to the largest horizon, read at every
    // horizon; shorter paths are prefixes of longer ones
    let pc = PathConfig {
        t_max: t_last,
        checkpoints: t_grid.clone(),
        ..cfg.sim.path_config()
    };
    let all = traces(cfg, &pc, opts)?;
    let b_true = cfg.model.b(cfg.estimate.x0);
    let scaled = scaled_error_samples(&all, b_true)?;
    let mut abs_errors = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let mut rows = Vec::new();
        let mut errs = Vec::new();
        for (i, tr) in all.iter().enumerate() {
            let r = &tr.rows[j];
            let e = if r.defined { (r.b_hat - b_true).abs() } else { f64::NAN };
            errs.push(e);
            rows.push(row![
                i,
                f(r.v),
                f(r.h),
                f(r.r),
                f(r.b_hat),
                r.defined,
                f(e),
                f(scaled.values[j][i])
            ]);
        }
        abs_errors.push(errs);
        out.write_csv(
            &format!("errors_T{}.csv", horizon_label(t)),
            &[
                "replicate",
                "v",
                "h",
                "r",
                "b_hat",
                "defined",
                "abs_error",
                "scaled_error",
            ],
            &rows,
        )?;
    }
    let curve = tightness_curve(
        "scaled_error",
        Band::Upper,
        t_grid,
        &scaled.values,
        &cfg.diagnostics.thresholds,
    );
    match curve {
        Ok(c) => out.write_csv("coverage.csv", &COVERAGE_HEADER, &coverage_rows(&[c]))?,
        Err(DiagnosticsError::TooFewReplicates { n, min }) => {
            log::warn!("coverage skipped: {n} replicates, need {min}");
        }
        Err(e) => return Err(e.into()),
    }
    let fit = rate_regression(&abs_errors, t_grid, cfg.diagnostics.quantile)?;
    let (regime, target) = target_exponent(&cfg.model, cfg.estimate.alpha)?;
    let grid = t_grid.iter().map(|&t| horizon_label(t)).collect::<Vec<_>>().join(";");
    out.write_csv(
        "ratefit.csv",
        &[
            "slope",
            "intercept",
            "stderr_slope",
            "quantile",
            "t_grid",
            "regime",
            "target_exponent",
        ],
        &[row![
            f(fit.slope),
            f(fit.intercept),
            f(fit.stderr_slope),
            f(fit.quantile_used),
            grid,
            regime,
            f(target)
        ]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2e-300, 123456789.12345679, -7.25] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn manifest_round_trips() {
        let m = RunManifest {
            version: "0.1.0".into(),
            command: "rate-study".into(),
            config_digest: "ab".into(),
            seed: 4,
            replications: 10,
            workers: 3,
            wall_clock_seconds: 1.5,
            files: vec![FileEntry {
                name: "errors_T100.csv".into(),
                rows: 10,
                sha256: "cd".into(),
            }],
        };
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
        assert!(RunManifest::parse("version 0.1").is_err());
        assert!(RunManifest::parse("version = 0.1\n").is_err());
    }

    #[test]
    fn command_names() {
        assert_eq!(
            Command::Diagnose(DiagnoseKind::KernelAf).to_string(),
            "diagnose:kernel-af"
        );
        assert_eq!(
            "chacon-ornstein".parse::<DiagnoseKind>(),
            Ok(DiagnoseKind::ChaconOrnstein)
        );
        assert!("nope".parse::<DiagnoseKind>().is_err());
        assert_eq!(horizon_label(1e4), "10000");
    }

    #[test]
    fn regimes() {
        let ou = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
        let (r, e) = target_exponent(&ou, 1.0).unwrap();
        assert_eq!(r, "ergodic");
        assert!((e + 1.0 / 3.0).abs() < 1e-15);
        let bump = DiffusionModel::compact_bump(1.0).unwrap();
        let (r, e) = target_exponent(&bump, 1.0).unwrap();
        assert_eq!(r, "null_recurrent");
        assert!((e + 1.0 / 6.0).abs() < 1e-15);
    }
}
