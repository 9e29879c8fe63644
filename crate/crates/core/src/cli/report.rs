//! Plain-text summary of a finished run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use super::experiment::{target_exponent, RunManifest, CONFIG_FILE, MANIFEST_FILE};
use crate::model::{
    classify_recurrence, invariant_mass_total, ModelError, RecurrenceOptions, TotalMass, DEFAULT_X_MAX,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("data file {name} does not match its manifest hash")]
    HashMismatch { name: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, ReportError> {
    fs::read(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}

fn col(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Formats with a true minus sign, as printed in the report.
fn signed(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}").replace('-', "−")
}

/// Summarizes the run stored in `dir`: model and its classification,
/// coverage at the largest checkpoint, and the rate fit against the
/// regime's target exponent.
pub fn emit_report(dir: &Path) -> Result<String, ReportError> {
    let text = String::from_utf8_lossy(&read(&dir.join(MANIFEST_FILE))?).into_owned();
    let manifest = RunManifest::parse(&text).map_err(ReportError::Manifest)?;
    for f in &manifest.files {
        let bytes = read(&dir.join(&f.name))?;
        if hex::encode(Sha256::digest(&bytes)) != f.sha256 {
            return Err(ReportError::HashMismatch { name: f.name.clone() });
        }
    }
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let model = &cfg.model;
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "run: {} (version {})", manifest.command, manifest.version);
    let _ = writeln!(w, "config digest: {}", manifest.config_digest);
    let _ = writeln!(
        w,
        "seed {}, {} replications, {} workers, {:.1} s",
        manifest.seed, manifest.replications, manifest.workers, manifest.wall_clock_seconds
    );
    let _ = writeln!(w, "model: drift {:?}, sigma {:?}", model.drift, model.sigma);
    let h = model.holder;
    let _ = writeln!(
        w,
        "hölder metadata: x0 = {}, alpha = {}, gamma = {}, delta = {}",
        h.x0, h.alpha, h.gamma, h.delta
    );
    let class = classify_recurrence(model, RecurrenceOptions::default())?;
    let mass = match invariant_mass_total(model, DEFAULT_X_MAX)? {
        TotalMass::Finite(m) => format!("finite ({m:.6})"),
        TotalMass::Infinite => "infinite".into(),
        TotalMass::Inconclusive => "inconclusive".into(),
    };
    let _ = writeln!(w, "classification: {class}; invariant mass {mass}");

    let cov = dir.join("coverage.csv");
    if cov.exists() {
        let (header, rows) = read_table(&cov)?;
        let (ci, ti, mi, vi, ui) = (
            col(&header, "statistic"),
            col(&header, "t"),
            col(&header, "m"),
            col(&header, "coverage"),
            col(&header, "undefined_fraction"),
        );
        if let (Some(ci), Some(ti), Some(mi), Some(vi), Some(ui)) = (ci, ti, mi, vi, ui) {
            let t_max = rows.iter().map(|r| num(&r[ti])).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(w, "coverage at t = {t_max}:");
            let _ = writeln!(
                w,
                "  {:<28} {:>8} {:>9} {:>10}",
                "statistic", "m", "coverage", "undefined"
            );
            for r in rows.iter().filter(|r| num(&r[ti]) == t_max) {
                let _ = writeln!(
                    w,
                    "  {:<28} {:>8} {:>9.3} {:>10.3}",
                    r[ci],
                    num(&r[mi]),
                    num(&r[vi]),
                    num(&r[ui])
                );
            }
        }
    }

    let fit = dir.join("ratefit.csv");
    let (regime, target) = target_exponent(model, cfg.estimate.alpha)?;
    if fit.exists() {
        let (header, rows) = read_table(&fit)?;
        if let (Some(si), Some(ei), Some(row)) = (col(&header, "slope"), col(&header, "stderr_slope"), rows.first()) {
            let _ = writeln!(
                w,
                "rate slope {} ± {}",
                signed(num(&row[si]), 4),
                format_args!("{:.4}", num(&row[ei]))
            );
        }
    }
    let _ = writeln!(w, "regime: {regime}");
    let _ = writeln!(w, "target exponent {}", signed(target, 4));
    Ok(out)
}
