//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs all nine; pass criterion
//! numbers after `--` to select some (`-- 3 9`). The process exits
//! successfully even when a criterion fails, so the run is a report; set
//! `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use recurrent_lab::cli::{run_experiment, Command, DiagnoseKind, RunConfig, RunOptions};
use recurrent_lab::diagnostics::{chacon_ornstein_check, rate_regression, run_ensemble, Ensemble};
use recurrent_lab::estimate::{bandwidth_and_rate, nadaraya_watson};
use recurrent_lab::functionals::{run_accumulator, IndicatorAcc, OccupationAcc, TanakaAcc};
use recurrent_lab::model::{invariant_mass_total, DiffusionModel, Kernel, TotalMass, DEFAULT_X_MAX};
use recurrent_lab::par::try_replicate_map;
use recurrent_lab::sim::{checkpoint_steps, simulate_path, PathConfig, PathStream};
use recurrent_lab::stats::mean;

type Outcome = Result<(bool, String), String>;

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

/// Ensembles shared by criteria 4, 5 and 6.
#[derive(Default)]
struct Shared {
    ensembles: BTreeMap<&'static str, (RunConfig, Ensemble)>,
}

impl Shared {
    fn ensemble(&mut self, name: &'static str) -> Result<&(RunConfig, Ensemble), String> {
        if !self.ensembles.contains_key(name) {
            let cfg = config(name);
            let t0 = Instant::now();
            let spec = cfg.equivalent_spec().map_err(|e| e.to_string())?;
            let ens = run_ensemble(
                &cfg.model,
                &spec,
                cfg.adaptive_params(),
                &cfg.sim.path_config(),
                cfg.sim.replications,
                None,
                &cfg.ensemble_options(),
            )
            .map_err(|e| e.to_string())?;
            eprintln!(
                "  ({name}: {} replicates in {:.0} s)",
                cfg.sim.replications,
                t0.elapsed().as_secs_f64()
            );
            self.ensembles.insert(name, (cfg, ens));
        }
        Ok(&self.ensembles[name])
    }
}

/// Occupation histogram of OU on 41 bins of width 0.1 centred on
/// -2, -1.9, ..., 2, against the normalized invariant density e^{-x²}/√π.
fn invariant_density() -> Outcome {
    let cfg = config("ou_density.toml");
    let pc = cfg.sim.path_config();
    let t = pc.t_max;
    let centers: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let steps = checkpoint_steps(&[t], pc.dt).map_err(|e| e.to_string())?;
    let per_rep = try_replicate_map(cfg.sim.replications, None, |i| {
        let rc = pc.replicate(i);
        let stream = PathStream {
            model: &cfg.model,
            config: &rc,
        };
        let mut bins: Vec<IndicatorAcc> = centers
            .iter()
            .map(|&c| IndicatorAcc::new(c - 0.05, c + 0.05, 1.0, rc.dt))
            .collect();
        run_accumulator(&stream, &steps, &mut bins).map(|mut s| s.remove(0))
    })
    .map_err(|e| e.to_string())?;
    let peak = 1.0 / PI.sqrt();
    let mut worst = (0.0, 0.0);
    for (k, &c) in centers.iter().enumerate() {
        let occ: Vec<f64> = per_rep.iter().map(|r| r[k] / (t * 0.1)).collect();
        let err = (mean(&occ) - (-c * c).exp() / PI.sqrt()).abs();
        if err > worst.0 {
            worst = (err, c);
        }
    }
    let tol = 0.05 * peak;
    Ok((
        worst.0 <= tol,
        format!(
            "OU occupation histogram: sup bin error {:.4} at x = {:.1} (tolerance {tol:.4})",
            worst.0, worst.1
        ),
    ))
}

fn chacon_ornstein() -> Outcome {
    let cfg = config("bm_chacon_ornstein.toml");
    let [fa, fb] = cfg.diagnostics.f_interval;
    let [ga, gb] = cfg.estimate.g_interval;
    let s = chacon_ornstein_check(
        &cfg.model,
        (fa, fb),
        (ga, gb),
        &cfg.sim.path_config(),
        cfg.sim.replications,
        None,
    )
    .map_err(|e| e.to_string())?;
    let med = *s.median.last().unwrap();
    let undefined = *s.excluded.last().unwrap() as f64 / s.n_paths as f64;
    Ok((
        within(med, 2.0, 0.10) && undefined < 0.01,
        format!(
            "BM occupation ratio [0,2]/[0,1] at t = {}: median {med:.4} (target 2, ±10%), undefined {:.3}",
            s.checkpoints.last().unwrap(),
            undefined
        ),
    ))
}

fn local_time_oracle() -> Outcome {
    let cfg = config("bm_local_time.toml");
    let pc = cfg.sim.path_config();
    let eps = 5.0 * pc.dt.sqrt();
    let steps = checkpoint_steps(&[pc.t_max], pc.dt).map_err(|e| e.to_string())?;
    let per_rep = try_replicate_map(cfg.sim.replications, None, |i| {
        let rc = pc.replicate(i);
        let stream = PathStream {
            model: &cfg.model,
            config: &rc,
        };
        let mut acc = (
            TanakaAcc::new(0.0, rc.x_init),
            OccupationAcc::new(&cfg.model, 0.0, eps, rc.dt),
        );
        run_accumulator(&stream, &steps, &mut acc).map(|s| s[0])
    })
    .map_err(|e| e.to_string())?;
    let target = (2.0 * pc.t_max / PI).sqrt();
    let tanaka = mean(&per_rep.iter().map(|r| r.0).collect::<Vec<_>>());
    let occ = mean(&per_rep.iter().map(|r| r.1).collect::<Vec<_>>());
    let ok = within(tanaka, target, 0.03) && within(occ, target, 0.05) && within(occ, tanaka, 0.05);
    Ok((
        ok,
        format!(
            "BM local time at 0, t = {}: Tanaka mean {tanaka:.4} ({:+.2}%, ±3%), occupation mean {occ:.4} ({:+.2}%, ±5%), \
             relative gap {:.2}% (±5%), target {target:.4}",
            pc.t_max,
            100.0 * (tanaka / target - 1.0),
            100.0 * (occ / target - 1.0),
            100.0 * (occ / tanaka - 1.0).abs()
        ),
    ))
}

fn uniform_sco(shared: &mut Shared) -> Outcome {
    let (cfg, ens) = shared.ensemble("bm_ensemble.toml")?;
    let s = ens.sco_error(&cfg.model).map_err(|e| e.to_string())?;
    let last = *s.sup_error.last().unwrap();
    let mono = s.nonincreasing_within_noise(1.5);
    let errors: Vec<String> = s
        .checkpoints
        .iter()
        .zip(&s.sup_error)
        .zip(&s.noise)
        .map(|((t, e), n)| format!("t={t}: {e:.4} (noise {n:.4})"))
        .collect();
    Ok((
        last <= 0.2 && mono,
        format!(
            "BM sup_y |L/v - 2| on 21 points of [-1,1]: {}; final ≤ 0.2: {}, nonincreasing within 1.5x noise: {mono}",
            errors.join(", "),
            last <= 0.2
        ),
    ))
}

fn equivalent_scaling(shared: &mut Shared) -> Outcome {
    let (_, bm) = shared.ensemble("bm_ensemble.toml")?;
    let eq = bm.equivalent();
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, v) in eq.checkpoints.iter().zip(&eq.v_hat) {
        if *t < 1e3 {
            continue;
        }
        let target = (t / (2.0 * PI)).sqrt();
        ok &= within(*v, target, 0.10);
        parts.push(format!("BM v/sqrt(t/2pi) at t={t}: {:.4}", v / target));
    }
    let (ou_cfg, ou) = shared.ensemble("ou_ensemble.toml")?;
    let eq = ou.equivalent();
    let (t, v) = (*eq.checkpoints.last().unwrap(), *eq.v_hat.last().unwrap());
    ok &= within(v / t, 1.0, 0.05);
    parts.push(format!("OU v/t at t={t}: {:.4} (target 1 ±5%)", v / t));
    if let Ok(TotalMass::Finite(mass)) = invariant_mass_total(&ou_cfg.model, DEFAULT_X_MAX) {
        eprintln!(
            "  info: OU v·μ(R)/t at t={t}: {:.4} (v/t against the probability-normalized law)",
            v * mass / t
        );
    }
    Ok((ok, parts.join("; ")))
}

fn tightness(shared: &mut Shared) -> Outcome {
    const LISTED: [&str; 5] = [
        "af_ratio",
        "local_time_band",
        "kernel_af_band",
        "kernel_af_random_h",
        "kernel_martingale_random_h",
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, name) in [("BM", "bm_ensemble.toml"), ("OU", "ou_ensemble.toml")] {
        let (cfg, ens) = shared.ensemble(name)?;
        let b_true = cfg.model.b(cfg.estimate.x0);
        let curves = ens
            .tightness(b_true, &cfg.diagnostics.thresholds)
            .map_err(|e| e.to_string())?;
        for c in curves.iter().filter(|c| LISTED.contains(&c.statistic_name.as_str())) {
            let cov = c.final_coverage(20.0).ok_or("threshold 20 missing from the config")?;
            ok &= cov >= 0.95;
            parts.push(format!("{label} {} {cov:.3}", c.statistic_name));
        }
    }
    Ok((
        ok,
        format!("coverage at m = 20, t = 1e4 (≥ 0.95): {}", parts.join(", ")),
    ))
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

/// Runs the rate study for `name` through the experiment runner and reads
/// the slope and the scaled-error coverage back from its tables.
fn rate(name: &str, slope_range: (f64, f64), coverage_at: Option<(f64, f64)>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = config(name);
    cfg.output.directory = dir.path().to_path_buf();
    run_experiment(&cfg, Command::RateStudy, &RunOptions::default()).map_err(|e| e.to_string())?;
    let fit = &read_csv(&dir.path().join("ratefit.csv"))[0];
    let slope = num(fit, "slope");
    let mut ok = slope >= slope_range.0 && slope <= slope_range.1;
    let mut msg = format!(
        "{} rate slope {slope:.4} ± {:.4} in [{}, {}] (target {:.4})",
        fit["regime"],
        num(fit, "stderr_slope"),
        slope_range.0,
        slope_range.1,
        num(fit, "target_exponent")
    );
    if let Some((m, min)) = coverage_at {
        let rows = read_csv(&dir.path().join("coverage.csv"));
        let t_last = cfg.diagnostics.t_grid.last().copied().unwrap();
        let row = rows
            .iter()
            .find(|r| num(r, "t") == t_last && num(r, "m") == m)
            .ok_or("coverage row missing")?;
        let cov = num(row, "coverage");
        ok &= cov >= min;
        msg.push_str(&format!(
            "; scaled error coverage at K = {m}, t = {t_last}: {cov:.3} (≥ {min})"
        ));
    }
    Ok((ok, msg))
}

fn file_hashes(dir: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    recurrent_lab::cli::RunManifest::parse(&text)
        .unwrap()
        .files
        .into_iter()
        .map(|f| (f.name, f.sha256))
        .collect()
}

fn exact_properties() -> Outcome {
    let mut failures = Vec::new();

    // R·H^α = 1 wherever the cap is inactive; H decreasing, R increasing
    for alpha in [0.25, 0.5, 0.75, 1.0] {
        let delta = 0.5;
        let vs: Vec<f64> = (0..200).map(|k| 10f64.powf(-2.0 + 0.05 * k as f64)).collect();
        let hr: Vec<(f64, f64)> = vs
            .iter()
            .map(|&v| bandwidth_and_rate(v, alpha, delta).unwrap())
            .collect();
        for (&v, &(h, r)) in vs.iter().zip(&hr) {
            if h < delta && (r * h.powf(alpha) - 1.0).abs() > 1e-12 {
                failures.push(format!("R·H^α = {} at V = {v}, α = {alpha}", r * h.powf(alpha)));
            }
        }
        if hr.windows(2).any(|w| w[1].0 > w[0].0 || w[1].1 < w[0].1) {
            failures.push(format!("H or R not monotone for α = {alpha}"));
        }
    }

    // b̂ does not depend on the kernel's scale
    let ou = DiffusionModel::ornstein_uhlenbeck(1.0).unwrap();
    let path = simulate_path(&ou, &PathConfig::new(0.0, 200.0, 11).with_dt(0.01)).unwrap();
    let base = nadaraya_watson(&path, 0.0, 0.3, Kernel::QUARTIC).unwrap().b_hat;
    for c in [0.01, 3.7, 1e4] {
        let b = nadaraya_watson(&path, 0.0, 0.3, Kernel::QUARTIC.scaled(c))
            .unwrap()
            .b_hat;
        if ((b - base) / base).abs() > 1e-12 {
            failures.push(format!("kernel scale {c}: {b} vs {base}"));
        }
    }

    // rate regression on exact power laws
    let t_grid: [f64; 4] = [1e2, 1e3, 1e4, 1e5];
    for beta in [-1.0 / 3.0, -1.0 / 6.0, -0.5] {
        let errors: Vec<Vec<f64>> = t_grid
            .iter()
            .map(|&t| (1..=60).map(|k| 0.1 * k as f64 * t.powf(beta)).collect())
            .collect();
        let fit = rate_regression(&errors, &t_grid, 0.5).unwrap();
        if (fit.slope - beta).abs() > 1e-10 {
            failures.push(format!("rate regression slope {} for exponent {beta}", fit.slope));
        }
    }

    // byte-identical files across worker counts on a 10-replicate run
    let cfg = config("smoke.toml");
    let commands = [
        Command::Simulate,
        Command::Estimate,
        Command::Diagnose(DiagnoseKind::ChaconOrnstein),
        Command::Diagnose(DiagnoseKind::LocalTime),
        Command::Diagnose(DiagnoseKind::KernelAf),
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for cmd in commands {
        let mut hashes = Vec::new();
        for workers in [1, 3] {
            let dir: PathBuf = root
                .path()
                .join(format!("{}-{workers}", cmd.to_string().replace(':', "-")));
            let mut c = cfg.clone();
            c.output.directory = dir.clone();
            let opts = RunOptions {
                workers: Some(workers),
                dump: true,
            };
            run_experiment(&c, cmd, &opts).map_err(|e| e.to_string())?;
            hashes.push(file_hashes(&dir));
        }
        compared += hashes[0].len();
        if hashes[0] != hashes[1] {
            failures.push(format!("{cmd} output differs between 1 and 3 workers"));
        }
    }

    let ok = failures.is_empty();
    let msg = if ok {
        format!(
            "R·H^α = 1 and monotonicity, kernel-scale invariance, exact rate recovery, \
             {compared} files byte-identical across 1 and 3 workers"
        )
    } else {
        failures.join("; ")
    };
    Ok((ok, msg))
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut shared = Shared::default();
    let mut failed = 0;
    for k in 1..=9 {
        if !wanted(k) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = match k {
            1 => invariant_density(),
            2 => chacon_ornstein(),
            3 => local_time_oracle(),
            4 => uniform_sco(&mut shared),
            5 => equivalent_scaling(&mut shared),
            6 => tightness(&mut shared),
            7 => rate("ou_rate.toml", (-0.43, -0.23), Some((10.0, 0.9))),
            8 => rate("bump_rate.toml", (-0.25, -0.09), None),
            _ => exact_properties(),
        };
        let (pass, msg) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {k}: {} — {msg} [{:.0} s]",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failing");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
