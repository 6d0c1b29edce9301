//! Command-line driver. Errors go to stderr prefixed `E:` (`E:config:` for bad
//! configuration or arguments). Exit codes: 0 success, 1 failure, 2 config error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, MapSpec};
use crate::green::{GreenEngine, GreenKind};
use crate::map::{Direction, Point2C};
use crate::measure::{calibrate, CALIBRATION_BOXES, CALIBRATION_H};
use crate::mixing::{correlation_series, dsh_experiment, fit_decay, moderate_tail, series_csv, usable_lags, DshOptions, TailVerdict};
use crate::pipeline::{build_lab, Lab};
use crate::render::{escape_time_image, write_pgm, Slice};
use crate::verify;
use crate::{io, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "henon-lab", version, about = "Green functions, equilibrium measures and mixing experiments for complex Henon maps")]
struct Cli {
    /// JSON experiment configuration; defaults describe the reference experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Set {
    Plus,
    Minus,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Escape-time PGM of a complex slice of K+ or K-.
    RenderJulia {
        /// `w=re[,im]` fixes w, `z=re[,im]` fixes z.
        #[arg(long, default_value = "w=0")]
        slice: String,
        #[arg(long, default_value_t = 512)]
        res: usize,
        /// Half-width of the square window in the free coordinate.
        #[arg(long, default_value_t = 2.0)]
        extent: f64,
        #[arg(long, value_enum, default_value_t = Set::Plus)]
        set: Set,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
    },
    /// Evaluate G+, G- and G at points given as x1,y1,x2,y2.
    Green {
        /// `reference`, `quadratic:c_re,c_im,delta_re,delta_im`; default from config.
        #[arg(long)]
        map: Option<String>,
        #[arg(long = "point", required = true, allow_hyphen_values = true)]
        points: Vec<String>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
    },
    /// Build (or reuse) the Green fields and write the measure and its summary.
    BuildMeasure,
    /// Run the identity and positivity suites.
    Verify {
        #[arg(long, default_value_t = 1000)]
        levi_samples: usize,
    },
    /// Correlation series of the configured pair and the decay fit.
    Correlate,
    /// Truncation experiment for unbounded observables.
    Dsh,
    /// Fubini-Study wedge calibration constant.
    Calibrate,
}

/// Parses `argv` (program name first) and runs; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!("E:config: {}", e.to_string().trim_end());
            return EXIT_CONFIG;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            };
            match e {
                Error::Config(msg) => eprintln!("E:config: {msg}"),
                other => eprintln!("E:run: {other}"),
            }
            code
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists, as in repeated in-process runs
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::RenderJulia {
            slice,
            res,
            extent,
            set,
            n_max,
        } => render(&cfg, &slice, res, extent, set, n_max),
        Command::Green { map, points, tol, n_max } => green(&cfg, map.as_deref(), &points, tol, n_max),
        Command::BuildMeasure => build_measure_cmd(&cfg),
        Command::Verify { levi_samples } => verify_cmd(&cfg, levi_samples),
        Command::Correlate => correlate(&cfg),
        Command::Dsh => dsh(&cfg),
        Command::Calibrate => calibrate_cmd(&cfg),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(&cfg.output.dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn lab(cfg: &ExperimentConfig) -> Result<Lab> {
    let cache = cfg.cache_dir();
    build_lab(cfg, Some(&cache))
}

fn render(cfg: &ExperimentConfig, slice: &str, res: usize, extent: f64, set: Set, n_max: usize) -> Result<i32> {
    let slice = Slice::parse(slice).map_err(|e| Error::Config(e.to_string()))?;
    if res == 0 || !(extent > 0.0) || n_max == 0 {
        return Err(Error::Config("render-julia needs res, extent and n_max positive".into()));
    }
    let map = cfg.map.build()?;
    let (dir, name) = match set {
        Set::Plus => (Direction::Forward, "plus"),
        Set::Minus => (Direction::Backward, "minus"),
    };
    let px = escape_time_image(&map, slice, res, extent, dir, n_max);
    let path = out_dir(cfg)?.join(format!("julia_{name}_{res}.pgm"));
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    write_pgm(&mut f, res, res, &px)?;
    f.flush()?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn parse_point(s: &str) -> Result<Point2C> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("point '{s}': expected x1,y1,x2,y2")))?;
    let x: [f64; 4] = v
        .try_into()
        .map_err(|_| Error::Config(format!("point '{s}': expected four coordinates")))?;
    Ok(Point2C::from_real(x))
}

fn green(cfg: &ExperimentConfig, map: Option<&str>, points: &[String], tol: f64, n_max: usize) -> Result<i32> {
    let map = match map {
        Some(m) => MapSpec::parse(m)?.build()?,
        None => cfg.map.build()?,
    };
    if !(tol > 0.0) || n_max == 0 {
        return Err(Error::Config("green needs tol > 0 and n_max > 0".into()));
    }
    let pts = points.iter().map(|p| parse_point(p)).collect::<Result<Vec<_>>>()?;
    let engine = GreenEngine::new(&map);
    println!("x1,y1,x2,y2,g_plus,g_minus,g,error_bound");
    for q in pts {
        let p = engine.green(q, GreenKind::Forward, tol, n_max)?;
        let m = engine.green(q, GreenKind::Backward, tol, n_max)?;
        let x = q.to_real();
        println!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:e}",
            x[0],
            x[1],
            x[2],
            x[3],
            p.value,
            m.value,
            p.value.max(m.value),
            p.error_bound.max(m.error_bound)
        );
    }
    Ok(EXIT_OK)
}

fn build_measure_cmd(cfg: &ExperimentConfig) -> Result<i32> {
    let lab = lab(cfg)?;
    let dir = out_dir(cfg)?;
    io::save_measure(&dir.join("measure.bin"), &lab.measure)?;
    let thresholds = lab.thresholds();
    let summary = json!({
        "map": cfg.map,
        "grid": cfg.grid,
        "mollify_cells": cfg.mollify_cells,
        "raw_total": lab.measure.raw_total,
        "clipped_fraction": lab.measure.clipped_fraction(),
        "support_cells": lab.measure.support().len(),
        "mean_green": lab.mean_green(),
        "thresholds": thresholds.as_ref().ok(),
        "thresholds_error": thresholds.as_ref().err().map(|e| e.to_string()),
    });
    write_json(&dir.join("measure.json"), &summary)?;
    println!(
        "raw_total={:.4} clipped={:.4} support={} mean_G={:.4}",
        lab.measure.raw_total,
        lab.measure.clipped_fraction(),
        lab.measure.support().len(),
        lab.mean_green()
    );
    Ok(EXIT_OK)
}

fn verify_cmd(cfg: &ExperimentConfig, levi_samples: usize) -> Result<i32> {
    let map = cfg.map.build()?;
    let seed = cfg.seed;
    let r = cfg.grid.radius;
    let mut suites = vec![
        verify::round_trip(&map, r, 1000, seed)?,
        verify::functional_equation(&map, r, 100, 1e-8, seed)?,
        verify::pullback_convergence(&map, 20, seed)?,
        verify::calibration()?,
        verify::coefficient_identities(10_000, seed),
        verify::test_function_levi(levi_samples, seed)?,
        verify::fit_oracle()?,
    ];
    let lab = lab(cfg)?;
    suites.push(verify::measure_sanity(&lab));
    let inner = cfg.observables.phi.strip_prefix("ext:").unwrap_or(&cfg.observables.phi);
    let bounded = [lab.observable(&cfg.observables.phi)?, lab.observable(&cfg.observables.psi)?];
    suites.push(verify::invariance(&lab, &bounded));
    suites.push(verify::extension_lemma(&lab, inner, 1000, levi_samples, seed)?);
    for s in &suites {
        println!("{}", s.line());
    }
    write_json(&out_dir(cfg)?.join("verify.json"), &suites)?;
    Ok(if suites.iter().all(|s| s.passed) { EXIT_OK } else { EXIT_FAILURE })
}

fn correlate(cfg: &ExperimentConfig) -> Result<i32> {
    let lab = lab(cfg)?;
    let phi = lab.observable(&cfg.observables.phi)?;
    let psi = lab.observable(&cfg.observables.psi)?;
    let series = correlation_series(&lab.measure, &lab.map, &phi, &psi, &cfg.lags, &cfg.correlation_options())?;
    let mult = cfg.correlation.noise_floor_multiplier;
    let usable = usable_lags(&series, mult);
    let dir = out_dir(cfg)?;
    fs::write(dir.join("series.csv"), series_csv(&series, &usable))?;
    let reference = -0.5 * (lab.map.degree() as f64).ln();
    let fit = fit_decay(&series, mult, cfg.seed);
    let verdict = match &fit {
        Ok(f) if f.window.len() >= 4 && f.slope <= reference + 0.15 => "consistent",
        Ok(f) if f.window.len() >= 4 => "slower_than_reference",
        Ok(_) => "too_few_usable_lags",
        Err(_) => "no_fit",
    };
    let summary = json!({
        "phi": cfg.observables.phi,
        "psi": cfg.observables.psi,
        "estimator": series.estimator_kind,
        "centering": series.centering,
        "seed": cfg.seed,
        "lags": series.lags,
        "escaped": series.escaped,
        "fit": fit.as_ref().ok(),
        "fit_error": fit.as_ref().err().map(|e| e.to_string()),
        "reference_slope": reference,
        "verdict": verdict,
    });
    write_json(&dir.join("fit.json"), &summary)?;
    match &fit {
        Ok(f) => println!(
            "slope={:.4} ci=[{:.4},{:.4}] window={:?} reference={reference:.4} verdict={verdict}",
            f.slope, f.slope_ci.0, f.slope_ci.1, f.window
        ),
        Err(e) => println!("no fit: {e}; verdict={verdict}"),
    }
    Ok(EXIT_OK)
}

fn dsh(cfg: &ExperimentConfig) -> Result<i32> {
    let lab = lab(cfg)?;
    let tail_obs = lab.observable(&cfg.tail.observable)?;
    let tail = moderate_tail(&lab.measure, &tail_obs, &cfg.tail.m_grid, &cfg.tail_options())?;
    let TailVerdict::Fit(fit) = &tail else {
        return Err(Error::InvalidArgument(format!("{} is bounded on the support; no tail exponent", cfg.tail.observable)));
    };
    let phi = lab.observable(&cfg.dsh.phi)?;
    let psi = lab.observable(&cfg.dsh.psi)?;
    let opts = DshOptions {
        correlation: cfg.correlation_options(),
        floor: cfg.dsh.floor,
        noise_floor_multiplier: cfg.correlation.noise_floor_multiplier,
    };
    let report = dsh_experiment(&lab.measure, &lab.map, &phi, &psi, fit.alpha, &cfg.dsh.lags, &opts)?;
    let mut csv = String::from(
        "n,m_n,raw,raw_stderr,bounded,bounded_stderr,phi_tail_l1,phi_tail_l2,psi_tail_l1,psi_tail_l2,assembled_bound,envelope,usable\n",
    );
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
            r.n,
            r.m_n,
            r.raw,
            r.raw_stderr,
            r.bounded,
            r.bounded_stderr,
            r.phi_tail_l1,
            r.phi_tail_l2,
            r.psi_tail_l1,
            r.psi_tail_l2,
            r.assembled_bound,
            r.envelope,
            r.usable as u8
        ));
    }
    let dir = out_dir(cfg)?;
    fs::write(dir.join("dsh.csv"), csv)?;
    // how much of the n² envelope is used at the tightest usable lag
    let tightest = report
        .rows
        .iter()
        .filter(|r| r.usable && r.n > report.first_lag)
        .map(|r| r.raw.abs() / r.envelope)
        .fold(0.0, f64::max);
    let summary = json!({
        "tail": fit,
        "alpha": report.alpha,
        "c0": report.c0,
        "first_lag": report.first_lag,
        "envelope_holds": report.envelope_holds,
        "tightest_envelope_ratio": tightest,
    });
    write_json(&dir.join("dsh.json"), &summary)?;
    println!(
        "alpha={:.4} c0={:.4e} first_lag={} envelope_holds={} tightest_ratio={tightest:.3}",
        report.alpha, report.c0, report.first_lag, report.envelope_holds
    );
    Ok(EXIT_OK)
}

fn calibrate_cmd(cfg: &ExperimentConfig) -> Result<i32> {
    let c = calibrate(CALIBRATION_H, &CALIBRATION_BOXES)?;
    write_json(&out_dir(cfg)?.join("calibration.json"), &c)?;
    println!("kappa={:.8} analytic={:.8} extrapolated_integral={:.6}", c.kappa, c.kappa_analytic, c.extrapolated);
    Ok(EXIT_OK)
}
