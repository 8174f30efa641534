//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Digest as _;

use crate::config::RunConfig;
use crate::dsp::{lorentzian_fit, peak_area, LorentzianFit, PeakAreaSeries};
use crate::error::{Error, Result};
use crate::infer::{HeatingFit, NoiseBudget, OccupancyFit};
use crate::io::{
    col, load_trace_file, read_columns, read_report, save_trace_file, write_columns, write_report, Column, Stamp,
    TraceMeta, TRACE_EXTENSION,
};
use crate::metrics::FiguresOfMerit;
use crate::model::bose_einstein;
use crate::pipeline::{
    analyze_set, calibrate, figures, run_pipeline, simulate_off_resonance, simulate_temperature, Calibration,
    OnsetPoint, TemperatureResult,
};

const DEFAULT_OUT: &str = "pulsetherm-out";
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Parser)]
#[command(name = "pulsetherm", version, about = "Pulsed heterodyne phonon thermometry")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trace ensemble per fridge temperature.
    Simulate,
    /// Peak-area series and heating fits for trace files.
    Analyze {
        /// Trace files or directories (default: <out>/traces).
        inputs: Vec<PathBuf>,
    },
    /// Linear calibration and occupancy fit from heating fits.
    Calibrate {
        /// Heating-fit table (default: <out>/heating_fits.csv).
        input: Option<PathBuf>,
    },
    /// Figures of merit.
    Metrics {
        /// Occupancy fit report (default: <out>/occupancy_fit.toml).
        input: Option<PathBuf>,
    },
    /// simulate, analyze, calibrate and metrics in one go.
    Pipeline,
    /// Lorentzian fit to a (wavelength, transmission) scan.
    ScanFit {
        input: PathBuf,
        /// Wavelength unit of the first column, in metres.
        #[arg(long, default_value_t = 1e-9)]
        wavelength_unit: f64,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

fn context(cli: &Cli) -> Result<Ctx> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("this command needs --config PATH".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Ctx { cfg, out })
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => {
            let ctx = context(cli)?;
            let files = simulate(&ctx.cfg, &ctx.out)?;
            println!("wrote {} trace files to {}", files.len(), ctx.out.join("traces").display());
        }
        Command::Analyze { inputs } => {
            let ctx = context(cli)?;
            let inputs = if inputs.is_empty() {
                vec![ctx.out.join("traces")]
            } else {
                inputs.clone()
            };
            let fits = analyze(&ctx.cfg, &inputs, &ctx.out)?;
            print_heating(&fits);
        }
        Command::Calibrate { input } => {
            let ctx = context(cli)?;
            let input = input.clone().unwrap_or_else(|| ctx.out.join("heating_fits.csv"));
            let cal = calibrate_cmd(&ctx.cfg, &input, &ctx.out)?;
            print_calibration(&cal);
        }
        Command::Metrics { input } => {
            let ctx = context(cli)?;
            let input = input.clone().unwrap_or_else(|| ctx.out.join("occupancy_fit.toml"));
            let fom = metrics_cmd(&ctx.cfg, &input, &ctx.out)?;
            print_figures(&fom);
        }
        Command::Pipeline => {
            let ctx = context(cli)?;
            let report = pipeline_cmd(&ctx.cfg, &ctx.out)?;
            print_calibration(&report.calibration);
            print_figures(&report.figures);
        }
        Command::ScanFit { input, wavelength_unit } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let r = scan_fit(input, *wavelength_unit, &out)?;
            println!(
                "center {:.6e} m, fwhm {:.4e} m, kappa {:.4e} Hz, Q {:.4e}",
                r.center_m, r.fwhm_m, r.kappa_hz, r.q_optical
            );
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stamp_of(cfg: &RunConfig) -> Stamp {
    Stamp {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

fn trace_name(index: usize, t: f64) -> String {
    format!("T{index:02}_{t:.3}K.{TRACE_EXTENSION}")
}

/// Writes one container plus sidecar per temperature, and the
/// off-resonance ensemble when configured.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let total = cfg.trace_bytes();
    if total > cfg.limits.max_trace_bytes {
        return Err(Error::Resource {
            what: format!(
                "{} ensembles of {} x {} samples (raise limits.max_trace_bytes to allow)",
                cfg.bath.temperatures.len() + usize::from(cfg.truth.off_resonance),
                cfg.pulse.n_reps,
                cfg.pulse_config(0).n_samples()
            ),
            required_bytes: total,
            limit_bytes: cfg.limits.max_trace_bytes,
        });
    }
    let dir = out.join("traces");
    create_dir(&dir)?;
    let stamp = stamp_of(cfg);
    let mut files: Vec<PathBuf> = cfg
        .bath
        .temperatures
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let set = simulate_temperature(cfg, i)?;
            let path = dir.join(trace_name(i, t));
            let meta = TraceMeta {
                config_hash: stamp.config_hash.clone(),
                seed: stamp.seed,
                temperature: Some(t),
                off_resonance: false,
                pulse: set.provenance.pulse,
                truth: set.truth,
            };
            save_trace_file(&path, &set, &meta)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    if cfg.truth.off_resonance {
        let set = simulate_off_resonance(cfg)?;
        let path = dir.join(format!("offres.{TRACE_EXTENSION}"));
        let meta = TraceMeta {
            config_hash: stamp.config_hash.clone(),
            seed: stamp.seed,
            temperature: None,
            off_resonance: true,
            pulse: set.provenance.pulse,
            truth: set.truth,
        };
        save_trace_file(&path, &set, &meta)?;
        files.push(path);
    }
    Ok(files)
}

fn collect_trace_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for entry in rd {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                if path.extension().and_then(|e| e.to_str()) == Some(TRACE_EXTENSION) {
                    files.push(path);
                }
            }
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Error::Dependency(format!("{} not found", p.display())));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Usage("no trace files among the inputs".into()));
    }
    Ok(files)
}

const AREA_COLUMNS: [Column<'static>; 3] = [col("t", "s"), col("area", "V^2"), col("stderr", "V^2")];

fn write_area(path: &Path, stamp: &Stamp, s: &PeakAreaSeries) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..s.len())
        .map(|i| vec![s.t[i], s.area[i], s.stderr.get(i).copied().unwrap_or(f64::NAN)])
        .collect();
    write_columns(path, stamp, &AREA_COLUMNS, &rows)
}

const HEATING_UNITS: &[(&str, &str)] = &[
    ("temperature", "K"),
    ("area_t0, area_eq, residual_rms", "V^2"),
    ("decay_rate", "1/s"),
    ("ci95", "95% half-widths of area_t0 [V^2], area_eq [V^2], decay_rate [1/s]"),
];

#[derive(Serialize, Deserialize)]
struct HeatingReport {
    temperature: f64,
    fit: HeatingFit,
}

const HEATING_COLUMNS: [Column<'static>; 8] = [
    col("temperature", "K"),
    col("area_t0", "V^2"),
    col("area_t0_ci95", "V^2"),
    col("area_eq", "V^2"),
    col("area_eq_ci95", "V^2"),
    col("decay_rate", "1/s"),
    col("decay_rate_ci95", "1/s"),
    col("ill_conditioned", "flag"),
];

fn write_heating_table(path: &Path, stamp: &Stamp, results: &[TemperatureResult]) -> Result<()> {
    let rows: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            let f = &r.fit;
            vec![
                r.temperature,
                f.area_t0,
                f.ci95[0],
                f.area_eq,
                f.ci95[1],
                f.decay_rate,
                f.ci95[2],
                f64::from(u8::from(f.ill_conditioned)),
            ]
        })
        .collect();
    write_columns(path, stamp, &HEATING_COLUMNS, &rows)
}

#[derive(Serialize, Deserialize)]
struct OffresReport {
    /// Mean in-band area of the noise-only ensemble, V².
    area: f64,
}

fn write_results(out: &Path, stamp: &Stamp, results: &[TemperatureResult]) -> Result<()> {
    let dir = out.join("analysis");
    create_dir(&dir)?;
    results.par_iter().enumerate().try_for_each(|(i, r)| -> Result<()> {
        let stem = format!("T{i:02}_{:.3}K", r.temperature);
        write_area(&dir.join(format!("{stem}_area.csv")), stamp, &r.series)?;
        write_report(
            &dir.join(format!("{stem}_heating.toml")),
            "heating fit",
            stamp,
            HEATING_UNITS,
            &HeatingReport {
                temperature: r.temperature,
                fit: r.fit.clone(),
            },
        )
    })?;
    write_heating_table(&out.join("heating_fits.csv"), stamp, results)
}

/// Reduces each trace file and fits its heating curve.
pub fn analyze(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Vec<TemperatureResult>> {
    let files = collect_trace_files(inputs)?;
    let filt = cfg.filter_spec()?;
    let stamp = stamp_of(cfg);
    let loaded: Vec<(PathBuf, TraceMeta)> = files
        .iter()
        .map(|p| {
            let bytes_meta = crate::io::sidecar_path(p);
            if !bytes_meta.exists() {
                return Err(Error::Dependency(format!("metadata sidecar for {} is missing", p.display())));
            }
            Ok((p.clone(), crate::io::read_toml::<TraceMeta>(&bytes_meta)?))
        })
        .collect::<Result<_>>()?;
    for (p, m) in &loaded {
        if m.config_hash != stamp.config_hash {
            eprintln!("warning: {} was simulated from a different config", p.display());
        }
    }

    let mut offres: Option<f64> = None;
    let mut results: Vec<TemperatureResult> = Vec::new();
    let reduced: Vec<(TraceMeta, PeakAreaSeries, Option<HeatingFit>)> = loaded
        .par_iter()
        .map(|(p, _)| {
            let (set, meta) = load_trace_file(p)?;
            if meta.off_resonance {
                let s = peak_area(&set, &filt)?;
                Ok((meta, s, None))
            } else {
                let (s, f) = analyze_set(&set, &filt, cfg.fit.weights)?;
                Ok((meta, s, Some(f)))
            }
        })
        .collect::<Result<_>>()?;
    for (meta, series, fit) in reduced {
        match (fit, meta.temperature) {
            (None, _) => offres = Some(series.mean()),
            (Some(fit), Some(t)) => results.push(TemperatureResult {
                temperature: t,
                series,
                fit,
            }),
            (Some(_), None) => {
                return Err(Error::Format {
                    path: PathBuf::from("sidecar"),
                    field: "temperature".into(),
                    detail: "on-resonance ensemble without a fridge temperature".into(),
                })
            }
        }
    }
    if results.is_empty() {
        return Err(Error::Usage("no on-resonance trace files among the inputs".into()));
    }
    results.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    write_results(out, &stamp, &results)?;
    if let Some(area) = offres {
        write_report(
            &out.join("offres_area.toml"),
            "off-resonance floor",
            &stamp,
            &[("area", "V^2")],
            &OffresReport { area },
        )?;
    }
    Ok(results)
}

fn read_heating_table(path: &Path) -> Result<Vec<OnsetPoint>> {
    if !path.exists() {
        return Err(Error::Dependency(format!("{} not found; run analyze first", path.display())));
    }
    let table = read_columns(path)?;
    let idx = |name: &str| {
        table.find(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            field: name.into(),
            detail: "column missing".into(),
        })
    };
    let (it, ia, ic) = (idx("temperature")?, idx("area_t0")?, idx("area_t0_ci95")?);
    if table.rows.is_empty() {
        return Err(Error::Usage(format!("{} holds no rows", path.display())));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| OnsetPoint {
            temperature: r[it],
            area_t0: r[ia],
            area_t0_ci95: r[ic],
        })
        .collect())
}

const BUDGET_UNITS: &[(&str, &str)] = &[
    ("alpha, alpha_ci95", "V^2/phonon"),
    ("beta, beta_ci95", "V^2"),
    ("alpha_beta_cov95", "V^4/phonon"),
    ("delta_omega", "Hz"),
];

const OCCUPANCY_UNITS: &[(&str, &str)] = &[
    ("n_base, n_base_ci95, offset_param (occupancy convention)", "phonons"),
    ("t_base, t_device_base, offset_param (temperature convention)", "K"),
    ("n_base_ci95_total", "phonons, including the calibration line"),
];

#[derive(Serialize, Deserialize)]
struct OccupancyReport {
    n_base_ci95_total: f64,
    fit: OccupancyFit,
}

#[derive(Serialize, Deserialize)]
struct BudgetReport {
    budget: NoiseBudget,
    #[serde(default)]
    notes: Vec<String>,
}

const OCCUPANCY_COLUMNS: [Column<'static>; 4] = [
    col("temperature", "K"),
    col("n", "phonons"),
    col("n_ci95", "phonons"),
    col("n_model", "phonons"),
];

fn write_calibration(out: &Path, stamp: &Stamp, cal: &Calibration, f_m: f64) -> Result<()> {
    write_report(
        &out.join("noise_budget.toml"),
        "noise budget",
        stamp,
        BUDGET_UNITS,
        &BudgetReport {
            budget: cal.budget.clone(),
            notes: cal.notes.clone(),
        },
    )?;
    write_report(
        &out.join("occupancy_fit.toml"),
        "occupancy fit",
        stamp,
        OCCUPANCY_UNITS,
        &OccupancyReport {
            n_base_ci95_total: cal.n_base_ci95,
            fit: cal.curve.clone(),
        },
    )?;
    let rows: Vec<Vec<f64>> = cal
        .points
        .iter()
        .map(|p| {
            let model = match cal.curve.convention {
                crate::infer::OffsetConvention::Occupancy => {
                    bose_einstein(p.temperature, f_m)? + cal.curve.offset_param
                }
                crate::infer::OffsetConvention::Temperature => {
                    bose_einstein(p.temperature + cal.curve.offset_param, f_m)?
                }
            };
            Ok(vec![p.temperature, p.n, p.n_ci95, model])
        })
        .collect::<Result<_>>()?;
    write_columns(&out.join("occupancy.csv"), stamp, &OCCUPANCY_COLUMNS, &rows)
}

pub fn calibrate_cmd(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Calibration> {
    let points = read_heating_table(input)?;
    let offres_path = input.with_file_name("offres_area.toml");
    let offres = if offres_path.exists() {
        Some(read_report::<OffresReport>(&offres_path)?.1.area)
    } else {
        None
    };
    let f_m = cfg.device.mechanical.f_m;
    let cal = calibrate(&points, f_m, cfg.fit.t_min, cfg.fit.offset, cfg.fit.weights, offres)?;
    let cal = Calibration {
        budget: cal.budget.with_bandwidth(cfg.filter.bandwidth),
        ..cal
    };
    create_dir(out)?;
    write_calibration(out, &stamp_of(cfg), &cal, f_m)?;
    Ok(cal)
}

const FOM_UNITS: &[(&str, &str)] = &[
    ("gamma_om", "Hz"),
    ("coop, coop_q", "dimensionless"),
    ("n_add_ambient, n_add_total", "quanta"),
];

pub fn metrics_cmd(cfg: &RunConfig, input: &Path, out: &Path) -> Result<FiguresOfMerit> {
    let n_base = if cfg.metrics.n_th.is_some() {
        None
    } else {
        Some(read_report::<OccupancyReport>(input)?.1.fit.n_base)
    };
    let fom = figures(cfg, n_base)?;
    create_dir(out)?;
    write_report(&out.join("figures_of_merit.toml"), "figures of merit", &stamp_of(cfg), FOM_UNITS, &fom)?;
    Ok(fom)
}

/// Everything a pipeline run produced, as written to report.toml.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub onset: Vec<OnsetPoint>,
    pub offres_area: Option<f64>,
    pub calibration: Calibration,
    pub figures: FiguresOfMerit,
}

pub fn pipeline_cmd(cfg: &RunConfig, out: &Path) -> Result<PipelineReport> {
    let run = run_pipeline(cfg)?;
    let stamp = stamp_of(cfg);
    create_dir(out)?;
    write_results(out, &stamp, &run.temperatures)?;
    if let Some(area) = run.offres_area {
        write_report(
            &out.join("offres_area.toml"),
            "off-resonance floor",
            &stamp,
            &[("area", "V^2")],
            &OffresReport { area },
        )?;
    }
    write_calibration(out, &stamp, &run.calibration, cfg.device.mechanical.f_m)?;
    write_report(&out.join("figures_of_merit.toml"), "figures of merit", &stamp, FOM_UNITS, &run.figures)?;
    let report = PipelineReport {
        onset: crate::pipeline::onset_points(&run.temperatures),
        offres_area: run.offres_area,
        calibration: run.calibration,
        figures: run.figures,
    };
    write_report(
        &out.join("report.toml"),
        "pipeline report",
        &stamp,
        &[("areas", "V^2"), ("occupancies", "phonons"), ("temperatures", "K"), ("rates", "Hz")],
        &report,
    )?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanFit {
    pub center_m: f64,
    pub fwhm_m: f64,
    /// Linewidth in frequency, Hz.
    pub kappa_hz: f64,
    pub q_optical: f64,
    /// Fractional transmission dip at the centre.
    pub dip_depth: f64,
    pub fit: LorentzianFit,
}

/// Fits a Lorentzian to the first two columns of a wavelength scan.
pub fn scan_fit(input: &Path, wavelength_unit: f64, out: &Path) -> Result<ScanFit> {
    if !input.exists() {
        return Err(Error::Dependency(format!("{} not found", input.display())));
    }
    let table = read_columns(input)?;
    if table.rows.is_empty() || table.names.len() < 2 {
        return Err(Error::Usage(format!("{} needs two columns of data", input.display())));
    }
    let x: Vec<f64> = table.column(0).iter().map(|v| v * wavelength_unit).collect();
    let y = table.column(1);
    let fit = lorentzian_fit(&x, &y)?;
    let center = fit.center;
    let fwhm = fit.fwhm;
    let result = ScanFit {
        center_m: center,
        fwhm_m: fwhm,
        kappa_hz: SPEED_OF_LIGHT * fwhm / (center * center),
        q_optical: center / fwhm,
        dip_depth: if fit.offset != 0.0 { -fit.amplitude / fit.offset } else { f64::NAN },
        fit,
    };
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let stamp = Stamp {
        config_hash: hex::encode(sha2::Sha256::digest(&bytes)),
        seed: 0,
    };
    create_dir(out)?;
    write_report(
        &out.join("scan_fit.toml"),
        "cavity scan fit",
        &stamp,
        &[("center_m, fwhm_m", "m"), ("kappa_hz", "Hz"), ("fit.center, fit.fwhm", "m")],
        &result,
    )?;
    Ok(result)
}

fn print_heating(results: &[TemperatureResult]) {
    for r in results {
        println!(
            "T = {:.3} K: A0 = {:.4e} ± {:.2e} V², Γ = {:.4e} ± {:.2e} /s{}",
            r.temperature,
            r.fit.area_t0,
            r.fit.ci95[0],
            r.fit.decay_rate,
            r.fit.ci95[2],
            if r.fit.ill_conditioned { " (ill-conditioned)" } else { "" }
        );
    }
}

fn print_calibration(cal: &Calibration) {
    let b = &cal.budget;
    println!("alpha = {:.4e} ± {:.2e} V²/phonon", b.alpha, b.alpha_ci95);
    println!("beta  = {:.4e} ± {:.2e} V²", b.beta, b.beta_ci95);
    if let Some(r) = b.s_imp_frac {
        println!("S_imp/(S_ba+S_gs) = {r:.3}");
    }
    let c = &cal.curve;
    println!(
        "n_base = {:.3} ± {:.3} phonons at {} K (± {:.3} with calibration), T_device = {:.4} ± {:.4} K",
        c.n_base, c.n_base_ci95, c.t_base, cal.n_base_ci95, c.t_device_base, c.t_device_base_ci95
    );
    for n in &cal.notes {
        println!("note: {n}");
    }
}

fn print_figures(f: &FiguresOfMerit) {
    println!("Γ_om = {:.4e} Hz, C = {:.4}, C_qu = {:.4e}", f.gamma_om, f.coop, f.coop_q);
    println!("n_add ambient = {:.4}, total = {:.2}", f.n_add_ambient, f.n_add_total);
}


