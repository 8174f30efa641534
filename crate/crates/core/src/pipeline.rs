//! The analysis chain end to end: simulate each fridge temperature, reduce
//! to peak-area series, fit the heating curves, calibrate, convert to
//! occupancy and compute the figures of merit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Weights, RunConfig};
use crate::dsp::{peak_area, FilterSpec, PeakAreaSeries};
use crate::error::{Error, Result};
use crate::infer::{
    calibration_ci, fit_calibration, fit_heating_weighted, fit_occupancy_curve, occupancy_ci, to_occupancy, HeatingFit, NoiseBudget,
    OccupancyFit, OffsetConvention,
};
use crate::metrics::{BathSummary, FiguresOfMerit};
use crate::synth::{synthesize_ensemble_with_limit, TraceSet};

#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureResult {
    /// Fridge temperature, K.
    pub temperature: f64,
    pub series: PeakAreaSeries,
    pub fit: HeatingFit,
}

/// One onset area per fridge temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetPoint {
    pub temperature: f64,
    pub area_t0: f64,
    pub area_t0_ci95: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    pub temperature: f64,
    pub n: f64,
    /// From the onset-area half-width only.
    pub n_ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub budget: NoiseBudget,
    pub points: Vec<OccupancyPoint>,
    pub curve: OccupancyFit,
    /// n_base half-width including the calibration line's uncertainty.
    pub n_base_ci95: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub temperatures: Vec<TemperatureResult>,
    pub offres_area: Option<f64>,
    pub calibration: Calibration,
    pub figures: FiguresOfMerit,
}

pub fn simulate_temperature(cfg: &RunConfig, index: usize) -> Result<TraceSet> {
    let t = *cfg
        .bath
        .temperatures
        .get(index)
        .ok_or_else(|| Error::domain(format!("no temperature at index {index}")))?;
    synthesize_ensemble_with_limit(
        &cfg.pulse_config(cfg.ensemble_seed(index)),
        &cfg.truth_at(t)?,
        cfg.limits.max_trace_bytes,
    )
}

pub fn simulate_off_resonance(cfg: &RunConfig) -> Result<TraceSet> {
    synthesize_ensemble_with_limit(
        &cfg.pulse_config(cfg.ensemble_seed(cfg.bath.temperatures.len())),
        &cfg.off_resonance_truth()?,
        cfg.limits.max_trace_bytes,
    )
}

pub fn analyze_set(
    set: &TraceSet,
    filt: &FilterSpec,
    weights: Weights,
) -> Result<(PeakAreaSeries, HeatingFit)> {
    let series = peak_area(set, filt)?;
    let sigma = match weights {
        Weights::Uniform => None,
        Weights::Ensemble => {
            if series.stderr.len() != series.len() || series.stderr.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::domain(
                    "ensemble weights need at least two repetitions with spread at every point",
                ));
            }
            Some(series.stderr.as_slice())
        }
    };
    let fit = fit_heating_weighted(&series, sigma)?;
    Ok((series, fit))
}

/// Linear calibration on the hot points, then occupancies and the offset
/// fit over all points.
pub fn calibrate(
    points: &[OnsetPoint],
    f_m: f64,
    t_min: f64,
    convention: OffsetConvention,
    weights: Weights,
    offres_area: Option<f64>,
) -> Result<Calibration> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.temperature, p.area_t0)).collect();
    let weighted = weights == Weights::Ensemble;
    let area_sigma: Vec<f64> = points.iter().map(|p| p.area_t0_ci95).collect();
    if weighted && area_sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::domain("weighted calibration needs finite positive onset half-widths"));
    }
    let mut budget = fit_calibration(&pairs, weighted.then_some(area_sigma.as_slice()), f_m, t_min)?;
    let mut notes = Vec::new();
    if let Some(a) = offres_area {
        match budget.clone().with_imprecision(a) {
            Ok(b) => budget = b,
            Err(Error::Inconsistent(m)) => notes.push(format!("imprecision split skipped: {m}")),
            Err(e) => return Err(e),
        }
    }
    let occ: Vec<OccupancyPoint> = points
        .iter()
        .map(|p| {
            Ok(OccupancyPoint {
                temperature: p.temperature,
                n: to_occupancy(p.area_t0, &budget)?,
                n_ci95: occupancy_ci(p.area_t0_ci95, &budget),
            })
        })
        .collect::<Result<_>>()?;
    let curve_pts: Vec<(f64, f64)> = occ.iter().map(|p| (p.temperature, p.n)).collect();
    let n_sigma: Vec<f64> = occ.iter().map(|p| p.n_ci95).collect();
    let curve = fit_occupancy_curve(&curve_pts, weighted.then_some(n_sigma.as_slice()), f_m, convention)?;
    let n_base_ci95 = curve.n_base_ci95.hypot(calibration_ci(curve.n_base, &budget));
    Ok(Calibration {
        budget,
        points: occ,
        curve,
        n_base_ci95,
        notes,
    })
}

/// Figures of merit; `n_base` fills the ambient occupancy unless the
/// config overrides it.
pub fn figures(cfg: &RunConfig, n_base: Option<f64>) -> Result<FiguresOfMerit> {
    let n_th = cfg.metrics.n_th.or(n_base).ok_or_else(|| {
        Error::Dependency("ambient occupancy: set metrics.n_th or supply an occupancy fit".into())
    })?;
    let bath = BathSummary {
        gamma_total: cfg.metrics.gamma_total.unwrap_or(cfg.bath.gamma_total),
        n_eq: cfg.metrics.n_eq.unwrap_or(cfg.bath.n_eq),
        n_th: n_th.max(0.0),
    };
    FiguresOfMerit::compute(&cfg.device.optical, &cfg.mechanical()?, &bath)
}

/// Simulates and reduces every temperature; traces are dropped once reduced.
pub fn run_temperatures(cfg: &RunConfig) -> Result<Vec<TemperatureResult>> {
    let filt = cfg.filter_spec()?;
    cfg.bath
        .temperatures
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let set = simulate_temperature(cfg, i)?;
            let (series, fit) = analyze_set(&set, &filt, cfg.fit.weights)?;
            Ok(TemperatureResult {
                temperature: t,
                series,
                fit,
            })
        })
        .collect()
}

pub fn off_resonance_area(cfg: &RunConfig) -> Result<Option<f64>> {
    if !cfg.truth.off_resonance {
        return Ok(None);
    }
    let set = simulate_off_resonance(cfg)?;
    Ok(Some(peak_area(&set, &cfg.filter_spec()?)?.mean()))
}

pub fn onset_points(results: &[TemperatureResult]) -> Vec<OnsetPoint> {
    results
        .iter()
        .map(|r| OnsetPoint {
            temperature: r.temperature,
            area_t0: r.fit.area_t0,
            area_t0_ci95: r.fit.ci95[0],
        })
        .collect()
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    let temperatures = run_temperatures(cfg)?;
    let offres_area = off_resonance_area(cfg)?;
    let calibration = calibrate(
        &onset_points(&temperatures),
        cfg.device.mechanical.f_m,
        cfg.fit.t_min,
        cfg.fit.offset,
        cfg.fit.weights,
        offres_area,
    )?;
    let calibration = Calibration {
        budget: calibration.budget.with_bandwidth(cfg.filter.bandwidth),
        ..calibration
    };
    let figures = figures(cfg, Some(calibration.curve.n_base))?;
    Ok(PipelineRun {
        temperatures,
        offres_area,
        calibration,
        figures,
    })
}
