//! Fits that turn peak-area series into occupancies: exponential heating
//! curves, the linear area-versus-occupancy calibration, the thermalization
//! curve with an offset, and the imprecision split of the noise floor.

use serde::{Deserialize, Serialize};

use crate::dsp::PeakAreaSeries;
use crate::error::{Error, Result};
use crate::lsq::{self, Model};
use crate::model::{bose_einstein, bose_einstein_temperature, bose_einstein_temperature_slope};

/// Minimum number of area samples accepted by [`fit_heating`].
pub const MIN_HEATING_POINTS: usize = 20;

/// Below this product of rate and data span the decay rate is poorly
/// constrained and the fit is flagged.
pub const MIN_RATE_SPAN: f64 = 0.5;

/// area(t) = A_eq + (A_0 - A_eq) exp(-Γ t), t measured from pulse onset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatingFit {
    /// Area extrapolated to pulse onset, V².
    pub area_t0: f64,
    /// Saturated area, V².
    pub area_eq: f64,
    /// Relaxation rate of the area, 1/s.
    pub decay_rate: f64,
    /// 95% half-widths for area_t0, area_eq, decay_rate.
    pub ci95: [f64; 3],
    pub residual_rms: f64,
    /// Covariance inflation applied for serially correlated residuals.
    pub correlation_time: f64,
    pub n_points: usize,
    /// Set when Γ·span < 0.5 or the parameters are not jointly identifiable.
    pub ill_conditioned: bool,
}

/// Linear calibration area = alpha·n + beta, plus the optional split of
/// beta into imprecision and motional parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// V² per phonon.
    pub alpha: f64,
    /// V².
    pub beta: f64,
    pub alpha_ci95: f64,
    pub beta_ci95: f64,
    /// Covariance of alpha and beta on the same 95% scale as the half-widths.
    #[serde(default)]
    pub alpha_beta_cov95: f64,
    /// Imprecision over motional (backaction plus ground-state) noise.
    pub s_imp_frac: Option<f64>,
    /// Filter bandwidth the areas were integrated over, Hz.
    pub delta_omega: Option<f64>,
    pub n_points: usize,
}

impl NoiseBudget {
    pub fn with_imprecision(mut self, offres_area: f64) -> Result<Self> {
        self.s_imp_frac = Some(imprecision_split(self.beta, offres_area)?);
        Ok(self)
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.delta_omega = Some(bandwidth);
        self
    }
}

/// How the thermalization curve departs from the fridge Bose-Einstein law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetConvention {
    /// n(T) = n_BE(T) + offset.
    #[default]
    Occupancy,
    /// n(T) = n_BE(T + offset): the device sits a fixed step above the fridge.
    Temperature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyFit {
    pub convention: OffsetConvention,
    /// Phonons in the offset convention, kelvin in the temperature one.
    pub offset_param: f64,
    pub offset_ci95: f64,
    /// Lowest fridge temperature in the data, K.
    pub t_base: f64,
    /// Fitted occupancy at t_base.
    pub n_base: f64,
    pub n_base_ci95: f64,
    /// Temperature whose Bose-Einstein occupancy equals n_base, K.
    pub t_device_base: f64,
    pub t_device_base_ci95: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

struct Relaxation;

impl Model for Relaxation {
    fn n_params(&self) -> usize {
        3
    }

    // p = [A_0, A_eq, ln Γ]
    fn eval(&self, t: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let rate = p[2].exp();
        let e = (-rate * t).exp();
        g[0] = e;
        g[1] = 1.0 - e;
        g[2] = -(p[0] - p[1]) * t * rate * e;
        p[1] + (p[0] - p[1]) * e
    }

    fn constrain(&self, p: &mut [f64]) {
        p[2] = p[2].clamp(-60.0, 60.0);
    }
}

/// Fits the relaxation model to an ensemble area series with uniform weights.
pub fn fit_heating(series: &PeakAreaSeries) -> Result<HeatingFit> {
    fit_heating_weighted(series, None)
}

/// As [`fit_heating`], with optional per-point standard errors.
pub fn fit_heating_weighted(series: &PeakAreaSeries, sigma: Option<&[f64]>) -> Result<HeatingFit> {
    let n = series.len();
    if n < MIN_HEATING_POINTS {
        return Err(Error::domain(format!(
            "heating fit needs >= {MIN_HEATING_POINTS} points, got {n}"
        )));
    }
    if series.area.len() != n || series.area.iter().chain(&series.t).any(|v| !v.is_finite()) {
        return Err(Error::domain("heating series has non-finite or mismatched samples"));
    }
    let t_scale = series.t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_scale = series.area.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(t_scale > 0.0) {
        return Err(Error::domain("heating series has no time extent"));
    }
    if y_scale == 0.0 {
        return Ok(HeatingFit {
            area_t0: 0.0,
            area_eq: 0.0,
            decay_rate: 1.0 / t_scale,
            ci95: [0.0; 3],
            residual_rms: 0.0,
            correlation_time: 1.0,
            n_points: n,
            ill_conditioned: true,
        });
    }
    let t: Vec<f64> = series.t.iter().map(|v| v / t_scale).collect();
    let y: Vec<f64> = series.area.iter().map(|v| v / y_scale).collect();
    let sn: Option<Vec<f64>> = sigma.map(|s| s.iter().map(|v| v / y_scale).collect());

    let p0 = heating_seed(&t, &y);
    let opts = lsq::Options {
        correlated_residuals: true,
        ..Default::default()
    };
    let sol = lsq::solve(&Relaxation, &t, &y, sn.as_deref(), &p0, &opts)?;
    let ci = sol.ci95();
    let rate_n = sol.params[2].exp();
    let span = t[n - 1] - t[0];
    Ok(HeatingFit {
        area_t0: sol.params[0] * y_scale,
        area_eq: sol.params[1] * y_scale,
        decay_rate: rate_n / t_scale,
        // first order in the log-rate half-width
        ci95: [ci[0] * y_scale, ci[1] * y_scale, ci[2] * rate_n / t_scale],
        residual_rms: sol.residual_rms(n) * y_scale,
        correlation_time: sol.correlation_time,
        n_points: n,
        ill_conditioned: sol.rank_deficient || rate_n * span < MIN_RATE_SPAN,
    })
}

fn heating_seed(t: &[f64], y: &[f64]) -> [f64; 3] {
    let n = t.len();
    let tail = (n / 5).max(1);
    let a_eq = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let a_first = y[0];
    let span = t[n - 1] - t[0];
    let target = (a_first - a_eq).abs() / std::f64::consts::E;
    let rate = t
        .iter()
        .zip(y)
        .find(|(_, v)| (*v - a_eq).abs() <= target)
        .map(|(ti, _)| ti - t[0])
        .filter(|dt| *dt > 0.0)
        .map(|dt| 1.0 / dt)
        .unwrap_or(1.0 / span);
    [a_first, a_eq, rate.ln()]
}

struct Line;

impl Model for Line {
    fn n_params(&self) -> usize {
        2
    }

    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        g[0] = x;
        g[1] = 1.0;
        p[0] * x + p[1]
    }
}

/// Fits area = alpha·n_BE(T) + beta to the points with T >= t_min.
pub fn fit_calibration(
    points: &[(f64, f64)],
    sigma: Option<&[f64]>,
    f_m: f64,
    t_min: f64,
) -> Result<NoiseBudget> {
    if let Some(s) = sigma {
        if s.len() != points.len() {
            return Err(Error::domain("one standard error per calibration point"));
        }
    }
    let keep: Vec<usize> = (0..points.len()).filter(|&i| points[i].0 >= t_min).collect();
    if keep.len() < 3 {
        return Err(Error::domain(format!(
            "calibration needs >= 3 points with T >= {t_min} K, got {}",
            keep.len()
        )));
    }
    let n: Vec<f64> = keep
        .iter()
        .map(|&i| bose_einstein(points[i].0, f_m))
        .collect::<Result<_>>()?;
    let area: Vec<f64> = keep.iter().map(|&i| points[i].1).collect();
    let s: Option<Vec<f64>> = sigma.map(|s| keep.iter().map(|&i| s[i]).collect());
    fit_linear_calibration(&n, &area, s.as_deref())
}

/// Straight line area = alpha·n + beta through known occupancies.
pub fn fit_linear_calibration(n: &[f64], area: &[f64], sigma: Option<&[f64]>) -> Result<NoiseBudget> {
    if n.len() != area.len() {
        return Err(Error::domain("occupancy and area lengths differ"));
    }
    if n.len() < 2 {
        return Err(Error::domain("a calibration line needs >= 2 points"));
    }
    let n_scale = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_scale = area.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(n_scale > 0.0 && y_scale > 0.0) {
        return Err(Error::domain("calibration data are all zero"));
    }
    let x: Vec<f64> = n.iter().map(|v| v / n_scale).collect();
    let y: Vec<f64> = area.iter().map(|v| v / y_scale).collect();
    let sn: Option<Vec<f64>> = sigma.map(|s| s.iter().map(|v| v / y_scale).collect());
    let sol = lsq::solve(&Line, &x, &y, sn.as_deref(), &[1.0, 0.0], &Default::default())?;
    if sol.rank_deficient {
        return Err(Error::Fit {
            message: "calibration occupancies do not span a line".into(),
            residual_rms: sol.residual_rms(n.len()) * y_scale,
        });
    }
    let alpha = sol.params[0] * y_scale / n_scale;
    if !(alpha > 0.0) {
        return Err(Error::Fit {
            message: format!("fitted alpha = {alpha:.4e} is not positive"),
            residual_rms: sol.residual_rms(n.len()) * y_scale,
        });
    }
    let ci = sol.ci95();
    let t = lsq::t_quantile_975(sol.dof);
    let cov95 = if t.is_finite() { t * t * sol.covariance[(0, 1)] } else { 0.0 };
    Ok(NoiseBudget {
        alpha,
        beta: sol.params[1] * y_scale,
        alpha_ci95: ci[0] * y_scale / n_scale,
        beta_ci95: ci[1] * y_scale,
        alpha_beta_cov95: cov95 * y_scale * y_scale / n_scale,
        s_imp_frac: None,
        delta_omega: None,
        n_points: n.len(),
    })
}

/// Converts an onset area into phonons. Negative results are kept.
pub fn to_occupancy(area_t0: f64, budget: &NoiseBudget) -> Result<f64> {
    if !(budget.alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be positive (got {})", budget.alpha)));
    }
    Ok((area_t0 - budget.beta) / budget.alpha)
}

/// Half-width of to_occupancy(area) given the area half-width, ignoring the
/// calibration's own uncertainty.
pub fn occupancy_ci(area_ci95: f64, budget: &NoiseBudget) -> f64 {
    area_ci95 / budget.alpha
}

/// Half-width of to_occupancy at occupancy `n` from the calibration
/// uncertainty alone (first order in alpha and beta).
pub fn calibration_ci(n: f64, budget: &NoiseBudget) -> f64 {
    let a = budget.alpha;
    let var = (budget.beta_ci95 / a).powi(2)
        + (n * budget.alpha_ci95 / a).powi(2)
        + 2.0 * n / (a * a) * budget.alpha_beta_cov95;
    var.max(0.0).sqrt()
}

/// S_imp / (S_ba + S_gs) with S_imp measured off resonance.
pub fn imprecision_split(beta: f64, offres_area: f64) -> Result<f64> {
    if !(offres_area >= 0.0) {
        return Err(Error::domain(format!(
            "off-resonance area must be >= 0 (got {offres_area})"
        )));
    }
    if offres_area > beta {
        return Err(Error::Inconsistent(format!(
            "off-resonance area {offres_area:.4e} exceeds the total floor {beta:.4e}"
        )));
    }
    Ok(offres_area / (beta - offres_area))
}

struct OffsetCurve {
    f_m: f64,
    convention: OffsetConvention,
    t_floor: f64,
}

impl OffsetCurve {
    fn n_of(&self, t: f64, q: f64) -> (f64, f64) {
        match self.convention {
            OffsetConvention::Occupancy => (bose_einstein(t, self.f_m).unwrap_or(0.0) + q, 1.0),
            OffsetConvention::Temperature => {
                let td = t + q;
                let n = bose_einstein(td, self.f_m).unwrap_or(0.0);
                let x = crate::model::PLANCK * self.f_m / (crate::model::BOLTZMANN * td);
                // dn/dT = n (n + 1) x / T
                (n, n * (n + 1.0) * x / td)
            }
        }
    }
}

impl Model for OffsetCurve {
    fn n_params(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (n, d) = self.n_of(t, p[0]);
        g[0] = d;
        n
    }

    fn constrain(&self, p: &mut [f64]) {
        if self.convention == OffsetConvention::Temperature {
            p[0] = p[0].max(self.t_floor);
        }
    }
}

/// Fits occupancy against fridge temperature with a Bose-Einstein law plus
/// an offset, and reports the occupancy and device temperature at the
/// coldest point.
pub fn fit_occupancy_curve(
    points: &[(f64, f64)],
    sigma: Option<&[f64]>,
    f_m: f64,
    convention: OffsetConvention,
) -> Result<OccupancyFit> {
    if points.len() < 4 {
        return Err(Error::domain(format!(
            "occupancy fit needs >= 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(t, n)| !(*t > 0.0) || !n.is_finite()) {
        return Err(Error::domain("occupancy points need T > 0 and finite n"));
    }
    let t_base = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_top = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if t_top < 1.5 {
        return Err(Error::domain(format!(
            "occupancy points must reach 1.5 K (highest is {t_top} K)"
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let model = OffsetCurve {
        f_m,
        convention,
        t_floor: -t_base * (1.0 - 1e-6),
    };

    // seed from the coldest point's residual
    let i_base = x.iter().position(|t| *t == t_base).unwrap_or(0);
    let n_be_base = bose_einstein(t_base, f_m)?;
    let q0 = match convention {
        OffsetConvention::Occupancy => y[i_base] - n_be_base,
        OffsetConvention::Temperature => {
            let td = if y[i_base] > 0.0 {
                bose_einstein_temperature(y[i_base], f_m)?
            } else {
                t_base
            };
            td - t_base
        }
    };
    let sol = lsq::solve(&model, &x, &y, sigma, &[q0], &Default::default())?;
    let q = sol.params[0];
    let q_ci = sol.ci95()[0];
    let (n_base, dn) = model.n_of(t_base, q);
    let n_base_ci95 = q_ci * dn.abs();

    let (t_device_base, t_device_base_ci95) = match convention {
        OffsetConvention::Temperature => (t_base + q, q_ci),
        OffsetConvention::Occupancy if n_base > 0.0 => {
            let slope = bose_einstein_temperature_slope(n_base, f_m)?;
            (bose_einstein_temperature(n_base, f_m)?, slope * n_base_ci95)
        }
        // no positive temperature holds n_base quanta; report the upper bound
        OffsetConvention::Occupancy => {
            let upper = n_base + n_base_ci95;
            let t_up = if upper > 0.0 {
                bose_einstein_temperature(upper, f_m)?
            } else {
                0.0
            };
            (0.0, t_up)
        }
    };

    Ok(OccupancyFit {
        convention,
        offset_param: q,
        offset_ci95: q_ci,
        t_base,
        n_base,
        n_base_ci95,
        t_device_base,
        t_device_base_ci95,
        residual_rms: sol.residual_rms(points.len()),
        n_points: points.len(),
    })
}
