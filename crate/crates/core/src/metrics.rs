//! Optomechanical figures of merit and the phase-tone calibration of g0.

use serde::{Deserialize, Serialize};

use crate::dsp::{lorentzian_fit, Spectrum};
use crate::error::{Error, Result};
use crate::model::{MechanicalMode, OpticalMode};

/// Bins on either side of the calibration tone attributed to the tone.
/// The Hann main lobe spans two bins each way.
const TONE_HALF_WIDTH_BINS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiguresOfMerit {
    /// Optomechanical rate, Hz.
    pub gamma_om: f64,
    pub coop: f64,
    pub coop_q: f64,
    /// Thermal quanta added by the ambient bath.
    pub n_add_ambient: f64,
    /// Quanta added including the hot bath during the pulse.
    pub n_add_total: f64,
}

/// Inputs to [`FiguresOfMerit::compute`] beyond the two modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSummary {
    /// Total decoherence rate during the pulse, Hz.
    pub gamma_total: f64,
    /// Equilibrium occupancy during the pulse.
    pub n_eq: f64,
    /// Ambient occupancy.
    pub n_th: f64,
}

impl FiguresOfMerit {
    pub fn compute(opt: &OpticalMode, mech: &MechanicalMode, bath: &BathSummary) -> Result<Self> {
        mech.validate()?;
        if !(bath.n_th >= 0.0) {
            return Err(Error::domain("ambient occupancy must be >= 0"));
        }
        let g = gamma_om(opt)?;
        let (coop, coop_q) = cooperativities(g, mech, bath.gamma_total, bath.n_eq)?;
        let ambient = if coop > 0.0 { bath.n_th / coop } else { f64::INFINITY };
        let total = if coop_q > 0.0 { 1.0 / coop_q } else { f64::INFINITY };
        Ok(FiguresOfMerit {
            gamma_om: g,
            coop,
            coop_q,
            n_add_ambient: added_noise(ambient, opt.kappa, mech.f_m)?,
            n_add_total: added_noise(total, opt.kappa, mech.f_m)?,
        })
    }
}

/// 4 g0² n_cav / κ, Hz.
pub fn gamma_om(opt: &OpticalMode) -> Result<f64> {
    opt.validate()?;
    Ok(4.0 * opt.g0 * opt.g0 * opt.n_cav / opt.kappa)
}

/// (Γ_om/Γ_m, Γ_om/(Γ·n_eq)).
pub fn cooperativities(gamma_om: f64, mech: &MechanicalMode, gamma_total: f64, n_eq: f64) -> Result<(f64, f64)> {
    if !(gamma_om >= 0.0) {
        return Err(Error::domain(format!("optomechanical rate must be >= 0 (got {gamma_om})")));
    }
    if !(mech.gamma_m > 0.0) {
        return Err(Error::domain("mechanical linewidth must be positive"));
    }
    if !(gamma_total > 0.0 && n_eq > 0.0) {
        return Err(Error::domain(format!(
            "quantum cooperativity needs gamma_total > 0 and n_eq > 0 (got {gamma_total}, {n_eq})"
        )));
    }
    Ok((gamma_om / mech.gamma_m, gamma_om / (gamma_total * n_eq)))
}

/// Added noise quanta (C + x²)/(1 + x²) with x = κ/(4 f_m). Pass
/// C = n_th/𝒞 for the ambient figure and C = 1/𝒞_qu for the total.
pub fn added_noise(c_param: f64, kappa: f64, f_m: f64) -> Result<f64> {
    if !(c_param >= 0.0) {
        return Err(Error::domain(format!("C must be >= 0 (got {c_param})")));
    }
    if !(f_m > 0.0 && kappa >= 0.0) {
        return Err(Error::domain("added noise needs f_m > 0 and kappa >= 0"));
    }
    let x = kappa / (4.0 * f_m);
    let x2 = x * x;
    Ok((c_param + x2) / (1.0 + x2))
}

/// A phase-modulation tone of known depth used as a frequency reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseCalibration {
    /// Tone frequency, Hz.
    pub f_cal: f64,
    /// Modulation depth, rad.
    pub phase_mod_depth: f64,
}

/// g0 from measured areas: g0² = φ² f_cal² / (4 n) · A_mech / A_cal.
pub fn g0_from_areas(a_mech: f64, a_cal: f64, cal: &PhaseCalibration, n_mech: f64) -> Result<f64> {
    if !(a_mech > 0.0 && a_cal > 0.0) {
        return Err(Error::domain(format!(
            "peak areas must be positive (mechanical {a_mech:.3e}, tone {a_cal:.3e})"
        )));
    }
    if !(n_mech > 0.0 && cal.f_cal > 0.0 && cal.phase_mod_depth > 0.0) {
        return Err(Error::domain("g0 calibration needs n_mech, f_cal and depth > 0"));
    }
    let phi = cal.phase_mod_depth;
    Ok((phi * phi * cal.f_cal * cal.f_cal / (4.0 * n_mech) * a_mech / a_cal).sqrt())
}

/// Areas under the mechanical line and the calibration tone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAreas {
    pub a_mech: f64,
    pub a_cal: f64,
    pub mech_center: f64,
    pub mech_fwhm: f64,
}

/// Fits the mechanical line with the tone bins masked, then takes the tone
/// power as its excess over the fitted line.
pub fn calibration_areas(spectrum: &Spectrum, f_cal: f64, f_m: f64) -> Result<CalibrationAreas> {
    let res = spectrum.resolution;
    let (f_lo, f_hi) = match (spectrum.f.first(), spectrum.f.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::domain("empty spectrum")),
    };
    let tone_w = TONE_HALF_WIDTH_BINS as f64 * res;
    if f_cal - tone_w < f_lo || f_cal + tone_w > f_hi {
        return Err(Error::domain(format!("calibration tone at {f_cal} Hz lies outside the spectrum")));
    }
    if f_m < f_lo || f_m > f_hi {
        return Err(Error::domain(format!("mechanical frequency {f_m} Hz lies outside the spectrum")));
    }
    let in_tone = |f: f64| (f - f_cal).abs() <= tone_w + 1e-9 * res;
    let (x, y): (Vec<f64>, Vec<f64>) = spectrum
        .f
        .iter()
        .zip(&spectrum.s)
        .filter(|(f, _)| !in_tone(**f))
        .map(|(f, s)| (*f, *s))
        .unzip();
    let line = lorentzian_fit(&x, &y)?;
    if !(line.amplitude > 0.0) {
        return Err(Error::domain("no mechanical peak above the background"));
    }
    if line.fwhm < 2.0 * res {
        return Err(Error::domain(format!(
            "mechanical line ({:.3e} Hz) is not resolved at {res:.3e} Hz per bin",
            line.fwhm
        )));
    }
    if (line.center - f_cal).abs() <= tone_w {
        return Err(Error::domain("calibration tone is not resolved from the mechanical line"));
    }
    let a_cal: f64 = spectrum
        .f
        .iter()
        .zip(&spectrum.s)
        .filter(|(f, _)| in_tone(**f))
        .map(|(f, s)| s - line.eval(*f))
        .sum::<f64>()
        * res;
    if !(a_cal > 0.0) {
        return Err(Error::domain("no calibration tone above the mechanical line"));
    }
    Ok(CalibrationAreas {
        a_mech: line.area(),
        a_cal,
        mech_center: line.center,
        mech_fwhm: line.fwhm,
    })
}

/// g0 from a spectrum holding the mechanical line and the phase tone.
pub fn estimate_g0(spectrum: &Spectrum, cal: &PhaseCalibration, n_mech: f64, f_m: f64) -> Result<f64> {
    let areas = calibration_areas(spectrum, cal.f_cal, f_m)?;
    g0_from_areas(areas.a_mech, areas.a_cal, cal, n_mech)
}
