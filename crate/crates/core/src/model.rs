//! Device parameters and closed-form phonon statistics.
//!
//! Every stored frequency or rate is an ordinary frequency in Hz. Angular
//! quantities are formed where they are used. The one place where that is
//! ambiguous is the total damping rate of the two-bath heating model, whose
//! quoted value may be an ordinary or an angular rate; [`RateConvention`]
//! makes that choice explicit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant, J s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// How a stored rate in "Hz" becomes an exponential decay rate in 1/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateConvention {
    /// The stored value is Γ/2π; the decay rate is 2π times it and the
    /// mechanical sideband FWHM in Hz equals the stored value.
    #[default]
    Ordinary,
    /// The stored value is already the decay rate in 1/s.
    Angular,
}

impl RateConvention {
    /// Energy (occupancy) decay rate in 1/s.
    pub fn decay_rate(self, rate: f64) -> f64 {
        match self {
            RateConvention::Ordinary => 2.0 * PI * rate,
            RateConvention::Angular => rate,
        }
    }

    /// Inverse of [`decay_rate`](Self::decay_rate).
    pub fn from_decay_rate(self, decay_rate: f64) -> f64 {
        match self {
            RateConvention::Ordinary => decay_rate / (2.0 * PI),
            RateConvention::Angular => decay_rate,
        }
    }
}

/// Full width at half maximum, in Hz, of the sideband of a mode whose
/// occupancy relaxes at `decay_rate` (1/s).
pub fn linewidth_hz(decay_rate: f64) -> f64 {
    decay_rate / (2.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicalMode {
    /// Resonance frequency, Hz.
    pub f_m: f64,
    pub q_m: f64,
    /// Linewidth f_m / Q_m, Hz.
    pub gamma_m: f64,
}

impl MechanicalMode {
    pub fn new(f_m: f64, q_m: f64) -> Result<Self> {
        let mode = MechanicalMode {
            f_m,
            q_m,
            gamma_m: f_m / q_m,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_m > 0.0 && self.q_m > 0.0) {
            return Err(Error::domain("mechanical mode needs f_m > 0 and Q_m > 0"));
        }
        let expected = self.f_m / self.q_m;
        if ((self.gamma_m - expected) / expected).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "gamma_m = {} Hz disagrees with f_m/Q_m = {} Hz",
                self.gamma_m, expected
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalMode {
    /// Cavity resonance, Hz.
    pub f_c: f64,
    /// Cavity energy linewidth, Hz.
    pub kappa: f64,
    /// Vacuum optomechanical coupling, Hz.
    pub g0: f64,
    /// Intracavity photon number.
    pub n_cav: f64,
}

impl OpticalMode {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::domain("optical mode needs kappa > 0"));
        }
        if !(self.n_cav >= 0.0 && self.g0 >= 0.0) {
            return Err(Error::domain("optical mode needs n_cav >= 0 and g0 >= 0"));
        }
        Ok(())
    }
}

/// Ambient bath plus a laser-induced hot bath, both coupled to the mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathModel {
    /// Ambient bath occupancy, phonons.
    pub n_th: f64,
    /// Ambient coupling rate, Hz.
    pub gamma_m: f64,
    /// Hot bath occupancy, phonons.
    pub n_p: f64,
    /// Hot bath coupling rate, Hz.
    pub gamma_p: f64,
    #[serde(default)]
    pub rates: RateConvention,
}

impl BathModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.n_th, self.gamma_m, self.n_p, self.gamma_p];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("bath parameters must be finite and non-negative"));
        }
        Ok(())
    }

    /// Total coupling rate Γ_m + Γ_p, Hz.
    pub fn total_rate(&self) -> f64 {
        self.gamma_m + self.gamma_p
    }

    /// Occupancy decay rate of the coupled mode, 1/s.
    pub fn decay_rate(&self) -> Result<f64> {
        self.validate()?;
        let total = self.total_rate();
        if total <= 0.0 {
            return Err(Error::domain("total bath coupling rate is zero"));
        }
        Ok(self.rates.decay_rate(total))
    }

    pub fn equilibrium(&self) -> Result<f64> {
        equilibrium_occupancy(self)
    }

    /// Builds a bath whose hot-bath occupancy is solved so that the
    /// rate-weighted equilibrium equals `n_eq`.
    pub fn with_equilibrium(
        n_th: f64,
        gamma_m: f64,
        gamma_p: f64,
        n_eq: f64,
        rates: RateConvention,
    ) -> Result<Self> {
        if !(gamma_p > 0.0) {
            return Err(Error::domain("hot-bath rate must be positive to reach a set equilibrium"));
        }
        let n_p = (n_eq * (gamma_m + gamma_p) - gamma_m * n_th) / gamma_p;
        if n_p < 0.0 {
            return Err(Error::domain(format!(
                "equilibrium {n_eq} is below what the ambient bath alone sustains"
            )));
        }
        let bath = BathModel {
            n_th,
            gamma_m,
            n_p,
            gamma_p,
            rates,
        };
        bath.validate()?;
        Ok(bath)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Fridge temperature, K.
    pub t_fridge: f64,
}

impl Environment {
    pub fn new(t_fridge: f64) -> Result<Self> {
        if !(t_fridge > 0.0) {
            return Err(Error::domain("fridge temperature must be positive"));
        }
        Ok(Environment { t_fridge })
    }
}

/// Mean thermal occupancy of a mode at frequency `f` (Hz) and temperature
/// `t` (K).
pub fn bose_einstein(t: f64, f: f64) -> Result<f64> {
    if !(t > 0.0 && f > 0.0) {
        return Err(Error::domain(format!(
            "bose_einstein needs T > 0 and f > 0 (got T={t}, f={f})"
        )));
    }
    let x = PLANCK * f / (BOLTZMANN * t);
    Ok(1.0 / x.exp_m1())
}

/// Temperature at which a mode at frequency `f` holds `n` thermal quanta.
pub fn bose_einstein_temperature(n: f64, f: f64) -> Result<f64> {
    if !(n > 0.0 && f > 0.0) {
        return Err(Error::domain(format!(
            "inverse bose_einstein needs n > 0 and f > 0 (got n={n}, f={f})"
        )));
    }
    Ok(PLANCK * f / (BOLTZMANN * (1.0 / n).ln_1p()))
}

/// Slope dT/dn of [`bose_einstein_temperature`] at occupancy `n`.
pub fn bose_einstein_temperature_slope(n: f64, f: f64) -> Result<f64> {
    let t = bose_einstein_temperature(n, f)?;
    let x = (1.0 / n).ln_1p();
    Ok(t / (x * n * (n + 1.0)))
}

/// Occupancy at time `t` after a bath change: relaxes from `n0` to `n_eq`
/// at `decay_rate` (1/s).
pub fn occupancy_evolution(n0: f64, n_eq: f64, decay_rate: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("evolution time must be >= 0 (got {t})")));
    }
    if !(decay_rate >= 0.0) {
        return Err(Error::domain(format!("decay rate must be >= 0 (got {decay_rate})")));
    }
    let x = -decay_rate * t;
    Ok(n0 * x.exp() - n_eq * x.exp_m1())
}

/// Rate-weighted mean of the two bath occupancies.
pub fn equilibrium_occupancy(bath: &BathModel) -> Result<f64> {
    bath.validate()?;
    let total = bath.total_rate();
    if total <= 0.0 {
        return Err(Error::domain("total bath coupling rate is zero"));
    }
    let n = (bath.gamma_m * bath.n_th + bath.gamma_p * bath.n_p) / total;
    // keep the weighted mean inside the hull despite rounding
    let (lo, hi) = if bath.n_th <= bath.n_p {
        (bath.n_th, bath.n_p)
    } else {
        (bath.n_p, bath.n_th)
    };
    Ok(n.clamp(lo, hi))
}

/// Probability that a thermal state of mean occupancy `n` is in its ground
/// state.
pub fn ground_state_probability(n: f64) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::domain(format!("occupancy must be >= 0 (got {n})")));
    }
    Ok(1.0 / (1.0 + n))
}
