//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{FilterSpec, Window};
use crate::error::{Error, Result};
use crate::infer::OffsetConvention;
use crate::io::config_hash;
use crate::model::{bose_einstein, BathModel, MechanicalMode, OpticalMode, RateConvention};
use crate::synth::{PulseConfig, SynthTruth};

/// Default ceiling on the trace bytes a single run may produce.
pub const DEFAULT_RUN_TRACE_BYTES: u64 = 256 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub device: DeviceConfig,
    pub bath: BathConfig,
    pub pulse: PulseSettings,
    pub truth: TruthConfig,
    pub filter: FilterConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub mechanical: MechanicalSettings,
    pub optical: OpticalMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicalSettings {
    /// Hz.
    pub f_m: f64,
    pub q_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    /// Total coupling rate during the pulse, Hz, read per `rates`.
    pub gamma_total: f64,
    /// Occupancy the pulse heats the mode towards.
    pub n_eq: f64,
    #[serde(default)]
    pub rates: RateConvention,
    /// Excess onset occupancy over the fridge Bose-Einstein value.
    #[serde(default)]
    pub n_offset: f64,
    /// Fridge temperatures to simulate, K.
    pub temperatures: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSettings {
    pub f_if: f64,
    pub sample_rate: f64,
    pub t_pulse: f64,
    pub n_reps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// V² per phonon.
    pub alpha_v: f64,
    /// V rms per sample.
    pub sigma_imp: f64,
    #[serde(default)]
    pub n_floor: f64,
    /// Also simulate a noise-only ensemble for the imprecision split.
    #[serde(default = "yes")]
    pub off_resonance: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Hz.
    pub bandwidth: f64,
    /// s.
    pub settling_time: f64,
    #[serde(default)]
    pub window: Window,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub offset: OffsetConvention,
    /// Lowest temperature used for the calibration line, K.
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default)]
    pub weights: Weights,
}

/// Point weights for the heating, calibration and occupancy fits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    #[default]
    Uniform,
    /// Inverse variance: the spread across repetitions for the heating
    /// curves, then the propagated half-widths downstream.
    Ensemble,
}

fn default_t_min() -> f64 {
    1.5
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            offset: OffsetConvention::default(),
            t_min: default_t_min(),
            weights: Weights::default(),
        }
    }
}

/// Overrides for the figures of merit. Unset values come from the bath
/// section and the occupancy fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub n_th: Option<f64>,
    pub gamma_total: Option<f64>,
    pub n_eq: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub max_trace_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_trace_bytes: DEFAULT_RUN_TRACE_BYTES,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mech = self.mechanical()?;
        self.device.optical.validate()?;
        self.pulse_config(0).validate()?;
        if self.bath.temperatures.is_empty() {
            return Err(Error::Config("bath.temperatures is empty".into()));
        }
        if self.bath.temperatures.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("bath.temperatures must be positive".into()));
        }
        if !(self.bath.gamma_total > mech.gamma_m) {
            return Err(Error::Config(format!(
                "bath.gamma_total = {} Hz must exceed the intrinsic linewidth {} Hz",
                self.bath.gamma_total, mech.gamma_m
            )));
        }
        if !(self.bath.n_offset >= 0.0) {
            return Err(Error::Config("bath.n_offset must be >= 0".into()));
        }
        for &t in &self.bath.temperatures {
            self.truth_at(t)?.validate()?;
        }
        self.filter_spec()?.design(self.pulse.sample_rate)?;
        if !(self.fit.t_min > 0.0) {
            return Err(Error::Config("fit.t_min must be positive".into()));
        }
        Ok(())
    }

    /// The serialized form hashed into every output.
    pub fn canonical_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical_text())
    }

    pub fn mechanical(&self) -> Result<MechanicalMode> {
        MechanicalMode::new(self.device.mechanical.f_m, self.device.mechanical.q_m)
    }

    pub fn pulse_config(&self, base_seed: u64) -> PulseConfig {
        PulseConfig {
            f_if: self.pulse.f_if,
            sample_rate: self.pulse.sample_rate,
            t_pulse: self.pulse.t_pulse,
            n_reps: self.pulse.n_reps,
            base_seed,
        }
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        FilterSpec::with_settling(
            self.pulse.f_if,
            self.filter.bandwidth,
            self.filter.settling_time,
            self.pulse.sample_rate,
            self.filter.window,
        )
    }

    /// Bath during the pulse with the fridge at `t_fridge`.
    pub fn bath_at(&self, t_fridge: f64) -> Result<BathModel> {
        let gm = self.mechanical()?.gamma_m;
        BathModel::with_equilibrium(
            bose_einstein(t_fridge, self.device.mechanical.f_m)?,
            gm,
            self.bath.gamma_total - gm,
            self.bath.n_eq,
            self.bath.rates,
        )
    }

    pub fn truth_at(&self, t_fridge: f64) -> Result<SynthTruth> {
        Ok(SynthTruth {
            bath: self.bath_at(t_fridge)?,
            n0: bose_einstein(t_fridge, self.device.mechanical.f_m)? + self.bath.n_offset,
            alpha_v: self.truth.alpha_v,
            sigma_imp: self.truth.sigma_imp,
            n_floor: self.truth.n_floor,
        })
    }

    /// Noise-only ensemble recorded away from the mechanical line.
    pub fn off_resonance_truth(&self) -> Result<SynthTruth> {
        let t = self.bath.temperatures.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(SynthTruth {
            alpha_v: 0.0,
            n0: 0.0,
            ..self.truth_at(t)?
        })
    }

    /// Base seed of the ensemble at position `index`; the off-resonance
    /// ensemble uses index = number of temperatures.
    pub fn ensemble_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Trace bytes a simulate run would write.
    pub fn trace_bytes(&self) -> u64 {
        let n = self.bath.temperatures.len() as u64 + u64::from(self.truth.off_resonance);
        n * self.pulse_config(0).required_bytes()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const DESK: &str = r#"
seed = 11

[device.mechanical]
f_m = 2.3725e9
q_m = 28584.0

[device.optical]
f_c = 193.4e12
kappa = 5.0e9
g0 = 1.3e6
n_cav = 230.0

[bath]
gamma_total = 1.05e6
n_eq = 95.0
rates = "angular"
n_offset = 0.6
temperatures = [0.02, 0.1, 0.5, 1.5, 3.0, 4.5, 6.5]

[pulse]
f_if = 30e6
sample_rate = 125e6
t_pulse = 5e-6
n_reps = 64

[truth]
alpha_v = 1e-5
sigma_imp = 0.01
n_floor = 0.5

[filter]
bandwidth = 6.25e6
settling_time = 0.25e-6
"#;

    #[test]
    fn parses_and_derives() {
        let c = RunConfig::from_toml(DESK).unwrap();
        assert_eq!(c.fit.t_min, 1.5);
        assert_eq!(c.filter.window, Window::default());
        let b = c.bath_at(1.5).unwrap();
        assert!((b.equilibrium().unwrap() - 95.0).abs() < 1e-9);
        assert!((b.total_rate() - 1.05e6).abs() < 1e-6);
        assert_eq!(c.filter_spec().unwrap().n_taps, 33);
        assert_ne!(c.ensemble_seed(0), c.ensemble_seed(1));
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = DESK.replace("n_floor = 0.5", "n_floor = 0.5\nn_flor = 1.0");
        match RunConfig::from_toml(&text) {
            Err(Error::Config(m)) => assert!(m.contains("n_flor"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_physics_rejected() {
        let text = DESK.replace("gamma_total = 1.05e6", "gamma_total = 1e3");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = DESK.replace("temperatures = [0.02, 0.1, 0.5, 1.5, 3.0, 4.5, 6.5]", "temperatures = []");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
