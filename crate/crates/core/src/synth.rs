//! Synthetic heterodyne detector traces.
//!
//! The mechanical amplitude is a complex Ornstein-Uhlenbeck process whose
//! mean energy follows the two-bath relaxation. It rides on the beat-note
//! carrier with a random phase per repetition, plus white imprecision noise.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BathModel;

/// Largest allowed decay_rate * dt.
pub const MAX_RATE_DT: f64 = 0.1;

/// Default ceiling on the in-memory size of a trace ensemble.
pub const DEFAULT_MAX_TRACE_BYTES: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Beat (intermediate) frequency, Hz.
    pub f_if: f64,
    /// ADC rate, Hz.
    pub sample_rate: f64,
    /// Record length from pulse onset, s.
    pub t_pulse: f64,
    pub n_reps: usize,
    pub base_seed: u64,
}

impl PulseConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn n_samples(&self) -> usize {
        (self.t_pulse * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_if > 0.0 && self.sample_rate > 2.5 * self.f_if) {
            return Err(Error::domain(format!(
                "sample rate {} Hz leaves no demodulation headroom for f_if {} Hz (need > 2.5x)",
                self.sample_rate, self.f_if
            )));
        }
        if self.n_samples() < 64 {
            return Err(Error::domain(format!(
                "pulse holds {} samples, need at least 64",
                self.n_samples()
            )));
        }
        if self.n_reps < 1 {
            return Err(Error::domain("need at least one repetition"));
        }
        Ok(())
    }

    pub fn required_bytes(&self) -> u64 {
        self.n_reps as u64 * self.n_samples() as u64 * 4
    }
}

/// Ground truth behind a synthetic ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTruth {
    pub bath: BathModel,
    /// Occupancy at pulse onset, phonons.
    pub n0: f64,
    /// Detector gain, V² per phonon.
    pub alpha_v: f64,
    /// RMS white imprecision noise per sample, V.
    pub sigma_imp: f64,
    /// Occupancy-equivalent ground-state plus backaction content, phonons.
    pub n_floor: f64,
}

impl SynthTruth {
    pub fn validate(&self) -> Result<()> {
        self.bath.validate()?;
        // alpha_v = 0 is the noise-only limit
        if !(self.alpha_v >= 0.0 && self.sigma_imp >= 0.0 && self.n_floor >= 0.0 && self.n0 >= 0.0)
        {
            return Err(Error::domain(
                "alpha_v, sigma_imp, n_floor and n0 must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Where a trace set came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pulse: Option<PulseConfig>,
    pub seed: u64,
}

/// An ensemble of equal-length voltage records, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub dt: f64,
    pub n_reps: usize,
    pub n_samples: usize,
    pub data: Vec<f32>,
    pub truth: Option<SynthTruth>,
    pub provenance: Provenance,
}

impl TraceSet {
    pub fn new(dt: f64, n_reps: usize, n_samples: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_reps * n_samples {
            return Err(Error::domain(format!(
                "trace data holds {} values, expected {n_reps} x {n_samples}",
                data.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::domain("sample period must be positive"));
        }
        Ok(TraceSet {
            dt,
            n_reps,
            n_samples,
            data,
            truth: None,
            provenance: Provenance {
                pulse: None,
                seed: 0,
            },
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.n_samples)
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

/// Independent RNG stream for one repetition.
pub fn rep_rng(base_seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(rep_index);
    rng
}

fn circular_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

/// Exact discretization of a complex OU amplitude with energy decay rate
/// `decay_rate` (1/s), starting from a thermal state of mean `n_start` and
/// driven toward the per-step target occupancy `target(k)`.
pub fn amplitude_path_with_target<R, F>(
    decay_rate: f64,
    n_start: f64,
    target: F,
    dt: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Complex64>>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> f64,
{
    if !(decay_rate > 0.0) {
        return Err(Error::domain("amplitude path needs a positive decay rate"));
    }
    let rate_dt = decay_rate * dt;
    if rate_dt >= MAX_RATE_DT {
        return Err(Error::Resolution {
            rate_dt,
            limit: MAX_RATE_DT,
        });
    }
    if !(n_start >= 0.0) {
        return Err(Error::domain("initial occupancy must be non-negative"));
    }
    let keep = (-0.5 * rate_dt).exp();
    let inject = -(-rate_dt).exp_m1();
    let mut path = Vec::with_capacity(n_samples);
    if n_samples == 0 {
        return Ok(path);
    }
    let mut a = circular_normal(rng) * n_start.sqrt();
    path.push(a);
    for k in 0..n_samples - 1 {
        let n_tgt = target(k).max(0.0);
        a = a * keep + circular_normal(rng) * (n_tgt * inject).sqrt();
        path.push(a);
    }
    Ok(path)
}

/// Amplitude path for a mode that starts at `n0` and is coupled to `bath`
/// from t = 0. `n_floor` is added to both the start and the target so the
/// mean energy follows the relaxation from n0 + n_floor to n_eq + n_floor.
pub fn mech_amplitude_path<R: Rng + ?Sized>(
    bath: &BathModel,
    n0: f64,
    n_floor: f64,
    dt: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let decay = bath.decay_rate()?;
    let n_eq = bath.equilibrium()?;
    amplitude_path_with_target(decay, n0 + n_floor, |_| n_eq + n_floor, dt, n_samples, rng)
}

/// Detector voltage for repetition `rep_index`.
pub fn synthesize_trace(cfg: &PulseConfig, truth: &SynthTruth, rep_index: usize) -> Result<Vec<f32>> {
    cfg.validate()?;
    truth.validate()?;
    let n = cfg.n_samples();
    let dt = cfg.dt();
    let mut rng = rep_rng(cfg.base_seed, rep_index as u64);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let path = mech_amplitude_path(&truth.bath, truth.n0, truth.n_floor, dt, n, &mut rng)?;
    let gain = (2.0 * truth.alpha_v).sqrt();
    let omega_dt = 2.0 * PI * cfg.f_if * dt;
    let trace = path
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let carrier = Complex64::from_polar(1.0, omega_dt * k as f64 + phase);
            let noise: f64 = rng.sample(StandardNormal);
            (gain * (a * carrier).re + truth.sigma_imp * noise) as f32
        })
        .collect();
    Ok(trace)
}

/// All repetitions, generated in parallel on the current rayon pool.
pub fn synthesize_ensemble(cfg: &PulseConfig, truth: &SynthTruth) -> Result<TraceSet> {
    synthesize_ensemble_with_limit(cfg, truth, DEFAULT_MAX_TRACE_BYTES)
}

pub fn synthesize_ensemble_with_limit(
    cfg: &PulseConfig,
    truth: &SynthTruth,
    max_bytes: u64,
) -> Result<TraceSet> {
    cfg.validate()?;
    truth.validate()?;
    let required = cfg.required_bytes();
    if required > max_bytes {
        return Err(Error::Resource {
            what: format!("{} x {} trace ensemble", cfg.n_reps, cfg.n_samples()),
            required_bytes: required,
            limit_bytes: max_bytes,
        });
    }
    // surface resolution errors once instead of per row
    let decay = truth.bath.decay_rate()?;
    if decay * cfg.dt() >= MAX_RATE_DT {
        return Err(Error::Resolution {
            rate_dt: decay * cfg.dt(),
            limit: MAX_RATE_DT,
        });
    }
    let n = cfg.n_samples();
    let mut data = vec![0.0f32; cfg.n_reps * n];
    data.par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(rep, row)| -> Result<()> {
            row.copy_from_slice(&synthesize_trace(cfg, truth, rep)?);
            Ok(())
        })?;
    Ok(TraceSet {
        dt: cfg.dt(),
        n_reps: cfg.n_reps,
        n_samples: n,
        data,
        truth: Some(*truth),
        provenance: Provenance {
            pulse: Some(*cfg),
            seed: cfg.base_seed,
        },
    })
}
