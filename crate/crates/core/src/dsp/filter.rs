//! Linear-phase FIR low-pass used as the post-demodulation band filter.
//!
//! A low-pass of two-sided noise-equivalent bandwidth B applied to the
//! complex baseband is the same mask as a band-pass of width B centred on
//! the beat frequency. Taps are a windowed sinc with unit DC gain whose
//! cutoff is solved so that the noise-equivalent bandwidth is exactly B.
//! With that normalization a tone of amplitude A reads A²/2 and white noise
//! reads its power in [f_if - B/2, f_if + B/2].

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kaiser shape parameter for 60 dB stopband ripple.
pub const KAISER_BETA_60DB: f64 = 0.1102 * (60.0 - 8.7);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
    Blackman,
    Kaiser { beta: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::Kaiser {
            beta: KAISER_BETA_60DB,
        }
    }
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = i as f64 / m;
                match *self {
                    Window::Rectangular => 1.0,
                    // endpoints dropped so every tap contributes
                    Window::Hann => {
                        let y = (i as f64 + 1.0) / (m + 2.0);
                        0.5 - 0.5 * (2.0 * PI * y).cos()
                    }
                    Window::Hamming => 0.54 - 0.46 * (2.0 * PI * x).cos(),
                    Window::Blackman => {
                        let y = (i as f64 + 1.0) / (m + 2.0);
                        0.42 - 0.5 * (2.0 * PI * y).cos() + 0.08 * (4.0 * PI * y).cos()
                    }
                    Window::Kaiser { beta } => {
                        let r = 2.0 * x - 1.0;
                        bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
                    }
                }
            })
            .collect()
    }
}

fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Band centre (the beat frequency), Hz.
    pub f_center: f64,
    /// Two-sided noise-equivalent passband width, Hz.
    pub bandwidth: f64,
    /// Odd tap count.
    pub n_taps: usize,
    #[serde(default)]
    pub window: Window,
}

impl FilterSpec {
    /// Chooses the odd tap count whose span is closest to `settling_time`.
    pub fn with_settling(
        f_center: f64,
        bandwidth: f64,
        settling_time: f64,
        sample_rate: f64,
        window: Window,
    ) -> Result<Self> {
        if !(settling_time > 0.0 && sample_rate > 0.0) {
            return Err(Error::domain("settling time and sample rate must be positive"));
        }
        let half = (0.5 * settling_time * sample_rate).round() as usize;
        let spec = FilterSpec {
            f_center,
            bandwidth,
            n_taps: 2 * half.max(1) + 1,
            window,
        };
        spec.validate(1.0 / sample_rate)?;
        Ok(spec)
    }

    /// Time for the filter to fill, (n_taps - 1) dt.
    pub fn settling_time(&self, dt: f64) -> f64 {
        (self.n_taps - 1) as f64 * dt
    }

    /// Samples between an input and the output it is centred on.
    pub fn group_delay(&self) -> usize {
        (self.n_taps - 1) / 2
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::domain("filter bandwidth must be positive"));
        }
        if self.n_taps < 3 || self.n_taps % 2 == 0 {
            return Err(Error::domain(format!(
                "filter needs an odd tap count >= 3 (got {})",
                self.n_taps
            )));
        }
        if self.settling_time(dt) < 1.0 / self.bandwidth * (1.0 - 1e-12) {
            return Err(Error::domain(format!(
                "filter settling time {:.3e} s is shorter than 1/bandwidth {:.3e} s",
                self.settling_time(dt),
                1.0 / self.bandwidth
            )));
        }
        if 2.0 * self.bandwidth >= 1.0 / dt {
            return Err(Error::domain("filter bandwidth exceeds the Nyquist band"));
        }
        Ok(())
    }

    /// Low-pass taps with unit DC gain and noise-equivalent bandwidth equal
    /// to `bandwidth`.
    pub fn design(&self, sample_rate: f64) -> Result<Vec<f64>> {
        self.validate(1.0 / sample_rate)?;
        let window = self.window.coefficients(self.n_taps);
        let target = self.bandwidth / sample_rate;
        let floor = enbw(&window);
        if floor > target {
            return Err(Error::domain(format!(
                "{} taps with this window cannot be narrower than {:.4e} Hz; need more taps",
                self.n_taps,
                floor * sample_rate
            )));
        }
        // ENBW grows with the cutoff; bisect in cycles/sample
        let (mut lo, mut hi) = (1e-9, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if enbw(&sinc_taps(mid, &window)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(sinc_taps(0.5 * (lo + hi), &window))
    }
}

fn sinc_taps(cutoff: f64, window: &[f64]) -> Vec<f64> {
    let mid = (window.len() - 1) as f64 / 2.0;
    let raw: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - mid;
            let s = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            w * s
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|h| h / sum).collect()
}

/// Two-sided noise-equivalent bandwidth in cycles/sample.
pub fn enbw(taps: &[f64]) -> f64 {
    let s: f64 = taps.iter().sum();
    taps.iter().map(|h| h * h).sum::<f64>() / (s * s)
}

/// Complex response of `taps` at frequency `f` (Hz).
pub fn frequency_response(taps: &[f64], f: f64, sample_rate: f64) -> Complex64 {
    let w = -2.0 * PI * f / sample_rate;
    taps.iter()
        .enumerate()
        .map(|(i, h)| Complex64::from_polar(*h, w * i as f64))
        .sum()
}
