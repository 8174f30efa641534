use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided power spectral density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin frequencies, Hz.
    pub f: Vec<f64>,
    /// Density, V²/Hz.
    pub s: Vec<f64>,
    /// Bin spacing, Hz.
    pub resolution: f64,
}

impl Spectrum {
    /// ∫ S df by the rectangle rule over all bins.
    pub fn total_power(&self) -> f64 {
        self.s.iter().sum::<f64>() * self.resolution
    }

    /// ∫ S df over bins whose centres lie in [f_lo, f_hi].
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.f
            .iter()
            .zip(&self.s)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, s)| s)
            .sum::<f64>()
            * self.resolution
    }

    /// Bin-wise mean of spectra sharing one grid.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::domain("no spectra to average"))?;
        if spectra.iter().any(|s| s.f.len() != first.f.len()) {
            return Err(Error::domain("spectra have different grids"));
        }
        let mut s = vec![0.0; first.s.len()];
        for sp in spectra {
            for (a, b) in s.iter_mut().zip(&sp.s) {
                *a += b;
            }
        }
        let k = spectra.len() as f64;
        s.iter_mut().for_each(|v| *v /= k);
        Ok(Spectrum {
            f: first.f.clone(),
            s,
            resolution: first.resolution,
        })
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate with a periodic Hann taper and per-segment mean removal.
/// `overlap` is the number of samples shared by consecutive segments.
pub fn welch_psd<T: Copy + Into<f64>>(
    trace: &[T],
    sample_rate: f64,
    segment_length: usize,
    overlap: usize,
) -> Result<Spectrum> {
    if segment_length < 2 || overlap >= segment_length {
        return Err(Error::domain(format!(
            "degenerate segmentation: length {segment_length}, overlap {overlap}"
        )));
    }
    if segment_length > trace.len() {
        return Err(Error::domain(format!(
            "segment length {segment_length} exceeds trace length {}",
            trace.len()
        )));
    }
    let hop = segment_length - overlap;
    let n_seg = (trace.len() - segment_length) / hop + 1;
    let window = hann_periodic(segment_length);
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_length);
    let n_bins = segment_length / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_length];

    for seg in 0..n_seg {
        let chunk = &trace[seg * hop..seg * hop + segment_length];
        let mean = chunk.iter().map(|v| (*v).into()).sum::<f64>() / segment_length as f64;
        for ((b, v), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(((*v).into() - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let scale = 1.0 / (sample_rate * norm * n_seg as f64);
    let nyquist = segment_length % 2 == 0;
    let s: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let edge = k == 0 || (nyquist && k == n_bins - 1);
            p * scale * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    let resolution = sample_rate / segment_length as f64;
    let f = (0..n_bins).map(|k| k as f64 * resolution).collect();
    Ok(Spectrum { f, s, resolution })
}
