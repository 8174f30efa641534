use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::demod::{carrier, fir_valid};
use super::filter::FilterSpec;
use crate::error::{Error, Result};
use crate::synth::TraceSet;

/// Repetitions summed per work item. Fixed so that the reduction order, and
/// hence every bit of the result, is independent of the thread count.
const REDUCE_BLOCK: usize = 32;

/// Ensemble-mean in-band power versus time since pulse onset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakAreaSeries {
    /// Sample times, s. Each is the centre of the filter window.
    pub t: Vec<f64>,
    /// In-band mean-square signal, V².
    pub area: Vec<f64>,
    /// Standard error of each ensemble mean, V². Empty when unknown.
    #[serde(default)]
    pub stderr: Vec<f64>,
    /// Samples earlier than this were discarded while the filter filled.
    pub t_trunc: f64,
    pub n_reps_averaged: usize,
}

impl PeakAreaSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Mean area over the whole series.
    pub fn mean(&self) -> f64 {
        self.area.iter().sum::<f64>() / self.area.len().max(1) as f64
    }
}

/// Demodulates every repetition, applies the band filter and averages
/// ½|y|² over the ensemble.
pub fn peak_area(traces: &TraceSet, filt: &FilterSpec) -> Result<PeakAreaSeries> {
    let fs = traces.sample_rate();
    if let Some(pulse) = traces.provenance.pulse {
        if ((pulse.f_if - filt.f_center) / pulse.f_if).abs() > 1e-9 {
            return Err(Error::Inconsistent(format!(
                "filter centre {} Hz differs from the beat frequency {} Hz",
                filt.f_center, pulse.f_if
            )));
        }
    }
    if let Some(truth) = traces.truth {
        let width = crate::model::linewidth_hz(truth.bath.decay_rate()?);
        if filt.bandwidth <= width {
            return Err(Error::Inconsistent(format!(
                "filter bandwidth {} Hz does not exceed the mechanical linewidth {width} Hz",
                filt.bandwidth
            )));
        }
    }
    let taps = filt.design(fs)?;
    let n_taps = taps.len();
    if traces.n_samples < n_taps {
        return Err(Error::domain(format!(
            "{} samples per trace, fewer than the {} filter taps",
            traces.n_samples, n_taps
        )));
    }
    let delay = filt.group_delay();
    let t_trunc = filt.settling_time(traces.dt);
    // outputs centred at or after t_trunc
    let first = delay;
    let n_valid = traces.n_samples - n_taps + 1;
    if n_valid <= first {
        return Err(Error::domain("trace too short to leave samples after filter settling"));
    }
    let lo = carrier(traces.n_samples, filt.f_center, fs)?;

    let n_out = n_valid - first;
    // per block: sums of p and p² side by side
    let block_sums: Vec<Vec<f64>> = traces
        .data
        .par_chunks(REDUCE_BLOCK * traces.n_samples)
        .map(|block| {
            let mut acc = vec![0.0; 2 * n_out];
            let mut z = vec![Complex64::new(0.0, 0.0); traces.n_samples];
            for row in block.chunks_exact(traces.n_samples) {
                for ((zk, v), c) in z.iter_mut().zip(row).zip(&lo) {
                    *zk = c * f64::from(*v);
                }
                let y = fir_valid(&z, &taps);
                let (s1, s2) = acc.split_at_mut(n_out);
                for ((a, b), yj) in s1.iter_mut().zip(s2.iter_mut()).zip(&y[first..]) {
                    let p = 0.5 * yj.norm_sqr();
                    *a += p;
                    *b += p * p;
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; 2 * n_out];
    for block in &block_sums {
        for (a, b) in total.iter_mut().zip(block) {
            *a += b;
        }
    }
    let reps = traces.n_reps as f64;
    let area: Vec<f64> = total[..n_out].iter().map(|a| a / reps).collect();
    let stderr = if traces.n_reps > 1 {
        area.iter()
            .zip(&total[n_out..])
            .map(|(m, sq)| ((sq / reps - m * m).max(0.0) / (reps - 1.0)).sqrt())
            .collect()
    } else {
        Vec::new()
    };
    let t = (first..n_valid)
        .map(|j| (j + delay) as f64 * traces.dt)
        .collect();

    Ok(PeakAreaSeries {
        t,
        area,
        stderr,
        t_trunc,
        n_reps_averaged: traces.n_reps,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::dsp::filter::Window;
    use crate::synth::rep_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const FS: f64 = 125e6;

    fn filt() -> FilterSpec {
        FilterSpec::with_settling(30e6, 6.25e6, 0.25e-6, FS, Window::default()).unwrap()
    }

    fn set_from_rows(rows: Vec<Vec<f32>>) -> TraceSet {
        let n = rows[0].len();
        let reps = rows.len();
        TraceSet::new(1.0 / FS, reps, n, rows.concat()).unwrap()
    }

    #[test]
    fn tone_reads_half_amplitude_squared() {
        let amp = 0.35;
        let row: Vec<f32> = (0..625)
            .map(|k| (amp * (2.0 * PI * 30e6 * k as f64 / FS + 0.3).cos()) as f32)
            .collect();
        let s = peak_area(&set_from_rows(vec![row]), &filt()).unwrap();
        assert!((s.t[0] - s.t_trunc).abs() < 0.5 / FS);
        assert!((s.t_trunc - 0.25e-6).abs() <= 1.0 / FS);
        for a in &s.area {
            assert!((a / (amp * amp / 2.0) - 1.0).abs() < 1e-3, "{a}");
        }
    }

    #[test]
    fn phase_rotation_invariance() {
        // slowly varying envelope, well inside the passband
        let env: Vec<(f64, f64)> = (0..625)
            .map(|k| {
                let t = k as f64 / FS;
                (
                    1.0 + 0.6 * (2.0 * PI * 0.4e6 * t).cos() + 0.3 * (2.0 * PI * 1.1e6 * t + 0.5).sin(),
                    0.8 * (2.0 * PI * 0.7e6 * t + 1.0).cos() - 0.2 * (2.0 * PI * 1.9e6 * t).cos(),
                )
            })
            .collect();
        let make = |phi: f64| -> Vec<f32> {
            env.iter()
                .enumerate()
                .map(|(k, (x, y))| {
                    let w = 2.0 * PI * 30e6 * k as f64 / FS + phi;
                    (x * w.cos() - y * w.sin()) as f32
                })
                .collect()
        };
        let a = peak_area(&set_from_rows(vec![make(0.0)]), &filt()).unwrap();
        let b = peak_area(&set_from_rows(vec![make(1.234)]), &filt()).unwrap();
        let scale = a.mean();
        for (x, y) in a.area.iter().zip(&b.area) {
            assert!((x - y).abs() < 1e-3 * scale, "{x} {y}");
        }
    }

    #[test]
    fn white_noise_band_fraction() {
        let sigma = 0.5;
        let reps = 400;
        let rows: Vec<Vec<f32>> = (0..reps)
            .map(|r| {
                let mut rng = rep_rng(21, r);
                (0..625).map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
            })
            .collect();
        let s = peak_area(&set_from_rows(rows), &filt()).unwrap();
        let expect = sigma * sigma * 6.25e6 / (FS / 2.0);
        // exponential variates: the standard error is about mean/sqrt(reps)
        for e in s.stderr.iter().step_by(50) {
            assert!((e / (expect / (reps as f64).sqrt()) - 1.0).abs() < 0.25, "{e}");
        }
        // each ensemble point is a mean of `reps` exponential variates
        let se_point = expect / (reps as f64).sqrt();
        for a in s.area.iter().step_by(50) {
            assert!((a - expect).abs() < 5.0 * se_point, "{a} vs {expect}");
        }
    }

    #[test]
    fn short_trace_rejected() {
        let s = set_from_rows(vec![vec![0.0; 20]]);
        assert!(matches!(peak_area(&s, &filt()), Err(Error::Domain(_))));
    }
}
