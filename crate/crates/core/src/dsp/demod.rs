use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Shifts the beat note at `f_if` to DC: z_k = 2 V_k exp(-i 2π f_if t_k).
/// After an ideal low-pass, A cos(2π f_if t + φ) becomes A exp(iφ).
pub fn demodulate<T: Copy + Into<f64>>(trace: &[T], f_if: f64, sample_rate: f64) -> Result<Vec<Complex64>> {
    let carrier = carrier(trace.len(), f_if, sample_rate)?;
    Ok(trace
        .iter()
        .zip(&carrier)
        .map(|(v, c)| c * (*v).into())
        .collect())
}

/// The factor 2 exp(-i 2π f_if t_k) for k in 0..n.
pub fn carrier(n: usize, f_if: f64, sample_rate: f64) -> Result<Vec<Complex64>> {
    if !(f_if >= 0.0 && f_if < 0.5 * sample_rate) {
        return Err(Error::domain(format!(
            "beat frequency {f_if} Hz aliases at sample rate {sample_rate} Hz"
        )));
    }
    let w = -2.0 * PI * f_if / sample_rate;
    Ok((0..n).map(|k| Complex64::from_polar(2.0, w * k as f64)).collect())
}

/// Convolution keeping only fully overlapped outputs. Output `j` is aligned
/// with input `j + taps.len() - 1`.
pub fn fir_valid(input: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if input.len() < taps.len() {
        return Vec::new();
    }
    let n_out = input.len() - taps.len() + 1;
    (0..n_out)
        .map(|j| {
            let end = j + taps.len() - 1;
            taps.iter()
                .enumerate()
                .map(|(i, h)| input[end - i] * *h)
                .sum()
        })
        .collect()
}
