use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{self, Model};

/// y = offset + amplitude / (1 + (2 (x - center) / fwhm)²).
/// A negative amplitude describes a dip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Rows and columns ordered center, fwhm, amplitude, offset.
    pub covariance: [[f64; 4]; 4],
    pub ci95: [f64; 4],
    pub residual_rms: f64,
}

impl LorentzianFit {
    pub fn eval(&self, x: f64) -> f64 {
        let u = 2.0 * (x - self.center) / self.fwhm;
        self.offset + self.amplitude / (1.0 + u * u)
    }

    /// ∫ (y - offset) dx over the whole line.
    pub fn area(&self) -> f64 {
        0.5 * std::f64::consts::PI * self.amplitude * self.fwhm
    }
}

struct Lorentzian;

impl Model for Lorentzian {
    fn n_params(&self) -> usize {
        4
    }

    // p = [center, fwhm, amplitude, offset]
    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (c, w, a, o) = (p[0], p[1], p[2], p[3]);
        let u = 2.0 * (x - c) / w;
        let d = 1.0 + u * u;
        g[0] = 4.0 * a * u / (w * d * d);
        g[1] = 2.0 * a * u * u / (w * d * d);
        g[2] = 1.0 / d;
        g[3] = 1.0;
        o + a / d
    }

    fn constrain(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(1e-12);
    }
}

/// Least-squares Lorentzian through (x, y).
pub fn lorentzian_fit(x: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    if x.len() != y.len() {
        return Err(Error::domain("x and y lengths differ"));
    }
    if x.len() < 8 {
        return Err(Error::domain(format!("Lorentzian fit needs >= 8 points, got {}", x.len())));
    }
    let (xmin, xmax) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let x_ref = 0.5 * (xmin + xmax);
    let x_scale = 0.5 * (xmax - xmin);
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(x_scale > 0.0) || !(y_scale > 0.0) {
        return Err(Error::domain("Lorentzian fit needs spread in both x and y"));
    }
    let xn: Vec<f64> = x.iter().map(|v| (v - x_ref) / x_scale).collect();
    let yn: Vec<f64> = y.iter().map(|v| v / y_scale).collect();

    let p0 = seed(&xn, &yn);
    let sol = lsq::solve(&Lorentzian, &xn, &yn, None, &p0, &lsq::Options::default())?;
    let p = &sol.params;
    let scale = [x_scale, x_scale, y_scale, y_scale];
    let ci_n = sol.ci95();
    let mut covariance = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            covariance[i][j] = sol.covariance[(i, j)] * scale[i] * scale[j];
        }
    }
    let fit = LorentzianFit {
        center: x_ref + p[0] * x_scale,
        fwhm: p[1] * x_scale,
        amplitude: p[2] * y_scale,
        offset: p[3] * y_scale,
        covariance,
        ci95: [
            ci_n[0] * x_scale,
            ci_n[1] * x_scale,
            ci_n[2] * y_scale,
            ci_n[3] * y_scale,
        ],
        residual_rms: sol.residual_rms(x.len()) * y_scale,
    };
    if xmax - xmin < 2.0 * fit.fwhm {
        return Err(Error::Fit {
            message: format!(
                "data span {:.4e} covers fewer than two linewidths ({:.4e})",
                xmax - xmin,
                fit.fwhm
            ),
            residual_rms: fit.residual_rms,
        });
    }
    Ok(fit)
}

fn seed(x: &[f64], y: &[f64]) -> [f64; 4] {
    let n = x.len();
    let edge = (n / 20).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let offset = (order[..edge].iter().chain(&order[n - edge..]).map(|&i| y[i]).sum::<f64>())
        / (2 * edge) as f64;
    let peak = (0..n)
        .max_by(|a, b| (y[*a] - offset).abs().total_cmp(&(y[*b] - offset).abs()))
        .unwrap_or(0);
    let amplitude = y[peak] - offset;
    let half = 0.5 * amplitude.abs();
    let above: Vec<f64> = order
        .iter()
        .filter(|&&i| (y[i] - offset).abs() >= half && (y[i] - offset).signum() == amplitude.signum())
        .map(|&i| x[i])
        .collect();
    let spacing = (x[order[n - 1]] - x[order[0]]) / (n - 1) as f64;
    let fwhm = match (above.first(), above.last()) {
        (Some(lo), Some(hi)) => (hi - lo).max(2.0 * spacing),
        _ => 0.2,
    };
    [x[peak], fwhm, amplitude, offset]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rep_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn lorentz(x: f64, c: f64, w: f64, a: f64, o: f64) -> f64 {
        let u = 2.0 * (x - c) / w;
        o + a / (1.0 + u * u)
    }

    #[test]
    fn noiseless_recovery() {
        let x: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64 + 0.013).collect();
        let y: Vec<f64> = x.iter().map(|v| lorentz(*v, 0.37, 1.3, 2.5, 0.4)).collect();
        let f = lorentzian_fit(&x, &y).unwrap();
        assert!((f.center - 0.37).abs() < 1e-9 * 1.3);
        assert!((f.fwhm / 1.3 - 1.0).abs() < 1e-9);
        assert!((f.amplitude / 2.5 - 1.0).abs() < 1e-9);
        assert!((f.offset / 0.4 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cavity_dip_with_noise() {
        let fc = 193.7e12;
        let kappa = 5.0e9;
        let mut rng = rep_rng(8, 0);
        let x: Vec<f64> = (0..201).map(|i| fc - 15e9 + 150e6 * i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let clean = lorentz(*v, fc, kappa, -0.6, 1.0);
                clean * (1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let f = lorentzian_fit(&x, &y).unwrap();
        assert!(f.amplitude < 0.0);
        assert!((f.fwhm / kappa - 1.0).abs() < 0.02, "{}", f.fwhm);
        assert!((f.center - fc).abs() < 0.05 * kappa);
    }

    #[test]
    fn symmetric_data_centres_on_symmetry_point() {
        let x: Vec<f64> = (0..41).map(|i| 10.0 + 0.25 * (i as f64 - 20.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let d = (v - 10.0).abs();
                1.0 / (1.0 + d * d * d)
            })
            .collect();
        let f = lorentzian_fit(&x, &y).unwrap();
        assert!((f.center - 10.0).abs() < 1e-12, "{}", f.center);
    }

    #[test]
    fn too_few_points() {
        let x = [0.0, 1.0, 2.0];
        assert!(lorentzian_fit(&x, &x).is_err());
    }

    #[test]
    fn narrow_span_rejected() {
        let x: Vec<f64> = (0..20).map(|i| -0.5 + i as f64 / 19.0).collect();
        let y: Vec<f64> = x.iter().map(|v| lorentz(*v, 0.0, 4.0, 1.0, 0.0)).collect();
        assert!(matches!(lorentzian_fit(&x, &y), Err(Error::Fit { .. })));
    }
}
