//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with analytic
//! Jacobians and residual-scaled parameter covariance.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// A model y = f(x; p) with an analytic gradient in p.
pub trait Model {
    fn n_params(&self) -> usize;

    /// Returns f(x; p) and writes ∂f/∂p into `grad`.
    fn eval(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;

    /// Projects a trial parameter vector back into the model's domain.
    fn constrain(&self, _p: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub max_iter: usize,
    /// Stop once every component of the step is below this fraction of the
    /// parameter magnitude.
    pub rel_step_tol: f64,
    /// Inflate the covariance by the integrated autocorrelation time of the
    /// residuals (for densely sampled, serially correlated data).
    pub correlated_residuals: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iter: 500,
            rel_step_tol: 1e-10,
            correlated_residuals: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub params: Vec<f64>,
    /// Residual-scaled covariance of the parameters.
    pub covariance: DMatrix<f64>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub dof: usize,
    pub iterations: usize,
    /// The normal matrix was numerically singular at the optimum.
    pub rank_deficient: bool,
    /// Covariance inflation applied for serial correlation (1 when off).
    pub correlation_time: f64,
}

impl Solution {
    /// Half-widths of the two-sided 95% confidence intervals.
    pub fn ci95(&self) -> Vec<f64> {
        let t = t_quantile_975(self.dof);
        (0..self.params.len())
            .map(|i| t * self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn residual_rms(&self, n_points: usize) -> f64 {
        (self.rss / n_points.max(1) as f64).sqrt()
    }
}

/// Two-sided 97.5% Student-t quantile; infinite with no degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

struct Linearization {
    jac: DMatrix<f64>,
    resid: DVector<f64>,
}

fn linearize<M: Model>(model: &M, x: &[f64], y: &[f64], sw: &[f64], p: &[f64]) -> Linearization {
    let m = x.len();
    let n = model.n_params();
    let mut jac = DMatrix::zeros(m, n);
    let mut resid = DVector::zeros(m);
    let mut grad = vec![0.0; n];
    for i in 0..m {
        let f = model.eval(x[i], p, &mut grad);
        resid[i] = sw[i] * (y[i] - f);
        for j in 0..n {
            jac[(i, j)] = sw[i] * grad[j];
        }
    }
    Linearization { jac, resid }
}

fn weighted_rss<M: Model>(model: &M, x: &[f64], y: &[f64], sw: &[f64], p: &[f64]) -> f64 {
    let mut grad = vec![0.0; model.n_params()];
    x.iter()
        .zip(y)
        .zip(sw)
        .map(|((&xi, &yi), &s)| {
            let r = s * (yi - model.eval(xi, p, &mut grad));
            r * r
        })
        .sum()
}

/// Fits `model` to (x, y). `sigma`, when given, holds per-point standard
/// errors used as inverse-variance weights.
pub fn solve<M: Model>(
    model: &M,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    opts: &Options,
) -> Result<Solution> {
    let n = model.n_params();
    if x.len() != y.len() || p0.len() != n {
        return Err(Error::domain("least squares: mismatched input lengths"));
    }
    if x.len() < n {
        return Err(Error::domain(format!(
            "least squares: {} points cannot determine {} parameters",
            x.len(),
            n
        )));
    }
    let sw: Vec<f64> = match sigma {
        Some(s) => {
            if s.len() != x.len() || s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::domain("standard errors must be positive, one per point"));
            }
            s.iter().map(|v| 1.0 / v).collect()
        }
        None => vec![1.0; x.len()],
    };

    let mut p = p0.to_vec();
    model.constrain(&mut p);
    let mut rss = weighted_rss(model, x, y, &sw, &p);
    if !rss.is_finite() {
        return Err(Error::Fit {
            message: "non-finite residuals at the starting point".into(),
            residual_rms: f64::NAN,
        });
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = rss == 0.0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let lin = linearize(model, x, y, &sw, &p);
        let jtj = lin.jac.transpose() * &lin.jac;
        let jtr = lin.jac.transpose() * &lin.resid;
        let diag: Vec<f64> = (0..n).map(|j| jtj[(j, j)].max(1e-300)).collect();

        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * diag[j];
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            model.constrain(&mut trial);
            let trial_rss = weighted_rss(model, x, y, &sw, &trial);
            if trial_rss.is_finite() && trial_rss <= rss {
                let small = p
                    .iter()
                    .zip(&trial)
                    .all(|(a, b)| (b - a).abs() <= opts.rel_step_tol * (a.abs() + opts.rel_step_tol));
                let stalled = rss - trial_rss <= 1e-15 * rss;
                p = trial;
                rss = trial_rss;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = small || stalled || rss == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at working precision
            converged = true;
        }
    }

    if !converged {
        return Err(Error::Fit {
            message: format!("no convergence after {} iterations", opts.max_iter),
            residual_rms: (rss / x.len() as f64).sqrt(),
        });
    }

    let lin = linearize(model, x, y, &sw, &p);
    let jtj = lin.jac.transpose() * &lin.jac;
    let (inv, rank_deficient) = scaled_pseudo_inverse(&jtj);
    let dof = x.len().saturating_sub(n);
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let correlation_time = if opts.correlated_residuals {
        integrated_autocorrelation(lin.resid.as_slice())
    } else {
        1.0
    };
    let covariance = inv * (s2 * correlation_time);

    Ok(Solution {
        params: p,
        covariance,
        rss,
        dof,
        iterations,
        rank_deficient,
        correlation_time,
    })
}

/// Pseudo-inverse of a symmetric positive semi-definite matrix after
/// equilibrating its diagonal, so that parameters of very different
/// magnitude do not masquerade as rank loss.
fn scaled_pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = a[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut s = a.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] *= d[i] * d[j];
        }
    }
    let svd = s.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(1e-300);
    let mut rank_deficient = d.iter().any(|v| *v == 0.0);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let sv = svd.singular_values[k];
        if sv > tol {
            inv += (vt.row(k).transpose() * u.column(k).transpose()) / sv;
        } else {
            rank_deficient = true;
        }
    }
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] *= d[i] * d[j];
        }
    }
    (inv, rank_deficient)
}

/// Integrated autocorrelation time 1 + 2 Σ ρ_k, summed over Geyer's
/// initial positive sequence of paired lags.
pub fn integrated_autocorrelation(r: &[f64]) -> f64 {
    let n = r.len();
    if n < 4 {
        return 1.0;
    }
    let mean = r.iter().sum::<f64>() / n as f64;
    let c0: f64 = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let rho = |k: usize| -> f64 {
        let s: f64 = (0..n - k).map(|i| (r[i] - mean) * (r[i + k] - mean)).sum();
        s / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n / 2 {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}
