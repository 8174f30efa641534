//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;

use pulsetherm::config::RunConfig;
use pulsetherm::dsp::{lorentzian_fit, peak_area, welch_psd, FilterSpec, Spectrum, Window};
use pulsetherm::infer::{fit_calibration, fit_heating, fit_linear_calibration};
use pulsetherm::metrics::{BathSummary, FiguresOfMerit};
use pulsetherm::model::{
    bose_einstein, ground_state_probability, linewidth_hz, BathModel, MechanicalMode, OpticalMode, RateConvention,
};
use pulsetherm::pipeline::run_pipeline;
use pulsetherm::synth::{mech_amplitude_path, rep_rng, synthesize_ensemble, PulseConfig, SynthTruth, TraceSet};
use rand::Rng;
use rand_distr::StandardNormal;

const F_M: f64 = 2.3725e9;

const DESK: &str = r#"
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
n_reps = 2000

[truth]
alpha_v = 1e-5
sigma_imp = 0.01
n_floor = 0.5

[filter]
bandwidth = 6.25e6
settling_time = 0.25e-6

[fit]
weights = "ensemble"
"#;

fn desk() -> RunConfig {
    RunConfig::from_toml(DESK).unwrap()
}

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Expected ½|y|² gains of the band filter acting on the discrete OU
/// amplitude: `l` for a stationary mode, `k` for the decaying part,
/// referred to the output's centre time.
fn filter_gains(taps: &[f64], decay: f64, dt: f64) -> (f64, f64) {
    let keep = (-0.5 * decay * dt).exp();
    let mid = (taps.len() / 2) as f64;
    let (mut l, mut k) = (0.0, 0.0);
    for (u, hu) in taps.iter().enumerate() {
        for (v, hv) in taps.iter().enumerate() {
            let c = hu * hv * keep.powi((u as i32 - v as i32).abs());
            l += c;
            let earliest = (u.min(v) as f64) - mid;
            k += c * (-decay * dt * earliest).exp();
        }
    }
    (l, k)
}

#[test]
fn c1_figures_of_merit() {
    let opt = OpticalMode {
        f_c: 193.4e12,
        kappa: 5.0e9,
        g0: 1.3e6,
        n_cav: 230.0,
    };
    let mech = MechanicalMode::new(F_M, F_M / 83e3).unwrap();
    let bath = BathSummary {
        gamma_total: 1.05e6,
        n_eq: 95.0,
        n_th: 0.7,
    };
    let f = FiguresOfMerit::compute(&opt, &mech, &bath).unwrap();
    let checks = [
        ("gamma_om", f.gamma_om, 0.31e6, 0.02),
        ("coop", f.coop, 3.7, 0.03),
        ("coop_q", f.coop_q, 3.1e-3, 0.05),
        ("n_add_ambient", f.n_add_ambient, 0.4, 0.10),
        ("n_add_total", f.n_add_total, 262.0, 0.03),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (name, got, want, tol) in checks {
        let ok = rel(got, want) <= tol;
        pass &= ok;
        detail.push_str(&format!("{name}={got:.4} (ref {want}, {:+.1}%{}) ", 100.0 * (got / want - 1.0), if ok { "" } else { " out" }));
    }
    verdict(1, pass, detail.trim_end());
    assert!(pass, "{detail}");
}

#[test]
fn c2_closed_loop_occupancy() {
    let base = desk();
    let truth = bose_einstein(0.02, F_M).unwrap() + base.bath.n_offset;
    let runs = 50;
    let mut covered = 0;
    let mut widths = Vec::new();
    for seed in 0..runs {
        let mut cfg = base.clone();
        cfg.seed = 1000 + seed;
        let run = run_pipeline(&cfg).unwrap();
        let cal = &run.calibration;
        if (cal.curve.n_base - truth).abs() <= cal.n_base_ci95 {
            covered += 1;
        }
        widths.push(cal.n_base_ci95);
    }
    widths.sort_by(f64::total_cmp);
    let median = widths[widths.len() / 2];
    let coverage = covered as f64 / runs as f64;
    let pass = coverage >= 0.90 && median <= 1.0;
    verdict(
        2,
        pass,
        &format!(
            "n_base coverage {covered}/{runs} = {:.0}% (need >= 90%), median 95% half-width {median:.2} phonons (need <= 1.0)",
            100.0 * coverage
        ),
    );
    assert!(pass);
}

#[test]
fn c3_heating_curve_fidelity() {
    let cfg = desk();
    let filt = cfg.filter_spec().unwrap();
    let fs = cfg.pulse.sample_rate;
    let taps = filt.design(fs).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for (i, &t) in cfg.bath.temperatures.iter().enumerate() {
        let truth = cfg.truth_at(t).unwrap();
        let decay = truth.bath.decay_rate().unwrap();
        let (l, k) = filter_gains(&taps, decay, 1.0 / fs);
        let nf = truth.n_floor;
        let n_eq = truth.bath.equilibrium().unwrap() + nf;
        let floor = 2.0 * truth.sigma_imp.powi(2) * taps.iter().map(|h| h * h).sum::<f64>();
        // onset value of the expected curve: α·n0 + β with α = α_v·k
        let expect_a0 = truth.alpha_v * (l * n_eq + k * (truth.n0 + nf - n_eq)) + floor;

        let set = pulsetherm::pipeline::simulate_temperature(&cfg, i).unwrap();
        let (_, fit) = pulsetherm::pipeline::analyze_set(&set, &filt, cfg.fit.weights).unwrap();
        let g_ok = rel(fit.decay_rate, decay) <= 0.05;
        let a_ok = (fit.area_t0 - expect_a0).abs() <= 2.0 * fit.ci95[0];
        pass &= g_ok && a_ok;
        detail.push_str(&format!(
            "[{t} K: Γ {:+.1}%, A0 off by {:.2} CI] ",
            100.0 * (fit.decay_rate / decay - 1.0),
            (fit.area_t0 - expect_a0).abs() / fit.ci95[0]
        ));
    }
    verdict(3, pass, detail.trim_end());
    assert!(pass, "{detail}");
}

#[test]
fn c4_calibration_linearity() {
    let mut cfg = desk();
    // a thermalized mode is stationary, so the record need not stop at the
    // pulse length
    cfg.pulse.t_pulse = 50e-6;
    let filt = cfg.filter_spec().unwrap();
    let fs = cfg.pulse.sample_rate;
    let taps = filt.design(fs).unwrap();
    let temps = [1.5, 2.5, 3.5, 4.5, 5.5, 6.5];
    let gm = cfg.mechanical().unwrap().gamma_m;
    let mut points = Vec::new();
    let mut decay = 0.0;
    for (i, &t) in temps.iter().enumerate() {
        // thermalized mode: no hot bath transient, n stays at the fridge value
        let n = bose_einstein(t, F_M).unwrap();
        let bath = BathModel::with_equilibrium(n, gm, cfg.bath.gamma_total - gm, n, RateConvention::Angular).unwrap();
        decay = bath.decay_rate().unwrap();
        let truth = SynthTruth {
            bath,
            n0: n,
            ..cfg.truth_at(t).unwrap()
        };
        let set = synthesize_ensemble(&cfg.pulse_config(77 + i as u64), &truth).unwrap();
        points.push((t, peak_area(&set, &filt).unwrap().mean()));
    }
    // area scatter grows with the mean
    let sigma: Vec<f64> = points.iter().map(|p| p.1).collect();
    let budget = fit_calibration(&points, Some(&sigma), F_M, 1.5).unwrap();
    let (l, _) = filter_gains(&taps, decay, 1.0 / fs);
    let alpha = cfg.truth.alpha_v * l;
    let floor = 2.0 * cfg.truth.sigma_imp.powi(2) * taps.iter().map(|h| h * h).sum::<f64>() + alpha * cfg.truth.n_floor;
    let a_ok = rel(budget.alpha, alpha) <= 0.03;
    let b_ok = rel(budget.beta, floor) <= 0.05;

    // scale equivariance on the same points
    let ns: Vec<f64> = points.iter().map(|(t, _)| bose_einstein(*t, F_M).unwrap()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let b1 = fit_linear_calibration(&ns, &ys, None).unwrap();
    let ys4: Vec<f64> = ys.iter().map(|y| 4.0 * y).collect();
    let b4 = fit_linear_calibration(&ns, &ys4, None).unwrap();
    let eq_ok = b4.alpha == 4.0 * b1.alpha && b4.beta == 4.0 * b1.beta;

    let pass = a_ok && b_ok && eq_ok;
    verdict(
        4,
        pass,
        &format!(
            "alpha {:+.2}% (tol 3%), beta {:+.2}% (tol 5%), scale equivariance {}",
            100.0 * (budget.alpha / alpha - 1.0),
            100.0 * (budget.beta / floor - 1.0),
            if eq_ok { "exact" } else { "broken" }
        ),
    );
    assert!(pass);
}

fn trace_set(rows: Vec<Vec<f32>>, fs: f64) -> TraceSet {
    let n = rows[0].len();
    let reps = rows.len();
    TraceSet::new(1.0 / fs, reps, n, rows.into_iter().flatten().collect()).unwrap()
}

#[test]
fn c5_dsp_identities() {
    let fs = 125e6;
    let f_if = 30e6;
    let filt = FilterSpec::with_settling(f_if, 6.25e6, 0.25e-6, fs, Window::default()).unwrap();
    let taps = filt.design(fs).unwrap();

    // tone
    let amp = 0.3;
    let tone: Vec<Vec<f32>> = (0..4)
        .map(|r| {
            (0..625)
                .map(|k| (amp * (2.0 * PI * f_if * k as f64 / fs + r as f64).cos()) as f32)
                .collect()
        })
        .collect();
    let a = peak_area(&trace_set(tone, fs), &filt).unwrap();
    let tone_err = a.area.iter().map(|v| rel(*v, amp * amp / 2.0)).fold(0.0, f64::max);
    let tone_ok = tone_err <= 1e-3;

    // white noise against Parseval: 2σ² Σh²
    let sigma = 0.05;
    let reps = 400;
    let rows: Vec<Vec<f32>> = (0..reps)
        .map(|r| {
            let mut rng = rep_rng(9, r);
            (0..625).map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
        })
        .collect();
    let expect = 2.0 * sigma * sigma * taps.iter().map(|h| h * h).sum::<f64>();
    // batch means over repetitions give an honest standard error
    let batches = 20;
    let per = reps as usize / batches;
    let means: Vec<f64> = rows
        .chunks(per)
        .map(|c| peak_area(&trace_set(c.to_vec(), fs), &filt).unwrap().mean())
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let sd = (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64).sqrt();
    let se = sd / (batches as f64).sqrt();
    let z = (m - expect).abs() / se;
    let white_ok = z <= 5.0;

    // stationary OU sideband
    let decay = RateConvention::Ordinary.decay_rate(1.05e6);
    let gamma_m = 83e3;
    let bath = BathModel::with_equilibrium(20.0, gamma_m, 1.05e6 - gamma_m, 20.0, RateConvention::Ordinary).unwrap();
    let pulse = PulseConfig {
        f_if,
        sample_rate: fs,
        t_pulse: 200e-6,
        n_reps: 16,
        base_seed: 3,
    };
    let truth = SynthTruth {
        bath,
        n0: 20.0,
        alpha_v: 1e-5,
        sigma_imp: 1e-3,
        n_floor: 0.0,
    };
    let set = synthesize_ensemble(&pulse, &truth).unwrap();
    let spectra: Vec<Spectrum> = set.rows().map(|r| welch_psd(r, fs, 4096, 2048).unwrap()).collect();
    let avg = Spectrum::average(&spectra).unwrap();
    let (x, y): (Vec<f64>, Vec<f64>) = avg
        .f
        .iter()
        .zip(&avg.s)
        .filter(|(f, _)| (**f - f_if).abs() < 6e6)
        .map(|(f, s)| (*f, *s))
        .unzip();
    let fit = lorentzian_fit(&x, &y).unwrap();
    let width = linewidth_hz(decay);
    let ou_ok = rel(fit.fwhm, width) <= 0.05;

    let pass = tone_ok && white_ok && ou_ok;
    verdict(
        5,
        pass,
        &format!(
            "tone worst {:.2e} (tol 1e-3), white noise {z:.2} SE (tol 5), OU FWHM {:+.2}% (tol 5%)",
            tone_err,
            100.0 * (fit.fwhm / width - 1.0)
        ),
    );
    assert!(pass);
}

#[test]
fn c6_ground_state_and_saturation() {
    let p = ground_state_probability(0.7).unwrap();
    let p_ok = (p - 0.588).abs() < 5e-4;

    let cfg = desk();
    let t = 0.02;
    let truth = cfg.truth_at(t).unwrap();
    let dt = 1.0 / cfg.pulse.sample_rate;
    let n = cfg.pulse_config(0).n_samples();
    let reps = 2000;
    let mut mean = vec![0.0; n];
    for r in 0..reps {
        let mut rng = rep_rng(cfg.ensemble_seed(0), r);
        let path = mech_amplitude_path(&truth.bath, truth.n0, 0.0, dt, n, &mut rng).unwrap();
        for (m, a) in mean.iter_mut().zip(&path) {
            *m += a.norm_sqr() / reps as f64;
        }
    }
    let n_eq = truth.bath.equilibrium().unwrap();
    let target = truth.n0 + 0.95 * (n_eq - truth.n0);
    let t95 = mean.iter().position(|m| *m >= target).map(|k| k as f64 * dt);
    let tail = &mean[n - n / 10..];
    let n_end = tail.iter().sum::<f64>() / tail.len() as f64;
    let t95_ok = t95.is_some_and(|v| v <= 3e-6);
    let sat_ok = rel(n_end, 95.0) <= 0.05;

    let filt = cfg.filter_spec().unwrap();
    let set = pulsetherm::pipeline::simulate_temperature(&cfg, 0).unwrap();
    let fit = fit_heating(&peak_area(&set, &filt).unwrap()).unwrap();
    let t95_fit = 20f64.ln() / fit.decay_rate;
    let fit_ok = t95_fit <= 3e-6;

    let pass = p_ok && t95_ok && sat_ok && fit_ok;
    verdict(
        6,
        pass,
        &format!(
            "P0(0.7) = {p:.4}, simulated t95 = {:.3} us, fitted t95 = {:.3} us, late occupancy {n_end:.1}",
            t95.unwrap_or(f64::NAN) * 1e6,
            t95_fit * 1e6
        ),
    );
    assert!(pass);
}

#[test]
fn c7_determinism_across_threads() {
    let mut cfg = desk();
    cfg.pulse.n_reps = 500;
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4).max(3);
    let outputs: Vec<String> = [1, 2, all]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let dir = tempfile::tempdir().unwrap();
            pool.install(|| pulsetherm::cli::pipeline_cmd(&cfg, dir.path())).unwrap();
            let mut names: Vec<_> = walk(dir.path());
            names.sort();
            names
                .iter()
                .map(|p| format!("{}\n{}", p.strip_prefix(dir.path()).unwrap().display(), std::fs::read_to_string(p).unwrap()))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    let pass = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    verdict(7, pass, &format!("outputs with 1, 2 and {all} threads bit-identical: {pass}"));
    assert!(pass);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
