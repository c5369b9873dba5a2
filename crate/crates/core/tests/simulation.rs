mod common;

use common::scenario;
use qfc::analysis::{
    build_histogram, compute_snr, default_bin_width_s, estimate_fwhm, fit_mu1_slope, Mu1Point, NoiseWindow,
    SnrOptions,
};
use qfc::conversion::mu1;
use qfc::filters::noise_suppression_ratio;
use qfc::sim::{gaussian_peak_per_fwhm, simulate_timetags, Scenario};
use qfc::tags::{Channel, PS_PER_S};

/// Time in `[0, end)` outside lock phases.
fn measure_time_s(s: &Scenario) -> f64 {
    let sched = s.schedule();
    let end = sched.end_ps();
    if sched.chopper_period_ps == 0 {
        return end as f64 / PS_PER_S;
    }
    let full = end / sched.chopper_period_ps;
    let rest = end % sched.chopper_period_ps;
    let per = sched.chopper_period_ps - sched.lock_ps;
    (full * per + rest.saturating_sub(sched.lock_ps)) as f64 / PS_PER_S
}

#[test]
fn no_light_no_noise_only_triggers() {
    let s = scenario(1e-6, 0.0, 10_000);
    let tags = simulate_timetags(&s).unwrap();
    assert_eq!(tags.len(), 10_000);
    assert_eq!(tags.count(Channel::Spad), 0);
}

#[test]
fn signal_counts_per_pulse_match_expectation() {
    let mut s = scenario(1e-6, 2.0, 200_000);
    s.seed = 17;
    let tags = simulate_timetags(&s).unwrap();
    let n = tags.count(Channel::Spad) as f64;
    let expected = s.expected_signal_per_pulse() * s.n_pulses as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
}

#[test]
fn profile_integrates_to_counts_per_pulse() {
    let s = scenario(1e-6, 0.3, 10);
    let period = s.pulse_period_s();
    let steps = 20_000;
    let h = period / steps as f64;
    let t0 = 2.0 * period;
    let integral: f64 = (0..steps).map(|i| s.signal_rate_profile(t0 + (i as f64 + 0.5) * h) * h).sum();
    assert!((integral / s.expected_signal_per_pulse() - 1.0).abs() < 1e-6);
    let peak = s.signal_rate_profile(2.0 * period + s.pulse_delay_s);
    let expected_peak = s.expected_signal_per_pulse() * gaussian_peak_per_fwhm() / s.pulse_fwhm_s;
    assert!((peak / expected_peak - 1.0).abs() < 1e-9);
    assert!(s.signal_rate_profile(2.0 * period + 10e-6) < 1e-30 * expected_peak);
}

#[test]
fn noise_only_counts_are_poisson_with_duty_cycle() {
    let mut s = scenario(1e-6, 0.0, 300_000);
    s.noise_rate_after_waveguide_cps = 2_000.0;
    s.dark_rate_cps = 50.0;
    s.chopper_hz = 30.0;
    s.seed = 5;
    let tags = simulate_timetags(&s).unwrap();
    let r = s.detected_noise_rate_cps().unwrap() + s.dark_rate_cps;
    let expected = r * measure_time_s(&s);
    let n = tags.count(Channel::Spad) as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
}

#[test]
fn chopper_blanks_lock_phases() {
    let mut s = scenario(0.385e-6, 0.5, 100_000);
    s.dark_rate_cps = 500.0;
    s.chopper_hz = 30.0;
    let tags = simulate_timetags(&s).unwrap();
    let sched = s.schedule();
    assert!(tags.timestamps(Channel::Spad).all(|t| !sched.is_locking(t)));
    assert!(tags.timestamps(Channel::Trigger).all(|t| !sched.is_locking(t)));
    assert!(tags.count(Channel::Spad) > 0);
}

#[test]
fn dead_time_rate_law() {
    let mut s = scenario(1e-6, 0.0, 100_000);
    s.dark_rate_cps = 20_000.0;
    s.dead_time_s = 20e-6;
    s.seed = 9;
    let tags = simulate_timetags(&s).unwrap();
    let clicks: Vec<u64> = tags.timestamps(Channel::Spad).collect();
    let dead_ps = (s.dead_time_s * PS_PER_S) as u64;
    assert!(clicks.windows(2).all(|w| w[1] - w[0] >= dead_ps));
    let duration = measure_time_s(&s);
    let r = s.dark_rate_cps;
    let expected = r / (1.0 + r * s.dead_time_s) * duration;
    let n = clicks.len() as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
}

#[test]
fn stream_is_sorted_with_one_trigger_per_pulse() {
    let mut s = scenario(2e-6, 1.0, 50_000);
    s.dark_rate_cps = 300.0;
    s.dead_time_s = 20e-6;
    s.chopper_hz = 30.0;
    let tags = simulate_timetags(&s).unwrap();
    assert!(tags.is_sorted());
    assert_eq!(tags.count(Channel::Trigger) as u64, s.n_pulses);
}

#[test]
fn noise_floor_scales_with_cascade_ratio() {
    let mut s = scenario(1e-6, 0.0, 500_000);
    s.noise_rate_after_waveguide_cps = 20_000.0;
    let without = simulate_timetags(&s).unwrap().count(Channel::Spad) as f64;
    s.with_cavity = true;
    s.seed = 2;
    let with = simulate_timetags(&s).unwrap().count(Channel::Spad) as f64;
    let ratio = noise_suppression_ratio(&s.cascade_without, &s.cascade_with, s.filter_span_hz).unwrap();
    assert!(((without / with) / ratio - 1.0).abs() < 0.10, "{} vs {ratio}", without / with);
}

#[test]
fn histogram_of_simulated_pulse_has_configured_shape() {
    let mut s = scenario(1.17e-6, 3.0, 200_000);
    s.dark_rate_cps = 20.0;
    let tags = simulate_timetags(&s).unwrap();
    let h = build_histogram(&tags, default_bin_width_s(s.pulse_fwhm_s), s.pulse_period_s()).unwrap();
    let fit = estimate_fwhm(&h).unwrap();
    assert!((fit.fwhm_s / s.pulse_fwhm_s - 1.0).abs() < 0.05, "{}", fit.fwhm_s);
    assert!((fit.center_s - s.pulse_delay_s).abs() < 0.05 * s.pulse_fwhm_s);
}

#[test]
fn noise_only_snr_tends_to_one() {
    let mut s = scenario(1e-6, 0.0, 100_000);
    s.dark_rate_cps = 2_000.0;
    let tags = simulate_timetags(&s).unwrap();
    let h = build_histogram(&tags, default_bin_width_s(s.pulse_fwhm_s), s.pulse_period_s()).unwrap();
    let opts = SnrOptions { noise_window: NoiseWindow::MaxAvailable, ..SnrOptions::default() };
    let r = compute_snr(&h, s.pulse_delay_s, s.pulse_fwhm_s, &opts).unwrap();
    let (v, sig) = (r.snr.value().unwrap(), r.snr.sigma().unwrap());
    assert!((v - 1.0).abs() < 3.0 * sig, "{v} ± {sig}");
}

#[test]
fn snr_mu1_identity_and_dark_subtraction_direction() {
    let mut s = scenario(0.385e-6, 0.05, 400_000);
    s.noise_rate_after_waveguide_cps = 500.0;
    s.dark_rate_cps = 9.13;
    let tags = simulate_timetags(&s).unwrap();
    let h = build_histogram(&tags, default_bin_width_s(s.pulse_fwhm_s), s.pulse_period_s()).unwrap();
    let opts = SnrOptions {
        dark_rate_cps: s.dark_rate_cps,
        noise_window: NoiseWindow::MaxAvailable,
        mu_in: Some(s.mu_in),
        ..SnrOptions::default()
    };
    let r = compute_snr(&h, s.pulse_delay_s, s.pulse_fwhm_s, &opts).unwrap();
    let raw = r.snr.value().unwrap();
    let sub = r.snr_dark_subtracted.value().unwrap();
    assert!(sub >= raw);
    assert_eq!(r.mu1.unwrap().value().unwrap(), mu1(s.mu_in, sub).unwrap());
    assert_eq!(r.mu1_raw.unwrap().value().unwrap(), mu1(s.mu_in, raw).unwrap());
}

#[test]
fn slope_fit_recovers_noisy_line() {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = qfc::rng::stream(4, 0);
    let (slope, icpt) = (2.17e-4, 1e-5);
    let pts: Vec<Mu1Point> = (1..=8)
        .map(|i| {
            let fwhm_us = 1.7 * i as f64;
            let sigma = 0.05 * slope * fwhm_us;
            let z: f64 = StandardNormal.sample(&mut rng);
            Mu1Point { fwhm_s: fwhm_us * 1e-6, mu1: icpt + slope * fwhm_us + sigma * z, sigma, with_cavity: true }
        })
        .collect();
    let fit = fit_mu1_slope(&pts).unwrap();
    assert!((fit.slope_per_us() - slope).abs() < 2.0 * fit.slope_sigma_per_us());
    assert!((fit.intercept - icpt).abs() < 2.0 * fit.intercept_sigma);
}
