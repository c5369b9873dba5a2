#![allow(dead_code)]

use qfc::conversion::{efficiency_law, EfficiencyPoint, OpticalPath};
use qfc::filters::{reference_cascade_with_cavity, reference_cascade_without_cavity, DEFAULT_SPAN_HZ};
use qfc::sim::Scenario;
use rand_distr::{Distribution, StandardNormal};

pub const TRUE_BETA: f64 = 0.54;
pub const TRUE_ETA_MAX: f64 = 0.95;
pub const LENGTH_CM: f64 = 2.7;

/// Device-efficiency curve with 15 pump powers up to 198 mW and Gaussian
/// noise of 0.15 % absolute per point.
pub fn efficiency_dataset(seed: u64) -> Vec<EfficiencyPoint> {
    let path = OpticalPath::default();
    let mut rng = qfc::rng::stream(seed, 0);
    let n = 15;
    (0..n)
        .map(|i| {
            let pw = 0.01 + 0.188 * i as f64 / (n - 1) as f64;
            let truth = path.collection_factor() * efficiency_law(TRUE_ETA_MAX, TRUE_BETA, LENGTH_CM, pw);
            let sigma = 0.0015;
            let z: f64 = StandardNormal.sample(&mut rng);
            EfficiencyPoint { pump_power_w: pw, efficiency: truth + sigma * z, sigma }
        })
        .collect()
}

/// A chopper-free scenario with the reference cascades.
pub fn scenario(fwhm_s: f64, mu_in: f64, n_pulses: u64) -> Scenario {
    let rate = 11.6e3;
    Scenario {
        pulse_fwhm_s: fwhm_s,
        pulse_delay_s: Scenario::default_delay_s(fwhm_s, rate),
        mu_in,
        pulse_rate_hz: rate,
        n_pulses,
        device_efficiency: 0.25,
        noise_rate_after_waveguide_cps: 0.0,
        cascade_with: reference_cascade_with_cavity(),
        cascade_without: reference_cascade_without_cavity(),
        with_cavity: false,
        filter_span_hz: DEFAULT_SPAN_HZ,
        dark_rate_cps: 0.0,
        detector_efficiency: 0.1,
        dead_time_s: 0.0,
        chopper_hz: 0.0,
        chopper_lock_fraction: 0.5,
        seed: 1,
    }
}

/// True when the two 2σ intervals overlap.
pub fn overlap_2sigma(a: f64, sa: f64, b: f64, sb: f64) -> bool {
    (a - b).abs() <= 2.0 * (sa + sb)
}
