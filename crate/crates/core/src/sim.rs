//! Synthetic time-tag generation.
//!
//! A run is a train of Gaussian weak coherent pulses, each announced by a
//! trigger tag. Detected clicks are the superposition of three Poisson
//! processes: the converted signal (inhomogeneous, one Gaussian bump per
//! pulse), conversion noise (flat spectrum, scaled by the filter cascade's
//! noise bandwidth) and detector dark counts. The detector then imposes a
//! non-paralyzable dead time, and the chopper blanks clicks while the cavity
//! lock beam is on.
//!
//! Generation is split into blocks of pulses. Each block draws from its own
//! counter-derived random stream so that the output depends only on the seed,
//! never on thread scheduling. Dead time is applied once, serially, on the
//! merged click list.

use crate::filters::{FilterCascade, FilterError};
use crate::rng;
use crate::tags::{TagStream, PS_PER_S};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

const PULSES_PER_BLOCK: u64 = 1 << 15;

/// σ of a Gaussian with unit FWHM.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("timestamps not sorted at index {index}")]
    Unsorted { index: usize },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Full description of one simulated acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub pulse_fwhm_s: f64,
    /// Pulse center relative to its trigger.
    pub pulse_delay_s: f64,
    pub mu_in: f64,
    pub pulse_rate_hz: f64,
    pub n_pulses: u64,
    pub device_efficiency: f64,
    /// In-band conversion noise in front of the detector, for the
    /// `cascade_without` filter chain.
    pub noise_rate_after_waveguide_cps: f64,
    pub cascade_with: FilterCascade,
    pub cascade_without: FilterCascade,
    /// Selects `cascade_with` (true) or `cascade_without`.
    pub with_cavity: bool,
    pub filter_span_hz: f64,
    pub dark_rate_cps: f64,
    pub detector_efficiency: f64,
    pub dead_time_s: f64,
    /// Zero disables chopping.
    pub chopper_hz: f64,
    /// Fraction of each chopper period spent locking.
    pub chopper_lock_fraction: f64,
    pub seed: u64,
}

impl Scenario {
    /// Pulse delay that parks the pulse three FWHM before the next trigger,
    /// leaving the rest of the period for noise estimation.
    pub fn default_delay_s(pulse_fwhm_s: f64, pulse_rate_hz: f64) -> f64 {
        1.0 / pulse_rate_hz - 3.0 * pulse_fwhm_s
    }

    pub fn pulse_period_s(&self) -> f64 {
        1.0 / self.pulse_rate_hz
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        let finite_nonneg = [
            ("mu_in", self.mu_in),
            ("noise_rate_after_waveguide_cps", self.noise_rate_after_waveguide_cps),
            ("dark_rate_cps", self.dark_rate_cps),
            ("dead_time_s", self.dead_time_s),
            ("chopper_hz", self.chopper_hz),
        ];
        for (name, v) in finite_nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.pulse_fwhm_s > 0.0 && self.pulse_fwhm_s.is_finite()) {
            return bad(format!("pulse_fwhm_s must be > 0, got {}", self.pulse_fwhm_s));
        }
        if !(self.pulse_rate_hz > 0.0 && self.pulse_rate_hz.is_finite()) {
            return bad(format!("pulse_rate_hz must be > 0, got {}", self.pulse_rate_hz));
        }
        if self.pulse_period_s() <= 5.0 * self.pulse_fwhm_s {
            return bad(format!(
                "pulse period {:.3e} s must exceed 5 x FWHM ({:.3e} s)",
                self.pulse_period_s(),
                5.0 * self.pulse_fwhm_s
            ));
        }
        if !(self.pulse_delay_s >= 0.0 && self.pulse_delay_s < self.pulse_period_s()) {
            return bad(format!(
                "pulse_delay_s must lie within one period, got {}",
                self.pulse_delay_s
            ));
        }
        for (name, v) in [
            ("device_efficiency", self.device_efficiency),
            ("detector_efficiency", self.detector_efficiency),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.n_pulses == 0 {
            return bad("n_pulses must be >= 1".into());
        }
        if self.chopper_hz > 0.0 {
            if !(self.chopper_lock_fraction > 0.0 && self.chopper_lock_fraction < 1.0) {
                return bad(format!(
                    "chopper_lock_fraction must lie in (0, 1), got {}",
                    self.chopper_lock_fraction
                ));
            }
            if self.schedule().pulses_per_measure == 0 {
                return bad("no complete pulse period fits in a chopper measure phase".into());
            }
        }
        self.cascade_with.validate()?;
        self.cascade_without.validate()?;
        Ok(())
    }

    /// Expected detected signal clicks per pulse.
    pub fn expected_signal_per_pulse(&self) -> f64 {
        self.mu_in * self.device_efficiency * self.detector_efficiency
    }

    /// Fraction of the baseline noise that the active cascade passes.
    pub fn noise_filter_factor(&self) -> Result<f64, SimError> {
        if !self.with_cavity {
            return Ok(1.0);
        }
        let with = self.cascade_with.noise_bandwidth(self.filter_span_hz)?;
        let without = self.cascade_without.noise_bandwidth(self.filter_span_hz)?;
        if without <= 0.0 {
            return Err(FilterError::ZeroBandwidth.into());
        }
        Ok(with / without)
    }

    /// Detected conversion-noise rate for the active cascade.
    pub fn detected_noise_rate_cps(&self) -> Result<f64, SimError> {
        Ok(self.noise_rate_after_waveguide_cps * self.detector_efficiency * self.noise_filter_factor()?)
    }

    pub fn schedule(&self) -> PulseSchedule {
        PulseSchedule::new(self)
    }

    /// Instantaneous detected signal rate at time `t_s` since run start.
    pub fn signal_rate_profile(&self, t_s: f64) -> f64 {
        let sched = self.schedule();
        let sigma = self.pulse_fwhm_s * FWHM_TO_SIGMA;
        let reach = 12.0 * sigma;
        let norm = self.expected_signal_per_pulse() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        sched
            .pulses_near(t_s - self.pulse_delay_s, reach)
            .map(|trig_s| {
                let x = t_s - trig_s - self.pulse_delay_s;
                norm * (-0.5 * (x / sigma).powi(2)).exp()
            })
            .sum()
    }
}

/// Peak of a normalized Gaussian in units of 1/FWHM: `2√(ln2/π)`.
pub fn gaussian_peak_per_fwhm() -> f64 {
    2.0 * (LN_2 / std::f64::consts::PI).sqrt()
}

/// Trigger times on an integer picosecond grid. With chopping, pulses are
/// only sent when a whole pulse period fits inside a measure phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseSchedule {
    pub period_ps: u64,
    pub n_pulses: u64,
    /// Chopper period and lock-phase length, both zero when not chopping.
    pub chopper_period_ps: u64,
    pub lock_ps: u64,
    pub pulses_per_measure: u64,
}

impl PulseSchedule {
    fn new(s: &Scenario) -> Self {
        let period_ps = (PS_PER_S / s.pulse_rate_hz).round() as u64;
        if s.chopper_hz > 0.0 {
            let chopper_period_ps = (PS_PER_S / s.chopper_hz).round() as u64;
            let lock_ps = (s.chopper_lock_fraction * chopper_period_ps as f64).round() as u64;
            let pulses_per_measure = chopper_period_ps.saturating_sub(lock_ps) / period_ps.max(1);
            PulseSchedule {
                period_ps,
                n_pulses: s.n_pulses,
                chopper_period_ps,
                lock_ps,
                pulses_per_measure,
            }
        } else {
            PulseSchedule {
                period_ps,
                n_pulses: s.n_pulses,
                chopper_period_ps: 0,
                lock_ps: 0,
                pulses_per_measure: u64::MAX,
            }
        }
    }

    pub fn trigger_ps(&self, k: u64) -> u64 {
        if self.chopper_period_ps == 0 {
            k * self.period_ps
        } else {
            let cycle = k / self.pulses_per_measure;
            let slot = k % self.pulses_per_measure;
            cycle * self.chopper_period_ps + self.lock_ps + slot * self.period_ps
        }
    }

    /// End of the acquisition: one period after the last trigger.
    pub fn end_ps(&self) -> u64 {
        self.trigger_ps(self.n_pulses - 1) + self.period_ps
    }

    pub fn is_locking(&self, t_ps: u64) -> bool {
        self.chopper_period_ps > 0 && t_ps % self.chopper_period_ps < self.lock_ps
    }

    /// Trigger times (seconds) within `reach_s` of `t_s`.
    fn pulses_near(&self, t_s: f64, reach_s: f64) -> impl Iterator<Item = f64> + '_ {
        // The schedule is monotone in k, so bracket by bisection.
        let lo_t = ((t_s - reach_s) * PS_PER_S).max(0.0);
        let hi_t = (t_s + reach_s) * PS_PER_S;
        let first = self.partition(lo_t);
        (first..self.n_pulses)
            .map(|k| self.trigger_ps(k) as f64)
            .take_while(move |&t| t <= hi_t)
            .map(|t| t / PS_PER_S)
    }

    fn partition(&self, t_ps: f64) -> u64 {
        let (mut lo, mut hi) = (0u64, self.n_pulses);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if (self.trigger_ps(mid) as f64) < t_ps {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Removes clicks that fall within `dead_time_s` of the last *kept* click.
pub fn apply_dead_time(events_ps: &[u64], dead_time_s: f64) -> Result<Vec<u64>, SimError> {
    if let Some(i) = events_ps.windows(2).position(|w| w[1] < w[0]) {
        return Err(SimError::Unsorted { index: i + 1 });
    }
    if !(dead_time_s >= 0.0 && dead_time_s.is_finite()) {
        return Err(SimError::InvalidScenario(format!("dead time must be >= 0, got {dead_time_s}")));
    }
    let dead_ps = (dead_time_s * PS_PER_S).round() as u64;
    let mut kept = Vec::with_capacity(events_ps.len());
    let mut last: Option<u64> = None;
    for &t in events_ps {
        if last.is_none_or(|l| t - l >= dead_ps) {
            kept.push(t);
            last = Some(t);
        }
    }
    Ok(kept)
}

/// Generates the full tag stream for `scenario`.
pub fn simulate_timetags(scenario: &Scenario) -> Result<TagStream, SimError> {
    scenario.validate()?;
    let sched = scenario.schedule();
    let signal_per_pulse = scenario.expected_signal_per_pulse();
    let background_cps = scenario.detected_noise_rate_cps()? + scenario.dark_rate_cps;
    let sigma_ps = scenario.pulse_fwhm_s * FWHM_TO_SIGMA * PS_PER_S;
    let delay_ps = scenario.pulse_delay_s * PS_PER_S;
    let end_ps = sched.end_ps();

    let n_blocks = scenario.n_pulses.div_ceil(PULSES_PER_BLOCK);
    let blocks: Vec<Vec<u64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(scenario.seed, b);
            let k0 = b * PULSES_PER_BLOCK;
            let k1 = ((b + 1) * PULSES_PER_BLOCK).min(scenario.n_pulses);
            let t0 = if b == 0 { 0 } else { sched.trigger_ps(k0) };
            let t1 = if k1 == scenario.n_pulses { end_ps } else { sched.trigger_ps(k1) };
            let mut clicks = Vec::new();

            let mean = signal_per_pulse * (k1 - k0) as f64;
            if mean > 0.0 {
                let n = Poisson::new(mean).map(|d| d.sample(&mut rng) as u64).unwrap_or(0);
                for _ in 0..n {
                    let k = rng.random_range(k0..k1);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let t = sched.trigger_ps(k) as f64 + delay_ps + sigma_ps * z;
                    if t >= 0.0 {
                        clicks.push(t.round() as u64);
                    }
                }
            }

            if background_cps > 0.0 {
                let mean_gap_ps = PS_PER_S / background_cps;
                let span = (t1 - t0) as f64;
                let mut acc = 0.0;
                loop {
                    let gap: f64 = Exp1.sample(&mut rng);
                    acc += gap * mean_gap_ps;
                    if acc >= span {
                        break;
                    }
                    clicks.push(t0 + acc.round() as u64);
                }
            }
            clicks
        })
        .collect();

    let mut clicks: Vec<u64> = blocks.into_iter().flatten().collect();
    clicks.sort_unstable();
    let mut clicks = apply_dead_time(&clicks, scenario.dead_time_s)?;
    if sched.chopper_period_ps > 0 {
        clicks.retain(|&t| !sched.is_locking(t));
    }
    let triggers: Vec<u64> = (0..scenario.n_pulses).map(|k| sched.trigger_ps(k)).collect();
    Ok(TagStream::merge(&triggers, &clicks))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::filters::{reference_cascade_with_cavity, reference_cascade_without_cavity, DEFAULT_SPAN_HZ};
    use crate::tags::Channel;

    pub(crate) fn base() -> Scenario {
        Scenario {
            pulse_fwhm_s: 1e-6,
            pulse_delay_s: 20e-6,
            mu_in: 0.5,
            pulse_rate_hz: 10e3,
            n_pulses: 1000,
            device_efficiency: 0.25,
            noise_rate_after_waveguide_cps: 0.0,
            cascade_with: reference_cascade_with_cavity(),
            cascade_without: reference_cascade_without_cavity(),
            with_cavity: true,
            filter_span_hz: DEFAULT_SPAN_HZ,
            dark_rate_cps: 0.0,
            detector_efficiency: 0.1,
            dead_time_s: 0.0,
            chopper_hz: 0.0,
            chopper_lock_fraction: 0.5,
            seed: 1,
        }
    }

    #[test]
    fn dead_time_direct_rule() {
        let kept = apply_dead_time(&[0, 10_000_000, 25_000_000], 20e-6).unwrap();
        assert_eq!(kept, vec![0, 25_000_000]);
        assert!(apply_dead_time(&[], 20e-6).unwrap().is_empty());
    }

    #[test]
    fn dead_time_counts_from_last_kept_event() {
        // 15 μs is dropped, so 30 μs is measured from 0 and kept
        let kept = apply_dead_time(&[0, 15_000_000, 30_000_000], 20e-6).unwrap();
        assert_eq!(kept, vec![0, 30_000_000]);
    }

    #[test]
    fn dead_time_rejects_unsorted() {
        assert_eq!(apply_dead_time(&[5, 3], 1e-6), Err(SimError::Unsorted { index: 1 }));
    }

    #[test]
    fn no_light_no_noise_gives_only_triggers() {
        let mut s = base();
        s.mu_in = 0.0;
        let tags = simulate_timetags(&s).unwrap();
        assert_eq!(tags.count(Channel::Spad), 0);
        assert_eq!(tags.count(Channel::Trigger), 1000);
    }

    #[test]
    fn profile_peak_matches_normalized_gaussian() {
        let s = base();
        let c = s.expected_signal_per_pulse();
        let at_center = s.signal_rate_profile(s.pulse_delay_s);
        let expected = c * gaussian_peak_per_fwhm() / s.pulse_fwhm_s;
        assert!((at_center / expected - 1.0).abs() < 1e-12, "{at_center} vs {expected}");
        // halfway to the next pulse, 50 FWHM away from both
        let mid = s.pulse_delay_s + 0.5 * s.pulse_period_s();
        assert!(s.signal_rate_profile(mid) < 1e-100);
    }

    #[test]
    fn schedule_respects_chopper() {
        let mut s = base();
        s.chopper_hz = 30.0;
        let sched = s.schedule();
        assert_eq!(sched.pulses_per_measure, ((1e12f64 / 30.0).round() as u64 - sched.lock_ps) / sched.period_ps);
        for k in 0..2000 {
            let t = sched.trigger_ps(k);
            assert!(!sched.is_locking(t));
            assert!(!sched.is_locking(t + sched.period_ps - 1));
        }
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = base();
        s.pulse_rate_hz = 1.0 / (4.0 * s.pulse_fwhm_s);
        assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
        let mut s = base();
        s.dark_rate_cps = -1.0;
        assert!(s.validate().is_err());
        let mut s = base();
        s.n_pulses = 0;
        assert!(s.validate().is_err());
        let mut s = base();
        s.cascade_with.elements.clear();
        assert!(matches!(s.validate(), Err(SimError::Filter(_))));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut s = base();
        s.noise_rate_after_waveguide_cps = 5000.0;
        s.dark_rate_cps = 100.0;
        s.n_pulses = 100_000;
        let a = simulate_timetags(&s).unwrap();
        let b = simulate_timetags(&s).unwrap();
        assert_eq!(a, b);
        s.seed = 2;
        assert_ne!(a, simulate_timetags(&s).unwrap());
    }
}
