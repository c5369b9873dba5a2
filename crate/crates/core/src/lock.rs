//! Chopper-synchronized dither lock of the filter cavity.
//!
//! Time advances in fixed controller updates. During lock half-cycles each
//! update feeds one photodiode reading to the controller; during measure
//! half-cycles the piezo holds its setpoint. The resonance drifts throughout.

use crate::filters::{FilterElement, FilterError};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Readings within this relative margin count as equal.
const TIE_TOLERANCE: f64 = 1e-12;

/// Transmission relative to peak above which the cavity counts as locked.
pub const LOCKED_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum LockError {
    #[error("invalid lock parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChopperPhase {
    Lock,
    Measure,
}

/// 50/50 square wave starting in the lock phase.
pub fn chopper_phase(t_s: f64, chopper_hz: f64) -> ChopperPhase {
    chopper_phase_with_duty(t_s, chopper_hz, 0.5)
}

/// `lock_fraction` of each period is spent locking, starting at t = 0.
pub fn chopper_phase_with_duty(t_s: f64, chopper_hz: f64, lock_fraction: f64) -> ChopperPhase {
    let cycle = (t_s * chopper_hz).rem_euclid(1.0);
    if cycle < lock_fraction {
        ChopperPhase::Lock
    } else {
        ChopperPhase::Measure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityState {
    /// Resonance position relative to the signal frequency.
    pub resonance_offset_hz: f64,
    pub drift_rate_hz_per_s: f64,
    pub random_walk_sigma_hz_per_sqrt_s: f64,
}

impl CavityState {
    /// Slow thermal drift: about one 12.5 MHz linewidth per 10 s.
    pub fn default_drift() -> Self {
        CavityState {
            resonance_offset_hz: 0.0,
            drift_rate_hz_per_s: 1.25e6,
            random_walk_sigma_hz_per_sqrt_s: 0.5e6,
        }
    }

    pub fn validate(&self) -> Result<(), LockError> {
        if !self.resonance_offset_hz.is_finite() || !self.drift_rate_hz_per_s.is_finite() {
            return Err(LockError::InvalidParameter("cavity offset and drift must be finite".into()));
        }
        if !(self.random_walk_sigma_hz_per_sqrt_s >= 0.0 && self.random_walk_sigma_hz_per_sqrt_s.is_finite()) {
            return Err(LockError::InvalidParameter(format!(
                "random walk sigma must be >= 0, got {}",
                self.random_walk_sigma_hz_per_sqrt_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerPhase {
    /// Reading at the bare setpoint; discarded.
    Settle,
    ProbePlus,
    ProbeMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockController {
    pub piezo_setpoint_hz: f64,
    pub step_hz: f64,
    /// Reading taken in the last `ProbePlus` phase.
    pub last_transmission: f64,
    pub phase: ControllerPhase,
}

impl LockController {
    pub fn new(step_hz: f64) -> Self {
        LockController {
            piezo_setpoint_hz: 0.0,
            step_hz,
            last_transmission: 0.0,
            phase: ControllerPhase::Settle,
        }
    }

    /// Step of one tenth of a linewidth.
    pub fn for_linewidth(fwhm_hz: f64) -> Self {
        Self::new(fwhm_hz / 10.0)
    }

    pub fn validate(&self) -> Result<(), LockError> {
        if !(self.step_hz > 0.0 && self.step_hz.is_finite()) {
            return Err(LockError::InvalidParameter(format!("step must be > 0, got {}", self.step_hz)));
        }
        if !self.piezo_setpoint_hz.is_finite() {
            return Err(LockError::InvalidParameter("setpoint must be finite".into()));
        }
        Ok(())
    }

    /// Piezo position while taking the reading for the current phase.
    pub fn applied_position_hz(&self) -> f64 {
        match self.phase {
            ControllerPhase::Settle => self.piezo_setpoint_hz,
            ControllerPhase::ProbePlus => self.piezo_setpoint_hz + self.step_hz,
            ControllerPhase::ProbeMinus => self.piezo_setpoint_hz - self.step_hz,
        }
    }
}

/// Feeds one reading taken at [`LockController::applied_position_hz`].
/// After the minus probe the setpoint moves one step toward the brighter
/// probe, or stays put on a tie.
pub fn lock_step(ctrl: LockController, measured_transmission: f64) -> LockController {
    let mut next = ctrl;
    match ctrl.phase {
        ControllerPhase::Settle => next.phase = ControllerPhase::ProbePlus,
        ControllerPhase::ProbePlus => {
            next.last_transmission = measured_transmission;
            next.phase = ControllerPhase::ProbeMinus;
        }
        ControllerPhase::ProbeMinus => {
            let plus = ctrl.last_transmission;
            let minus = measured_transmission;
            let margin = TIE_TOLERANCE * plus.abs().max(minus.abs());
            if plus > minus + margin {
                next.piezo_setpoint_hz += ctrl.step_hz;
            } else if minus > plus + margin {
                next.piezo_setpoint_hz -= ctrl.step_hz;
            }
            next.phase = ControllerPhase::Settle;
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub duration_s: f64,
    pub chopper_hz: f64,
    pub lock_fraction: f64,
    /// Controller update interval (one photodiode reading).
    pub update_interval_s: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            duration_s: 60.0,
            chopper_hz: 30.0,
            lock_fraction: 0.5,
            update_interval_s: 1e-3,
        }
    }
}

impl SessionOptions {
    pub fn validate(&self) -> Result<(), LockError> {
        if !(self.chopper_hz > 0.0 && self.chopper_hz.is_finite()) {
            return Err(LockError::InvalidParameter(format!("chopper_hz must be > 0, got {}", self.chopper_hz)));
        }
        if !(self.lock_fraction > 0.0 && self.lock_fraction < 1.0) {
            return Err(LockError::InvalidParameter(format!(
                "lock_fraction must be in (0, 1), got {}",
                self.lock_fraction
            )));
        }
        let period = 1.0 / self.chopper_hz;
        if !(self.duration_s >= 2.0 * period && self.duration_s.is_finite()) {
            return Err(LockError::InvalidParameter(format!(
                "duration {} s is shorter than two chopper periods",
                self.duration_s
            )));
        }
        let shortest = period * self.lock_fraction.min(1.0 - self.lock_fraction);
        if !(self.update_interval_s > 0.0 && self.update_interval_s <= shortest) {
            return Err(LockError::InvalidParameter(format!(
                "update interval must be in (0, {shortest}] s, got {}",
                self.update_interval_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_s: f64,
    pub detuning_hz: f64,
    pub transmission: f64,
    pub phase: ChopperPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockSummary {
    /// Mean transmission over measure-phase samples.
    pub mean_measure_transmission: f64,
    /// Fraction of measure-phase samples at or above 0.9 of peak.
    pub locked_fraction: f64,
    /// First measure-phase time at which the cavity counted as locked.
    pub first_locked_s: Option<f64>,
    pub final_detuning_hz: f64,
    pub final_setpoint_hz: f64,
    pub peak_transmission: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockSession {
    pub trace: Vec<TraceSample>,
    pub summary: LockSummary,
}

/// Runs the lock loop against `cavity_filter`. Detuning seen by the filter
/// is the resonance offset minus the applied piezo position.
pub fn simulate_lock_session(
    cavity: CavityState,
    ctrl: LockController,
    cavity_filter: &FilterElement,
    opts: &SessionOptions,
    seed: u64,
) -> Result<LockSession, LockError> {
    cavity.validate()?;
    ctrl.validate()?;
    opts.validate()?;
    cavity_filter.validate()?;
    let peak = cavity_filter.peak_transmission;
    let dt = opts.update_interval_s;
    let n = (opts.duration_s / dt).round() as usize;
    let walk = cavity.random_walk_sigma_hz_per_sqrt_s * dt.sqrt();
    let mut rng = rng::stream(seed, 0);

    let mut resonance = cavity.resonance_offset_hz;
    let mut ctrl = ctrl;
    let mut trace = Vec::with_capacity(n);
    let (mut sum_t, mut n_measure, mut n_locked) = (0.0, 0usize, 0usize);
    let mut first_locked_s = None;

    for k in 0..n {
        let t = k as f64 * dt;
        let phase = chopper_phase_with_duty(t, opts.chopper_hz, opts.lock_fraction);
        let position = match phase {
            ChopperPhase::Lock => ctrl.applied_position_hz(),
            ChopperPhase::Measure => ctrl.piezo_setpoint_hz,
        };
        let detuning = resonance - position;
        let transmission = cavity_filter.transmission(detuning)?;
        trace.push(TraceSample { t_s: t, detuning_hz: detuning, transmission, phase });
        match phase {
            ChopperPhase::Lock => ctrl = lock_step(ctrl, transmission),
            ChopperPhase::Measure => {
                sum_t += transmission;
                n_measure += 1;
                if transmission >= LOCKED_THRESHOLD * peak {
                    n_locked += 1;
                    first_locked_s.get_or_insert(t);
                }
            }
        }
        resonance += cavity.drift_rate_hz_per_s * dt;
        if walk > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            resonance += walk * z;
        }
    }

    let summary = LockSummary {
        mean_measure_transmission: if n_measure > 0 { sum_t / n_measure as f64 } else { 0.0 },
        locked_fraction: if n_measure > 0 { n_locked as f64 / n_measure as f64 } else { 0.0 },
        first_locked_s,
        final_detuning_hz: resonance - ctrl.piezo_setpoint_hz,
        final_setpoint_hz: ctrl.piezo_setpoint_hz,
        peak_transmission: peak,
        n_samples: trace.len(),
    };
    Ok(LockSession { trace, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cavity() -> FilterElement {
        FilterElement::fabry_perot(12.5e6, 100.0, 1.0)
    }

    fn still(offset: f64) -> CavityState {
        CavityState {
            resonance_offset_hz: offset,
            drift_rate_hz_per_s: 0.0,
            random_walk_sigma_hz_per_sqrt_s: 0.0,
        }
    }

    #[test]
    fn chopper_convention() {
        assert_eq!(chopper_phase(0.0, 30.0), ChopperPhase::Lock);
        assert_eq!(chopper_phase(1.0 / 60.0 + 1e-9, 30.0), ChopperPhase::Measure);
        assert_eq!(chopper_phase(1.0 / 30.0, 30.0), ChopperPhase::Lock);
    }

    #[test]
    fn brighter_plus_probe_moves_up() {
        let mut c = LockController::new(1.0);
        c = lock_step(c, 0.5);
        c = lock_step(c, 0.8);
        c = lock_step(c, 0.6);
        assert_eq!(c.piezo_setpoint_hz, 1.0);
        assert_eq!(c.phase, ControllerPhase::Settle);
    }

    #[test]
    fn symmetric_readings_hold() {
        let mut c = LockController::new(1.0);
        for _ in 0..3 {
            c = lock_step(c, 0.7);
        }
        assert_eq!(c.piezo_setpoint_hz, 0.0);
    }

    #[test]
    fn on_resonance_stays_at_peak() {
        let s = simulate_lock_session(
            still(0.0),
            LockController::for_linewidth(12.5e6),
            &cavity(),
            &SessionOptions { duration_s: 2.0, ..SessionOptions::default() },
            1,
        )
        .unwrap();
        assert!((s.summary.mean_measure_transmission - 1.0).abs() < 1e-12);
        assert_eq!(s.summary.locked_fraction, 1.0);
    }

    #[test]
    fn ten_steps_off_within_twelve_cycles() {
        let step = 1.25e6;
        let opts = SessionOptions { duration_s: 12.0 / 30.0, ..SessionOptions::default() };
        let s = simulate_lock_session(still(10.0 * step), LockController::new(step), &cavity(), &opts, 0).unwrap();
        assert!(s.summary.final_detuning_hz.abs() <= step);
    }

    #[test]
    fn controller_idle_during_measure() {
        let opts = SessionOptions { duration_s: 1.0, ..SessionOptions::default() };
        let s = simulate_lock_session(still(30e6), LockController::new(1.25e6), &cavity(), &opts, 0).unwrap();
        for w in s.trace.windows(2) {
            if w[0].phase == ChopperPhase::Measure && w[1].phase == ChopperPhase::Measure {
                assert_eq!(w[0].detuning_hz, w[1].detuning_hz);
            }
        }
    }

    #[test]
    fn invalid_options_rejected() {
        let bad = SessionOptions { chopper_hz: 0.0, ..SessionOptions::default() };
        assert!(bad.validate().is_err());
        let short = SessionOptions { duration_s: 0.01, ..SessionOptions::default() };
        assert!(short.validate().is_err());
        assert!(LockController::new(0.0).validate().is_err());
    }
}
