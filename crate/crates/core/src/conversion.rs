//! Difference-frequency conversion efficiency and the figures of merit built
//! on top of it.
//!
//! The internal efficiency follows `η(P) = η_max · sin²(L √(β P))` with `P`
//! the pump power coupled into the waveguide. Device efficiency multiplies in
//! the optical path losses up to the output fiber; detector efficiency is
//! deliberately left out of it.

use crate::lsq::{levenberg_marquardt, LmOptions, LsqError, Residuals};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConversionError {
    #[error("invalid conversion parameters: {0}")]
    InvalidParams(String),
    #[error("invalid optical path: {0}")]
    InvalidPath(String),
    #[error("signal-to-noise ratio must be positive, got {0}")]
    NonPositiveSnr(f64),
    #[error("mean input photon number must be positive, got {0}")]
    NonPositiveMuIn(f64),
    #[error("mu1 must be positive, got {0}")]
    NonPositiveMu1(f64),
    #[error("input cross-correlation must be >= 1, got {0}")]
    InvalidG2(f64),
    #[error("need at least {needed} efficiency points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate pump power range: {0}")]
    DegenerateRange(String),
    #[error("invalid data point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("efficiency fit failed: {0}")]
    FitFailed(#[from] LsqError),
    #[error("monte carlo needs at least 100 trials, got {0}")]
    TooFewTrials(usize),
    #[error("too many monte carlo refits failed ({failed} of {total})")]
    MonteCarloFailures { failed: usize, total: usize },
}

/// Parameters of the efficiency law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionParams {
    pub eta_max: f64,
    /// Normalized efficiency β in W⁻¹·cm⁻².
    pub beta_per_w_cm2: f64,
    pub length_cm: f64,
    /// Pump power coupled into the waveguide.
    pub pump_power_w: f64,
}

impl ConversionParams {
    pub fn validate(&self) -> Result<(), ConversionError> {
        let bad = |m: String| Err(ConversionError::InvalidParams(m));
        if !(0.0..=1.0).contains(&self.eta_max) {
            return bad(format!("eta_max must lie in [0, 1], got {}", self.eta_max));
        }
        if !(self.beta_per_w_cm2 > 0.0 && self.beta_per_w_cm2.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta_per_w_cm2));
        }
        if !(self.length_cm > 0.0 && self.length_cm.is_finite()) {
            return bad(format!("length_cm must be > 0, got {}", self.length_cm));
        }
        if !(self.pump_power_w >= 0.0 && self.pump_power_w.is_finite()) {
            return bad(format!("pump_power_w must be >= 0, got {}", self.pump_power_w));
        }
        Ok(())
    }

    /// Phase argument `L √(β P)` in radians.
    pub fn phase(&self) -> f64 {
        self.length_cm * (self.beta_per_w_cm2 * self.pump_power_w).sqrt()
    }

    pub fn internal_efficiency(&self) -> Result<f64, ConversionError> {
        self.validate()?;
        Ok(efficiency_law(self.eta_max, self.beta_per_w_cm2, self.length_cm, self.pump_power_w))
    }
}

/// `η_max sin²(L √(β P))` without validation.
#[inline]
pub fn efficiency_law(eta_max: f64, beta: f64, length_cm: f64, pump_power_w: f64) -> f64 {
    let s = (length_cm * (beta * pump_power_w).sqrt()).sin();
    eta_max * s * s
}

pub fn internal_efficiency(p: &ConversionParams) -> Result<f64, ConversionError> {
    p.internal_efficiency()
}

/// Pump power that reaches the waveguide mode for a power measured in front
/// of it.
pub fn coupled_pump_power(power_before_w: f64, pump_coupling: f64) -> f64 {
    power_before_w * pump_coupling
}

/// Loss budget between the signal in front of the waveguide and the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalPath {
    pub input_coupling: f64,
    pub fiber_coupling: f64,
    /// Filter chain transmission excluding the FBG.
    pub filter_transmission: f64,
    pub fbg_transmission: f64,
    pub detector_efficiency: f64,
}

impl Default for OpticalPath {
    fn default() -> Self {
        OpticalPath {
            input_coupling: 0.70,
            fiber_coupling: 0.80,
            filter_transmission: 0.80,
            fbg_transmission: 0.60,
            detector_efficiency: 0.10,
        }
    }
}

impl OpticalPath {
    pub fn validate(&self) -> Result<(), ConversionError> {
        let factors = [
            ("input_coupling", self.input_coupling),
            ("fiber_coupling", self.fiber_coupling),
            ("filter_transmission", self.filter_transmission),
            ("fbg_transmission", self.fbg_transmission),
            ("detector_efficiency", self.detector_efficiency),
        ];
        for (name, v) in factors {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConversionError::InvalidPath(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Product of the factors that separate internal from device efficiency.
    pub fn collection_factor(&self) -> f64 {
        self.input_coupling * self.fiber_coupling * self.filter_transmission
    }
}

pub fn device_efficiency(internal: f64, path: &OpticalPath) -> Result<f64, ConversionError> {
    if !(0.0..=1.0).contains(&internal) {
        return Err(ConversionError::InvalidParams(format!(
            "internal efficiency must lie in [0, 1], got {internal}"
        )));
    }
    path.validate()?;
    Ok(internal * path.collection_factor())
}

/// Input photon number needed for a converted SNR of one.
pub fn mu1(mu_in: f64, snr: f64) -> Result<f64, ConversionError> {
    if !(snr > 0.0) {
        return Err(ConversionError::NonPositiveSnr(snr));
    }
    if !(mu_in > 0.0) {
        return Err(ConversionError::NonPositiveMuIn(mu_in));
    }
    Ok(mu_in / snr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Prediction {
    pub g2_si: f64,
    pub mu_in: f64,
    pub mu1: f64,
    pub g2_ci: f64,
}

/// Cross-correlation left after converting one photon of a pair with a
/// converter characterised by `mu1`. An infinite `g2_si` gives the
/// noise-limited ceiling `μ_in/μ₁ + 1`.
pub fn g2_after_conversion(g2_si: f64, mu_in: f64, mu1: f64) -> Result<G2Prediction, ConversionError> {
    if !(mu1 > 0.0) || !mu1.is_finite() {
        return Err(ConversionError::NonPositiveMu1(mu1));
    }
    if !(mu_in > 0.0) || !mu_in.is_finite() {
        return Err(ConversionError::NonPositiveMuIn(mu_in));
    }
    if !(g2_si >= 1.0) {
        return Err(ConversionError::InvalidG2(g2_si));
    }
    let x = mu_in / mu1;
    let g2_ci = if g2_si.is_infinite() {
        x + 1.0
    } else {
        (g2_si * (x + 1.0) / (x + g2_si)).clamp(1.0, g2_si)
    };
    Ok(G2Prediction { g2_si, mu_in, mu1, g2_ci })
}

/// One measured point of device efficiency versus coupled pump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub pump_power_w: f64,
    pub efficiency: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_mc: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFit {
    pub beta_per_w_cm2: f64,
    pub beta_sigma: f64,
    pub eta_max: f64,
    pub eta_max_sigma: f64,
    /// Monte Carlo covariance of (β, η_max).
    pub covariance: [[f64; 2]; 2],
    /// `L √β`, the combination the data actually constrain.
    pub phase_coefficient: f64,
    pub phase_coefficient_sigma: f64,
    pub length_cm: f64,
    pub chi2: f64,
    pub dof: usize,
    pub n_mc: usize,
    pub n_mc_failed: usize,
    pub seed: u64,
}

struct EfficiencyModel<'a> {
    power: &'a [f64],
    value: &'a [f64],
    sigma: &'a [f64],
    scale: f64,
    length_cm: f64,
}

impl EfficiencyModel<'_> {
    fn predict(&self, p: &[f64], power: f64) -> f64 {
        self.scale * efficiency_law(p[1], p[0].max(0.0), self.length_cm, power)
    }
}

impl Residuals for EfficiencyModel<'_> {
    fn n_residuals(&self) -> usize {
        self.power.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.power.len() {
            out[i] = (self.predict(p, self.power[i]) - self.value[i]) / self.sigma[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut [f64]) {
        let beta = p[0].max(1e-300);
        for i in 0..self.power.len() {
            let pw = self.power[i];
            let arg = self.length_cm * (beta * pw).sqrt();
            let (s, c) = arg.sin_cos();
            // d/dβ sin²(L√(βP)) = sin(2·arg) · L √P / (2√β)
            let d_beta = if pw > 0.0 {
                self.scale * p[1] * 2.0 * s * c * self.length_cm * pw.sqrt() / (2.0 * beta.sqrt())
            } else {
                0.0
            };
            jac[i * 2] = d_beta / self.sigma[i];
            jac[i * 2 + 1] = self.scale * s * s / self.sigma[i];
        }
    }
}

/// Fits (β, η_max) to device-efficiency data and estimates their
/// uncertainties by parametric Monte Carlo resampling.
pub fn fit_efficiency_curve(
    points: &[EfficiencyPoint],
    path: &OpticalPath,
    length_cm: f64,
    opts: FitOptions,
) -> Result<EfficiencyFit, ConversionError> {
    path.validate()?;
    if !(length_cm > 0.0 && length_cm.is_finite()) {
        return Err(ConversionError::InvalidParams(format!("length_cm must be > 0, got {length_cm}")));
    }
    if points.len() < 4 {
        return Err(ConversionError::TooFewPoints { needed: 4, got: points.len() });
    }
    if opts.n_mc < 100 {
        return Err(ConversionError::TooFewTrials(opts.n_mc));
    }
    for (index, pt) in points.iter().enumerate() {
        let reason = if !(pt.sigma > 0.0 && pt.sigma.is_finite()) {
            Some("sigma must be positive")
        } else if !(pt.pump_power_w >= 0.0 && pt.pump_power_w.is_finite()) {
            Some("pump power must be non-negative")
        } else if !pt.efficiency.is_finite() {
            Some("efficiency must be finite")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(ConversionError::InvalidPoint { index, reason: reason.into() });
        }
    }
    let power: Vec<f64> = points.iter().map(|p| p.pump_power_w).collect();
    let value: Vec<f64> = points.iter().map(|p| p.efficiency).collect();
    let sigma: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let p_min = power.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = power.iter().copied().fold(0.0, f64::max);
    let distinct_positive = {
        let mut v: Vec<f64> = power.iter().copied().filter(|&p| p > 0.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if p_max <= 0.0 || distinct_positive < 2 || p_max - p_min <= 1e-9 * p_max {
        return Err(ConversionError::DegenerateRange(format!(
            "powers span [{p_min}, {p_max}] W with {distinct_positive} distinct positive values"
        )));
    }

    let model = EfficiencyModel {
        power: &power,
        value: &value,
        sigma: &sigma,
        scale: path.collection_factor(),
        length_cm,
    };
    let best = fit_once(&model)?;
    let p_hat = best.params.clone();

    let trials: Vec<Option<[f64; 2]>> = (0..opts.n_mc)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(opts.seed, t as u64);
            let resampled: Vec<f64> = power
                .iter()
                .zip(&sigma)
                .map(|(&pw, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    model.predict(&p_hat, pw) + s * z
                })
                .collect();
            let m = EfficiencyModel {
                power: &power,
                value: &resampled,
                sigma: &sigma,
                scale: model.scale,
                length_cm,
            };
            levenberg_marquardt(&m, &p_hat, LmOptions::default())
                .ok()
                .map(|f| [f.params[0], f.params[1]])
                .filter(|p| p[0] > 0.0 && p.iter().all(|v| v.is_finite()))
        })
        .collect();

    let ok: Vec<[f64; 2]> = trials.iter().flatten().copied().collect();
    let failed = opts.n_mc - ok.len();
    if failed * 10 > opts.n_mc {
        return Err(ConversionError::MonteCarloFailures { failed, total: opts.n_mc });
    }
    let n = ok.len() as f64;
    let mean = [
        ok.iter().map(|p| p[0]).sum::<f64>() / n,
        ok.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut cov = [[0.0; 2]; 2];
    for p in &ok {
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    let phases: Vec<f64> = ok.iter().map(|p| length_cm * p[0].sqrt()).collect();
    let phase_mean = phases.iter().sum::<f64>() / n;
    let phase_var = phases.iter().map(|x| (x - phase_mean).powi(2)).sum::<f64>() / (n - 1.0);

    Ok(EfficiencyFit {
        beta_per_w_cm2: p_hat[0],
        beta_sigma: cov[0][0].sqrt(),
        eta_max: p_hat[1],
        eta_max_sigma: cov[1][1].sqrt(),
        covariance: cov,
        phase_coefficient: length_cm * p_hat[0].sqrt(),
        phase_coefficient_sigma: phase_var.sqrt(),
        length_cm,
        chi2: best.chi2,
        dof: points.len() - 2,
        n_mc: opts.n_mc,
        n_mc_failed: failed,
        seed: opts.seed,
    })
}

/// Starts from the observed maximum (η_max) and the low-power quadratic
/// slope (β); a second start at η_max = 1 guards against data that stop well
/// short of the sin² peak.
fn fit_once(model: &EfficiencyModel<'_>) -> Result<crate::lsq::LmFit, ConversionError> {
    let internal: Vec<f64> = model.value.iter().map(|v| v / model.scale).collect();
    let eta0 = internal.iter().copied().fold(0.0, f64::max).clamp(1e-6, 1.0);

    let mut order: Vec<usize> = (0..model.power.len()).filter(|&i| model.power[i] > 0.0).collect();
    order.sort_by(|&a, &b| model.power[a].total_cmp(&model.power[b]));
    let low = &order[..order.len().div_ceil(2).max(2).min(order.len())];
    let (sxy, sxx) = low.iter().fold((0.0, 0.0), |(sxy, sxx), &i| {
        (sxy + model.power[i] * internal[i], sxx + model.power[i] * model.power[i])
    });
    let slope = (sxy / sxx).max(1e-12);
    let l2 = model.length_cm * model.length_cm;
    let p_max = model.power.iter().copied().fold(0.0, f64::max);
    // keep the start on the first rising branch of sin²
    let beta_cap = (std::f64::consts::FRAC_PI_2 / model.length_cm).powi(2) / p_max;

    let mut best: Option<crate::lsq::LmFit> = None;
    let mut last_err = None;
    for eta_start in [eta0, 1.0] {
        let beta_start = (slope / (eta_start * l2)).min(beta_cap);
        match levenberg_marquardt(model, &[beta_start, eta_start], LmOptions::default()) {
            Ok(fit) if fit.params[0] > 0.0 => {
                if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
                    best = Some(fit);
                }
            }
            Ok(fit) => {
                last_err = Some(LsqError::NoConvergence {
                    iterations: fit.iterations,
                    last_chi2: fit.chi2,
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        ConversionError::FitFailed(last_err.unwrap_or(LsqError::NoConvergence {
            iterations: 0,
            last_chi2: f64::NAN,
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn params(pump: f64) -> ConversionParams {
        ConversionParams {
            eta_max: 0.95,
            beta_per_w_cm2: 0.54,
            length_cm: 2.7,
            pump_power_w: pump,
        }
    }

    #[test]
    fn zero_pump_gives_zero() {
        assert_eq!(params(0.0).internal_efficiency().unwrap(), 0.0);
    }

    #[test]
    fn quarter_period_gives_eta_max() {
        // L √(β P) = π/2
        let p = FRAC_PI_2.powi(2) / (2.7f64.powi(2) * 0.54);
        assert_relative_eq!(params(p).internal_efficiency().unwrap(), 0.95, max_relative = 1e-12);
    }

    #[test]
    fn reported_device_efficiency_is_consistent() {
        // phase 0.892 rad
        let p = (0.892f64 / 2.7).powi(2) / 0.54;
        let internal = params(p).internal_efficiency().unwrap();
        assert_relative_eq!(internal, 0.95 * 0.892f64.sin().powi(2), max_relative = 1e-12);
        assert!((internal - 0.576).abs() < 0.003, "{internal}");
        let path = OpticalPath::default();
        assert_relative_eq!(path.collection_factor(), 0.448, max_relative = 1e-12);
        let dev = device_efficiency(0.576, &path).unwrap();
        assert!((dev - 0.258).abs() < 5e-4, "{dev}");
    }

    #[test]
    fn device_efficiency_edges() {
        let ones = OpticalPath {
            input_coupling: 1.0,
            fiber_coupling: 1.0,
            filter_transmission: 1.0,
            fbg_transmission: 1.0,
            detector_efficiency: 1.0,
        };
        assert_eq!(device_efficiency(0.0, &OpticalPath::default()).unwrap(), 0.0);
        assert_eq!(device_efficiency(1.0, &ones).unwrap(), 1.0);
        assert!(device_efficiency(1.5, &ones).is_err());
        let mut bad = ones;
        bad.fiber_coupling = 0.0;
        assert!(device_efficiency(0.5, &bad).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params(0.2);
        p.eta_max = 1.1;
        assert!(p.internal_efficiency().is_err());
        let mut p = params(0.2);
        p.beta_per_w_cm2 = 0.0;
        assert!(p.internal_efficiency().is_err());
        assert!(params(-0.1).internal_efficiency().is_err());
    }

    #[test]
    fn mu1_examples() {
        assert_relative_eq!(mu1(0.021, 98.0).unwrap(), 2.1e-4, max_relative = 0.03);
        assert_relative_eq!(mu1(0.77, 293.0).unwrap(), 2.6e-3, max_relative = 0.02);
        assert_eq!(mu1(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(mu1(1.0, 0.0), Err(ConversionError::NonPositiveSnr(0.0)));
        assert_eq!(mu1(1.0, -2.0), Err(ConversionError::NonPositiveSnr(-2.0)));
    }

    #[test]
    fn g2_reference_prediction() {
        let g = g2_after_conversion(17.3, 0.016, 2.17e-4 * 0.6).unwrap();
        assert!((g.g2_ci - 15.3).abs() < 0.1, "{}", g.g2_ci);
    }

    #[test]
    fn g2_ceiling_for_ideal_source() {
        let g = g2_after_conversion(f64::INFINITY, 0.1, 2.17e-3).unwrap();
        assert_relative_eq!(g.g2_ci, 0.1 / 2.17e-3 + 1.0, max_relative = 1e-15);
        assert!((g.g2_ci - 47.0).abs() < 0.5);
        // large but finite approaches the same ceiling
        let g = g2_after_conversion(1e12, 0.1, 2.17e-3).unwrap();
        assert!((g.g2_ci - 47.08).abs() < 0.01);
    }

    #[test]
    fn g2_coherent_input_stays_one() {
        for (mu_in, m1) in [(0.01, 1e-4), (1.0, 0.5), (3.0, 10.0)] {
            assert_eq!(g2_after_conversion(1.0, mu_in, m1).unwrap().g2_ci, 1.0);
        }
    }

    #[test]
    fn g2_rejects_bad_inputs() {
        assert!(matches!(g2_after_conversion(5.0, 0.1, 0.0), Err(ConversionError::NonPositiveMu1(_))));
        assert!(matches!(g2_after_conversion(0.5, 0.1, 0.1), Err(ConversionError::InvalidG2(_))));
        assert!(matches!(g2_after_conversion(5.0, 0.0, 0.1), Err(ConversionError::NonPositiveMuIn(_))));
    }

    fn synthetic(noise: impl Fn(usize) -> f64) -> Vec<EfficiencyPoint> {
        let path = OpticalPath::default();
        (0..10)
            .map(|i| {
                let pw = 0.02 + 0.178 * i as f64 / 9.0;
                let truth = path.collection_factor() * efficiency_law(0.95, 0.54, 2.7, pw);
                let sigma = 0.02 * truth;
                EfficiencyPoint {
                    pump_power_w: pw,
                    efficiency: truth + sigma * noise(i),
                    sigma,
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_data_recovered_exactly() {
        let fit = fit_efficiency_curve(&synthetic(|_| 0.0), &OpticalPath::default(), 2.7, FitOptions::default())
            .unwrap();
        assert!((fit.beta_per_w_cm2 - 0.54).abs() < 1e-8, "{}", fit.beta_per_w_cm2);
        assert!((fit.eta_max - 0.95).abs() < 1e-8, "{}", fit.eta_max);
        assert!(fit.chi2 < 1e-12);
    }

    #[test]
    fn noisy_data_within_two_sigma() {
        // fixed pseudo-noise pattern, unit scale
        let pattern = [0.3, -1.1, 0.7, 0.2, -0.4, 1.3, -0.9, 0.1, 0.5, -0.6];
        let fit = fit_efficiency_curve(
            &synthetic(|i| pattern[i]),
            &OpticalPath::default(),
            2.7,
            FitOptions { n_mc: 1000, seed: 3 },
        )
        .unwrap();
        assert!(fit.beta_sigma > 0.0 && fit.eta_max_sigma > 0.0);
        assert!((fit.beta_per_w_cm2 - 0.54).abs() < 2.0 * fit.beta_sigma);
        assert!((fit.eta_max - 0.95).abs() < 2.0 * fit.eta_max_sigma);
        assert_eq!(fit.dof, 8);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let pts = synthetic(|i| if i % 2 == 0 { 0.5 } else { -0.5 });
        let a = fit_efficiency_curve(&pts, &OpticalPath::default(), 2.7, FitOptions { n_mc: 200, seed: 11 }).unwrap();
        let b = fit_efficiency_curve(&pts, &OpticalPath::default(), 2.7, FitOptions { n_mc: 200, seed: 11 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_input_validation() {
        let path = OpticalPath::default();
        let pts = synthetic(|_| 0.0);
        assert!(matches!(
            fit_efficiency_curve(&pts[..3], &path, 2.7, FitOptions::default()),
            Err(ConversionError::TooFewPoints { .. })
        ));
        let same: Vec<_> = pts.iter().map(|p| EfficiencyPoint { pump_power_w: 0.1, ..*p }).collect();
        assert!(matches!(
            fit_efficiency_curve(&same, &path, 2.7, FitOptions::default()),
            Err(ConversionError::DegenerateRange(_))
        ));
        let mut bad = pts.clone();
        bad[2].sigma = 0.0;
        assert!(matches!(
            fit_efficiency_curve(&bad, &path, 2.7, FitOptions::default()),
            Err(ConversionError::InvalidPoint { index: 2, .. })
        ));
        assert!(matches!(
            fit_efficiency_curve(&pts, &path, 2.7, FitOptions { n_mc: 10, seed: 0 }),
            Err(ConversionError::TooFewTrials(10))
        ));
    }
}
