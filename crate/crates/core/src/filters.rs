//! Spectral transmission of the filter chain.
//!
//! Every element is a real-valued transmission profile over detuning from the
//! signal frequency. Resonant elements (etalon, Fabry-Perot cavity) use the
//! Airy function
//!
//! ```text
//! T(δ) = T_peak / (1 + (2F/π)² sin²(π δ / FSR)),   FSR = F · FWHM
//! ```
//!
//! the fiber Bragg grating is a Gaussian passband, and broadband glass filters
//! are flat. A cascade multiplies its elements. Integrating the cascade over
//! detuning gives its noise-equivalent bandwidth, which is what a flat noise
//! spectrum sees.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

/// Default integration half-span for noise bandwidths.
pub const DEFAULT_SPAN_HZ: f64 = 6.0e9;
/// Default quadrature step.
pub const DEFAULT_STEP_HZ: f64 = 0.1e6;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid filter element: {0}")]
    InvalidElement(String),
    #[error("detuning must be finite, got {0}")]
    NonFiniteDetuning(f64),
    #[error("filter cascade has no elements")]
    EmptyCascade,
    #[error("integration span must be positive and finite, got {0}")]
    InvalidSpan(f64),
    #[error("integration step must be positive and smaller than the span, got {0}")]
    InvalidStep(f64),
    #[error("reference cascade has zero noise bandwidth")]
    ZeroBandwidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    FabryPerot,
    Etalon,
    Gaussian,
    FlatBand,
}

impl FilterKind {
    pub fn is_resonant(self) -> bool {
        matches!(self, FilterKind::FabryPerot | FilterKind::Etalon)
    }
}

/// A single filtering element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterElement {
    pub kind: FilterKind,
    #[serde(default)]
    pub name: Option<String>,
    pub fwhm_hz: f64,
    /// Only meaningful for resonant kinds.
    #[serde(default)]
    pub finesse: Option<f64>,
    #[serde(default = "unit")]
    pub peak_transmission: f64,
    #[serde(default)]
    pub center_offset_hz: f64,
}

fn unit() -> f64 {
    1.0
}

impl FilterElement {
    pub fn fabry_perot(fwhm_hz: f64, finesse: f64, peak_transmission: f64) -> Self {
        Self::resonant(FilterKind::FabryPerot, fwhm_hz, finesse, peak_transmission)
    }

    pub fn etalon(fwhm_hz: f64, finesse: f64, peak_transmission: f64) -> Self {
        Self::resonant(FilterKind::Etalon, fwhm_hz, finesse, peak_transmission)
    }

    fn resonant(kind: FilterKind, fwhm_hz: f64, finesse: f64, peak_transmission: f64) -> Self {
        FilterElement {
            kind,
            name: None,
            fwhm_hz,
            finesse: Some(finesse),
            peak_transmission,
            center_offset_hz: 0.0,
        }
    }

    pub fn gaussian(fwhm_hz: f64, peak_transmission: f64) -> Self {
        FilterElement {
            kind: FilterKind::Gaussian,
            name: None,
            fwhm_hz,
            finesse: None,
            peak_transmission,
            center_offset_hz: 0.0,
        }
    }

    /// A filter whose edges lie far outside any span of interest.
    pub fn flat(peak_transmission: f64) -> Self {
        FilterElement {
            kind: FilterKind::FlatBand,
            name: None,
            fwhm_hz: f64::INFINITY,
            finesse: None,
            peak_transmission,
            center_offset_hz: 0.0,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_center_offset(mut self, offset_hz: f64) -> Self {
        self.center_offset_hz = offset_hz;
        self
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |msg: String| Err(FilterError::InvalidElement(msg));
        if !(self.fwhm_hz > 0.0) {
            return bad(format!("fwhm_hz must be > 0, got {}", self.fwhm_hz));
        }
        if self.kind != FilterKind::FlatBand && !self.fwhm_hz.is_finite() {
            return bad("fwhm_hz must be finite".into());
        }
        if !(self.peak_transmission > 0.0 && self.peak_transmission <= 1.0) {
            return bad(format!(
                "peak_transmission must lie in (0, 1], got {}",
                self.peak_transmission
            ));
        }
        if !self.center_offset_hz.is_finite() {
            return bad("center_offset_hz must be finite".into());
        }
        if self.kind.is_resonant() {
            match self.finesse {
                Some(f) if f > 1.0 && f.is_finite() => {}
                Some(f) => return bad(format!("finesse must be > 1, got {f}")),
                None => return bad(format!("{:?} requires a finesse", self.kind)),
            }
        }
        Ok(())
    }

    /// Free spectral range, derived as finesse × FWHM. `None` for
    /// non-resonant kinds.
    pub fn free_spectral_range_hz(&self) -> Option<f64> {
        if self.kind.is_resonant() {
            self.finesse.map(|f| f * self.fwhm_hz)
        } else {
            None
        }
    }

    /// Transmission at `detuning_hz` from the signal frequency.
    pub fn transmission(&self, detuning_hz: f64) -> Result<f64, FilterError> {
        if !detuning_hz.is_finite() {
            return Err(FilterError::NonFiniteDetuning(detuning_hz));
        }
        self.validate()?;
        Ok(self.transmission_unchecked(detuning_hz))
    }

    #[inline]
    pub(crate) fn transmission_unchecked(&self, detuning_hz: f64) -> f64 {
        let d = detuning_hz - self.center_offset_hz;
        match self.kind {
            FilterKind::FabryPerot | FilterKind::Etalon => {
                let finesse = self.finesse.unwrap_or(1.0);
                let fsr = finesse * self.fwhm_hz;
                let coeff = (2.0 * finesse / PI).powi(2);
                // Reduce the phase first so that δ and δ + k·FSR hit the
                // same argument to the last bit.
                let phase = (d / fsr).rem_euclid(1.0);
                let s = (PI * phase).sin();
                self.peak_transmission / (1.0 + coeff * s * s)
            }
            FilterKind::Gaussian => {
                let x = d / self.fwhm_hz;
                self.peak_transmission * (-4.0 * LN_2 * x * x).exp()
            }
            FilterKind::FlatBand => self.peak_transmission,
        }
    }
}

/// An ordered chain of filters whose transmissions multiply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FilterCascade {
    pub elements: Vec<FilterElement>,
}

impl FilterCascade {
    pub fn new(elements: Vec<FilterElement>) -> Self {
        FilterCascade { elements }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.elements.is_empty() {
            return Err(FilterError::EmptyCascade);
        }
        self.elements.iter().try_for_each(FilterElement::validate)
    }

    pub fn with(mut self, element: FilterElement) -> Self {
        self.elements.push(element);
        self
    }

    pub fn transmission(&self, detuning_hz: f64) -> Result<f64, FilterError> {
        if !detuning_hz.is_finite() {
            return Err(FilterError::NonFiniteDetuning(detuning_hz));
        }
        self.validate()?;
        Ok(self.transmission_unchecked(detuning_hz))
    }

    #[inline]
    fn transmission_unchecked(&self, detuning_hz: f64) -> f64 {
        self.elements
            .iter()
            .map(|e| e.transmission_unchecked(detuning_hz))
            .product()
    }

    /// Peak of the combined transmission at zero detuning.
    pub fn peak_transmission(&self) -> Result<f64, FilterError> {
        self.transmission(0.0)
    }

    /// Samples the cascade on a uniform grid over `[-span, span]`.
    pub fn sample(&self, span_hz: f64, step_hz: f64) -> Result<Vec<(f64, f64)>, FilterError> {
        self.validate()?;
        check_grid(span_hz, step_hz)?;
        let n = (2.0 * span_hz / step_hz).round() as usize;
        let h = 2.0 * span_hz / n as f64;
        Ok((0..=n)
            .map(|i| {
                let x = -span_hz + i as f64 * h;
                (x, self.transmission_unchecked(x))
            })
            .collect())
    }

    /// Integral of the cascade transmission over `[-span, span]` in Hz.
    pub fn noise_bandwidth(&self, span_hz: f64) -> Result<f64, FilterError> {
        self.noise_bandwidth_with_step(span_hz, DEFAULT_STEP_HZ)
    }

    /// Composite Simpson quadrature with (at most) `step_hz` spacing.
    pub fn noise_bandwidth_with_step(&self, span_hz: f64, step_hz: f64) -> Result<f64, FilterError> {
        self.validate()?;
        check_grid(span_hz, step_hz)?;
        let mut n = (2.0 * span_hz / step_hz).ceil() as usize;
        if n % 2 == 1 {
            n += 1;
        }
        let h = 2.0 * span_hz / n as f64;
        let f = |i: usize| self.transmission_unchecked(-span_hz + i as f64 * h);
        let mut acc = f(0) + f(n);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
        }
        Ok(acc * h / 3.0)
    }
}

fn check_grid(span_hz: f64, step_hz: f64) -> Result<(), FilterError> {
    if !(span_hz > 0.0 && span_hz.is_finite()) {
        return Err(FilterError::InvalidSpan(span_hz));
    }
    if !(step_hz > 0.0 && step_hz < span_hz) {
        return Err(FilterError::InvalidStep(step_hz));
    }
    Ok(())
}

/// Transmission of a single element; free-function form of
/// [`FilterElement::transmission`].
pub fn element_transmission(f: &FilterElement, detuning_hz: f64) -> Result<f64, FilterError> {
    f.transmission(detuning_hz)
}

pub fn cascade_transmission(c: &FilterCascade, detuning_hz: f64) -> Result<f64, FilterError> {
    c.transmission(detuning_hz)
}

pub fn noise_bandwidth(c: &FilterCascade, span_hz: f64) -> Result<f64, FilterError> {
    c.noise_bandwidth(span_hz)
}

/// Ratio of the flat-spectrum noise passed by `without` to that passed by
/// `with`.
pub fn noise_suppression_ratio(
    without: &FilterCascade,
    with: &FilterCascade,
    span_hz: f64,
) -> Result<f64, FilterError> {
    let num = without.noise_bandwidth(span_hz)?;
    let den = with.noise_bandwidth(span_hz)?;
    if den <= 0.0 {
        return Err(FilterError::ZeroBandwidth);
    }
    Ok(num / den)
}

/// The reference filter chain: etalon 210 MHz / F19, FBG 2.4 GHz at 60 %,
/// broadband glass filters folded in as a flat unit-transmission element.
pub fn reference_cascade_without_cavity() -> FilterCascade {
    FilterCascade::new(vec![
        FilterElement::flat(1.0).named("color glass + band-pass"),
        FilterElement::etalon(210e6, 19.0, 1.0).named("etalon"),
        FilterElement::gaussian(2.4e9, 0.60).named("fbg"),
    ])
}

/// [`reference_cascade_without_cavity`] plus the 12.5 MHz / F100 cavity.
pub fn reference_cascade_with_cavity() -> FilterCascade {
    FilterCascade::new(vec![
        FilterElement::flat(1.0).named("color glass + band-pass"),
        FilterElement::etalon(210e6, 19.0, 1.0).named("etalon"),
        FilterElement::fabry_perot(12.5e6, 100.0, 1.0).named("cavity"),
        FilterElement::gaussian(2.4e9, 0.60).named("fbg"),
    ])
}
