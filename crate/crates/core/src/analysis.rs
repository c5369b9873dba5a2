//! Trigger-relative histograms and the SNR / μ₁ pipeline.
//!
//! The signal window spans 2.5 pulse FWHM centred on the pulse. Noise is
//! estimated from a region that precedes the signal window (after a gap) and
//! is rescaled to the signal-window duration. Dark-count subtraction removes
//! the expected dark clicks from both windows before taking the ratio.

use crate::conversion;
use crate::lsq::{levenberg_marquardt, LmOptions, Residuals};
use crate::sim::FWHM_TO_SIGMA;
use crate::tags::{Channel, TagStream, PS_PER_S};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signal window width in units of pulse FWHM.
pub const WINDOW_FWHM_FACTOR: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("stream contains no trigger records")]
    NoTriggers,
    #[error("stream not sorted at record {index}")]
    Unsorted { index: usize },
    #[error("invalid histogram parameters: {0}")]
    InvalidHistogram(String),
    #[error("window [{start_s:.4e}, {end_s:.4e}] s lies outside the histogram span")]
    WindowOutsideSpan { start_s: f64, end_s: f64 },
    #[error("noise region ({noise_s:.4e} s) is shorter than the signal window ({window_s:.4e} s)")]
    NoiseRegionTooShort { noise_s: f64, window_s: f64 },
    #[error("no dominant peak in histogram")]
    NoPeak,
    #[error("peak lies at the edge of the histogram span")]
    PeakAtEdge,
    #[error("pulse shape fit failed: {0}")]
    FitFailed(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("singular design matrix in linear fit")]
    SingularDesign,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Counts of clicks versus time after the most recent trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_s: f64,
    pub t_start_s: f64,
    pub counts: Vec<u64>,
    pub n_triggers: u64,
}

impl Histogram {
    pub fn span_s(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width_s
    }

    pub fn bin_start_s(&self, i: usize) -> f64 {
        self.t_start_s + i as f64 * self.bin_width_s
    }

    pub fn bin_center_s(&self, i: usize) -> f64 {
        self.t_start_s + (i as f64 + 0.5) * self.bin_width_s
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bins whose centres fall in `[start, end)`.
    fn bin_range(&self, start_s: f64, end_s: f64) -> std::ops::Range<usize> {
        let lo = ((start_s - self.t_start_s) / self.bin_width_s - 0.5).ceil().max(0.0) as usize;
        let hi = ((end_s - self.t_start_s) / self.bin_width_s - 0.5).ceil().max(0.0) as usize;
        lo.min(self.counts.len())..hi.min(self.counts.len())
    }

    fn sum_range(&self, r: std::ops::Range<usize>) -> u64 {
        self.counts[r].iter().sum()
    }

    fn contains_window(&self, start_s: f64, end_s: f64) -> bool {
        let eps = 1e-9 * self.bin_width_s;
        start_s >= self.t_start_s - eps && end_s <= self.t_start_s + self.span_s() + eps
    }
}

/// Default bin width: FWHM/50 clamped to [1 ns, 1 μs].
pub fn default_bin_width_s(fwhm_s: f64) -> f64 {
    (fwhm_s / 50.0).clamp(1e-9, 1e-6)
}

/// Histograms clicks relative to their most recent preceding trigger.
pub fn build_histogram(tags: &TagStream, bin_width_s: f64, span_s: f64) -> Result<Histogram, AnalysisError> {
    if !(bin_width_s > 0.0 && bin_width_s.is_finite()) {
        return Err(AnalysisError::InvalidHistogram(format!("bin width must be > 0, got {bin_width_s}")));
    }
    if !(span_s >= bin_width_s && span_s.is_finite()) {
        return Err(AnalysisError::InvalidHistogram(format!("span must be >= bin width, got {span_s}")));
    }
    let n_bins = (span_s / bin_width_s).round() as usize;
    let bin_ps = bin_width_s * PS_PER_S;
    let mut counts = vec![0u64; n_bins];
    let mut last_trigger: Option<u64> = None;
    let mut n_triggers = 0u64;
    let mut prev = 0u64;
    for (index, rec) in tags.iter().enumerate() {
        if rec.timestamp_ps < prev {
            return Err(AnalysisError::Unsorted { index });
        }
        prev = rec.timestamp_ps;
        match rec.channel {
            Channel::Trigger => {
                last_trigger = Some(rec.timestamp_ps);
                n_triggers += 1;
            }
            Channel::Spad => {
                if let Some(t0) = last_trigger {
                    let bin = ((rec.timestamp_ps - t0) as f64 / bin_ps) as usize;
                    if bin < n_bins {
                        counts[bin] += 1;
                    }
                }
            }
        }
    }
    if n_triggers == 0 {
        return Err(AnalysisError::NoTriggers);
    }
    Ok(Histogram {
        bin_width_s,
        t_start_s: 0.0,
        counts,
        n_triggers,
    })
}

/// A value that may only be bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimate {
    Value { value: f64, sigma: f64 },
    LowerBound { bound: f64 },
    UpperBound { bound: f64 },
    Undefined,
}

impl Estimate {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Estimate::Value { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            Estimate::Value { sigma, .. } => Some(sigma),
            _ => None,
        }
    }
}

/// How much of the histogram before the pulse feeds the noise estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseWindow {
    /// Same duration as the signal window.
    #[default]
    Equal,
    /// Everything from the histogram start up to the gap.
    MaxAvailable,
    /// A multiple of the signal-window duration.
    Factor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrOptions {
    pub dark_rate_cps: f64,
    /// Gap between noise region and signal window, in pulse FWHM.
    pub noise_gap_fwhm: f64,
    pub noise_window: NoiseWindow,
    /// When known, μ₁ is reported alongside the SNR.
    pub mu_in: Option<f64>,
}

impl Default for SnrOptions {
    fn default() -> Self {
        SnrOptions {
            dark_rate_cps: 0.0,
            noise_gap_fwhm: 1.0,
            noise_window: NoiseWindow::Equal,
            mu_in: None,
        }
    }
}

/// Noise level supplied from outside the histogram under analysis, as
/// clicks per trigger per second of window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRate {
    pub per_trigger_per_s: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrResult {
    pub window_s: f64,
    pub signal_window_s: [f64; 2],
    pub noise_window_s: Option<[f64; 2]>,
    pub n_triggers: u64,
    pub signal_counts: u64,
    pub noise_counts: u64,
    pub noise_counts_in_equivalent_window: f64,
    pub dark_counts_in_window: f64,
    pub snr: Estimate,
    pub snr_dark_subtracted: Estimate,
    /// μ_in / SNR using the dark-subtracted SNR.
    pub mu1: Option<Estimate>,
    pub mu1_raw: Option<Estimate>,
}

impl SnrResult {
    /// Noise level of this measurement, for reuse on a related histogram.
    pub fn noise_rate(&self) -> NoiseRate {
        let per = self.n_triggers as f64 * self.window_s;
        NoiseRate {
            per_trigger_per_s: self.noise_counts_in_equivalent_window / per,
            sigma: noise_sigma(self) / per,
        }
    }
}

fn noise_sigma(r: &SnrResult) -> f64 {
    match r.noise_window_s {
        Some([a, b]) => (r.noise_counts as f64).sqrt() * r.window_s / (b - a),
        None => 0.0,
    }
}

/// Signal-to-noise with the 2.5×FWHM window rule.
pub fn compute_snr(
    h: &Histogram,
    pulse_center_s: f64,
    fwhm_s: f64,
    opts: &SnrOptions,
) -> Result<SnrResult, AnalysisError> {
    snr_impl(h, pulse_center_s, fwhm_s, opts, None)
}

/// As [`compute_snr`], but with the noise level taken from another
/// measurement instead of a side window of `h`.
pub fn compute_snr_with_noise_rate(
    h: &Histogram,
    pulse_center_s: f64,
    fwhm_s: f64,
    opts: &SnrOptions,
    noise: NoiseRate,
) -> Result<SnrResult, AnalysisError> {
    snr_impl(h, pulse_center_s, fwhm_s, opts, Some(noise))
}

fn snr_impl(
    h: &Histogram,
    center: f64,
    fwhm: f64,
    opts: &SnrOptions,
    external: Option<NoiseRate>,
) -> Result<SnrResult, AnalysisError> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(AnalysisError::InvalidParameter(format!("fwhm must be > 0, got {fwhm}")));
    }
    if !(opts.dark_rate_cps >= 0.0 && opts.noise_gap_fwhm >= 0.0) {
        return Err(AnalysisError::InvalidParameter("dark rate and noise gap must be >= 0".into()));
    }
    let half = 0.5 * WINDOW_FWHM_FACTOR * fwhm;
    let (sig_a, sig_b) = (center - half, center + half);
    if !h.contains_window(sig_a, sig_b) {
        return Err(AnalysisError::WindowOutsideSpan { start_s: sig_a, end_s: sig_b });
    }
    let sig_bins = h.bin_range(sig_a, sig_b);
    let window_s = sig_bins.len() as f64 * h.bin_width_s;
    if sig_bins.is_empty() {
        return Err(AnalysisError::InvalidParameter("signal window narrower than one bin".into()));
    }
    let signal_counts = h.sum_range(sig_bins);
    let n_trig = h.n_triggers as f64;

    let (noise_window_s, noise_counts, noise_eq, noise_eq_sigma) = match external {
        Some(rate) => {
            let per = n_trig * window_s;
            (None, 0, rate.per_trigger_per_s * per, rate.sigma * per)
        }
        None => {
            let noise_end = sig_a - opts.noise_gap_fwhm * fwhm;
            let nominal = WINDOW_FWHM_FACTOR * fwhm;
            let noise_start = match opts.noise_window {
                NoiseWindow::Equal => noise_end - nominal,
                NoiseWindow::Factor(f) if f >= 1.0 => noise_end - f * nominal,
                NoiseWindow::Factor(f) => {
                    return Err(AnalysisError::InvalidParameter(format!("noise window factor must be >= 1, got {f}")))
                }
                NoiseWindow::MaxAvailable => h.t_start_s,
            };
            if !h.contains_window(noise_start, noise_end) {
                return Err(AnalysisError::WindowOutsideSpan { start_s: noise_start, end_s: noise_end });
            }
            let bins = h.bin_range(noise_start, noise_end);
            let noise_s = bins.len() as f64 * h.bin_width_s;
            if noise_s + 1e-9 * h.bin_width_s < window_s {
                return Err(AnalysisError::NoiseRegionTooShort { noise_s, window_s });
            }
            let counts = h.sum_range(bins);
            let scale = window_s / noise_s;
            (
                Some([noise_start, noise_end]),
                counts,
                counts as f64 * scale,
                (counts as f64).sqrt() * scale,
            )
        }
    };

    let dark = opts.dark_rate_cps * window_s * n_trig;
    let a = signal_counts as f64;
    let snr = ratio(a, a.sqrt(), noise_eq, noise_eq_sigma, noise_floor_bound(noise_eq_sigma, window_s, h));
    let snr_ds = ratio(
        a - dark,
        a.sqrt(),
        noise_eq - dark,
        noise_eq_sigma,
        noise_floor_bound(noise_eq_sigma, window_s, h),
    );

    let mu1_of = |e: Estimate| -> Option<Estimate> {
        let mu_in = opts.mu_in?;
        Some(match e {
            Estimate::Value { value, sigma } => match conversion::mu1(mu_in, value) {
                Ok(m) => Estimate::Value { value: m, sigma: m * sigma / value },
                Err(_) => Estimate::Undefined,
            },
            Estimate::LowerBound { bound } if bound > 0.0 => Estimate::UpperBound { bound: mu_in / bound },
            _ => Estimate::Undefined,
        })
    };

    Ok(SnrResult {
        window_s,
        signal_window_s: [sig_a, sig_b],
        noise_window_s,
        n_triggers: h.n_triggers,
        signal_counts,
        noise_counts,
        noise_counts_in_equivalent_window: noise_eq,
        dark_counts_in_window: dark,
        snr,
        snr_dark_subtracted: snr_ds,
        mu1: mu1_of(snr_ds),
        mu1_raw: mu1_of(snr),
    })
}

/// Smallest resolvable noise level used for the bound when no (net) noise
/// is seen: one count of the noise region, rescaled.
fn noise_floor_bound(noise_eq_sigma: f64, window_s: f64, h: &Histogram) -> f64 {
    if noise_eq_sigma > 0.0 {
        noise_eq_sigma
    } else {
        (window_s / h.span_s()).max(f64::MIN_POSITIVE)
    }
}

fn ratio(num: f64, num_sigma: f64, den: f64, den_sigma: f64, den_floor: f64) -> Estimate {
    if num <= 0.0 {
        return Estimate::Undefined;
    }
    if den <= 0.0 {
        return Estimate::LowerBound { bound: num / den_floor };
    }
    let value = num / den;
    let rel = ((num_sigma / num).powi(2) + (den_sigma / den).powi(2)).sqrt();
    Estimate::Value { value, sigma: value * rel }
}

/// Fitted pulse shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseFit {
    pub center_s: f64,
    pub fwhm_s: f64,
    pub fwhm_sigma_s: f64,
    pub amplitude: f64,
    pub background: f64,
}

struct GaussianModel<'a> {
    x: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
}

impl Residuals for GaussianModel<'_> {
    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    // p = [amplitude, center, sigma, background]
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.x.len() {
            let z = (self.x[i] - p[1]) / p[2];
            out[i] = (p[0] * (-0.5 * z * z).exp() + p[3] - self.y[i]) * self.w[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut [f64]) {
        for i in 0..self.x.len() {
            let z = (self.x[i] - p[1]) / p[2];
            let g = (-0.5 * z * z).exp();
            let row = &mut jac[i * 4..i * 4 + 4];
            row[0] = g * self.w[i];
            row[1] = p[0] * g * z / p[2] * self.w[i];
            row[2] = p[0] * g * z * z / p[2] * self.w[i];
            row[3] = self.w[i];
        }
    }
}

/// Locates the pulse (smoothed maximum) and fits a Gaussian on a constant
/// background; FWHM = 2√(2 ln 2)·σ.
pub fn estimate_fwhm(h: &Histogram) -> Result<PulseFit, AnalysisError> {
    let n = h.counts.len();
    if n < 8 {
        return Err(AnalysisError::NoPeak);
    }
    let half_w = (n / 200).max(1);
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let a = i.saturating_sub(half_w);
            let b = (i + half_w + 1).min(n);
            h.counts[a..b].iter().sum::<u64>() as f64 / (b - a) as f64
        })
        .collect();
    let mut sorted = smooth.clone();
    sorted.sort_by(f64::total_cmp);
    let baseline = sorted[n / 2];
    let (peak_i, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(AnalysisError::NoPeak)?;
    let height = peak - baseline;
    // significance of the smoothed peak against Poisson scatter of the baseline
    let noise = (baseline.max(1.0) / (2 * half_w + 1) as f64).sqrt();
    if height <= 6.0 * noise || height <= 0.0 {
        return Err(AnalysisError::NoPeak);
    }
    let half_level = baseline + 0.5 * height;
    let left = (0..peak_i).rev().find(|&i| smooth[i] < half_level).unwrap_or(0);
    let right = (peak_i..n).find(|&i| smooth[i] < half_level).unwrap_or(n - 1);
    if left == 0 || right == n - 1 {
        return Err(AnalysisError::PeakAtEdge);
    }
    let fwhm0 = ((right - left) as f64 * h.bin_width_s).max(h.bin_width_s);
    let center0 = h.bin_center_s(peak_i);

    let lo = h.bin_range(center0 - 4.0 * fwhm0, center0 + 4.0 * fwhm0);
    let x: Vec<f64> = lo.clone().map(|i| h.bin_center_s(i)).collect();
    let y: Vec<f64> = lo.clone().map(|i| h.counts[i] as f64).collect();
    let w: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let model = GaussianModel { x: &x, y: &y, w: &w };
    let p0 = [height, center0, fwhm0 * FWHM_TO_SIGMA, baseline];
    let fit = levenberg_marquardt(&model, &p0, LmOptions::default()).map_err(|e| AnalysisError::FitFailed(e.to_string()))?;
    let [amp, center, sigma, bg] = [fit.params[0], fit.params[1], fit.params[2].abs(), fit.params[3]];
    if !(amp > 0.0) || !sigma.is_finite() || sigma <= 0.0 {
        return Err(AnalysisError::FitFailed(format!("unphysical parameters a={amp}, σ={sigma}")));
    }
    let span_end = h.t_start_s + h.span_s();
    let fwhm = sigma / FWHM_TO_SIGMA;
    if center - 0.5 * fwhm < h.t_start_s || center + 0.5 * fwhm > span_end {
        return Err(AnalysisError::PeakAtEdge);
    }
    let dof = (x.len() as f64 - 4.0).max(1.0);
    let reduced = (fit.chi2 / dof).max(1.0);
    let sigma_sigma = (fit.covariance[2 * 4 + 2] * reduced).sqrt();
    Ok(PulseFit {
        center_s: center,
        fwhm_s: fwhm,
        fwhm_sigma_s: sigma_sigma / FWHM_TO_SIGMA,
        amplitude: amp,
        background: bg,
    })
}

/// μ₁ at one pulse length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mu1Point {
    pub fwhm_s: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub with_cavity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// μ₁ per second of FWHM.
    pub slope_per_s: f64,
    pub slope_sigma_per_s: f64,
    pub intercept: f64,
    pub intercept_sigma: f64,
    pub chi2: f64,
    pub n_points: usize,
}

impl SlopeFit {
    pub fn slope_per_us(&self) -> f64 {
        self.slope_per_s * 1e-6
    }

    pub fn slope_sigma_per_us(&self) -> f64 {
        self.slope_sigma_per_s * 1e-6
    }
}

/// μ₁ implied by a slope (per μs of FWHM) at pulse length `fwhm_s`,
/// assuming zero intercept.
pub fn mu1_from_slope(slope_per_us: f64, fwhm_s: f64) -> f64 {
    slope_per_us * fwhm_s * 1e6
}

/// Weighted straight-line fit of μ₁ against pulse FWHM, weights 1/σ².
pub fn fit_mu1_slope(points: &[Mu1Point]) -> Result<SlopeFit, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints { needed: 2, got: points.len() });
    }
    if let Some(p) = points.iter().find(|p| !(p.sigma > 0.0 && p.fwhm_s > 0.0 && p.mu1.is_finite())) {
        return Err(AnalysisError::InvalidParameter(format!(
            "points need positive sigma and fwhm, got sigma {} fwhm {}",
            p.sigma, p.fwhm_s
        )));
    }
    // work in μs to keep the normal matrix well scaled
    let (mut s, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = 1.0 / (p.sigma * p.sigma);
        let x = p.fwhm_s * 1e6;
        s += w;
        sx += w * x;
        sxx += w * x * x;
        sy += w * p.mu1;
        sxy += w * x * p.mu1;
    }
    let det = s * sxx - sx * sx;
    if !(det > 1e-12 * s * sxx) {
        return Err(AnalysisError::SingularDesign);
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2 = points
        .iter()
        .map(|p| ((p.mu1 - intercept - slope * p.fwhm_s * 1e6) / p.sigma).powi(2))
        .sum();
    Ok(SlopeFit {
        slope_per_s: slope * 1e6,
        slope_sigma_per_s: (s / det).sqrt() * 1e6,
        intercept,
        intercept_sigma: (sxx / det).sqrt(),
        chi2,
        n_points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::TimeTagRecord;
    use approx::assert_relative_eq;

    fn flat_hist(level: u64, n: usize, n_triggers: u64) -> Histogram {
        Histogram {
            bin_width_s: 1e-8,
            t_start_s: 0.0,
            counts: vec![level; n],
            n_triggers,
        }
    }

    #[test]
    fn histogram_assigns_to_latest_trigger() {
        let tags = TagStream::new(vec![
            TimeTagRecord::trigger(0),
            TimeTagRecord::spad(500_000),
            TimeTagRecord::spad(1_500_000),
        ]);
        let h = build_histogram(&tags, 1e-6, 3e-6).unwrap();
        assert_eq!(h.counts, vec![1, 1, 0]);
        assert_eq!(h.n_triggers, 1);
    }

    #[test]
    fn histogram_drops_events_beyond_span_and_before_first_trigger() {
        let tags = TagStream::new(vec![
            TimeTagRecord::spad(1),
            TimeTagRecord::trigger(10),
            TimeTagRecord::spad(10 + 3_500_000),
            TimeTagRecord::trigger(10_000_000),
            TimeTagRecord::spad(10_000_100),
        ]);
        let h = build_histogram(&tags, 1e-6, 3e-6).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0]);
        assert_eq!(h.n_triggers, 2);
    }

    #[test]
    fn histogram_errors() {
        let only_clicks = TagStream::new(vec![TimeTagRecord::spad(1)]);
        assert_eq!(build_histogram(&only_clicks, 1e-6, 1e-5), Err(AnalysisError::NoTriggers));
        let unsorted = TagStream::new(vec![TimeTagRecord::trigger(5), TimeTagRecord::spad(4)]);
        assert_eq!(build_histogram(&unsorted, 1e-6, 1e-5), Err(AnalysisError::Unsorted { index: 1 }));
        let triggers_only = TagStream::new(vec![TimeTagRecord::trigger(5)]);
        assert_eq!(build_histogram(&triggers_only, 1e-6, 3e-6).unwrap().total(), 0);
    }

    #[test]
    fn flat_histogram_snr_is_one() {
        let h = flat_hist(100, 1000, 1000);
        let r = compute_snr(&h, 8e-6, 1e-6, &SnrOptions::default()).unwrap();
        assert_eq!(r.window_s, 2.5e-6);
        let snr = r.snr.value().unwrap();
        assert_relative_eq!(snr, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_noise_gives_lower_bound() {
        let mut h = flat_hist(0, 1000, 10);
        for c in &mut h.counts[700..900] {
            *c = 5;
        }
        let opts = SnrOptions { mu_in: Some(0.5), ..SnrOptions::default() };
        let r = compute_snr(&h, 8e-6, 1e-6, &opts).unwrap();
        assert!(matches!(r.snr, Estimate::LowerBound { .. }));
        assert!(matches!(r.mu1, Some(Estimate::UpperBound { .. })));
    }

    #[test]
    fn dark_subtraction_raises_snr() {
        let mut h = flat_hist(10, 1000, 1000);
        for c in &mut h.counts[700..900] {
            *c += 40;
        }
        // dark rate below the observed floor (10 per bin per 1000 triggers)
        let opts = SnrOptions { dark_rate_cps: 500.0, ..SnrOptions::default() };
        let r = compute_snr(&h, 8e-6, 1e-6, &opts).unwrap();
        assert!(r.snr_dark_subtracted.value().unwrap() > r.snr.value().unwrap());
    }

    #[test]
    fn mu1_is_mu_in_over_snr() {
        let mut h = flat_hist(3, 2000, 5000);
        for c in &mut h.counts[1700..1900] {
            *c += 30;
        }
        let opts = SnrOptions { mu_in: Some(0.021), dark_rate_cps: 10.0, ..SnrOptions::default() };
        let r = compute_snr(&h, 18e-6, 1e-6, &opts).unwrap();
        let snr = r.snr_dark_subtracted.value().unwrap();
        assert_eq!(r.mu1.unwrap().value().unwrap(), conversion::mu1(0.021, snr).unwrap());
    }

    #[test]
    fn windows_must_fit() {
        let h = flat_hist(1, 1000, 10);
        assert!(matches!(
            compute_snr(&h, 9.5e-6, 1e-6, &SnrOptions::default()),
            Err(AnalysisError::WindowOutsideSpan { .. })
        ));
        assert!(matches!(
            compute_snr(&h, 2e-6, 1e-6, &SnrOptions::default()),
            Err(AnalysisError::WindowOutsideSpan { .. })
        ));
        let opts = SnrOptions { noise_window: NoiseWindow::MaxAvailable, ..SnrOptions::default() };
        assert!(matches!(
            compute_snr(&h, 4e-6, 1e-6, &opts),
            Err(AnalysisError::NoiseRegionTooShort { .. })
        ));
    }

    #[test]
    fn external_noise_rate_matches_side_window() {
        let mut h = flat_hist(4, 2000, 100);
        for c in &mut h.counts[1700..1900] {
            *c += 20;
        }
        let opts = SnrOptions::default();
        let side = compute_snr(&h, 18e-6, 1e-6, &opts).unwrap();
        let ext = compute_snr_with_noise_rate(&h, 18e-6, 1e-6, &opts, side.noise_rate()).unwrap();
        assert_relative_eq!(ext.snr.value().unwrap(), side.snr.value().unwrap(), max_relative = 1e-12);
    }

    fn gaussian_hist(fwhm: f64, center: f64, bg: u64) -> Histogram {
        let bw = 1e-8;
        let n = 3000;
        let sigma = fwhm * FWHM_TO_SIGMA;
        let counts = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * bw - center;
                bg + (1000.0 * (-0.5 * (x / sigma).powi(2)).exp()).round() as u64
            })
            .collect();
        Histogram { bin_width_s: bw, t_start_s: 0.0, counts, n_triggers: 1 }
    }

    #[test]
    fn fwhm_of_sampled_gaussian() {
        let fit = estimate_fwhm(&gaussian_hist(1e-6, 15e-6, 20)).unwrap();
        assert!((fit.fwhm_s - 1e-6).abs() < 1e-8, "{}", fit.fwhm_s);
        assert!((fit.center_s - 15e-6).abs() < 1e-8);
    }

    #[test]
    fn fwhm_of_flat_histogram_errors() {
        assert_eq!(estimate_fwhm(&flat_hist(50, 1000, 10)), Err(AnalysisError::NoPeak));
        assert_eq!(estimate_fwhm(&flat_hist(0, 1000, 10)), Err(AnalysisError::NoPeak));
    }

    #[test]
    fn fwhm_at_edge_errors() {
        assert_eq!(estimate_fwhm(&gaussian_hist(1e-6, 0.2e-6, 5)), Err(AnalysisError::PeakAtEdge));
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let pts = [
            Mu1Point { fwhm_s: 1e-6, mu1: 3e-4, sigma: 1e-5, with_cavity: true },
            Mu1Point { fwhm_s: 3e-6, mu1: 7e-4, sigma: 2e-5, with_cavity: true },
        ];
        let fit = fit_mu1_slope(&pts).unwrap();
        assert_relative_eq!(fit.slope_per_us(), 2e-4, max_relative = 1e-10);
        assert_relative_eq!(fit.intercept, 1e-4, max_relative = 1e-9);
        assert!(fit.chi2 < 1e-18);
    }

    #[test]
    fn slope_fit_errors() {
        let p = Mu1Point { fwhm_s: 1e-6, mu1: 1e-4, sigma: 1e-5, with_cavity: false };
        assert!(matches!(fit_mu1_slope(&[p]), Err(AnalysisError::TooFewPoints { .. })));
        assert_eq!(fit_mu1_slope(&[p, p, p]), Err(AnalysisError::SingularDesign));
    }
}
