//! End-to-end runs: simulate, histogram, SNR, μ₁ series.

use crate::analysis::{
    build_histogram, compute_snr, compute_snr_with_noise_rate, default_bin_width_s, estimate_fwhm, fit_mu1_slope,
    AnalysisError, Estimate, Histogram, Mu1Point, SlopeFit, SnrOptions, SnrResult,
};
use crate::config::{AnalysisConfig, ConfigError, NoiseRef, RunConfig};
use crate::filters::{noise_suppression_ratio, FilterError};
use crate::sim::{simulate_timetags, Scenario, SimError};
use crate::tags::{Channel, TagStream, PS_PER_S};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("cannot infer the trigger period: fewer than two triggers")]
    NoTriggerPeriod,
}

/// Median spacing of consecutive triggers.
pub fn trigger_period_s(tags: &TagStream) -> Result<f64, PipelineError> {
    let t: Vec<u64> = tags.timestamps(Channel::Trigger).collect();
    let mut gaps: Vec<u64> = t.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0).collect();
    if gaps.is_empty() {
        return Err(PipelineError::NoTriggerPeriod);
    }
    let mid = gaps.len() / 2;
    let (_, m, _) = gaps.select_nth_unstable(mid);
    Ok(*m as f64 / PS_PER_S)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalyzeOptions {
    /// Taken from a Gaussian fit when absent.
    pub center_s: Option<f64>,
    /// Defaults to the median trigger spacing.
    pub span_s: Option<f64>,
    pub bin_width_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub fwhm_s: f64,
    pub center_s: f64,
    pub center_from_fit: bool,
    pub bin_width_s: f64,
    pub span_s: f64,
    pub snr: SnrResult,
}

/// Histogram and SNR of one tag stream.
pub fn analyze_stream(
    tags: &TagStream,
    fwhm_s: f64,
    snr: &SnrOptions,
    opts: AnalyzeOptions,
) -> Result<(Histogram, AnalysisReport), PipelineError> {
    if tags.count(Channel::Trigger) == 0 {
        return Err(AnalysisError::NoTriggers.into());
    }
    let span_s = match opts.span_s {
        Some(s) => s,
        None => trigger_period_s(tags)?,
    };
    let bin_width_s = opts.bin_width_s.unwrap_or_else(|| default_bin_width_s(fwhm_s));
    let h = build_histogram(tags, bin_width_s, span_s)?;
    let (center_s, center_from_fit) = match opts.center_s {
        Some(c) => (c, false),
        None => (estimate_fwhm(&h)?.center_s, true),
    };
    let result = compute_snr(&h, center_s, fwhm_s, snr)?;
    Ok((
        h,
        AnalysisReport {
            fwhm_s,
            center_s,
            center_from_fit,
            bin_width_s,
            span_s,
            snr: result,
        },
    ))
}

/// One simulated and analyzed acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pulse_fwhm_s: f64,
    pub mu_in: f64,
    pub with_cavity: bool,
    pub seed: u64,
    pub n_clicks: usize,
    pub snr: SnrResult,
}

struct RawRun {
    report: RunReport,
    hist: Histogram,
    center_s: f64,
}

fn simulate_and_analyze(sc: &Scenario, analysis: &AnalysisConfig) -> Result<RawRun, PipelineError> {
    let tags = simulate_timetags(sc)?;
    let bin = analysis.bin_width_s.unwrap_or_else(|| default_bin_width_s(sc.pulse_fwhm_s));
    let hist = build_histogram(&tags, bin, sc.pulse_period_s())?;
    let opts = analysis.snr_options(sc.dark_rate_cps, Some(sc.mu_in));
    let snr = compute_snr(&hist, sc.pulse_delay_s, sc.pulse_fwhm_s, &opts)?;
    Ok(RawRun {
        report: RunReport {
            pulse_fwhm_s: sc.pulse_fwhm_s,
            mu_in: sc.mu_in,
            with_cavity: sc.with_cavity,
            seed: sc.seed,
            n_clicks: tags.count(Channel::Spad),
            snr,
        },
        hist,
        center_s: sc.pulse_delay_s,
    })
}

/// Simulates and analyzes one scenario using the analysis settings.
pub fn run_scenario(sc: &Scenario, analysis: &AnalysisConfig) -> Result<RunReport, PipelineError> {
    Ok(simulate_and_analyze(sc, analysis)?.report)
}

/// The `[scenario]` run with and without the cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub with_cavity: RunReport,
    pub without_cavity: RunReport,
}

pub fn run_cavity_comparison(cfg: &RunConfig) -> Result<ComparisonReport, PipelineError> {
    let with = cfg.scenario(true)?;
    let mut without = cfg.scenario(false)?;
    without.seed = crate::rng::derive_seed(cfg.seed, u64::MAX);
    let (a, b) = rayon::join(
        || run_scenario(&with, &cfg.analysis),
        || run_scenario(&without, &cfg.analysis),
    );
    Ok(ComparisonReport {
        with_cavity: a?,
        without_cavity: b?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<RunReport>,
    /// μ₁ from dark-subtracted SNR.
    pub points: Vec<Mu1Point>,
    /// μ₁ from raw SNR.
    pub points_raw: Vec<Mu1Point>,
    pub slope_with_cavity: Option<SlopeFit>,
    pub slope_without_cavity: Option<SlopeFit>,
    pub slope_with_cavity_raw: Option<SlopeFit>,
    pub slope_without_cavity_raw: Option<SlopeFit>,
    /// Without-cavity slope over with-cavity slope (dark-subtracted).
    pub slope_ratio: Option<f64>,
    pub slope_ratio_sigma: Option<f64>,
    /// Noise-bandwidth ratio of the two filter chains, for comparison.
    pub filter_suppression_ratio: f64,
}

/// Runs every sweep point with and without the cavity, in parallel, and
/// fits μ₁ against pulse length.
pub fn run_mu1_sweep(cfg: &RunConfig) -> Result<SweepReport, PipelineError> {
    let n = cfg.sweep.as_ref().map_or(0, |s| s.points.len());
    if n == 0 {
        return Err(ConfigError::Invalid { section: "sweep", message: "section missing".into() }.into());
    }
    let jobs: Vec<Scenario> = (0..n)
        .flat_map(|i| [cfg.sweep_scenario(i, true), cfg.sweep_scenario(i, false)])
        .collect::<Result<_, _>>()?;
    let mut raw: Vec<RawRun> = jobs
        .par_iter()
        .map(|sc| simulate_and_analyze(sc, &cfg.analysis))
        .collect::<Result<_, _>>()?;

    if cfg.analysis.noise_ref == NoiseRef::ShortestInGroup {
        apply_group_noise(&mut raw, &jobs, &cfg.analysis)?;
    }

    let mut points = Vec::new();
    let mut points_raw = Vec::new();
    for r in &raw {
        let rep = &r.report;
        if let Some(Estimate::Value { value, sigma }) = rep.snr.mu1 {
            points.push(Mu1Point { fwhm_s: rep.pulse_fwhm_s, mu1: value, sigma, with_cavity: rep.with_cavity });
        }
        if let Some(Estimate::Value { value, sigma }) = rep.snr.mu1_raw {
            points_raw.push(Mu1Point { fwhm_s: rep.pulse_fwhm_s, mu1: value, sigma, with_cavity: rep.with_cavity });
        }
    }
    let fit = |pts: &[Mu1Point], cav: bool| -> Option<SlopeFit> {
        let sel: Vec<Mu1Point> = pts.iter().copied().filter(|p| p.with_cavity == cav).collect();
        fit_mu1_slope(&sel).ok()
    };
    let slope_with_cavity = fit(&points, true);
    let slope_without_cavity = fit(&points, false);
    let (slope_ratio, slope_ratio_sigma) = match (slope_with_cavity, slope_without_cavity) {
        (Some(w), Some(wo)) if w.slope_per_s > 0.0 => {
            let r = wo.slope_per_s / w.slope_per_s;
            let rel = ((wo.slope_sigma_per_s / wo.slope_per_s).powi(2) + (w.slope_sigma_per_s / w.slope_per_s).powi(2))
                .sqrt();
            (Some(r), Some(r * rel))
        }
        _ => (None, None),
    };
    Ok(SweepReport {
        slope_with_cavity_raw: fit(&points_raw, true),
        slope_without_cavity_raw: fit(&points_raw, false),
        runs: raw.into_iter().map(|r| r.report).collect(),
        points,
        points_raw,
        slope_with_cavity,
        slope_without_cavity,
        slope_ratio,
        slope_ratio_sigma,
        filter_suppression_ratio: noise_suppression_ratio(
            &cfg.filters.cascade_without(),
            &cfg.filters.cascade_with(),
            cfg.filters.span_hz,
        )?,
    })
}

/// Replaces each run's side-window noise with that of the shortest pulse in
/// its group (groups of `noise_group_size`, ordered by pulse length,
/// separately for each filter configuration).
fn apply_group_noise(raw: &mut [RawRun], jobs: &[Scenario], analysis: &AnalysisConfig) -> Result<(), PipelineError> {
    for cav in [true, false] {
        let mut idx: Vec<usize> = (0..raw.len()).filter(|&i| jobs[i].with_cavity == cav).collect();
        idx.sort_by(|&a, &b| jobs[a].pulse_fwhm_s.total_cmp(&jobs[b].pulse_fwhm_s));
        for group in idx.chunks(analysis.noise_group_size) {
            let reference = raw[group[0]].report.snr.noise_rate();
            for &i in &group[1..] {
                let sc = &jobs[i];
                let opts = analysis.snr_options(sc.dark_rate_cps, Some(sc.mu_in));
                let r = &mut raw[i];
                r.report.snr = compute_snr_with_noise_rate(&r.hist, r.center_s, sc.pulse_fwhm_s, &opts, reference)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub span_hz: f64,
    pub step_hz: f64,
    pub noise_bandwidth_without_cavity_hz: f64,
    pub noise_bandwidth_with_cavity_hz: f64,
    pub suppression_ratio: f64,
}

pub fn filter_report(cfg: &RunConfig) -> Result<FilterReport, FilterError> {
    let f = &cfg.filters;
    let without = f.cascade_without().noise_bandwidth_with_step(f.span_hz, f.step_hz)?;
    let with = f.cascade_with().noise_bandwidth_with_step(f.span_hz, f.step_hz)?;
    if with <= 0.0 {
        return Err(FilterError::ZeroBandwidth);
    }
    Ok(FilterReport {
        span_hz: f.span_hz,
        step_hz: f.step_hz,
        noise_bandwidth_without_cavity_hz: without,
        noise_bandwidth_with_cavity_hz: with,
        suppression_ratio: without / with,
    })
}
