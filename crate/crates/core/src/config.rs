//! TOML run configuration.
//!
//! Keys carry their unit as a suffix (`_s`, `_hz`, `_cps`, `_w`). Every
//! section is validated against the invariants of the module it feeds
//! before anything runs.

use crate::analysis::{NoiseWindow, SnrOptions};
use crate::conversion::{device_efficiency, ConversionParams, OpticalPath};
use crate::filters::{FilterCascade, FilterElement, DEFAULT_SPAN_HZ, DEFAULT_STEP_HZ};
use crate::lock::{CavityState, LockController, SessionOptions};
use crate::output::sha256_hex;
use crate::rng::derive_seed;
use crate::sim::Scenario;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

const PAPER_CONFIG: &str = include_str!("../configs/paper.config");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str) -> impl Fn(String) -> ConfigError {
    move |message| ConfigError::Invalid { section, message }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub filters: FiltersConfig,
    pub conversion: ConversionConfig,
    pub path: OpticalPath,
    pub scenario: ScenarioConfig,
    pub lock: LockConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltersConfig {
    #[serde(default = "default_span")]
    pub span_hz: f64,
    #[serde(default = "default_step")]
    pub step_hz: f64,
    /// Elements always in the beam.
    pub base: Vec<FilterElement>,
    /// The actively locked cavity, added for the with-cavity configuration.
    pub cavity: FilterElement,
}

fn default_span() -> f64 {
    DEFAULT_SPAN_HZ
}

fn default_step() -> f64 {
    DEFAULT_STEP_HZ
}

impl FiltersConfig {
    pub fn cascade_without(&self) -> FilterCascade {
        FilterCascade::new(self.base.clone())
    }

    pub fn cascade_with(&self) -> FilterCascade {
        self.cascade_without().with(self.cavity.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionConfig {
    pub eta_max: f64,
    pub beta_per_w_cm2: f64,
    pub length_cm: f64,
    /// Pump power measured in front of the waveguide.
    pub pump_power_w: f64,
    /// Fraction of the pump coupled into the waveguide mode.
    pub pump_coupling: f64,
}

impl ConversionConfig {
    pub fn params(&self) -> ConversionParams {
        ConversionParams {
            eta_max: self.eta_max,
            beta_per_w_cm2: self.beta_per_w_cm2,
            length_cm: self.length_cm,
            pump_power_w: self.pump_power_w * self.pump_coupling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub pulse_fwhm_s: f64,
    /// Defaults to three FWHM before the next trigger.
    #[serde(default)]
    pub pulse_delay_s: Option<f64>,
    pub mu_in: f64,
    pub pulse_rate_hz: f64,
    pub n_pulses: u64,
    /// Defaults to the value implied by `[conversion]` and `[path]`.
    #[serde(default)]
    pub device_efficiency: Option<f64>,
    pub noise_rate_after_waveguide_cps: f64,
    pub with_cavity: bool,
    pub dark_rate_cps: f64,
    pub dead_time_s: f64,
    pub chopper_hz: f64,
    #[serde(default = "half")]
    pub chopper_lock_fraction: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockConfig {
    pub initial_offset_hz: f64,
    pub drift_rate_hz_per_s: f64,
    pub random_walk_sigma_hz_per_sqrt_s: f64,
    /// Defaults to a tenth of the cavity linewidth.
    #[serde(default)]
    pub step_hz: Option<f64>,
    pub duration_s: f64,
    pub chopper_hz: f64,
    #[serde(default = "half")]
    pub lock_fraction: f64,
    #[serde(default = "default_update")]
    pub update_interval_s: f64,
}

fn default_update() -> f64 {
    1e-3
}

/// Which noise level each point of a series uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRef {
    /// Side window of the same histogram.
    #[default]
    PerMeasurement,
    /// Points are taken in order of pulse length in groups; each group
    /// borrows the noise level of its shortest-pulse measurement.
    ShortestInGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Defaults to FWHM/50 clamped to [1 ns, 1 μs].
    #[serde(default)]
    pub bin_width_s: Option<f64>,
    #[serde(default = "one")]
    pub noise_gap_fwhm: f64,
    #[serde(default)]
    pub noise_window: NoiseWindow,
    #[serde(default)]
    pub noise_ref: NoiseRef,
    #[serde(default = "default_group")]
    pub noise_group_size: usize,
    #[serde(default = "yes")]
    pub dark_subtract: bool,
}

fn one() -> f64 {
    1.0
}

fn default_group() -> usize {
    9
}

fn yes() -> bool {
    true
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width_s: None,
            noise_gap_fwhm: 1.0,
            noise_window: NoiseWindow::Equal,
            noise_ref: NoiseRef::PerMeasurement,
            noise_group_size: 9,
            dark_subtract: true,
        }
    }
}

impl AnalysisConfig {
    pub fn snr_options(&self, dark_rate_cps: f64, mu_in: Option<f64>) -> SnrOptions {
        SnrOptions {
            dark_rate_cps: if self.dark_subtract { dark_rate_cps } else { 0.0 },
            noise_gap_fwhm: self.noise_gap_fwhm,
            noise_window: self.noise_window,
            mu_in,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to the value implied by `[conversion]` and `[path]`.
    #[serde(default)]
    pub device_efficiency: Option<f64>,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub pulse_fwhm_s: f64,
    pub mu_in: f64,
    pub pulse_rate_hz: f64,
    pub n_pulses: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The bundled reproduction baseline.
    pub fn paper() -> RunConfig {
        Self::parse(PAPER_CONFIG).expect("bundled config is valid")
    }

    pub fn paper_text() -> &'static str {
        PAPER_CONFIG
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 (hex) of the canonical serialization, so formatting and
    /// comments do not change it.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = invalid("filters");
        if !(self.filters.span_hz > 0.0 && self.filters.step_hz > 0.0) {
            return Err(e("span_hz and step_hz must be > 0".into()));
        }
        if !self.filters.cavity.kind.is_resonant() {
            return Err(e("cavity must be a fabry_perot or etalon element".into()));
        }
        self.filters.cascade_with().validate().map_err(|x| e(x.to_string()))?;

        let params = self.conversion.params();
        params.validate().map_err(|x| invalid("conversion")(x.to_string()))?;
        if !(0.0..=1.0).contains(&self.conversion.pump_coupling) {
            return Err(invalid("conversion")("pump_coupling must lie in [0, 1]".into()));
        }
        self.path.validate().map_err(|x| invalid("path")(x.to_string()))?;

        self.scenario(self.scenario.with_cavity)?;
        self.lock_setup()?;

        let a = &self.analysis;
        let e = invalid("analysis");
        if let Some(bw) = a.bin_width_s {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(e(format!("bin_width_s must be > 0, got {bw}")));
            }
        }
        if !(a.noise_gap_fwhm >= 0.0 && a.noise_gap_fwhm.is_finite()) {
            return Err(e("noise_gap_fwhm must be >= 0".into()));
        }
        if let NoiseWindow::Factor(f) = a.noise_window {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(e(format!("noise_window factor must be >= 1, got {f}")));
            }
        }
        if a.noise_group_size == 0 {
            return Err(e("noise_group_size must be >= 1".into()));
        }

        if let Some(sweep) = &self.sweep {
            if sweep.points.len() < 2 {
                return Err(invalid("sweep")("need at least 2 points".into()));
            }
            for i in 0..sweep.points.len() {
                self.sweep_scenario(i, true)?;
            }
        }
        Ok(())
    }

    /// Device efficiency implied by the conversion and path sections.
    pub fn model_device_efficiency(&self) -> f64 {
        let internal = self.conversion.params().internal_efficiency().unwrap_or(0.0);
        device_efficiency(internal, &self.path).unwrap_or(0.0)
    }

    /// The `[scenario]` section as a simulator input.
    pub fn scenario(&self, with_cavity: bool) -> Result<Scenario, ConfigError> {
        let s = &self.scenario;
        let sc = Scenario {
            pulse_fwhm_s: s.pulse_fwhm_s,
            pulse_delay_s: s
                .pulse_delay_s
                .unwrap_or_else(|| Scenario::default_delay_s(s.pulse_fwhm_s, s.pulse_rate_hz)),
            mu_in: s.mu_in,
            pulse_rate_hz: s.pulse_rate_hz,
            n_pulses: s.n_pulses,
            device_efficiency: s.device_efficiency.unwrap_or_else(|| self.model_device_efficiency()),
            noise_rate_after_waveguide_cps: s.noise_rate_after_waveguide_cps,
            cascade_with: self.filters.cascade_with(),
            cascade_without: self.filters.cascade_without(),
            with_cavity,
            filter_span_hz: self.filters.span_hz,
            dark_rate_cps: s.dark_rate_cps,
            detector_efficiency: self.path.detector_efficiency,
            dead_time_s: s.dead_time_s,
            chopper_hz: s.chopper_hz,
            chopper_lock_fraction: s.chopper_lock_fraction,
            seed: self.seed,
        };
        sc.validate().map_err(|x| invalid("scenario")(x.to_string()))?;
        Ok(sc)
    }

    /// Scenario for sweep point `index`; detector and noise settings come
    /// from `[scenario]`, and each run gets its own derived seed.
    pub fn sweep_scenario(&self, index: usize, with_cavity: bool) -> Result<Scenario, ConfigError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| invalid("sweep")("section missing".into()))?;
        let p = sweep
            .points
            .get(index)
            .ok_or_else(|| invalid("sweep")(format!("no point {index}")))?;
        let mut sc = self.scenario(with_cavity)?;
        sc.pulse_fwhm_s = p.pulse_fwhm_s;
        sc.pulse_delay_s = Scenario::default_delay_s(p.pulse_fwhm_s, p.pulse_rate_hz);
        sc.mu_in = p.mu_in;
        sc.pulse_rate_hz = p.pulse_rate_hz;
        sc.n_pulses = p.n_pulses;
        sc.device_efficiency = sweep.device_efficiency.unwrap_or_else(|| self.model_device_efficiency());
        sc.seed = derive_seed(self.seed, 2 * index as u64 + u64::from(with_cavity));
        sc.validate()
            .map_err(|x| invalid("sweep")(format!("point {index}: {x}")))?;
        Ok(sc)
    }

    pub fn lock_setup(&self) -> Result<(CavityState, LockController, SessionOptions), ConfigError> {
        let l = &self.lock;
        let cavity = CavityState {
            resonance_offset_hz: l.initial_offset_hz,
            drift_rate_hz_per_s: l.drift_rate_hz_per_s,
            random_walk_sigma_hz_per_sqrt_s: l.random_walk_sigma_hz_per_sqrt_s,
        };
        let ctrl = match l.step_hz {
            Some(step) => LockController::new(step),
            None => LockController::for_linewidth(self.filters.cavity.fwhm_hz),
        };
        let opts = SessionOptions {
            duration_s: l.duration_s,
            chopper_hz: l.chopper_hz,
            lock_fraction: l.lock_fraction,
            update_interval_s: l.update_interval_s,
        };
        let e = invalid("lock");
        cavity.validate().map_err(|x| e(x.to_string()))?;
        ctrl.validate().map_err(|x| e(x.to_string()))?;
        opts.validate().map_err(|x| e(x.to_string()))?;
        Ok((cavity, ctrl, opts))
    }
}
