use clap::{Args, Parser, Subcommand};
use qfc::analysis::{mu1_from_slope, NoiseWindow, SnrOptions};
use qfc::config::{ConfigError, RunConfig};
use qfc::conversion::{fit_efficiency_curve, g2_after_conversion, EfficiencyPoint, FitOptions, OpticalPath};
use qfc::lock::simulate_lock_session;
use qfc::output::{parse_numeric_table, sha256_hex, write_json, write_table, OutputError, Provenance};
use qfc::pipeline::{analyze_stream, filter_report, run_mu1_sweep, AnalyzeOptions, PipelineError};
use qfc::sim::simulate_timetags;
use qfc::tagfile::{read_csv, read_tagfile, write_csv, write_tagfile, TagFileError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qfc", version, about = "Quantum frequency conversion simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a time-tag stream from the [scenario] section.
    Simulate(SimulateArgs),
    /// Histogram a tag file and compute SNR / μ₁.
    Analyze(AnalyzeArgs),
    /// Simulate and analyze the pulse-length series, then fit μ₁ slopes.
    #[command(name = "mu1-sweep")]
    Mu1Sweep(ConfigArgs),
    /// Transmission curve and noise-bandwidth ratio of the filter chain.
    #[command(name = "filter-report")]
    FilterReport(FilterReportArgs),
    /// Fit the efficiency law to measured device efficiencies.
    #[command(name = "fit-efficiency")]
    FitEfficiency(FitArgs),
    /// Predict the cross-correlation after conversion.
    #[command(name = "predict-g2")]
    PredictG2(PredictArgs),
    /// Simulate the chopper-synchronized cavity lock.
    #[command(name = "lock-sim")]
    LockSim(ConfigArgs),
    /// Convert tag files between binary and CSV (direction from extension).
    Convert(ConvertArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "QFC_SEED")]
    seed: Option<u64>,
    /// Overrides the config output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Simulate with the cavity bypassed regardless of the config.
    #[arg(long)]
    without_cavity: bool,
    /// Tag file path; defaults to <output_dir>/tags.qfct.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Pulse FWHM in seconds.
    #[arg(long)]
    fwhm: f64,
    #[arg(long, default_value_t = 0.0)]
    dark_rate: f64,
    #[arg(long)]
    no_dark_subtract: bool,
    /// Pulse center after the trigger in seconds; fitted when omitted.
    #[arg(long)]
    center: Option<f64>,
    /// Histogram span in seconds; defaults to the trigger period.
    #[arg(long)]
    span: Option<f64>,
    #[arg(long)]
    bin_width: Option<f64>,
    /// Mean input photon number, for μ₁.
    #[arg(long)]
    mu_in: Option<f64>,
    /// `equal`, `max` or a multiple of the signal window.
    #[arg(long, default_value = "equal")]
    noise_window: String,
    #[arg(long, default_value_t = 1.0)]
    noise_gap: f64,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct FilterReportArgs {
    #[arg(long)]
    config: PathBuf,
    /// Export the curve of the chain without the cavity.
    #[arg(long)]
    without_cavity: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns pump_power_w, efficiency, sigma.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    length_cm: f64,
    /// Take the optical path from this config instead of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_mc: usize,
    #[arg(long, env = "QFC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "efficiency_fit.json")]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    g2si: f64,
    #[arg(long)]
    mu_in: f64,
    #[arg(long, conflicts_with_all = ["fwhm", "slope"], required_unless_present_all = ["fwhm", "slope"])]
    mu1: Option<f64>,
    /// Window length in seconds.
    #[arg(long, requires = "slope")]
    fwhm: Option<f64>,
    /// μ₁ slope per μs.
    #[arg(long, requires = "fwhm")]
    slope: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<TagFileError> for CliError {
    fn from(e: TagFileError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

struct Loaded {
    cfg: RunConfig,
    out: PathBuf,
}

fn load(args: &ConfigArgs) -> Result<Loaded> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Loaded { cfg, out })
}

fn provenance(command: &str, cfg: &RunConfig) -> Provenance {
    Provenance::new(command, cfg.hash(), Some(cfg.seed))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let Loaded { cfg, out } = load(&args.common)?;
    let with_cavity = cfg.scenario.with_cavity && !args.without_cavity;
    let scenario = cfg.scenario(with_cavity)?;
    let tags = simulate_timetags(&scenario).map_err(runtime)?;
    let path = args.output.unwrap_or_else(|| out.join("tags.qfct"));
    write_tagfile(&path, &tags)?;
    let mut sidecar = path.clone().into_os_string();
    sidecar.push(".json");
    #[derive(Serialize)]
    struct Sidecar<'a> {
        scenario: &'a qfc::sim::Scenario,
        n_records: usize,
    }
    write_json(
        Path::new(&sidecar),
        &provenance("simulate", &cfg),
        &Sidecar { scenario: &scenario, n_records: tags.len() },
    )?;
    eprintln!("wrote {} ({} records)", path.display(), tags.len());
    Ok(())
}

fn parse_noise_window(s: &str) -> Result<NoiseWindow> {
    match s {
        "equal" => Ok(NoiseWindow::Equal),
        "max" | "max_available" => Ok(NoiseWindow::MaxAvailable),
        other => match other.parse::<f64>() {
            Ok(f) if f >= 1.0 => Ok(NoiseWindow::Factor(f)),
            _ => Err(CliError::Usage(format!(
                "--noise-window must be `equal`, `max` or a number >= 1, got `{other}`"
            ))),
        },
    }
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    if !(args.fwhm > 0.0) {
        return Err(CliError::Usage(format!("--fwhm must be > 0, got {}", args.fwhm)));
    }
    let noise_window = parse_noise_window(&args.noise_window)?;
    let input_bytes = std::fs::read(&args.input).map_err(|e| CliError::Io(format!("{}: {e}", args.input.display())))?;
    let tags = qfc::tagfile::decode(&input_bytes)?;
    let snr = SnrOptions {
        dark_rate_cps: if args.no_dark_subtract { 0.0 } else { args.dark_rate },
        noise_gap_fwhm: args.noise_gap,
        noise_window,
        mu_in: args.mu_in,
    };
    let opts = AnalyzeOptions {
        center_s: args.center,
        span_s: args.span,
        bin_width_s: args.bin_width,
    };
    let (hist, report) = analyze_stream(&tags, args.fwhm, &snr, opts)?;
    // no config file: the hash covers the input data and analysis settings
    let settings = serde_json::to_string(&(&snr, args.fwhm, args.center, args.span, args.bin_width)).map_err(runtime)?;
    let mut hashed = input_bytes;
    hashed.extend_from_slice(settings.as_bytes());
    let prov = Provenance::new("analyze", sha256_hex(&hashed), None);
    write_table(
        &args.output_dir.join("histogram.csv"),
        &["bin_start_s", "count"],
        (0..hist.counts.len()).map(|i| [hist.bin_start_s(i).to_string(), hist.counts[i].to_string()]),
    )?;
    write_json(&args.output_dir.join("snr.json"), &prov, &report)?;
    println!("{}", serde_json::to_string_pretty(&report.snr).map_err(runtime)?);
    Ok(())
}

fn mu1_sweep(args: ConfigArgs) -> Result<()> {
    let Loaded { cfg, out } = load(&args)?;
    let report = run_mu1_sweep(&cfg)?;
    write_table(
        &out.join("mu1_points.csv"),
        &["fwhm_s", "with_cavity", "mu1", "sigma", "mu1_raw", "sigma_raw"],
        report.runs.iter().map(|r| {
            let f = |e: Option<qfc::analysis::Estimate>| {
                e.and_then(|e| e.value().zip(e.sigma()))
                    .map_or(["nan".to_string(), "nan".to_string()], |(v, s)| [v.to_string(), s.to_string()])
            };
            let [m, s] = f(r.snr.mu1);
            let [mr, sr] = f(r.snr.mu1_raw);
            [r.pulse_fwhm_s.to_string(), r.with_cavity.to_string(), m, s, mr, sr]
        }),
    )?;
    write_json(&out.join("mu1_sweep.json"), &provenance("mu1-sweep", &cfg), &report)?;
    if let Some(s) = report.slope_with_cavity {
        println!(
            "slope with cavity: {:.4e} ± {:.1e} per μs",
            s.slope_per_us(),
            s.slope_sigma_per_us()
        );
    }
    if let Some(s) = report.slope_without_cavity {
        println!(
            "slope without cavity: {:.4e} ± {:.1e} per μs",
            s.slope_per_us(),
            s.slope_sigma_per_us()
        );
    }
    if let Some(r) = report.slope_ratio {
        println!("slope ratio: {r:.2}");
    }
    Ok(())
}

fn filter_report_cmd(args: FilterReportArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let out = args.output_dir.unwrap_or_else(|| cfg.output_dir.clone());
    let report = filter_report(&cfg).map_err(runtime)?;
    let (cascade, name) = if args.without_cavity {
        (cfg.filters.cascade_without(), "transmission_without_cavity.csv")
    } else {
        (cfg.filters.cascade_with(), "transmission_with_cavity.csv")
    };
    let curve = cascade.sample(cfg.filters.span_hz, cfg.filters.step_hz).map_err(runtime)?;
    write_table(&out.join(name), &["detuning_hz", "transmission"], curve.iter().map(|&(d, t)| [d, t]))?;
    write_json(&out.join("filter_report.json"), &provenance("filter-report", &cfg), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
    Ok(())
}

fn fit_efficiency(args: FitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::Io(format!("{}: {e}", args.input.display())))?;
    let rows = parse_numeric_table(&text, 3).map_err(|e| runtime(format!("{}: {e}", args.input.display())))?;
    let points: Vec<EfficiencyPoint> = rows
        .iter()
        .map(|r| EfficiencyPoint { pump_power_w: r[0], efficiency: r[1], sigma: r[2] })
        .collect();
    let (path, hash) = match &args.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (cfg.path, cfg.hash())
        }
        None => (OpticalPath::default(), String::new()),
    };
    let fit = fit_efficiency_curve(&points, &path, args.length_cm, FitOptions { n_mc: args.n_mc, seed: args.seed })
        .map_err(runtime)?;
    let mut hashed = text.into_bytes();
    hashed.extend_from_slice(hash.as_bytes());
    write_json(&args.output, &Provenance::new("fit-efficiency", sha256_hex(&hashed), Some(args.seed)), &fit)?;
    println!("{}", serde_json::to_string_pretty(&fit).map_err(runtime)?);
    Ok(())
}

fn predict_g2(args: PredictArgs) -> Result<()> {
    let mu1 = match (args.mu1, args.fwhm, args.slope) {
        (Some(m), _, _) => m,
        (None, Some(fwhm), Some(slope)) => mu1_from_slope(slope, fwhm),
        _ => return Err(CliError::Usage("give --mu1 or both --fwhm and --slope".into())),
    };
    let pred = g2_after_conversion(args.g2si, args.mu_in, mu1).map_err(runtime)?;
    let text = serde_json::to_string_pretty(&pred).map_err(runtime)?;
    if let Some(out) = &args.output {
        let hash = sha256_hex(serde_json::to_string(&args).map_err(runtime)?.as_bytes());
        write_json(out, &Provenance::new("predict-g2", hash, None), &pred)?;
    }
    println!("{text}");
    Ok(())
}

fn lock_sim(args: ConfigArgs) -> Result<()> {
    let Loaded { cfg, out } = load(&args)?;
    let (cavity, ctrl, opts) = cfg.lock_setup()?;
    let session = simulate_lock_session(cavity, ctrl, &cfg.filters.cavity, &opts, cfg.seed).map_err(runtime)?;
    write_table(
        &out.join("lock_trace.csv"),
        &["t_s", "detuning_hz", "transmission"],
        session.trace.iter().map(|s| [s.t_s, s.detuning_hz, s.transmission]),
    )?;
    write_json(&out.join("lock_summary.json"), &provenance("lock-sim", &cfg), &session.summary)?;
    println!("{}", serde_json::to_string_pretty(&session.summary).map_err(runtime)?);
    Ok(())
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn convert(args: ConvertArgs) -> Result<()> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", args.input.display()));
    let tags = if is_csv(&args.input) {
        let f = std::fs::File::open(&args.input).map_err(io)?;
        read_csv(std::io::BufReader::new(f))?
    } else {
        read_tagfile(&args.input)?
    };
    if is_csv(&args.output) {
        qfc::output::write_atomic(&args.output, |w| write_csv(w, &tags))?;
    } else {
        write_tagfile(&args.output, &tags)?;
    }
    eprintln!("wrote {} ({} records)", args.output.display(), tags.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Mu1Sweep(a) => mu1_sweep(a),
        Command::FilterReport(a) => filter_report_cmd(a),
        Command::FitEfficiency(a) => fit_efficiency(a),
        Command::PredictG2(a) => predict_g2(a),
        Command::LockSim(a) => lock_sim(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
