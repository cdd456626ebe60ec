//! Command-line front end: capture analysis, loss separation, and
//! synthetic capture generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use lossep::capture_io::{parse_capture_csv, write_capture, ColumnSpec};
use lossep::config::{
    load_config, parse_si_value, pulse_setup_from_key_values, st_setup_from_key_values,
    AnalysisConfig, AnalysisMode, KeyValues,
};
use lossep::loss::{analyze_pulse_capture, separate_from_captures, st_loop_from_capture};
use lossep::report::{
    file_digest, ChargeRoutes, EventEnergies, InputDigest, NamedWindow, Report, ReportFormat,
    StAnalysis,
};
use lossep::sawyer_tower::{
    branch_energy, coss_large_signal, hysteresis_energy, split_branches, LoopOrientation,
};
use lossep::simulator::{simulate_sawyer_tower, simulate_single_pulse};
use lossep::waveform::Capture;

#[derive(Parser)]
#[command(
    name = "lossep",
    version,
    about = "Switching-loss separation and output-capacitance hysteresis analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a capture file
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Separate loss components from scalars or from a capture pair
    Separate(SeparateArgs),
    /// Generate a synthetic capture with embedded ground truth
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Args)]
struct OutputArgs {
    /// Report format
    #[arg(long, default_value = "table", value_parser = parse_format)]
    format: ReportFormat,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    ReportFormat::parse(s)
        .ok_or_else(|| format!("unknown format '{s}' (structured|table|plot-data)"))
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Event energies and transient windows of a single-pulse capture
    Pulse {
        capture: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Label of the time column
        #[arg(long, default_value = "time")]
        time_column: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Q-V loop, branch energies, hysteresis energy, and C(V) curve of a
    /// Sawyer-Tower capture
    St {
        capture: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "time")]
        time_column: String,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct SeparateArgs {
    /// Turn-on energy in joules (SI suffixes allowed, e.g. 6.479u)
    #[arg(long, value_name = "J")]
    e_on: Option<String>,
    /// Turn-off energy in joules
    #[arg(long, value_name = "J")]
    e_off: Option<String>,
    /// Charge energy in joules
    #[arg(long, value_name = "J")]
    e_charge: Option<String>,
    /// Single-pulse capture file (capture mode)
    #[arg(long)]
    pulse: Option<PathBuf>,
    /// Sawyer-Tower capture file (capture mode)
    #[arg(long)]
    st: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "time")]
    time_column: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Series reference-capacitor run under periodic excitation
    St {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Half-bridge single-pulse turn-off run
    Pulse {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Attaches the stable error name so scripts can match on it.
trait Named<T> {
    fn named(self) -> Result<T>;
}

impl<T, E: Into<lossep::Error>> Named<T> for Result<T, E> {
    fn named(self) -> Result<T> {
        self.map_err(|e| {
            let e: lossep::Error = e.into();
            anyhow!("{}: {e}", e.name())
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(AnalyzeCommand::Pulse {
            capture,
            config,
            time_column,
            output,
        }) => analyze_pulse(&capture, &config, &time_column, &output),
        Command::Analyze(AnalyzeCommand::St {
            capture,
            config,
            time_column,
            output,
        }) => analyze_st(&capture, &config, &time_column, &output),
        Command::Separate(args) => separate(args),
        Command::Simulate(SimulateCommand::St { params, out }) => simulate_st(&params, &out),
        Command::Simulate(SimulateCommand::Pulse { params, out }) => simulate_pulse(&params, &out),
    }
}

fn load_capture(path: &Path, time_column: &str) -> Result<Capture> {
    parse_capture_csv(path, &ColumnSpec::all(time_column)).named()
}

fn base_report(config: &AnalysisConfig, inputs: &[&Path]) -> Result<Report> {
    let mut report = Report::new();
    report.config_echo = config.echo();
    for path in inputs {
        report.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: file_digest(path).named()?,
        });
    }
    Ok(report)
}

fn emit(report: &Report, output: &OutputArgs) -> Result<()> {
    match &output.out {
        Some(path) => lossep::report::write_report(report, output.format, path).named(),
        None => {
            print!("{}", report.render(output.format));
            Ok(())
        }
    }
}

fn analyze_pulse(
    capture_path: &Path,
    config_path: &Path,
    time_column: &str,
    output: &OutputArgs,
) -> Result<()> {
    let config = load_config(config_path).named()?;
    config.require(AnalysisMode::Pulse).named()?;
    let capture = load_capture(capture_path, time_column)?;
    let analysis = analyze_pulse_capture(&capture, &config).named()?;

    let mut report = base_report(&config, &[capture_path])?;
    report.event_energies = Some(EventEnergies {
        e_on: analysis.e_on,
        e_off: analysis.e_off,
    });
    report.windows = vec![
        NamedWindow::from_info("t_on", &analysis.t_on),
        NamedWindow::from_info("t_off", &analysis.t_off),
    ];
    emit(&report, output)
}

fn analyze_st(
    capture_path: &Path,
    config_path: &Path,
    time_column: &str,
    output: &OutputArgs,
) -> Result<()> {
    let config = load_config(config_path).named()?;
    config.require(AnalysisMode::SawyerTower).named()?;
    let capture = load_capture(capture_path, time_column)?;
    let (loop_, period) = st_loop_from_capture(&capture, &config).named()?;

    let branches = split_branches(&loop_).named()?;
    let e_charge = branch_energy(&branches.charge).named()?.magnitude;
    let e_discharge = branch_energy(&branches.discharge).named()?.magnitude;
    let loop_energy = hysteresis_energy(&loop_).named()?;
    let coss = coss_large_signal(&branches.charge, config.smoothing_points).named()?;

    let mut report = base_report(&config, &[capture_path])?;
    report.st_analysis = Some(StAnalysis {
        e_charge_branch: e_charge,
        e_discharge_branch: e_discharge,
        e_hysteresis: loop_energy.magnitude,
        dissipative: loop_energy.orientation == LoopOrientation::Dissipative,
        loop_points: loop_.points().to_vec(),
        coss_curve: coss.entries().to_vec(),
    });
    report.windows = vec![NamedWindow::from_info("st_period", &period)];
    emit(&report, output)
}

fn separate(args: SeparateArgs) -> Result<()> {
    let scalar_mode = args.e_on.is_some() || args.e_off.is_some() || args.e_charge.is_some();
    let capture_mode = args.pulse.is_some() || args.st.is_some();
    if scalar_mode && capture_mode {
        bail!("give either --e-on/--e-off/--e-charge or --pulse/--st, not both");
    }
    if scalar_mode {
        let value = |name: &str, v: &Option<String>| -> Result<f64> {
            let text = v
                .as_ref()
                .ok_or_else(|| anyhow!("scalar mode needs --e-on, --e-off, and --e-charge"))?;
            parse_si_value(text).map_err(|reason| anyhow!("--{name} '{text}': {reason}"))
        };
        let e_on = value("e-on", &args.e_on)?;
        let e_off = value("e-off", &args.e_off)?;
        let e_charge = value("e-charge", &args.e_charge)?;
        let breakdown = lossep::separate_from_scalars(e_on, e_off, e_charge).named()?;
        let mut report = Report::new();
        if let Some(path) = &args.config {
            let config = load_config(path).named()?;
            report.config_echo = config.echo();
        }
        report.breakdown = Some(breakdown);
        return emit(&report, &args.output);
    }
    if !capture_mode {
        bail!("give either scalar energies or --pulse/--st capture files");
    }

    let pulse_path = args
        .pulse
        .as_ref()
        .ok_or_else(|| anyhow!("capture mode needs --pulse"))?;
    let st_path = args
        .st
        .as_ref()
        .ok_or_else(|| anyhow!("capture mode needs --st"))?;
    let config_path = args
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("capture mode needs --config"))?;
    let config = load_config(config_path).named()?;
    config.require(AnalysisMode::Separate).named()?;

    let pulse_capture = load_capture(pulse_path, &args.time_column)?;
    let st_capture = load_capture(st_path, &args.time_column)?;
    let (st_loop, period) = st_loop_from_capture(&st_capture, &config).named()?;
    let result = separate_from_captures(&pulse_capture, &st_loop, &config).named()?;

    let mut report = base_report(&config, &[pulse_path.as_path(), st_path.as_path()])?;
    report.breakdown = Some(result.breakdown);
    report.cross_validation = Some(result.cross_validation);
    report.charge_routes = Some(ChargeRoutes {
        st_branch: result.e_charge_st_route,
        pulse_integral: result.pulse.e_charge_pulse_route,
        disagree: result.charge_routes_disagree,
    });
    report.windows = vec![
        NamedWindow::from_info("t_on", &result.pulse.t_on),
        NamedWindow::from_info("t_off", &result.pulse.t_off),
        NamedWindow::from_info("st_period", &period),
    ];
    emit(&report, &args.output)
}

fn simulate_st(params_path: &Path, out: &Path) -> Result<()> {
    let kv = KeyValues::load(params_path).named()?;
    let (model, params) = st_setup_from_key_values(&kv).named()?;
    let (capture, truth) = simulate_sawyer_tower(&model, &params).named()?;
    write_capture(&capture, out).named()?;
    print_simulation_summary(&capture, &truth, out);
    Ok(())
}

fn simulate_pulse(params_path: &Path, out: &Path) -> Result<()> {
    let kv = KeyValues::load(params_path).named()?;
    let (model, params) = pulse_setup_from_key_values(&kv).named()?;
    let (capture, truth) = simulate_single_pulse(&model, &params).named()?;
    write_capture(&capture, out).named()?;
    print_simulation_summary(&capture, &truth, out);
    Ok(())
}

fn print_simulation_summary(capture: &Capture, truth: &lossep::GroundTruth, out: &Path) {
    let samples = capture
        .channels()
        .next()
        .map(|(_, wf)| wf.len())
        .unwrap_or(0);
    println!(
        "wrote {} ({} channels, {} samples)",
        out.display(),
        capture.channel_count(),
        samples
    );
    println!("ground truth:");
    for (key, value) in truth.to_metadata() {
        if key != "truth.kind" {
            let shown = value
                .parse::<f64>()
                .map(|v| format!("{v:.6e}"))
                .unwrap_or(value);
            println!("  {} = {}", &key["truth.".len()..], shown);
        }
    }
}
