//! `mas`: run manufacturing scenarios, validate them, and inspect G-code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mas_core::agents::default_registry;
use mas_core::gcode::{self, Verdict};
use mas_core::harness::{render_report, run_trials, BackendSpec, ReportFormat, Scenario, TrialOptions};
use mas_core::llm::FaultProfile;

#[derive(Parser)]
#[command(name = "mas", version, about = "Multi-agent manufacturing scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario many times and report success and error rates.
    Run(RunArgs),
    /// Load a scenario and check it without running anything.
    Validate {
        scenario: PathBuf,
        /// Treat functions missing from the registry as errors.
        #[arg(long)]
        strict_functions: bool,
    },
    /// Inspect G-code programs.
    #[command(subcommand)]
    Gcode(GcodeCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Planner,
    Faulted,
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Backend to use instead of the scenario's own.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Master seed; every trial seed derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one JSONL trace per trial into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// JSON fault profile for `--backend faulted`.
    #[arg(long)]
    fault_profile: Option<PathBuf>,
    /// JSONL transcript for `--backend scripted`.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completions base URL for `--backend remote`.
    #[arg(long, env = "LLM_BASE_URL")]
    base_url: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    model: Option<String>,
    /// Treat functions missing from the registry as errors.
    #[arg(long)]
    strict_functions: bool,
    /// Format of the report printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum GcodeCommand {
    /// Print the section a tool's machine should receive.
    Split {
        file: PathBuf,
        #[arg(long)]
        tool: u32,
    },
    /// List tool numbers in order of first use.
    Tools { file: PathBuf },
    /// Compare a candidate section with the expected one; exits 0 only on an exact match.
    Check {
        file: PathBuf,
        #[arg(long)]
        tool: u32,
        #[arg(long)]
        candidate: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => run(args),
        Command::Validate {
            scenario,
            strict_functions,
        } => validate(&scenario, strict_functions),
        Command::Gcode(cmd) => gcode_command(cmd),
    }
}

fn load_scenario(path: &Path, strict_functions: bool) -> Result<Scenario> {
    let scenario = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Err(e) = scenario.check_functions(&default_registry()) {
        if strict_functions {
            return Err(e).context("unknown function");
        }
        tracing::warn!("{e}; the function will not be granted");
    }
    Ok(scenario)
}

fn validate(path: &Path, strict_functions: bool) -> Result<ExitCode> {
    let s = load_scenario(path, strict_functions)?;
    let tools = gcode::tool_numbers(&s.program);
    println!(
        "{}: {} agents, {} operations ({}), tools {}, backend {}",
        s.name,
        s.agents.len(),
        s.expected_operations.len(),
        s.expected_operations.join(", "),
        tools.iter().map(|t| format!("T{t}")).collect::<Vec<_>>().join(" "),
        s.backend.label()
    );
    Ok(ExitCode::SUCCESS)
}

fn backend_override(args: &RunArgs, scenario: &Scenario) -> Result<Option<BackendSpec>> {
    let Some(kind) = args.backend else {
        if args.fault_profile.is_some() || args.script.is_some() {
            bail!("--fault-profile and --script need a matching --backend");
        }
        return Ok(None);
    };
    let spec = match kind {
        BackendKind::Planner => BackendSpec::Planner,
        BackendKind::Faulted => match (&args.fault_profile, &scenario.backend) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let profile: FaultProfile =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                BackendSpec::Faulted {
                    profile: Some(profile),
                    calibrate: None,
                }
            }
            (None, spec @ BackendSpec::Faulted { .. }) => spec.clone(),
            (None, _) => bail!("--backend faulted needs --fault-profile (the scenario has no fault profile)"),
        },
        BackendKind::Scripted => match (&args.script, &scenario.backend) {
            // relative to the working directory, unlike paths inside the scenario
            (Some(path), _) => BackendSpec::Scripted {
                path: std::path::absolute(path)?,
            },
            (None, spec @ BackendSpec::Scripted { .. }) => spec.clone(),
            (None, _) => bail!("--backend scripted needs --script"),
        },
        BackendKind::Remote => BackendSpec::Remote {
            base_url: args.base_url.clone(),
            model: args.model.clone(),
        },
    };
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(Some(spec))
}

fn run(args: RunArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let scenario = load_scenario(&args.scenario, args.strict_functions)?;
    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let options = TrialOptions {
        workers: args.workers,
        trace_dir: args.trace_dir.clone(),
        backend_override: backend_override(&args, &scenario)?,
    };
    let run = run_trials(&scenario, args.trials, args.seed, &options)?;
    if let Some(out) = &args.out {
        std::fs::write(out, render_report(&run.report, ReportFormat::Json))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let format = match args.format {
        Format::Text => ReportFormat::Text,
        Format::Json => ReportFormat::Json,
    };
    print!("{}", render_report(&run.report, format));
    Ok(ExitCode::SUCCESS)
}

fn read_program(path: &Path) -> Result<gcode::GCodeProgram> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    gcode::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gcode_command(cmd: GcodeCommand) -> Result<ExitCode> {
    match cmd {
        GcodeCommand::Split { file, tool } => {
            println!("{}", gcode::extract_for_tool(&read_program(&file)?, tool)?);
        }
        GcodeCommand::Tools { file } => {
            for t in gcode::tool_numbers(&read_program(&file)?) {
                println!("T{t}");
            }
        }
        GcodeCommand::Check { file, tool, candidate } => {
            let program = read_program(&file)?;
            let text =
                std::fs::read_to_string(&candidate).with_context(|| format!("reading {}", candidate.display()))?;
            let verdict = gcode::allocation_verdict(&text, &program, tool);
            println!("{verdict:?}");
            if verdict != Verdict::Exact {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
