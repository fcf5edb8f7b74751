//! `ovsim` — command-line front end for the overtaking safety stack.
//!
//! Subcommands:
//! - `assess`: judge one scenario file, print the assessment as JSON.
//! - `kalman`: run the GPS/INS fusion demo, emit a per-step CSV.
//! - `protocol`: run a scripted multi-node simulation, emit a JSON-lines trace.
//! - `sweep`: run a mis-prediction-vs-communication-range experiment, emit CSV.
//!
//! Exit codes: 0 success, 1 usage or input-parsing error, 2 domain error.
//! Outputs are byte-identical across runs for the same inputs and seed.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ovsim_core::harness::{
    self, builtin_spec, builtin_specs, range_grid, ScenarioSpec, SweepResult,
};
use ovsim_core::kinematics::assess_safety;
use ovsim_core::localization::{constant_acceleration_trajectory, track};
use ovsim_core::netsim::{self, WorldSpec};

#[derive(Parser)]
#[command(
    name = "ovsim",
    version,
    about = "Cooperative overtaking safety simulator",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assess one overtaking scenario and print the verdict as JSON.
    Assess {
        /// Scenario JSON file.
        input: PathBuf,
        /// Write the assessment here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the GPS/INS fusion demo and emit per-step true/measured/fused CSV.
    Kalman {
        /// GPS position noise, meters (1 sigma).
        #[arg(long, default_value_t = 7.0)]
        gps_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Demo duration, seconds, sampled at 10 Hz.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scripted multi-node protocol simulation and emit its trace as
    /// JSON lines.
    Protocol {
        /// World JSON file: vehicles, intents, channel and protocol settings.
        input: PathBuf,
        /// Override the seed in the world file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a mis-prediction sweep over communication ranges and emit CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario spec JSON file (mutually exclusive with --builtin).
    #[arg(long, conflicts_with = "builtin")]
    spec: Option<PathBuf>,
    /// One of the documented study names (see --list).
    #[arg(long)]
    builtin: Option<String>,
    /// List the documented study names and exit.
    #[arg(long)]
    list: bool,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's per-point scenario count.
    #[arg(long)]
    count: Option<u32>,
    /// Smallest communication range, meters.
    #[arg(long, default_value_t = 100.0)]
    range_min: f64,
    /// Largest communication range, meters.
    #[arg(long, default_value_t = 1000.0)]
    range_max: f64,
    /// Grid step, meters.
    #[arg(long, default_value_t = 50.0)]
    range_step: f64,
    /// Feed the predictor Kalman-fused states computed from GPS-noisy
    /// positions (sigma 7 m) instead of true states.
    #[arg(long)]
    with_localization: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    /// Bad invocation or unreadable/unparsable input: exit 1.
    Usage(String),
    /// Valid input describing an invalid world: exit 2.
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Domain(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is a
            // usage error.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Assess { input, out } => cmd_assess(&input, out.as_deref()),
        Command::Kalman {
            gps_sigma,
            seed,
            duration,
            out,
        } => cmd_kalman(gps_sigma, seed, duration, out.as_deref()),
        Command::Protocol { input, seed, out } => cmd_protocol(&input, seed, out.as_deref()),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn read_input(path: &std::path::Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
    text: &str,
) -> Result<T, CliError> {
    serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&std::path::Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_assess(input: &std::path::Path, out: Option<&std::path::Path>) -> Result<(), CliError> {
    let text = read_input(input)?;
    let scenario: ovsim_core::kinematics::OvertakeScenario = parse_json(input, &text)?;
    // serde accepts any field values; the invariants still have to hold.
    scenario
        .validate()
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let assessment = assess_safety(&scenario).map_err(|e| CliError::Domain(e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&assessment)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    json.push('\n');
    write_output(out, &json)
}

fn cmd_kalman(
    gps_sigma: f64,
    seed: u64,
    duration: f64,
    out: Option<&std::path::Path>,
) -> Result<(), CliError> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(CliError::Domain(format!("duration must be positive, got {duration}")));
    }
    let dt = 0.1;
    let steps = (duration / dt).round() as usize;
    // Gentle constant-acceleration cruise.
    let trajectory =
        constant_acceleration_trajectory((0.0, 0.0), (20.0, 0.0), (0.15, 0.05), dt, steps);
    let result = track(&trajectory, dt, gps_sigma, seed)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let mut csv = String::from("step,t_s,true_x,true_y,meas_x,meas_y,fused_x,fused_y\n");
    for (k, point) in trajectory.iter().enumerate() {
        let z = &result.measurements[k];
        let f = &result.fused[k].s;
        csv.push_str(&format!(
            "{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            k,
            k as f64 * dt,
            point.truth[0],
            point.truth[1],
            z[0],
            z[1],
            f[0],
            f[1],
        ));
    }
    write_output(out, &csv)
}

fn cmd_protocol(
    input: &std::path::Path,
    seed: Option<u64>,
    out: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let text = read_input(input)?;
    let mut spec: WorldSpec = parse_json(input, &text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (world, cfg, horizon) = spec
        .into_parts()
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let run = netsim::run(world, &cfg, horizon).map_err(|e| CliError::Domain(e.to_string()))?;
    write_output(out, &run.trace.to_jsonl())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.list {
        let mut listing = String::new();
        for spec in builtin_specs() {
            listing.push_str(&spec.name);
            listing.push('\n');
        }
        return write_output(args.out.as_deref(), &listing);
    }
    let mut spec: ScenarioSpec = match (&args.spec, &args.builtin) {
        (Some(path), None) => {
            let text = read_input(path)?;
            parse_json(path, &text)?
        }
        (None, Some(name)) => builtin_spec(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown builtin study '{name}'; try --list for the documented names"
            ))
        })?,
        (None, None) => {
            return Err(CliError::Usage(
                "sweep needs either --spec <file> or --builtin <name>".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(count) = args.count {
        spec.count = count;
    }
    spec.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    let grid = range_grid(args.range_min, args.range_max, args.range_step);
    if grid.is_empty() {
        return Err(CliError::Domain(format!(
            "empty range grid: min {} max {} step {}",
            args.range_min, args.range_max, args.range_step
        )));
    }
    let result: SweepResult = if args.with_localization {
        eprintln!(
            "note: predictor consumes Kalman-fused states (GPS sigma 7 m); \
             this mode is an extension beyond the range studies"
        );
        harness::run_sweep_with_localization(&spec, &grid, 7.0)
    } else {
        harness::run_sweep(&spec, &grid)
    }
    .map_err(|e| CliError::Domain(e.to_string()))?;
    write_output(args.out.as_deref(), &result.to_csv())
}
