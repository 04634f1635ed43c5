use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stopsense::experiment::{
    self, exit_code, ConfigError, DelayBound, DelayRule, ExperimentConfig, MeanGains, Mode,
    OutputFormat, PowerBudget, PowerRuleSpec, RunOptions,
};

#[derive(Parser)]
#[command(
    name = "stopsense",
    version,
    about = "Optimal stopping for sequential channel sensing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the first sweep point analytically.
    Solve(Common),
    /// Solve and simulate the first sweep point.
    Simulate(Common),
    /// Solve every sweep point (simulating if enabled in the config).
    Sweep(Common),
    /// Like sweep, with throughput gaps relative to the first listed mode.
    Compare(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    packets: Option<u64>,
    /// Replaces the mean-gain sweep with one value.
    #[arg(long)]
    mean_gain: Option<f64>,
    /// Delay bound in slots, or `min`.
    #[arg(long)]
    d_max: Option<String>,
    /// Average power budget, or `match_two_level`.
    #[arg(long)]
    p_avg: Option<String>,
    /// Replaces the configured modes; repeatable.
    #[arg(long = "mode")]
    modes: Vec<Mode>,
    /// Record per-row wall time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

fn parse_override<T: std::str::FromStr, R>(
    raw: &str,
    keyword: &str,
    rule: R,
    wrap: impl Fn(T) -> R,
) -> Result<R, ConfigError> {
    if raw == keyword {
        return Ok(rule);
    }
    raw.parse::<T>()
        .map(wrap)
        .map_err(|_| ConfigError::Invalid(format!("cannot parse '{raw}'")))
}

fn load(args: &Common, single_point: bool) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(g) = args.mean_gain {
        cfg.channels.fading.mean_gain = MeanGains::Single(g);
    } else if single_point {
        let first = cfg.channels.fading.mean_gain.values()[0];
        cfg.channels.fading.mean_gain = MeanGains::Single(first);
    }
    if let Some(raw) = &args.d_max {
        cfg.constraints.d_max = Some(parse_override(
            raw,
            "min",
            DelayBound::Rule(DelayRule::Min),
            DelayBound::Slots,
        )?);
    }
    if let Some(raw) = &args.p_avg {
        cfg.constraints.p_avg = Some(parse_override(
            raw,
            "match_two_level",
            PowerBudget::Rule(PowerRuleSpec::MatchTwoLevel),
            PowerBudget::Value,
        )?);
    }
    if !args.modes.is_empty() {
        cfg.modes = args.modes.clone();
    }
    if let Some(s) = args.seed {
        cfg.simulation.seed = s;
    }
    if let Some(s) = args.slots {
        cfg.simulation.slots = s;
    }
    if let Some(p) = args.packets {
        cfg.simulation.packets = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_rows(args: &Common, rows: &[experiment::ResultRow]) -> io::Result<()> {
    let format = match args.format {
        Format::Csv => OutputFormat::Csv,
        Format::Jsonl => OutputFormat::JsonLines,
    };
    match &args.output {
        Some(path) => experiment::emit(rows, format, &mut BufWriter::new(File::create(path)?)),
        None => experiment::emit(rows, format, &mut io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, single, simulate, compare) = match &cli.command {
        Command::Solve(a) => (a, true, Some(false), false),
        Command::Simulate(a) => (a, true, Some(true), false),
        Command::Sweep(a) => (a, false, None, false),
        Command::Compare(a) => (a, false, None, true),
    };
    let mut cfg = match load(args, single) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("stopsense: {e}");
            return ExitCode::from(exit_code::CONFIG as u8);
        }
    };
    if compare && cfg.modes.len() < 2 {
        eprintln!("stopsense: compare needs at least two modes");
        return ExitCode::from(exit_code::CONFIG as u8);
    }
    let simulate = simulate.unwrap_or(cfg.simulation.enabled);
    cfg.simulation.enabled = simulate;
    let opts = RunOptions {
        simulate,
        record_wall_time: args.timing,
        compare,
    };

    let out = experiment::run(&cfg, &opts);
    for f in &out.failures {
        eprintln!(
            "stopsense: mean_gain={} mode={}: {}",
            f.mean_gain,
            f.mode.as_str(),
            f.error
        );
    }
    if !out.rows.is_empty() {
        if let Err(e) = write_rows(args, &out.rows) {
            eprintln!("stopsense: write failed: {e}");
            return ExitCode::from(exit_code::IO as u8);
        }
    }
    let _ = io::stderr().flush();
    ExitCode::from(out.exit_code() as u8)
}
