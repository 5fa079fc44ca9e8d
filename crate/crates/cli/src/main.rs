use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbplan_cli::{parse_seeds, read_summary, render_table, run_sweep, CliError, TableFormat, TableKind};

/// Distributed multi-robot planning with Gaussian belief propagation:
/// batch simulation runs and experiment tables.
#[derive(Debug, Parser)]
#[command(name = "gbplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario for each seed and override combination.
    Run(RunArgs),
    /// Print a table from one or more sweep summaries.
    Table(TableArgs),
    /// Run a junction scenario over a list of inflow rates and print the
    /// flow table.
    Flow(FlowArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Seeds: `a..b` (inclusive), `a,b,c`, or a single integer.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Override `dotted.key=value`; repeatable. A comma-separated value
    /// sweeps over each entry.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, env = "GBPLAN_OUT", default_value = "gbplan-out")]
    out: PathBuf,
    /// Tick budget per run (overrides the scenario's max_ticks).
    #[arg(long)]
    max_ticks: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Table1,
    Table3,
    Flow,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => TableFormat::Markdown,
            FormatArg::Csv => TableFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Which table to build.
    kind: KindArg,
    /// Sweep summary files (`summary.json` written by `run`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Inflow rates in robots per second, comma separated.
    #[arg(long, default_value = "1,2,3,4,5")]
    rates: String,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

fn run(args: &RunArgs, extra: Option<String>) -> Result<ExitCode, CliError> {
    let seeds = parse_seeds(&args.seeds)?;
    let mut sets = args.sets.clone();
    sets.extend(extra);
    let report = run_sweep(&args.scenario, &seeds, &sets, args.max_ticks, &args.out, |line| {
        eprintln!("{line}")
    })?;
    eprintln!(
        "{} runs, {} incomplete; summary at {}",
        report.runs,
        report.incomplete,
        report.summary_path.display()
    );
    Ok(if report.incomplete > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args, None),
        Command::Table(args) => (|| {
            let mut rows = Vec::new();
            for input in &args.inputs {
                rows.extend(read_summary(input)?.rows);
            }
            let kind = match args.kind {
                KindArg::Table1 => TableKind::Table1,
                KindArg::Table3 => TableKind::Table3,
                KindArg::Flow => TableKind::Flow,
            };
            print!("{}", render_table(kind, &rows, args.format.into()));
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Flow(args) => {
            let code = run(&args.run, Some(format!("junction.inflow_rate={}", args.rates)));
            code.and_then(|code| {
                let summary = read_summary(&args.run.out.join("summary.json"))?;
                print!("{}", render_table(TableKind::Flow, &summary.rows, args.format.into()));
                Ok(code)
            })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
