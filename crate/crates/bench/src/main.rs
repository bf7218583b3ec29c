use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qcqp::bench::{run_benchmark, BenchArgs, Iters, Pipeline, ReportFormat, Suite, DEFAULT_BLOCK_SIZE};
use qcqp::Mode;

#[derive(Parser)]
#[command(name = "bench", version, about = "Mass-spring benchmarks for the qcqp solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark suite and write a report.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Table1,
    Table2,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Speed,
    Balance,
    Robust,
}

#[derive(Clone, Copy, ValueEnum)]
enum CondenseArg {
    None,
    X0,
    Full,
    Partial,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "table1")]
    suite: SuiteArg,
    #[arg(long, value_enum, default_value = "balance")]
    mode: ModeArg,
    /// Iteration count, or `auto` to iterate to convergence. Defaults to the
    /// suite protocol (7 for table1, 9 for table2, auto for custom).
    #[arg(long)]
    iters: Option<String>,
    /// Run a single pipeline instead of all the suite defines.
    #[arg(long, value_enum)]
    condense: Option<CondenseArg>,
    /// Stages per block for partial condensing.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long)]
    problem_file: Option<PathBuf>,
    /// Restrict the suite to these problem labels (comma separated).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    problems: Option<Vec<String>>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Run problems on separate threads; wall times are marked contended.
    #[arg(long)]
    parallel: bool,
}

fn to_args(a: &RunArgs) -> Result<BenchArgs> {
    let iters = a.iters.as_deref().map(str::parse::<Iters>).transpose()?;
    Ok(BenchArgs {
        suite: match a.suite {
            SuiteArg::Table1 => Suite::Table1,
            SuiteArg::Table2 => Suite::Table2,
            SuiteArg::Custom => Suite::Custom,
        },
        mode: match a.mode {
            ModeArg::Speed => Mode::Speed,
            ModeArg::Balance => Mode::Balance,
            ModeArg::Robust => Mode::Robust,
        },
        iters,
        condense: a.condense.map(|c| match c {
            CondenseArg::None => Pipeline::Baseline,
            CondenseArg::X0 => Pipeline::X0Removal,
            CondenseArg::Full => Pipeline::X0Full,
            CondenseArg::Partial => Pipeline::X0Partial,
        }),
        block_size: a.block_size,
        problem_file: a.problem_file.clone(),
        problems: a.problems.clone(),
        seed: a.seed,
        repeats: a.repeats,
        parallel: a.parallel,
    })
}

fn run(a: &RunArgs) -> Result<bool> {
    let report = run_benchmark(&to_args(a)?)?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    match &a.out {
        Some(path) => report
            .write(path, format)
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => match format {
            ReportFormat::Csv => report.write_csv(std::io::stdout().lock())?,
            ReportFormat::Json => println!("{}", report.to_json()),
        },
    }
    for r in &report.records {
        eprintln!(
            "{:<9} {:<9} {:>3} it  {:.3e} s  {}",
            r.problem, r.pipeline, r.iters, r.wall_s, r.status
        );
    }
    Ok(report.success())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = &cli.command;
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
