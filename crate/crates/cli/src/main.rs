mod commands;
mod config;
mod error;
mod export;
mod expr;
mod problem;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Outputs, Suite};
use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CONFIG, EXIT_OK};
use crate::problem::Problem;
use crate::report::{ErrorInfo, Report};

/// Thermistor solver with optimal Robin cooling control.
#[derive(Debug, Parser)]
#[command(name = "thermopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the state system for the constant control `problem.beta`.
    Solve(Common),
    /// Compute an optimal control and export it with the final state and adjoint.
    Optimize(Common),
    /// Run one property suite and report every property with its tolerance.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        suite: Suite,
    },
    /// Self-convergence study over uniform refinements of the configured mesh.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// A priori bound certificate checked against a fresh solve.
    Certificate(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Optimize(_) => "optimize",
            Command::Verify { .. } => "verify",
            Command::Convergence { .. } => "convergence",
            Command::Certificate(_) => "certificate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(c) | Command::Optimize(c) | Command::Certificate(c) => c,
            Command::Verify { common, .. } | Command::Convergence { common, .. } => common,
        }
    }
}

fn execute(command: &Command, ctx: Context) -> Result<(), CliError> {
    match command {
        Command::Solve(_) => commands::solve(ctx),
        Command::Optimize(_) => commands::optimize_control(ctx),
        Command::Verify { suite, .. } => commands::verify(ctx, *suite),
        Command::Convergence { levels, .. } => commands::convergence(ctx, *levels),
        Command::Certificate(_) => commands::certificate(ctx),
    }
}

fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let common = cli.command.common();
    let cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let mut out = match Outputs::new(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut report = Report::new(cli.command.name(), cfg.echo.clone());
    let outcome = Problem::build(&cfg.problem).and_then(|problem| {
        execute(
            &cli.command,
            Context {
                cfg: &cfg,
                problem: &problem,
                report: &mut report,
                out: &mut out,
            },
        )
    });
    let code = match &outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            report.error = Some(ErrorInfo {
                kind: e.kind(),
                message: e.to_string(),
            });
            e.exit_code()
        }
    };
    report.exit_code = code;
    report.artifacts = out.written.iter().filter(|f| out.dir.join(f).is_file()).cloned().collect();
    report.timings.total_seconds = start.elapsed().as_secs_f64();
    let path = out.dir.join("report.json");
    let written = serde_json::to_string_pretty(&report)
        .map_err(CliError::from)
        .and_then(|json| std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e)));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return if code == EXIT_OK { e.exit_code() } else { code };
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    ExitCode::from(run(cli) as u8)
}
