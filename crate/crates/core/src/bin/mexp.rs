use clap::{Parser, Subcommand, ValueEnum};
use mobile_experts::cli::{self, CliError, Options, ReportFormat, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mexp", version, about = "Run mobile device expert teams")]
struct Args {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "mexp.toml")]
    config: PathBuf,
    /// Override the gateway: `scripted:PATH` or `live[:ENDPOINT]`.
    #[arg(long, global = true)]
    gateway: Option<String>,
    /// Override the device: `sim:SCENARIO` or `adb:SERIAL`.
    #[arg(long, global = true)]
    device: Option<String>,
    /// Frozen timestamps and stable run names.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Parallel workers (plan nodes for `run`, tasks for `eval`).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Explore a requirement and store tools and memories.
    Explore { requirement: String },
    /// Assemble a team, plan and execute an instruction.
    Run { instruction: String },
    /// Run a task bundle and print the metrics report.
    Eval {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Mine workflow tools from a trajectory journal.
    Mine { trajectories: PathBuf },
    /// Print the step timeline of a run directory.
    Replay { run: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(args.gateway.as_deref(), args.device.as_deref())?;
    Ok(cfg)
}

fn dispatch(args: &Args) -> Result<(), CliError> {
    let opts = Options {
        deterministic: args.deterministic,
        jobs: args.jobs,
    };
    match &args.command {
        Command::Explore { requirement } => {
            let s = cli::cmd_explore(&config(args)?, requirement, &opts)?;
            println!("experts: {}", s.experts.join(", "));
            println!("tools: {}", if s.tools.is_empty() { "-".into() } else { s.tools.join(", ") });
            println!("insights: {}  steps: {}", s.insights, s.steps);
            println!("run dir: {}", s.run_dir.display());
        }
        Command::Run { instruction } => {
            let s = cli::cmd_run(&config(args)?, instruction, &opts)?;
            println!("team: {}", s.team.join(", "));
            if !s.synthesized.is_empty() {
                println!("created: {}", s.synthesized.join(", "));
            }
            println!("commits: {}", s.commits.join(" -> "));
            println!("model calls: {}  device steps: {}", s.gateway_calls, s.device_steps);
            println!("run dir: {}", s.run_dir.display());
        }
        Command::Eval { bundle, format } => {
            let format = match format {
                Format::Table => ReportFormat::Table,
                Format::Csv => ReportFormat::Csv,
            };
            let s = cli::cmd_eval(&config(args)?, bundle, format, &opts)?;
            print!("{}", s.rendered);
            if !s.skipped.is_empty() {
                eprintln!("skipped {} tasks without a simulator setup", s.skipped.len());
            }
        }
        Command::Mine { trajectories } => {
            let s = cli::cmd_mine(&config(args)?, trajectories)?;
            for t in &s.tools {
                println!("tool {t}");
            }
            for (traj, why) in &s.rejected {
                println!("skipped {traj}: {why}");
            }
        }
        Command::Replay { run } => {
            for line in cli::cmd_replay(run)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}
