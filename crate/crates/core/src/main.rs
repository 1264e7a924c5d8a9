use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use slicetwin::baselines::AllocatorId;
use slicetwin::experiment::{emit_plot_data, run_experiment, write_run_outputs, ExperimentError, Scenario};

/// Log verbosity is read from this variable (env_logger syntax).
const LOG_ENV: &str = "SLICETWIN_LOG";

#[derive(Parser)]
#[command(name = "slicetwin", version, about = "RAN slice allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every allocator on every seed of a scenario and write the outputs.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the scenario's seeds.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Option<Vec<u64>>,
        /// Restrict the run to these allocators.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        allocator: Option<Vec<AllocatorId>>,
    },
    /// Write per-panel plot CSVs from the outputs of a previous run.
    Plots { dir: PathBuf },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Print the JSON schema of scenario files.
    Schema,
    /// Print the reference scenario.
    Reference,
}

fn fail(err: &ExperimentError) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_schema_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn load(path: &PathBuf) -> Result<Scenario, ExperimentError> {
    Scenario::load(path).map_err(|e| match e {
        // an unreadable scenario file is a problem with the input, not the run
        ExperimentError::Io { path, source } => ExperimentError::Invalid(format!("cannot read {path}: {source}")),
        other => other,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            seeds,
            allocator,
        } => {
            let mut s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            if let Some(seeds) = seeds {
                s.seeds = seeds;
            }
            if let Some(allocators) = allocator {
                s.allocators = allocators;
            }
            if let Err(e) = s.validate() {
                return fail(&e);
            }
            info!("running {} allocators on {} seeds", s.allocators.len(), s.seeds.len());
            let result = run_experiment(&s).and_then(|output| write_run_outputs(&out, &s, &output));
            match result {
                Ok(summary) => {
                    for (alloc, a) in &summary.allocators {
                        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                        println!(
                            "{alloc}: final reward {} omega {} qos {} scalars {}",
                            show(a.final_reward.mean),
                            show(a.final_omega.mean),
                            show(a.final_u_mean.mean),
                            show(a.comm_scalars.mean),
                        );
                    }
                    println!("outputs written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Plots { dir } => match emit_plot_data(&dir) {
            Ok(report) => {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                for p in &report.written {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Validate { scenario } => match load(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} slices, {} allocators, {} seeds, {} steps)",
                    scenario.display(),
                    s.slices.len(),
                    s.allocators.len(),
                    s.seeds.len(),
                    s.steps
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Schema => {
            println!("{}", Scenario::json_schema());
            ExitCode::SUCCESS
        }
        Command::Reference => {
            println!("{}", Scenario::reference().to_json());
            ExitCode::SUCCESS
        }
    }
}
