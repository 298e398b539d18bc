use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpgibo_harness::{acceptance, execute, presets, write_outputs, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "dpgibo", version, about = "Differentially private gradient-informative Bayesian optimization")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a built-in experiment.
    Preset {
        /// Preset name; `list` prints the available names.
        name: String,
        #[command(flatten)]
        opts: RunOpts,
        /// Use the full-size GP-tuning data set.
        #[arg(long)]
        paper_scale: bool,
        /// Print the preset's TOML and exit.
        #[arg(long)]
        dump: bool,
    },
    /// Run the acceptance checks and print one line per criterion.
    Accept {
        /// Only criteria whose id or name contains this text.
        filter: Option<String>,
    },
}

#[derive(clap::Args)]
struct RunOpts {
    /// Output root (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides the config).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
}

fn run(mut cfg: ExperimentConfig, opts: RunOpts, jobs: usize) -> Result<(), HarnessError> {
    if let Some(s) = opts.seeds {
        cfg.seed_override(s);
    } else if let Some(s) = opts.seed {
        cfg.seed_override(vec![s]);
    }
    if let Some(out) = opts.out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let result = execute(&cfg, jobs)?;
    let dir = write_outputs(&result, &cfg.output_dir)?;
    print!("{}", result.summary_csv());
    eprintln!("wrote {} in {:.1}s", dir.display(), result.wall_time);
    match result.failures() {
        0 => Ok(()),
        failed => Err(HarnessError::RunsFailed { failed, total: result.runs.len() }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = match cli.command {
        Command::Run { config, opts } => std::fs::read_to_string(&config)
            .map_err(|e| HarnessError::Io { path: config.clone(), source: e })
            .and_then(|text| ExperimentConfig::from_toml(&text))
            .and_then(|cfg| run(cfg, opts, jobs)),
        Command::Preset { name, .. } if name == "list" => {
            presets::names().iter().for_each(|n| println!("{n}"));
            Ok(())
        }
        Command::Preset { name, opts, paper_scale, dump } => presets::load(&name, paper_scale).and_then(|cfg| {
            if dump {
                print!("{}", cfg.to_toml());
                Ok(())
            } else {
                run(cfg, opts, jobs)
            }
        }),
        Command::Accept { filter } => {
            let outcomes = acceptance::run_all(filter.as_deref(), jobs);
            acceptance::print_report(&outcomes);
            if outcomes.iter().all(|o| o.passed) {
                Ok(())
            } else {
                return ExitCode::from(1);
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
