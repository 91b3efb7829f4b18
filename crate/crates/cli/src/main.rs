use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairseg_cli::commands::{self, CommandOutput};
use fairseg_cli::{exit, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "fairseg", version, about = "Fairness-aware continual segmentation on procedural benchmarks")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark (train/test files and manifest).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides benchmark.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        print_config: bool,
    },
    /// Run the continual protocol.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory written by `gen`; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One of fine-tune, cluster, cluster-class, full, distill.
        #[arg(long)]
        ablation: Option<String>,
        /// Split pattern such as 5-3 or 4-2-2.
        #[arg(long)]
        steps: Option<String>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Random trials of the distillation upper bound.
    Prop1 {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "4,16,32")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,8,20")]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ablation table over run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load(config: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<CommandOutput, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Gen {
            config,
            out,
            seed,
            print_config,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(seed) = seed {
                cfg.benchmark.seed = seed;
            }
            if print_config {
                return Ok(cfg.to_toml().into());
            }
            commands::gen(&cfg, &out)
        }
        Command::Train {
            config,
            data,
            out,
            ablation,
            steps,
            resume,
            print_config,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(a) = ablation {
                cfg.train.ablation = a;
            }
            if let Some(s) = steps {
                cfg.split.pattern = s;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            if print_config {
                return Ok(cfg.to_toml().into());
            }
            commands::train(&cfg, data.as_deref(), resume.as_deref())
        }
        Command::Eval { checkpoint, data, out } => commands::eval(&checkpoint, &data, out.as_deref()),
        Command::Gradcheck { seed, instances } => commands::gradcheck(seed, instances),
        Command::Prop1 {
            trials,
            dims,
            classes,
            seed,
        } => commands::prop1(seed, trials, &dims, &classes),
        Command::Report { runs, csv } => commands::report(&runs, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{}", out.text);
            match out.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(exit::VERIFICATION)
                }
                None => ExitCode::from(exit::OK),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
