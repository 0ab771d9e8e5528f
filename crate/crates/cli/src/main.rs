use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspda_cli::config::{parse_config_with, parse_dataset_config_str, DatasetSource};
use sspda_cli::error::{CliError, ConfigError};
use sspda_cli::experiment::load_dataset;
use sspda_cli::{evaluate, run_experiment, Method, Overrides};
use sspda_core::data::{write_dataset, CHANNELS};
use sspda_core::jigsaw::select_permutations;
use sspda_core::network::build_model;

#[derive(Parser)]
#[command(
    name = "sspda",
    version,
    about = "Self-supervised partial domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset to disk as PPM files plus a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination directory (default: the configured output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Evaluate a checkpoint on the configured target set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seed for crop positions.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        crops: Option<usize>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Write a permutation set file.
    Perms {
        #[arg(long, default_value_t = 3)]
        grid_side: usize,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_dataset_config(path: &Path, overrides: &Overrides) -> Result<sspda_cli::ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::file(path, format!("cannot read: {e}")))?;
    Ok(parse_dataset_config_str(&text, overrides).map_err(|e| e.in_file(path))?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let overrides = Overrides {
                seed,
                ..Overrides::default()
            };
            let cfg = read_dataset_config(&config, &overrides)?;
            if !matches!(cfg.dataset, DatasetSource::Synthetic(_)) {
                return Err(ConfigError::file(&config, "generate needs dataset = synthetic").into());
            }
            let dir = out.unwrap_or(cfg.output_dir.clone());
            let (source, target) = load_dataset(&cfg)?;
            let all: Vec<_> = source.into_iter().chain(target).collect();
            let manifest = write_dataset(&dir, &all)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            config,
            seed,
            out,
            method,
        } => {
            let overrides = Overrides {
                method,
                seed,
                output_dir: out,
            };
            let cfg = parse_config_with(&config, &overrides)?;
            let report = run_experiment(&cfg)?;
            for r in &report.runs {
                println!(
                    "seed {}: best epoch {}, target accuracy {}",
                    r.seed,
                    r.best_epoch,
                    r.target_acc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
                );
            }
            if let Some(m) = report.target_acc_mean {
                let s = report.target_acc_std.map_or(String::new(), |s| format!(" ± {s:.4}"));
                println!("{}: mean target accuracy {m:.4}{s}", report.method);
            }
            println!("{}", report.aggregate_path.display());
        }
        Command::Eval {
            config,
            checkpoint,
            seed,
            crops,
            method,
        } => {
            let overrides = Overrides {
                method,
                seed,
                ..Overrides::default()
            };
            let mut cfg = read_dataset_config(&config, &overrides)?;
            if let Some(c) = crops {
                if c == 0 {
                    return Err(ConfigError::file(&config, "--crops must be at least 1").into());
                }
                cfg.eval_crops = c;
            }
            let spec = cfg.train.model_spec(CHANNELS, cfg.image_side, cfg.num_classes());
            let mut model = build_model(&spec, 0)?;
            model.load(&checkpoint)?;
            let (_, target) = load_dataset(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            rng.set_stream(16);
            let acc = evaluate(&model, &target, cfg.eval_crops, &mut rng)?;
            println!("{acc}");
        }
        Command::Perms {
            grid_side,
            count,
            seed,
            out,
        } => {
            let set = select_permutations(grid_side, count, seed)?;
            log::info!("min pairwise Hamming distance {}", set.min_pairwise_distance());
            match out {
                Some(path) => set.save(&path)?,
                None => print!("{}", set.to_text()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
