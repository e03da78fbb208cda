//! `ecgstack` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ecgstack::architectures::ModelName;
use ecgstack::commands;
use ecgstack::config::RunConfig;
use ecgstack::train_eval::Granularity;
use ecgstack::{par, Error};

#[derive(Debug, Parser)]
#[command(name = "ecgstack", version, about = "ECG arrhythmia classification from stacked scalogram images")]
struct Cli {
    /// TOML run config; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Image,
    Record,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic 12-lead dataset (CSV records + labels.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Turn records into per-second stacked scalogram images.
    Featurize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a PNG next to every feature file.
        #[arg(long)]
        export_png: bool,
    },
    /// Train a model on a feature directory.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// cnn2d, cnn_sa, cnn_mha, cnn1d or cnn1d_lstm.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare evaluated runs as a Model,A,P,R,S table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "record")]
        granularity: GranularityArg,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the feature files of a feature directory as PNGs.
    ExportImages {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Synth { n_per_class: Some(n), .. } => config.data.n_per_class = *n,
        Command::Train { model, epochs, .. } => {
            if let Some(m) = model {
                config.model.name = m.parse::<ModelName>()?;
            }
            if let Some(e) = epochs {
                config.train.epochs = *e;
            }
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Synth { out, .. } => {
            let n = commands::cmd_synth(&out, &config)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Featurize { data, out, export_png } => {
            let set = commands::cmd_featurize(&data, &out, &config, export_png)?;
            println!(
                "wrote {} feature files to {} (config {})",
                set.rows.len(),
                out.display(),
                set.info.config_hash
            );
        }
        Command::Train { features, out, .. } => {
            let (_, outcome) = commands::cmd_train(&features, &out, &config)?;
            println!(
                "trained {} epochs; best epoch {} with val accuracy {:.4}",
                outcome.history.len(),
                outcome.best_epoch,
                outcome.best_val_acc
            );
        }
        Command::Eval { checkpoint, features, out } => {
            let e = commands::cmd_eval(&checkpoint, &features, &out, &config)?;
            println!(
                "image accuracy {:.4}, record accuracy {:.4}",
                e.image.accuracy, e.record.accuracy
            );
        }
        Command::Report { runs, granularity, out } => {
            let g = match granularity {
                GranularityArg::Image => Granularity::Image,
                GranularityArg::Record => Granularity::Record,
            };
            let table = commands::cmd_report(&runs, g)?;
            match out {
                Some(path) => std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?,
                None => print!("{table}"),
            }
        }
        Command::ExportImages { features, out } => {
            let n = commands::cmd_export_images(&features, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let workers = cli.workers;
    match par::with_workers(workers, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
