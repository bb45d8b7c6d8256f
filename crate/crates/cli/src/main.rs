use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featx::experiment::Method;
use featx::stability::GapConfig;
use featx::{ErrorClass, Result};
use featx_cli::commands::{self, Cell};
use featx_cli::config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "featx", version, about = "Feature extrapolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a CSV file into a vocabulary and multi-hot index rows.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Output prefix; writes PREFIX.vocab.txt and PREFIX.encoded.txt.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one (method, ratio, seed) cell and write its checkpoint.
    Train(CellArgs),
    /// Score a checkpoint and append its results records.
    Evaluate {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run every configured cell, resuming past completed ones.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[command(flatten)]
        training: TrainingFlags,
    },
    /// Estimate the generalization gap of the simplified model for each k.
    Stability(StabilityArgs),
}

#[derive(Args)]
struct TrainingFlags {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_gnn: Option<f64>,
}

impl TrainingFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.output.clone(),
            epochs: self.epochs,
            folds: self.folds,
            rho: self.rho,
            lr_backbone: self.lr_backbone,
            lr_gnn: self.lr_gnn,
            ..Overrides::default()
        }
    }
}

#[derive(Args)]
struct CellArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "fate")]
    method: Method,
    /// Observed ratio; defaults to the first configured one.
    #[arg(long)]
    ratio: Option<f64>,
    /// Defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    training: TrainingFlags,
}

impl CellArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, Cell)> {
        let mut overrides = self.training.overrides();
        overrides.ratios = self.ratio.map(|r| vec![r]);
        overrides.seeds = self.seed.map(|s| vec![s]);
        let config = ExperimentConfig::load(&self.config, &overrides)?;
        let cell = Cell {
            method: self.method,
            ratio: match config.split.protocol {
                featx::eval::Protocol::Random => Some(config.ratios[0]),
                featx::eval::Protocol::Chronological => None,
            },
            seed: config.seeds[0],
        };
        Ok((config, cell))
    }
}

#[derive(Args)]
struct StabilityArgs {
    /// Raw features d.
    #[arg(long, default_value_t = 12)]
    d: usize,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', default_values_t = [6, 11])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 96)]
    train_rows: usize,
    #[arg(long, default_value_t = 4)]
    cardinality: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Write the per-seed table to this file as well.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl StabilityArgs {
    fn config(&self) -> GapConfig {
        GapConfig {
            raw_features: self.d,
            cardinality: self.cardinality,
            batch: self.batch,
            steps: self.steps,
            seeds: self.seeds,
            seed_offset: self.seed_offset,
            train_rows: self.train_rows,
            layers: self.layers,
            learning_rate: self.lr,
            ..GapConfig::default()
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Encode { input, schema, output } => commands::encode(&input, &schema, &output).map(|_| ()),
        Command::Train(args) => {
            let (config, cell) = args.resolve()?;
            commands::train(&config, &cell).map(|_| ())
        }
        Command::Evaluate { cell, checkpoint } => {
            let (config, cell) = cell.resolve()?;
            commands::evaluate(&config, &cell, &checkpoint).map(|_| ())
        }
        Command::Sweep {
            config,
            seeds,
            methods,
            ratios,
            training,
        } => {
            let overrides = Overrides {
                seeds,
                methods,
                ratios,
                ..training.overrides()
            };
            commands::sweep(&ExperimentConfig::load(&config, &overrides)?).map(|_| ())
        }
        Command::Stability(args) => {
            commands::stability(&args.config(), &args.k, args.output.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
