use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hqnn::bench::plot::{plot, PlotAxis, PlotFilter};
use hqnn::bench::{
    assemble_metrics, run_grid, run_outcome, summarize, ExperimentGrid, RunOptions, TrainingSettings, DEFAULT_SEEDS,
    METRICS_FILE,
};
use hqnn::data::load_mnist_dir;
use hqnn::models::{Algo, ModelConfig, DEFAULT_LAYERS};
use hqnn::templates::{EntanglerKind, MAX_LAYERS};
use hqnn::Result;

#[derive(Parser)]
#[command(name = "hqnn", version, about = "Train and benchmark hybrid quantum-classical image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single configuration.
    Run(RunArgs),
    /// Sweep the experiment grid.
    Grid(GridArgs),
    /// Render accuracy charts from a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Training {
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    train_samples: usize,
    #[arg(long, default_value_t = 100)]
    test_samples: usize,
    /// Directory holding train-images-idx3-ubyte[.gz] and train-labels-idx1-ubyte[.gz].
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Replace completed runs instead of reusing them.
    #[arg(long)]
    overwrite: bool,
    /// Also log loss and accuracy after every batch.
    #[arg(long)]
    log_batches: bool,
}

impl Training {
    fn settings(&self) -> TrainingSettings {
        TrainingSettings {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            n_train: self.train_samples,
            n_test: self.test_samples,
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions { overwrite: self.overwrite, log_batches: self.log_batches }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    algo: Algo,
    #[arg(long, default_value = "be")]
    entangler: EntanglerKind,
    #[arg(long, default_value_t = DEFAULT_LAYERS)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    qubits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save the trained model as JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    training: Training,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_values = ["quann", "qcnn", "qresnet"])]
    algo: Vec<Algo>,
    #[arg(long, value_delimiter = ',', default_values = ["rc", "be", "se"])]
    entangler: Vec<EntanglerKind>,
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 9])]
    qubits: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    seeds: Vec<u64>,
    /// Grid cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Render charts for every axis after the sweep.
    #[arg(long)]
    plot: bool,
    #[command(flatten)]
    training: Training,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics CSV; defaults to <out>/metrics.csv.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Axis to compare; all axes when omitted.
    #[arg(long)]
    axis: Option<PlotAxis>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    entangler: Option<EntanglerKind>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    qubits: Option<usize>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = ModelConfig::new(args.algo, args.entangler, args.layers, args.qubits, args.seed);
    config.validate()?;
    let settings = args.training.settings();
    settings.validate()?;
    let raw = load_mnist_dir(&args.training.data_dir)?;
    let outcome = run_outcome(&config, &settings, &raw, &args.training.out, args.training.options())?;
    assemble_metrics(&args.training.out, &[config.run_id()])?;
    if let Some(last) = outcome.records.last() {
        println!("{}: final test accuracy {:.4}", last.run_id, last.test_acc);
    }
    if let Some(path) = args.checkpoint {
        match outcome.model {
            Some(model) => model.save(&path)?,
            None => {
                return Err(hqnn::Error::Config(format!(
                    "{} was reused from disk and has no parameters to save; pass --overwrite",
                    config.run_id()
                )))
            }
        }
    }
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let grid = ExperimentGrid {
        algos: args.algo,
        entanglers: args.entangler,
        layer_counts: if args.layers.is_empty() { (1..=MAX_LAYERS).collect() } else { args.layers },
        qubit_counts: args.qubits,
        seeds: args.seeds,
        training: args.training.settings(),
    };
    let raw = load_mnist_dir(&args.training.data_dir)?;
    let report = run_grid(&grid, &raw, &args.training.out, args.workers, args.training.options())?;
    println!(
        "{} runs complete, {} invalid cells skipped",
        report.expansion.cells.len(),
        report.expansion.skipped.len()
    );
    let last_epoch = report.records.iter().map(|r| r.epoch).max().unwrap_or(0);
    for row in summarize(&report.records).iter().filter(|r| r.epoch == last_epoch) {
        println!("{row}");
    }
    if args.plot {
        let csv = args.training.out.join(METRICS_FILE);
        for axis in PlotAxis::ALL {
            plot(&csv, axis, &PlotFilter::default(), &args.training.out.join("plots"))?;
        }
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let csv = args.csv.unwrap_or_else(|| args.out.join(METRICS_FILE));
    let filter = PlotFilter { algo: args.algo, entangler: args.entangler, layers: args.layers, qubits: args.qubits };
    let axes = args.axis.map_or(PlotAxis::ALL.to_vec(), |a| vec![a]);
    let mut n = 0;
    for axis in axes {
        n += plot(&csv, axis, &filter, &args.out.join("plots"))?.len();
    }
    println!("{n} charts written");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
