use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use phaseflow_cli::{
    cmd_align, cmd_eval, cmd_infer, cmd_plot, cmd_split, cmd_synth, cmd_train, exit_code, init_threads, ModelKind,
    RunConfig, Subset,
};

#[derive(Parser)]
#[command(name = "phaseflow", version, about = "Surgical phase recognition from speech, images and X-ray logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Raw dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Work directory for aligned data, checkpoints and results.
    #[arg(long, global = true)]
    work: Option<PathBuf>,
    /// Seconds of consecutive trigger-phase predictions before switching.
    #[arg(long = "switch-k", global = true)]
    switch_k: Option<usize>,
    /// Score only seconds whose ground truth is not the transition class.
    #[arg(long, global = true)]
    exclude_transition: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Speech,
    Image,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw dataset.
    Synth {
        #[arg(long)]
        n_operations: Option<usize>,
    },
    /// Align audio channels and rebase X-ray logs.
    Align,
    /// Entropy-stratified train/val/test split.
    Split,
    /// Train the speech or image model.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Override the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Merged inference on a split subset.
    Infer {
        #[arg(long, value_enum, default_value = "test")]
        ops: SubsetArg,
        /// Use one model over whole operations instead of merging.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Score predictions; with --runs, score run1..runN and aggregate.
    Eval {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Ribbon plot of predictions against ground truth.
    Plot,
}

fn kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Speech => ModelKind::Speech,
        ModelArg::Image => ModelKind::Image,
    }
}

fn config(cli: &Cli) -> phaseflow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(w) = &cli.work {
        cfg.paths.work_dir = w.clone();
    }
    if let Some(k) = cli.switch_k {
        cfg.switch.consecutive_s = k;
    }
    if cli.exclude_transition {
        cfg.metrics.exclude_transition = true;
    }
    match &cli.command {
        Command::Synth { n_operations: Some(n) } => cfg.synth.n_operations = *n,
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        _ => {}
    }
    Ok(cfg.resolved())
}

fn run(cli: &Cli) -> phaseflow::Result<()> {
    init_threads()?;
    let cfg = config(cli)?;
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg).map(drop),
        Command::Align => cmd_align(&cfg).map(drop),
        Command::Split => cmd_split(&cfg).map(drop),
        Command::Train { model, .. } => cmd_train(&cfg, kind(*model)).map(drop),
        Command::Infer { ops, model } => {
            let subset = match ops {
                SubsetArg::Train => Subset::Train,
                SubsetArg::Val => Subset::Val,
                SubsetArg::Test => Subset::Test,
                SubsetArg::All => Subset::All,
            };
            cmd_infer(&cfg, subset, model.map(kind)).map(drop)
        }
        Command::Eval { runs } => cmd_eval(&cfg, *runs).map(drop),
        Command::Plot => cmd_plot(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
