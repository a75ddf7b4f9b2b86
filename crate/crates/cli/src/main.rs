use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flagfed::commands;
use flagfed::config::{ExperimentConfig, StrategyKind};
use flagfed::error::{CliError, CliResult};
use flagfed_core::data::SynthSpec;
use flagfed_core::federate::Parallelism;
use flagfed_core::partition::Partitioner;

#[derive(Parser)]
#[command(name = "flagfed", version, about = "Multi-label federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-theme train/validation dataset pair.
    Synth(SynthArgs),
    /// Split a dataset into client shards and write the heterogeneity report.
    Partition(ExperimentArgs),
    /// Run one federated experiment.
    Train(ExperimentArgs),
    /// Run FLAG over a list of alpha values.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated alphas; defaults to 0.0,0.1,...,1.0.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
    },
    /// Write the heterogeneity report for a partition.
    Analyze {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Directory written by `partition`; when absent the dataset is partitioned afresh.
        #[arg(long)]
        shards: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    labels: usize,
    #[arg(long, default_value_t = 10)]
    themes: usize,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Validation rows; defaults to a quarter of --samples.
    #[arg(long)]
    val_samples: Option<usize>,
    #[arg(long, default_value_t = 32)]
    features: usize,
    #[arg(long, default_value_t = 2)]
    density: usize,
    #[arg(long, default_value_t = 0.1)]
    overlap: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise_std)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train.jsonl and val.jsonl.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    partitioner: Option<Partitioner>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    target_fraction: Option<f64>,
    /// centralized.json from an earlier run, used as the convergence baseline.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    no_checkpoints: bool,
}

impl ExperimentArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$field = v.clone().into(); })*
            };
        }
        set!(
            seed => seed,
            out => out_dir,
            clients => n_clients,
            partitioner => partitioner,
            strategy => strategy,
            alpha => alpha,
            rounds => rounds,
            local_epochs => local_epochs,
            batch_size => batch_size,
            lr => learning_rate,
            target_fraction => target_fraction,
        );
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
            cfg.synth = None;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = (h > 0).then_some(h);
        }
        if let Some(b) = &self.baseline {
            cfg.baseline = Some(b.clone());
        }
        if self.no_checkpoints {
            cfg.checkpoints = false;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let parallelism = || Parallelism::from_env().map_err(CliError::from);
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                n_samples: a.samples,
                n_labels: a.labels,
                n_features: a.features,
                n_themes: a.themes,
                theme_overlap: a.overlap,
                label_density: a.density,
                noise_std: a.noise,
                seed: a.seed,
            };
            let val = a.val_samples.unwrap_or_else(|| commands::default_val_samples(a.samples));
            let (tp, vp) = commands::synth(&spec, val, &a.out)?;
            println!("wrote {} and {}", tp.display(), vp.display());
        }
        Command::Partition(exp) => {
            let cfg = exp.resolve()?;
            cfg.validate()?;
            let (shards, report) = commands::partition(&cfg)?;
            println!(
                "{} clients ({}), sizes {:?}, total KL {}",
                shards.len(),
                cfg.partitioner,
                report.client_sizes,
                report.total_kl
            );
        }
        Command::Train(exp) => {
            let cfg = exp.resolve()?;
            let outcome = commands::train(&cfg, parallelism()?)?;
            println!("round,amap,wmap,gmap");
            for r in outcome.log() {
                let g = r.gmap().map_or_else(|| "-".to_string(), |g| format!("{g:.4}"));
                println!("{},{:.4},{:.4},{g}", r.round, r.amap(), r.wmap());
            }
            let c = &outcome.convergence;
            match c.rounds_to_target {
                Some(r) => println!("target {:.4} reached at round {r}", c.target_map),
                None => println!(
                    "target {:.4} never reached; best {:.4} at round {}",
                    c.target_map, c.best_map, c.best_round
                ),
            }
        }
        Command::Sweep { exp, alphas } => {
            let cfg = exp.resolve()?;
            let alphas = if alphas.is_empty() { commands::default_alphas() } else { alphas };
            let rows = commands::sweep(&cfg, &alphas, parallelism()?)?;
            println!("alpha,amap,gmap");
            for r in rows {
                println!("{:.2},{:.4},{:.4}", r.alpha, r.amap, r.gmap);
            }
        }
        Command::Analyze { exp, shards } => {
            let cfg = exp.resolve()?;
            if shards.is_none() {
                cfg.validate()?;
            }
            let report = commands::analyze(&cfg, shards.as_deref())?;
            println!("sizes {:?}, total KL {}", report.client_sizes, report.total_kl);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
