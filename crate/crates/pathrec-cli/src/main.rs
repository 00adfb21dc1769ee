use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use pathrec_cli::config::{Overrides, ProviderKind, RunConfig};
use pathrec_cli::stages;
use pathrec_cli::synthetic;

#[derive(Parser)]
#[command(
    name = "pathrec",
    about = "Knowledge-graph path-reasoning recommender: build, embed, intuit, train, recommend, evaluate.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file.
    #[arg(short, long, default_value = "pathrec.toml")]
    config: PathBuf,
    /// Global seed; overrides every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight on the embedding reward term (0..=1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight on the preference-hint reward term.
    #[arg(long)]
    beta: Option<f64>,
    /// Completion provider.
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Include the temporal ordering clauses in the prompt.
    #[arg(long)]
    temporal_aware: Option<bool>,
    /// Worker threads for parallel stages (1 = fully sequential).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "mock" => Ok(ProviderKind::Mock),
        "http" => Ok(ProviderKind::Http),
        other => Err(format!("unknown provider `{other}` (expected mock or http)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset, split it by time, and construct the graph.
    Build(CommonArgs),
    /// Pretrain translation embeddings over the built graph.
    Embed(CommonArgs),
    /// Query the provider per user and match the answers to graph entities.
    Intuit(CommonArgs),
    /// Train the path-walking policy.
    Train(CommonArgs),
    /// Beam-search reasoning paths into Top-N recommendations.
    Recommend(CommonArgs),
    /// Score the recommendations against the held-out test split.
    Eval(CommonArgs),
    /// Train and evaluate one agent per reward-mixing weight.
    SweepAlpha {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated mixing weights.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1", value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Write the synthetic steering dataset and a ready-to-run config.
    DemoSynthetic {
        /// Target directory for the generated files.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

impl CommonArgs {
    fn load_config(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            provider: self.provider,
            temporal_aware: self.temporal_aware,
            threads: self.threads,
            output_dir: self.out.clone(),
        };
        let config = RunConfig::load(&self.config, &overrides)?;
        // One global pool; later calls are no-ops in the same process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
        Ok(config)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Build(args) => stages::cmd_build(&args.load_config()?),
        Command::Embed(args) => stages::cmd_embed(&args.load_config()?),
        Command::Intuit(args) => stages::cmd_intuit(&args.load_config()?),
        Command::Train(args) => stages::cmd_train(&args.load_config()?),
        Command::Recommend(args) => stages::cmd_recommend(&args.load_config()?),
        Command::Eval(args) => stages::cmd_eval(&args.load_config()?),
        Command::SweepAlpha { common, grid } => {
            stages::cmd_sweep_alpha(&common.load_config()?, &grid)
        }
        Command::DemoSynthetic { out } => {
            synthetic::write_demo(&out)?;
            println!(
                "wrote synthetic dataset and config to {} — next: pathrec build -c {}",
                out.display(),
                out.join("pathrec.toml").display()
            );
            Ok(())
        }
    }
}
