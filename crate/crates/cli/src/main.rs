mod commands;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Causally controllable synthetic data: fit generators, sample, audit.
#[derive(Debug, Parser)]
#[command(name = "causalmix", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the covariate and outcome generators and write a bundle.
    Fit(FitArgs),
    /// Sample synthetic tables from a bundle.
    Generate(GenerateArgs),
    /// Audit a synthetic table against the real one.
    Evaluate(EvaluateArgs),
    /// Write the seeded demo table, its schema and the demo scenarios.
    DemoData(DemoArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Training configuration; built-in defaults when omitted.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Overrides the seed in the training configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Bgmm,
    StandardNormal,
}

impl From<PriorArg> for causalmix::pipeline::LatentPrior {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Bgmm => causalmix::pipeline::LatentPrior::Bgmm,
            PriorArg::StandardNormal => causalmix::pipeline::LatentPrior::StandardNormal,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write R tables `<stem>_001.csv`.. with seeds seed, seed+1, ...
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum, default_value_t = PriorArg::Bgmm)]
    pub prior: PriorArg,
    /// Overrides the bundle's latent-jitter setting for BGMM sampling.
    #[arg(long)]
    pub latent_jitter: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    /// Synthetic CSV; plain tables without truth columns are annotated from the bundle.
    #[arg(long, required_unless_present = "prior_compare")]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Recomputes the per-row truth from this scenario instead of the bundle's.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also sample with both latent priors and write side-by-side tables.
    #[arg(long)]
    pub prior_compare: bool,
    /// Rows per prior in the comparison; defaults to the real row count.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = causalmix::eval::causal::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Overrides the bundle's latent-jitter setting for BGMM sampling.
    #[arg(long)]
    pub latent_jitter: Option<bool>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub schema_out: PathBuf,
    /// Directory for scenario1.json .. scenario3.json.
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    /// Directory for train_default.json.
    #[arg(long)]
    pub config_dir: Option<PathBuf>,
    #[arg(long, default_value_t = causalmix::demo::DEMO_ROWS)]
    pub n: usize,
    #[arg(long, default_value_t = causalmix::demo::DEMO_SEED)]
    pub seed: u64,
}

/// 3 for numerical failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|c| {
        c.downcast_ref::<causalmix::Error>()
            .is_some_and(causalmix::Error::is_numerical)
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::DemoData(a) => commands::demo_data(&a),
    };
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
