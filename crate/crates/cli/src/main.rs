//! `hierts`: run hierarchical Thompson sampling experiments from the command
//! line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 I/O
//! error.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierts_core::AgentKind;

#[derive(Debug, Parser)]
#[command(name = "hierts", version, about = "Hierarchical Thompson sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the experiment commands.
#[derive(Debug, Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bayes regret curves of the configured agents.
    Simulate {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// TS regret relative to HierTS and FlatTS across tree heights.
    Ratio {
        /// JSON run configuration with a balanced tree; its height is replaced.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated tree heights.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        heights: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-node complexity terms and the Bayes regret bound of HierTS.
    Bound {
        /// JSON run configuration of a K-armed problem.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Posterior scaling constant (defaults to 1 + σ₀,max²/σ²).
        #[arg(long)]
        c: Option<f64>,
    },
    /// Compare the recursive posteriors against the dense Gaussian oracle and
    /// check the posterior inequalities on random problems.
    VerifyOracle {
        /// JSON suite configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the suite seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Perturb a cached message by this amount (detector self-test).
        #[arg(long, hide = true)]
        sentinel: Option<f64>,
    },
    /// Classification bandit on a labelled feature dataset: priors fitted on
    /// the train split, contexts and truth from the test split.
    ClassifyBandit {
        /// CSV with columns `id,label,split,f1..fd`.
        #[arg(long)]
        dataset: PathBuf,
        /// Tree file with a `label_map` from labels to leaves.
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Keep only covariance diagonals.
        #[arg(long)]
        diagonal: bool,
        /// Reward noise standard deviation.
        #[arg(long, default_value_t = 0.5)]
        noise_std: f64,
        /// Agents to run.
        #[arg(long, value_delimiter = ',', default_value = "hierts,flatts,ts")]
        agents: Vec<AgentKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic Gaussian-cluster dataset and its tree file.
    MakeDataset {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        superclasses: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 40)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, common } => commands::simulate(&config, &common.out, common.seed, common.jobs),
        Command::Ratio {
            config,
            heights,
            common,
        } => commands::ratio(&config, &heights, &common.out, common.seed, common.jobs),
        Command::Bound { config, out, c } => commands::bound(&config, &out, c),
        Command::VerifyOracle {
            config,
            seed,
            out,
            sentinel,
        } => commands::verify_oracle(config.as_deref(), seed, out.as_deref(), sentinel),
        Command::ClassifyBandit {
            dataset,
            tree,
            horizon,
            instances,
            diagonal,
            noise_std,
            agents,
            common,
        } => commands::classify_bandit(&commands::ClassifyArgs {
            dataset,
            tree,
            out: common.out,
            horizon,
            instances,
            diagonal,
            noise_std,
            agents,
            seed: common.seed.unwrap_or(0),
            jobs: common.jobs,
        }),
        Command::MakeDataset {
            out,
            seed,
            superclasses,
            classes,
            dim,
            train,
            test,
        } => commands::make_dataset(&out, seed, superclasses, classes, dim, train, test),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
