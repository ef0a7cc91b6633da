mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vkdnw_core::ranking::ProxyName;

#[derive(Debug, Parser)]
#[command(
    name = "vkdnw",
    version,
    about = "Training-free architecture scoring from the Fisher information spectrum"
)]
struct Cli {
    /// Seed for network initialization, random inputs and the search.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with search, scoring and experiment settings. Flags take precedence.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Worker threads for parallel scoring and experiments.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum Experiment {
    /// Monte-Carlo FIM against the population FIM of a softmax model.
    McFim,
    /// Label-based G against the empirical FIM on random networks.
    LabelFim,
    /// KL divergence against its quadratic approximation.
    Kl,
    /// Maximum-likelihood variance against the inverse-Fisher bound.
    CramerRao,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List every encoding of a space with its canonical hash, FLOPs and layer count.
    Enumerate {
        #[arg(long, default_value = "nb201toy")]
        space: String,
        /// Keep only the first encoding of each canonical structure.
        #[arg(long)]
        unique: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score architectures with native proxies; writes `arch_id,proxy_name,value`.
    Score {
        /// Encodings such as `nb201toy:3-2-4-1-3-3`.
        encodings: Vec<String>,
        /// File with one encoding per line.
        #[arg(long)]
        archs: Option<PathBuf>,
        /// Score every encoding of this space.
        #[arg(long, value_name = "SPACE")]
        all: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "vkdnw_single")]
        proxies: Vec<ProxyName>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Dump the FIM eigenvalues of one architecture as `index,eigenvalue`.
    Spectrum {
        encoding: String,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rank-quality metrics of proxy scores against accuracies.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        accuracy: PathBuf,
        /// Cutoff of nDCG.
        #[arg(long, default_value_t = 1000)]
        p: usize,
        /// Tie-breaking seeds; nDCG is reported per seed and averaged.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        tie_seeds: Vec<u64>,
        /// Proxies to combine by the product of their ranks into an extra `agg` row.
        #[arg(long, value_delimiter = ',')]
        aggregate: Vec<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evolutionary search under a FLOPs budget.
    Search {
        #[arg(long, default_value = "nb201toy")]
        space: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        objective: Option<ProxyName>,
        /// Where to write the best score per iteration.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Where to write the final population.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the numerical checks of the Fisher-information theory.
    Validate {
        #[arg(value_enum, default_value = "all")]
        experiment: Experiment,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.search.seed = seed;
        cfg.search.fim.init_seed = seed;
        cfg.search.fim.input_seed = seed;
        cfg.mle.seed = seed;
    }
    match cli.command {
        Command::Enumerate { space, unique, output } => commands::enumerate(&space, unique, output.as_deref()),
        Command::Score {
            encodings,
            archs,
            all,
            proxies,
            batch_size,
            output,
        } => {
            if let Some(b) = batch_size {
                cfg.search.fim.batch_size = b;
            }
            let encodings = commands::collect_encodings(encodings, archs.as_deref(), all.as_deref())?;
            commands::score(&encodings, &proxies, &cfg.search.fim, output.as_deref())
        }
        Command::Spectrum {
            encoding,
            batch_size,
            output,
        } => {
            if let Some(b) = batch_size {
                cfg.search.fim.batch_size = b;
            }
            commands::spectrum(&encoding, &cfg.search.fim, output.as_deref())
        }
        Command::Eval {
            scores,
            accuracy,
            p,
            tie_seeds,
            aggregate,
            format,
            output,
        } => commands::eval(&scores, &accuracy, p, &tie_seeds, &aggregate, format, output.as_deref()),
        Command::Search {
            space,
            iterations,
            population,
            budget,
            objective,
            trace,
            output,
        } => {
            let s = &mut cfg.search;
            s.iterations = iterations.unwrap_or(s.iterations);
            s.population_cap = population.unwrap_or(s.population_cap);
            s.flops_budget = budget.unwrap_or(s.flops_budget);
            s.objective = objective.unwrap_or(s.objective);
            commands::search(&space, &cfg.search, trace.as_deref(), output.as_deref())
        }
        Command::Validate {
            experiment,
            format,
            output,
        } => commands::validate(experiment, &cfg.mle, cfg.search.seed, format, output.as_deref()),
    }
}
