//! `mpse`: decomposition reports, simulation metrics, sensitivity contours
//! and oracle checks from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpse::simulation::FeatureMode;
use mpse::Error;
use serde_json::json;

use mpse_cli::commands;
use mpse_cli::config::{parse_censor, MethodChoice, RunConfig};

#[derive(Parser)]
#[command(name = "mpse", version, about = "Path-specific effect decomposition through monotone mediators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate every decomposition component and write a JSON report.
    Decompose(Common),
    /// Run the Monte Carlo comparison and write metrics CSV and JSON.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replications per cell.
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        features: Option<Features>,
    },
    /// Write a bias-adjusted contour grid for an unobserved confounder.
    Sensitivity(Common),
    /// Check the exact oracle on a fixture law and print PASS/FAIL lines.
    OracleCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Correct,
    Misspecified,
    Both,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its scalar fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// Cross-fitting folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Censoring quantiles `lo,hi`, or `none`.
    #[arg(long, value_parser = parse_censor)]
    censor: Option<Option<[f64; 2]>>,
    /// Bootstrap replications for the RWR estimator.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> mpse::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.output {
            cfg.output = Some(v.clone());
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.censor {
            cfg.censor = v;
        }
        if let Some(v) = self.bootstrap {
            cfg.bootstrap = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> mpse::Result<i32> {
    let (cfg, command) = match &cli.command {
        Command::Decompose(c) | Command::Sensitivity(c) | Command::OracleCheck(c) => (c.resolve()?, &cli.command),
        Command::Simulate { common, reps, n_grid, features } => {
            let mut cfg = common.resolve()?;
            if let Some(r) = reps {
                cfg.simulate.reps = *r;
            }
            if let Some(g) = n_grid {
                cfg.simulate.n_grid = g.clone();
            }
            if let Some(f) = features {
                cfg.simulate.modes = match f {
                    Features::Correct => vec![FeatureMode::Correct],
                    Features::Misspecified => vec![FeatureMode::Misspecified],
                    Features::Both => vec![FeatureMode::Correct, FeatureMode::Misspecified],
                };
            }
            (cfg, &cli.command)
        }
    };
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    match command {
        Command::Decompose(_) => commands::decompose(&cfg),
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Sensitivity(_) => commands::sensitivity(&cfg),
        Command::OracleCheck(_) => commands::oracle_check(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let mut body = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            if let Error::Monotonicity { units } = &e {
                body["units"] = json!(units);
            }
            eprintln!("{body}");
            eprintln!("mpse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
