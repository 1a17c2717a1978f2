mod artifact;
mod error;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use artifact::Header;
use error::CliError;
use experiments::{lookup, RunCtx, REGISTRY};

/// Environment variable capping the wall time of a single experiment.
const BUDGET_VAR: &str = "ORBILAB_BUDGET_SECONDS";

#[derive(Parser)]
#[command(name = "orbilab", version, about = "Numerical experiments on orbital free entropy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or an artifact header).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides `output_path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the experiment registry.
    List,
    /// Print parameters of one experiment.
    Describe { experiment: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    experiment: String,
    seed: u64,
    #[serde(default)]
    output_path: Option<PathBuf>,
    #[serde(default)]
    params: toml::Table,
    /// Metadata echoed by artifact headers; ignored on input.
    #[serde(default)]
    #[allow(dead_code)]
    artifact: Option<toml::Table>,
}

fn budget() -> Result<Option<Duration>, CliError> {
    match std::env::var(BUDGET_VAR) {
        Err(_) => Ok(None),
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && *x >= 0.0)
            .map(|x| Some(Duration::from_secs_f64(x)))
            .ok_or_else(|| CliError::field(BUDGET_VAR, "expected a non-negative number of seconds")),
    }
}

/// Returns whether the artifact is partial.
fn run(config: &Path, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Result<bool, CliError> {
    let text = artifact::config_text(config)?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::field("config", e.message().to_string()))?;
    let entry = lookup(&cfg.experiment).ok_or_else(|| {
        CliError::field("experiment", format!("unknown experiment `{}`; see `orbilab list`", cfg.experiment))
    })?;
    let seed = seed.unwrap_or(cfg.seed);
    if seed > i64::MAX as u64 {
        return Err(CliError::field("seed", "must be at most 2^63 - 1"));
    }
    if workers == Some(0) {
        return Err(CliError::field("workers", "must be at least 1"));
    }
    let budget = budget()?;
    let prepared = (entry.prepare)(cfg.params)?;
    let dir = out.or(cfg.output_path).unwrap_or_else(|| PathBuf::from("out"));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let ctx = RunCtx {
        seed,
        deadline: budget.map(|b| Instant::now() + b),
    };
    let finished = pool.install(|| prepared.run(&ctx))?;

    let params = prepared.params();
    let header = Header {
        experiment: entry.name,
        seed,
        params: &params,
        uses_sde: prepared.uses_sde(),
        partial: finished.partial,
    };
    let path = artifact::write(&dir, &header, &finished.output)?;
    println!("{}", path.display());
    Ok(finished.partial)
}

fn list() {
    println!("{:<22} {:<18} required params", "experiment", "anchor");
    for e in REGISTRY {
        println!("{:<22} {:<18} {}", e.name, e.anchor, e.required.join(", "));
    }
}

fn describe(name: &str) -> Result<(), CliError> {
    let e = lookup(name).ok_or_else(|| CliError::field("experiment", format!("unknown experiment `{name}`")))?;
    println!("{}: {}", e.name, e.summary);
    println!("anchor: {}", e.anchor);
    println!("required: {}", e.required.join(", "));
    if !e.optional.is_empty() {
        let opt: Vec<String> = e.optional.iter().map(|(k, v)| format!("{k} = {v}")).collect();
        println!("optional: {}", opt.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => run(&config, seed, workers, out).map(|partial| if partial { 3 } else { 0 }),
        Command::List => {
            list();
            Ok(0)
        }
        Command::Describe { experiment } => describe(&experiment).map(|_| 0),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => {
            eprintln!("{}", serde_json::json!({ "status": "partial", "reason": "runtime budget exceeded" }));
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
