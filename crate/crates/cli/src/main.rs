//! `cnocpd` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 every requested
//! run ended in a solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnocpd::bench::{
    self, apply_overrides, ConfigTable, load_table, output_root, parse_seeds, run_dir, write_record, RunConfig,
};
use cnocpd::datagen::gen_problem_with_noise;
use cnocpd::io::{kv_to_text, sidecar_path, write_atomic, write_tensor};
use cnocpd::CpdError;

#[derive(Parser)]
#[command(name = "cnocpd", version, about = "Nonnegative CPD by collaborative neurodynamic optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for one seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set swarm.q=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Seed; defaults to the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every variant of a configuration over a seed range and tabulate.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (inclusive), `a..=b` or `a,b,c`; defaults to the config's seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a benchmark tensor with a metadata sidecar.
    Gen {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: u64,
        /// Output file; `.bin` selects the binary format.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        snr_db: Option<f64>,
    },
}

enum Failure {
    Config(CpdError),
    Runtime(CpdError),
    AllDiverged,
}

impl From<CpdError> for Failure {
    fn from(e: CpdError) -> Self {
        Failure::Runtime(e)
    }
}

fn load(config: &Path, set: &[String]) -> Result<ConfigTable, Failure> {
    let mut table = load_table(config).map_err(Failure::Config)?;
    apply_overrides(&mut table, set).map_err(Failure::Config)?;
    Ok(table)
}

fn cmd_run(config: &Path, set: &[String], seed: Option<u64>) -> Result<(), Failure> {
    let cfg = RunConfig::from_table(load(config, set)?).map_err(Failure::Config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let record = bench::run(&cfg, seed).map_err(Failure::Config)?;
    let dir = run_dir(&output_root(&cfg), &cfg, cfg.algorithm.as_str(), seed);
    write_record(&record, &dir)?;
    print!("{}", kv_to_text(&record.summary()));
    println!("output={}", dir.display());
    if record.termination.is_failure() {
        return Err(Failure::AllDiverged);
    }
    Ok(())
}

fn cmd_compare(config: &Path, seeds: Option<&str>, set: &[String]) -> Result<(), Failure> {
    let table = load(config, set)?;
    let base = RunConfig::from_table(table.clone()).map_err(Failure::Config)?;
    let seeds = match seeds {
        Some(spec) => parse_seeds(spec).map_err(Failure::Config)?,
        None => base.seed_list(),
    };
    let root = output_root(&base);
    let cmp = match bench::compare(&table, &seeds, Some(&root)) {
        Err(e @ (CpdError::Parse(_) | CpdError::InvalidArgument(_) | CpdError::UnknownKind(_))) => {
            return Err(Failure::Config(e))
        }
        other => other?,
    };
    print!("{}", cmp.to_table());
    println!("output={}", root.join(&base.output.name).display());
    if cmp.all_failed() {
        return Err(Failure::AllDiverged);
    }
    Ok(())
}

fn cmd_gen(kind: &str, seed: u64, out: &Path, snr_db: Option<f64>) -> Result<(), Failure> {
    let problem = gen_problem_with_noise(kind, seed, snr_db).map_err(Failure::Config)?;
    write_tensor(out, &problem.tensor)?;
    write_atomic(&sidecar_path(out), kv_to_text(&problem.metadata()).as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, set, seed } => cmd_run(config, set, *seed),
        Command::Compare { config, seeds, set } => cmd_compare(config, seeds.as_deref(), set),
        Command::Gen { kind, seed, out, snr_db } => cmd_gen(kind, *seed, out, *snr_db),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::AllDiverged) => {
            eprintln!("solver failed in every run");
            ExitCode::from(2)
        }
    }
}
