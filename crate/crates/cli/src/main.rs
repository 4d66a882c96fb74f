use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encmatch_cli::bench::{self, BenchOptions};
use encmatch_cli::{fixture, keygen, parse_profile, ClientSession};
use encmatch_core::client::FeatureFile;
use encmatch_core::params::Profile;
use encmatch_core::transport::{node, ServiceConfig};
use encmatch_core::{Error, Result};

#[derive(Parser)]
#[command(name = "encmatch", version, about = "Encrypted 1:N feature-vector matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write public.key, galois.key, relin.key and secret.key into a directory.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "production", value_parser = parse_profile)]
        profile: Profile,
        /// Deterministic keys; only accepted with the test profile.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic fixture (registry, genuine, imposters) and model.json.
    Fixture {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll a feature vector. Without --id every record of the file is
    /// enrolled under its label.
    Enroll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        id: Option<String>,
    },
    /// Authenticate a feature vector and print the decision.
    Auth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run a main or worker server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Time authentication across worker counts with local worker processes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long, default_value = "production", value_parser = parse_profile)]
        profile: Profile,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scratch directory; a temporary one is used and removed if absent.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn enroll(config: &Path, features: &Path, id: Option<&str>) -> Result<()> {
    let session = ClientSession::open(&ServiceConfig::load(config)?)?;
    let file = FeatureFile::read(features)?;
    if let Some(id) = id {
        let idx = session.enroll(&session.finalize(file.single()?)?, id)?;
        println!("enrolled {id} at index {idx}");
        return Ok(());
    }
    for (n, r) in file.records.iter().enumerate() {
        let label = r.label.as_deref().ok_or_else(|| Error::Format(format!("record {} has no label; pass --id", n + 1)))?;
        let idx = session.enroll(&session.finalize(&r.values)?, label)?;
        println!("enrolled {label} at index {idx}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { out, profile, seed } => {
            keygen(profile, &out, seed)?;
            println!("wrote keys to {}", out.display());
        }
        Command::Fixture { n, seed, queries, out } => {
            fixture(n, seed, queries, &out)?;
            println!("wrote fixture for {n} users to {}", out.display());
        }
        Command::Enroll { config, features, id } => enroll(&config, &features, id.as_deref())?,
        Command::Auth { config, features, threshold } => {
            let session = ClientSession::open(&ServiceConfig::load(&config)?)?;
            let u = session.features(&features)?;
            println!("{}", session.authenticate(&u, threshold)?);
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            let server = node::start(&cfg)?;
            eprintln!("{:?} listening on {}", cfg.role, server.addr());
            server.join();
        }
        Command::Bench { workers, n, queries, profile, seed, dir } => {
            let scratch = dir.is_none();
            let dir = dir.unwrap_or_else(|| std::env::temp_dir().join(format!("encmatch-bench-{}", std::process::id())));
            let opts = BenchOptions { workers, population: n, queries, profile, seed, exe: std::env::current_exe()?, dir: dir.clone() };
            let report = bench::run(&opts);
            if scratch {
                let _ = std::fs::remove_dir_all(&dir);
            }
            print!("{}", report?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
