use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cocycle_lab::run::{config_error, output_dir};
use cocycle_lab::{run_subcommand, ExperimentConfig, Overrides, Subcommand};

#[derive(Parser)]
#[command(name = "cocycle-lab", version, about = "Reproducible experiments on products of random matrices")]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides { seed: cli.seed, threads: cli.threads, output_dir: cli.out };
    let result = ExperimentConfig::from_toml_with(&text, &overrides)
        .map_err(config_error)
        .and_then(|cfg| run_subcommand(cli.subcommand, &cfg).map(|r| (cfg, r)));
    match result {
        Ok((cfg, record)) => {
            let dir = output_dir(&cfg, cli.subcommand);
            println!("{} [config {}] -> {}", cli.subcommand.name(), &record.config_hash[..12], dir.display());
            for r in &record.records {
                let se = r.stderr.map(|s| format!(" ± {s:.3e}")).unwrap_or_default();
                let at = match (r.y, r.n) {
                    (Some(y), Some(n)) => format!(" (y = {y}, n = {n})"),
                    (None, Some(n)) => format!(" (n = {n})"),
                    (Some(y), None) => format!(" (y = {y})"),
                    (None, None) => String::new(),
                };
                println!("  {}{at}: {:.6e}{se}", r.name, r.estimate);
            }
            if record.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &record.failures {
                    eprintln!("diagnostic failure [config {}]: {f}", record.config_hash);
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
