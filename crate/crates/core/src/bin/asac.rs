use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asac::harness::experiment::{default_output_dir, evaluate_saved, load_data, load_models, write_outputs};
use asac::harness::presets::{default_grid, parse_grid};
use asac::harness::{export_csv, reproduce, run_experiment, ExperimentConfig, Table};
use asac::{Error, Result};

#[derive(Parser)]
#[command(
    name = "asac",
    version,
    about = "Active sensing with a jointly trained selector and predictor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key/value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set training.iterations=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train, evaluate on the held-out split and write reports and models.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: output.dir, then $ASAC_OUTPUT_DIR).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Evaluate saved models on the configured data.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding selector.json and predictor.json.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run one of the synthetic benchmark tables.
    Reproduce {
        /// table1, table2 or table3.
        table: String,
        #[arg(long, required = true)]
        seed: u64,
        /// Subset of conditions, e.g. `1,3,5` (table1), `0.2:0.1,0.6:0.5` (table2), `0.1,0.5` (table3).
        #[arg(long)]
        grid: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the rate grid and metrics of a finished run.
    Report {
        /// Output directory of `train`, `evaluate` or `reproduce`.
        dir: PathBuf,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect()
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in parse_overrides(&args.overrides)? {
        cfg.set(&k, &v)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_out(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| default_output_dir(cfg))
}

fn print_summary(dir: &Path) -> Result<()> {
    let rates = dir.join("rates.csv");
    let text = std::fs::read_to_string(&rates).map_err(|e| Error::Io { path: rates, source: e })?;
    print!("{text}");
    let report = dir.join("report.json");
    if let Ok(json) = std::fs::read_to_string(&report) {
        let v: serde_json::Value = serde_json::from_str(&json)?;
        if let Some(m) = v.get("metrics_mean").and_then(|m| m.as_object()) {
            for (k, x) in m {
                println!("{k}: {x}");
            }
        }
        if let Some(s) = v.get("wall_clock_seconds") {
            println!("wall_clock_seconds: {s}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { cfg, out } => {
            let cfg = load_config(&cfg)?;
            if !matches!(cfg.data, asac::harness::DataSource::Synthetic(_)) {
                return Err(Error::Config("generate needs data.source = synthetic".into()));
            }
            let data = load_data(&cfg, cfg.training.seed)?;
            export_csv(&data.episodes, &out)?;
            eprintln!("wrote {} episodes to {}", data.episodes.len(), out.display());
        }
        Command::Train { cfg, out } => {
            let cfg = load_config(&cfg)?;
            let dir = resolve_out(&cfg, out);
            if let Err(e) = run_experiment(&cfg, Some(&dir)) {
                eprintln!("configuration of the failed run:\n{}", cfg.to_text());
                return Err(e);
            }
            print_summary(&dir)?;
        }
        Command::Evaluate { cfg, models, out } => {
            let cfg = load_config(&cfg)?;
            let dir = resolve_out(&cfg, out);
            let (sel, pred) = load_models(&models)?;
            let report = evaluate_saved(&cfg, &sel, &pred)?;
            write_outputs(&dir, &report, &[])?;
            print_summary(&dir)?;
        }
        Command::Reproduce {
            table,
            seed,
            grid,
            overrides,
            out,
        } => {
            let table: Table = table.parse()?;
            let grid = match grid {
                Some(g) => parse_grid(table, &g)?,
                None => default_grid(table),
            };
            let overrides = parse_overrides(&overrides)?;
            let dir = out.unwrap_or_else(|| default_output_dir(&ExperimentConfig::default()).join(table.to_string()));
            reproduce(table, seed, &grid, &overrides, Some(&dir))?;
            print_summary(&dir)?;
        }
        Command::Report { dir } => print_summary(&dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
