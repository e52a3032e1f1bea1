use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecopanel_cli::config::RunConfig;
use ecopanel_cli::fixture::make_fixture;
use ecopanel_cli::pipeline;
use ecopanel_core::error::Error;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 estimation error.
#[derive(Parser)]
#[command(name = "ecopanel", version, about = "Corpus, carbon, and panel estimation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the attention index for the configured corpus.
    Index {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Index variant override: percent or count.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run the carbon accounting chain on the configured energy ledger.
    Carbon {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic fixture tree with a ready-to-run config file.
    Fixture {
        /// Directory to create the fixture in.
        #[arg(long)]
        out: PathBuf,
        /// Seed for the planted data-generating process.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the model suite on a pre-assembled panel file.
    Estimate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for seeded models.
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap replication override for threshold models.
        #[arg(long)]
        reps: Option<usize>,
        /// Grid-trim override for threshold models.
        #[arg(long)]
        trim: Option<f64>,
        /// Standard-error flavor override: cluster or hc1.
        #[arg(long)]
        se: Option<String>,
    },
    /// Full pipeline: index, carbon, panel assembly, model suite, table.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for seeded models.
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap replication override for threshold models.
        #[arg(long)]
        reps: Option<usize>,
        /// Grid-trim override for threshold models.
        #[arg(long)]
        trim: Option<f64>,
        /// Standard-error flavor override: cluster or hc1.
        #[arg(long)]
        se: Option<String>,
        /// Index variant override: percent or count.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Re-render table.txt from an existing output directory.
    Render {
        /// Config whose out_dir should be rendered.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Default)]
struct Overrides<'a> {
    out: Option<&'a PathBuf>,
    seed: Option<u64>,
    reps: Option<usize>,
    trim: Option<f64>,
    se: Option<&'a String>,
    variant: Option<&'a String>,
}

fn apply_overrides(config: &mut RunConfig, o: Overrides<'_>) {
    if let Some(out) = o.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(v) = o.variant {
        if let Some(c) = &mut config.corpus {
            c.variant = v.clone();
        }
    }
    if let Some(se) = o.se {
        if let Some(p) = &mut config.panel {
            p.se = se.clone();
        }
        for m in &mut config.models {
            m.se = Some(se.clone());
        }
    }
    for m in &mut config.models {
        if m.kind == "threshold" {
            if let Some(reps) = o.reps {
                m.reps = Some(reps);
            }
            if let Some(trim) = o.trim {
                m.trim = Some(trim);
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invalid(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Estimation(_) => 4,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Invalid(_) => "invalid",
        Error::Data(_) => "data",
        Error::Io { .. } => "io",
        Error::Estimation(_) => "estimation",
    }
}

/// Config-stage failure: report and exit 2, writing nothing.
fn fail_config(e: &Error) -> u8 {
    eprintln!("error: {e}");
    2
}

/// Mid-run failure: leave a machine-readable report next to whatever
/// partial outputs exist, then exit with the mapped code.
fn fail_run(config: &RunConfig, e: &Error) -> u8 {
    let code = exit_code(e);
    let report = serde_json::json!({
        "exit_code": code,
        "kind": error_kind(e),
        "message": e.to_string(),
    });
    if fs::create_dir_all(&config.out_dir).is_ok() {
        let _ = fs::write(
            config.out_dir.join("error.json"),
            serde_json::to_string_pretty(&report).unwrap_or_default(),
        );
    }
    eprintln!("error: {e}");
    code
}

fn load_validated(path: &PathBuf, o: Overrides<'_>) -> Result<RunConfig, u8> {
    let mut config = RunConfig::load(path).map_err(|e| fail_config(&e))?;
    apply_overrides(&mut config, o);
    config.validate().map_err(|e| fail_config(&e))?;
    Ok(config)
}

fn execute(command: Command) -> u8 {
    match command {
        Command::Fixture { out, seed } => match make_fixture(&out, seed) {
            Ok(report) => {
                println!("fixture written to {}", report.dir.display());
                println!("run it with: ecopanel run --config {}", report.config.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Index { config, out, variant } => {
            let o = Overrides { out: out.as_ref(), variant: variant.as_ref(), ..Default::default() };
            let config = match load_validated(&config, o) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match pipeline::run_index(&config) {
                Ok(indices) => {
                    println!("indexed {} documents into {}", indices.len(), config.out_dir.display());
                    0
                }
                Err(e) => fail_run(&config, &e),
            }
        }
        Command::Carbon { config, out } => {
            let o = Overrides { out: out.as_ref(), ..Default::default() };
            let config = match load_validated(&config, o) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match pipeline::run_carbon(&config) {
                Ok(results) => {
                    println!("accounted {} region-years into {}", results.len(), config.out_dir.display());
                    0
                }
                Err(e) => fail_run(&config, &e),
            }
        }
        Command::Estimate { config, out, seed, reps, trim, se } => {
            let o = Overrides {
                out: out.as_ref(),
                seed,
                reps,
                trim,
                se: se.as_ref(),
                ..Default::default()
            };
            let config = match load_validated(&config, o) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match pipeline::execute_estimate(&config) {
                Ok(()) => {
                    println!("model outputs in {}", config.out_dir.display());
                    0
                }
                Err(e) => fail_run(&config, &e),
            }
        }
        Command::Run { config, out, seed, reps, trim, se, variant } => {
            let o = Overrides {
                out: out.as_ref(),
                seed,
                reps,
                trim,
                se: se.as_ref(),
                variant: variant.as_ref(),
            };
            let config = match load_validated(&config, o) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match pipeline::execute_run(&config) {
                Ok(()) => {
                    println!("pipeline outputs in {}", config.out_dir.display());
                    0
                }
                Err(e) => fail_run(&config, &e),
            }
        }
        Command::Render { config, out } => {
            let dir = match (out, config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => match RunConfig::load(&path) {
                    Ok(c) => c.out_dir,
                    Err(e) => return fail_config(&e),
                },
                (None, None) => {
                    eprintln!("error: render needs --out or --config");
                    return 2;
                }
            };
            match pipeline::render_from_dir(&dir) {
                Ok(text) => {
                    print!("{text}");
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(execute(cli.command))
}
