//! Command-line front-end: `run`, `validate`, and `oracle quantile`.

use clap::{Args, Parser, Subcommand};

use mfopt_cli::config::{ExperimentConfig, Preset};
use mfopt_cli::error::Result;
use mfopt_cli::{oracle, runner};

#[derive(Parser)]
#[command(
    name = "mfopt",
    about = "Median-filter threshold-dynamics experiment harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment preset and write its artifacts.
    Run(RunArgs),
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: String,
    },
    /// CI oracles exposing brute-force reference checks.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Preset name: pinning_compare, sharpness, quadratic_demo,
    /// lif_demo, stokes_contraction, stokes_double_pipe, custom.
    #[arg(long)]
    preset: String,
    /// Optional TOML config layered over the preset defaults.
    #[arg(long)]
    config: Option<String>,
    /// Dotted-path overrides, e.g. --set solver.tau=2e-4.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<String>,
    /// Worker thread cap; 1 guarantees bit-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed override for the preset's randomized input.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Check the weighted-quantile rule against a brute-force potential
    /// scan on samples from a JSON file.
    Quantile {
        /// JSON array of {neighbors, weights, t, lambda_tilde?}.
        #[arg(long)]
        samples: String,
        /// Scan step for the brute-force grid.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
}

fn main() {
    if let Err(e) = dispatch() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Validate { config } => {
            // The preset in the file decides which sections are required;
            // default to custom when the file does not name one.
            let text = std::fs::read_to_string(&config).map_err(|e| {
                mfopt_cli::CliError::Config(format!("cannot read `{config}`: {e}"))
            })?;
            let preset = text
                .parse::<toml::Table>()
                .ok()
                .and_then(|t| t.get("preset").cloned())
                .and_then(|v| v.as_str().map(String::from))
                .map(|s| Preset::parse(&s))
                .transpose()?
                .unwrap_or(Preset::Custom);
            ExperimentConfig::resolve(preset, Some(&config), &[])?;
            println!("ok: `{config}` is a valid {} configuration", preset.name());
            Ok(())
        }
        Command::Oracle(OracleCommand::Quantile { samples, step }) => {
            let text = std::fs::read_to_string(&samples).map_err(|e| {
                mfopt_cli::CliError::Config(format!("cannot read `{samples}`: {e}"))
            })?;
            let verdicts = oracle::check_samples_json(&text, step)?;
            let mut failures = 0usize;
            for (i, v) in verdicts.iter().enumerate() {
                if v.ok {
                    println!("sample {i}: ok (selected {}, excess {:e})", v.selected, v.excess);
                } else {
                    failures += 1;
                    println!(
                        "sample {i}: VIOLATION (selected {}, grid best {}, excess {:e})",
                        v.selected, v.best_grid, v.excess
                    );
                }
            }
            if failures > 0 {
                return Err(mfopt_cli::CliError::Config(format!(
                    "{failures} of {} samples violate optimality",
                    verdicts.len()
                )));
            }
            println!("all {} samples optimal", verdicts.len());
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = args.threads {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = &args.threads;

    let preset = Preset::parse(&args.preset)?;
    let mut sets = args.sets.clone();
    if let Some(seed) = args.seed {
        if preset.is_stokes() {
            sets.push(format!("flow.phi0_seed={seed}"));
        } else {
            sets.push(format!("image_gen.seed={seed}"));
        }
    }
    if let Some(out) = &args.out {
        sets.push(format!("output_dir=\"{out}\""));
    }
    let cfg = ExperimentConfig::resolve(preset, args.config.as_deref(), &sets)?;
    let outcome = runner::run_experiment(&cfg)?;
    println!(
        "{}: wrote artifacts to {}",
        preset.name(),
        outcome.out_dir.display()
    );
    Ok(())
}
