// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use expbox::experiments::{self, ConfigFile, ExperimentConfig, Overrides, Session};

/// Pilot-wave dynamics in an expanding box: relaxation runs, trajectories, τ(t).
#[derive(Parser)]
#[command(name = "expbox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file, or `preset:<name>` for a built-in preset.
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `run.outputs`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full resolution: D = 32, P = 4e6 unless set in the config.
    #[arg(long)]
    full_scale: bool,
    /// Comma-separated subset of back,forward,tilde.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate h̄, ḡ, f̄ at every sample time.
    Run(Common),
    /// Integrate and dump the configured trajectories.
    Trajectories(Common),
    /// Write the (t, τ) table.
    Tau(Common),
    /// Built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print the preset as TOML.
    Show { name: String },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: c.seed,
        outputs: c.out.clone(),
        full_scale: c.full_scale,
        estimators: c.estimators.clone(),
    };
    let cfg = match c.config.strip_prefix("preset:") {
        Some(name) => {
            let file = ConfigFile { preset: Some(name.to_string()), ..Default::default() };
            ExperimentConfig::resolve(file, &overrides, Path::new("."))
        }
        None => ExperimentConfig::from_file(Path::new(&c.config), &overrides),
    };
    cfg.with_context(|| format!("loading {}", c.config))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let out = experiments::run_experiment(&cfg, &mut Session::new())?;
            for r in &out.reports {
                let show = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                println!(
                    "n={:>2} t={:<8.4} h_back={} h_forward={} g={} f={}",
                    r.n,
                    r.t * cfg.units.time,
                    show(r.h_back()),
                    show(r.h_forward()),
                    show(r.g()),
                    show(r.f())
                );
            }
            for note in &out.manifest.notes {
                println!("{note}");
            }
            for f in &out.manifest.failures {
                eprintln!("failed: {} at n={:?}: {}", f.stage, f.n, f.error);
            }
            println!("wrote {}", cfg.outputs.display());
        }
        Command::Trajectories(c) => {
            let cfg = load(&c)?;
            anyhow::ensure!(!cfg.trajectories.is_empty(), "config has no [[trajectory]] entries");
            for r in experiments::run_trajectories(&cfg)? {
                match (&r.error, r.final_position) {
                    (None, Some(x)) => {
                        print!("{}: final ({:.6}, {:.6}) in box of side {}", r.name, x[0], x[1], r.final_side);
                        if let Some(e) = r.round_trip_error {
                            print!(", round trip off by {e:.3e}");
                        }
                        println!();
                    }
                    (Some(e), _) => eprintln!("{}: {e}", r.name),
                    _ => {}
                }
            }
        }
        Command::Tau(c) => {
            let cfg = load(&c)?;
            let rows = experiments::run_tau_table(&cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.outputs.join("tau.csv").display());
        }
        Command::Presets { action: PresetAction::List } => {
            for (name, what) in experiments::PRESETS {
                println!("{name:<12} {what}");
            }
        }
        Command::Presets { action: PresetAction::Show { name } } => {
            let p = experiments::preset(&name).with_context(|| format!("unknown preset {name:?}"))?;
            print!("{}", expbox::experiments::to_toml(&p)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
