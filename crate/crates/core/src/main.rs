use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qdent::pipeline::{self, parse_grid, resolve_out_dir, StreamFormat};
use qdent::{Error, Result};

#[derive(Parser)]
#[command(name = "qdent", version, about = "Entangled-photon source simulation and analysis")]
struct Cli {
    /// Output directory (falls back to $QDENT_OUT_DIR, then ./qdent-out).
    #[arg(long, global = true, env = pipeline::ENV_OUT_DIR)]
    out: Option<PathBuf>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// FEF against FSS: analytic and simulated tomography, raw and g²-corrected.
    FefCurve {
        #[command(flatten)]
        cfg: ConfigArg,
        /// FSS values in μeV: `start:stop:step` or a comma list.
        #[arg(long)]
        grid: String,
        /// Monte Carlo runs per point for error bars (0 disables).
        #[arg(long, default_value_t = 0)]
        runs: usize,
    },
    /// Maximum-likelihood reconstruction of a 36-row count table.
    Tomography {
        /// Count table CSV.
        counts: PathBuf,
        /// Optional config supplying [g2] for the corrected metrics.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        runs: usize,
    },
    /// Simulated detector clicks.
    Stream {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Seconds of simulated acquisition.
        #[arg(long, default_value_t = 0.01)]
        duration: f64,
        #[arg(long, value_enum, default_value = "binary")]
        format: FormatArg,
    },
    /// HBT histogram and g²(0) between channels 0 and 1.
    Hbt {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 0.1)]
        duration: f64,
        /// Analyse a recorded binary stream instead of simulating one.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Hong–Ou–Mandel histograms, visibility and indistinguishability.
    Hom {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
    },
    /// Lifetime fit of a synthesized or recorded decay trace.
    Lifetime {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Recorded trace CSV (time_ns, counts).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Piezo strain tuning.
    Strain {
        #[command(subcommand)]
        action: StrainCommand,
    },
    /// Quantum-dot localization against the marker grid.
    Locate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Recorded frame (16-bit PGM) with its JSON sidecar.
        #[arg(long, requires = "sidecar")]
        image: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StrainCommand {
    /// Fields that cancel the fine structure splitting.
    FindNull {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// FSS map over an e14 × e25 grid (kV/cm).
    Sweep {
        #[command(flatten)]
        cfg: ConfigArg,
        /// e14 values: `start:stop:step` or a comma list.
        #[arg(long)]
        grid: String,
        /// e25 values; defaults to the e14 grid.
        #[arg(long)]
        grid_e25: Option<String>,
    },
    /// Synthetic polarization scan and sinusoid fit.
    Scan {
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = resolve_out_dir(cli.out.as_deref());
    let seed = cli.seed;
    match cli.command {
        Command::FefCurve { cfg, grid, runs } => {
            let grid = parse_grid(&grid)?;
            let s = pipeline::cmd_fef_curve(&cfg.config, &grid, runs, seed, &out)?;
            for r in &s.rows {
                println!("{:>8.3}  {:.4}  {:.4}  {:.4}  {:.4}", r.s_ueV, r.fef_analytic_raw, r.fef_analytic_corrected, r.fef_sim_raw, r.fef_sim_corrected);
            }
        }
        Command::Tomography { counts, config, runs } => {
            let r = pipeline::cmd_tomography(&counts, config.as_deref(), runs, seed, &out)?;
            print(&r.metrics)?;
        }
        Command::Stream { cfg, duration, format } => {
            let format = match format {
                FormatArg::Binary => StreamFormat::Binary,
                FormatArg::Csv => StreamFormat::Csv,
            };
            print(&pipeline::cmd_stream(&cfg.config, duration, seed, format, &out)?)?;
        }
        Command::Hbt { cfg, duration, stream } => {
            print(&pipeline::cmd_hbt(&cfg.config, stream.as_deref(), duration, seed, &out)?)?;
        }
        Command::Hom { cfg, duration } => print(&pipeline::cmd_hom(&cfg.config, duration, seed, &out)?)?,
        Command::Lifetime { cfg, trace } => print(&pipeline::cmd_lifetime(&cfg.config, trace.as_deref(), seed, &out)?)?,
        Command::Strain { action } => match action {
            StrainCommand::FindNull { cfg } => print(&pipeline::cmd_strain_null(&cfg.config, &out)?)?,
            StrainCommand::Sweep { cfg, grid, grid_e25 } => {
                let e14 = parse_grid(&grid)?;
                let e25 = match grid_e25 {
                    Some(g) => parse_grid(&g)?,
                    None => e14.clone(),
                };
                print(&pipeline::cmd_strain_sweep(&cfg.config, &e14, &e25, &out)?)?;
            }
            StrainCommand::Scan { cfg } => print(&pipeline::cmd_strain_scan(&cfg.config, seed, &out)?)?,
        },
        Command::Locate { cfg, image, sidecar } => {
            let image = image.as_deref().zip(sidecar.as_deref());
            let r = pipeline::cmd_locate(&cfg.config, image, seed, &out)?;
            match &r.repeatability {
                Some(rep) => {
                    println!("frames {}  spots {}", rep.frames, rep.spots.len());
                    println!("mode std {:.2} nm  median std {:.2} nm", rep.mode_std_nm, rep.median_std_nm);
                    println!("fraction below 15 nm {:.3}", rep.fraction_below(15.0));
                }
                None => println!("spots {}", r.single_frame.spots.len()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
