use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sos_tools::commands::{self, CALIBRATION_DIR, CHANNELS_DIR, MODEL_FILE};
use sos_tools::config::PipelineConfig;
use sos_tools::ToolError;

/// Mean speed-of-sound estimation and local SoS tomography on simulated
/// diverging-wave data.
#[derive(Debug, Parser)]
#[command(name = "sos", version)]
struct Cli {
    /// TOML configuration (defaults are used for anything not given).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` of the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Coarse sweep and grids for CI-scale runs.
    #[arg(long, global = true)]
    quick: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate channel data for every transmit of the configured pairs.
    Simulate,
    /// Sweep the BF-SoS offset on a homogeneous phantom and fit the slope model.
    Calibrate {
        /// Polynomial degree (1, 3 or 5).
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Estimate the mean SoS of simulated channel data.
    Estimate {
        /// Channel directory [default: <out>/channels].
        #[arg(long, value_name = "DIR")]
        channels: Option<PathBuf>,
        /// Calibration model [default: calibration.model, else <out>/calibration/model.toml].
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Assumed SoS in m/s [default: c_bf of the configuration].
        #[arg(long, value_name = "M_PER_S")]
        c_bf: Option<f64>,
    },
    /// Reconstruct the local SoS map at an assumed SoS.
    Reconstruct {
        #[arg(long, value_name = "DIR")]
        channels: Option<PathBuf>,
        #[arg(long, value_name = "M_PER_S")]
        c_bf: Option<f64>,
    },
    /// Run the before/after correction study on the phantom set.
    Experiment,
    /// Consolidate a run directory into tables and images.
    Report {
        /// Run directory [default: <out>].
        run: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ToolError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.quick {
        cfg = cfg.quick();
    }
    if let Command::Calibrate { degree: Some(d) } = cli.command {
        cfg.calibration.degree = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ToolError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    let channels = |given: &Option<PathBuf>| given.clone().unwrap_or_else(|| out.join(CHANNELS_DIR));

    match &cli.command {
        Command::Simulate => {
            let m = commands::cmd_simulate(&cfg, &out)?;
            println!(
                "simulated {} frames ({} scatterers) into {}",
                m.frames.len(),
                m.num_scatterers,
                out.join(CHANNELS_DIR).display()
            );
        }
        Command::Calibrate { .. } => {
            let run = commands::cmd_calibrate(&cfg, &out)?;
            println!("calibration model (degree {}): {:?}", run.model.degree, run.model.coefficients);
            for s in &run.scores {
                println!("  degree {}: test R² {:.4}, RMSE {:.3} m/s", s.degree, s.r_squared, s.rmse);
            }
            println!("written to {}", out.join(CALIBRATION_DIR).join(MODEL_FILE).display());
        }
        Command::Estimate { channels: ch, model, c_bf } => {
            let model = model
                .clone()
                .or_else(|| cfg.calibration.model.clone())
                .unwrap_or_else(|| out.join(CALIBRATION_DIR).join(MODEL_FILE));
            let c_bf = c_bf.unwrap_or(cfg.c_bf);
            let est = commands::cmd_estimate(&cfg, &channels(ch), &model, c_bf, &out)
                .with_context(|| format!("estimating with model {}", model.display()))?;
            println!("slope        {:.6e} s/rad (R² {:.3}, {:.0}% of ROI tracked)", est.slope, est.fit_r_squared, 100.0 * est.roi_coverage);
            println!("delta_c      {:+.3} m/s", est.delta_c);
            println!("corrected    {:.3} m/s", est.corrected_sos);
        }
        Command::Reconstruct { channels: ch, c_bf } => {
            let c_bf = c_bf.unwrap_or(cfg.c_bf);
            let (recon, row) = commands::cmd_reconstruct(&cfg, &channels(ch), c_bf, &out)?;
            let converged = if row.converged { "converged" } else { "NOT converged" };
            println!("reconstruction at {c_bf} m/s: {} iterations, {converged}", recon.recon.iterations);
            if let Some(rmse) = row.rmse {
                println!("RMSE {rmse:.3} m/s, CNR {}", row.cnr_db.map_or("undefined".into(), |c| format!("{c:.2} dB")));
            }
        }
        Command::Experiment => {
            let summary = commands::cmd_experiment(&cfg, &out)?;
            println!("{:<10} {:>6} {:>12} {:>12} {:>10} {:>14} {:>14}", "scenario", "cases", "rmse_before", "rmse_after", "reduction", "cnr_before_dB", "cnr_after_dB");
            for s in &summary.scenarios {
                println!(
                    "{:<10} {:>6} {:>12.3} {:>12.3} {:>9.1}% {:>14.2} {:>14.2}",
                    s.scenario,
                    s.cases,
                    s.rmse_before,
                    s.rmse_after,
                    100.0 * s.rmse_reduction,
                    s.cnr_before_db,
                    s.cnr_after_db
                );
            }
        }
        Command::Report { run } => {
            let run = run.clone().unwrap_or_else(|| out.clone());
            let summary = commands::cmd_report(&run)?;
            for p in &summary.written {
                println!("wrote {}", p.display());
            }
            for m in &summary.missing {
                eprintln!("missing {m}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ToolError>().map_or(1, ToolError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
