//! Command-line driver: run scenarios, refinement studies, and snapshot
//! analysis. Exit codes: 0 ok, 2 configuration error, 3 solver failure,
//! 4 NaN abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lowmach::analysis;
use lowmach::error::Error;
use lowmach::harness::{
    self, convergence_study, read_checkpoint, run_scenario, ScenarioConfig, PRESET_NAMES,
};

#[derive(Parser)]
#[command(name = "lowmach", about = "Low Mach number fluctuating hydrodynamics of binary mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a config file or a named preset.
    Simulate {
        /// Path to a config file, or a preset name (one of: equilibrium,
        /// cavity-2d, square-bubble, water-glycerol, kh-demo).
        config: String,
        /// Shrink to desktop scale (resolution capped at 64^2, horizon
        /// capped at 10^4 steps).
        #[arg(long)]
        desk: bool,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Joint space-time refinement study of a deterministic scenario.
    Converge {
        config: String,
        /// Comma-separated resolutions, factor-2 refined, e.g. 64,128,256.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<usize>,
    },
    /// Time correlations of column-mean concentration from snapshot files.
    Analyze {
        /// Snapshot files, equally spaced in time (shell-expanded glob).
        snapshots: Vec<PathBuf>,
        /// Use only snapshots from the trailing window of this duration
        /// (0 = all).
        #[arg(long, default_value_t = 0.0)]
        window: f64,
        /// Number of correlation lags.
        #[arg(long, default_value_t = 20)]
        lags: usize,
    },
    /// Print the config text of a named preset.
    PrintConfig { preset: String },
}

fn load_config(spec: &str) -> Result<ScenarioConfig, Error> {
    if PRESET_NAMES.contains(&spec) {
        ScenarioConfig::preset(spec)
    } else {
        let text = std::fs::read_to_string(spec)
            .map_err(|e| Error::Config(format!("cannot read `{spec}`: {e}")))?;
        ScenarioConfig::from_text(&text)
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::NanDetected { .. } => 4,
        Error::SolverDiverged { .. } | Error::CflExceeded { .. } => 3,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, desk, seed, output } => {
            let mut cfg = load_config(&config)?;
            if desk {
                cfg.desk_scale();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            let summary = run_scenario(&cfg)?;
            println!(
                "{} finished: {} steps to t = {:.6e}, EOS residual {:.3e}, \
                 rho1 drift {:.3e}, max Stokes iters {}/{} ({:.1} s)",
                summary.scenario,
                summary.steps,
                summary.final_time,
                summary.eos_residual_final,
                summary.rho1_drift_rel,
                summary.max_predictor_iters,
                summary.max_corrector_iters,
                summary.wall_seconds,
            );
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Converge { config, levels } => {
            let cfg = load_config(&config)?;
            if cfg.stochastic {
                return Err(Error::Config(
                    "refinement studies need a deterministic scenario".into(),
                ));
            }
            let table = convergence_study(&cfg, &levels)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Analyze { snapshots, window, lags } => {
            if snapshots.is_empty() {
                return Err(Error::Config("no snapshot files given".into()));
            }
            let mut columns = Vec::new();
            let mut geometry = None;
            for path in &snapshots {
                let (state, _, _) = read_checkpoint(path)?;
                let g = state.rho.grid;
                geometry.get_or_insert((g.lx(), g.dx));
                columns.push((state.time, analysis::vertical_average(&state.concentration())));
            }
            columns.sort_by(|a, b| a.0.total_cmp(&b.0));
            if window > 0.0 {
                let t_end = columns.last().unwrap().0;
                columns.retain(|(t, _)| *t >= t_end - window);
            }
            if columns.len() < 2 {
                return Err(Error::Config("need at least 2 snapshots in the window".into()));
            }
            let dt_snap = columns[1].0 - columns[0].0;
            let series: Vec<Vec<f64>> = columns.into_iter().map(|(_, c)| c).collect();
            let (lx, dx) = geometry.unwrap();
            let corr = analysis::time_correlation(&series, lx, dx, dt_snap, lags)?;
            print!("{}", corr.to_csv());
            Ok(())
        }
        Command::PrintConfig { preset } => {
            print!("{}", harness::ScenarioConfig::preset(&preset)?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
