//! Command-line front end: `optimize`, `render`, `interpolate` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 gradcheck failure, 2 config error, 3 IO error,
//! 4 numeric abort.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use handshadow_core::interpolation::MAX_REFINE_ITERATIONS;
use handshadow_core::targets::BUNDLED_SIZE;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "handshadow", version, about = "Pose hand models so their silhouette matches a target shadow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit hand poses to the configured target image.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a params file at the configured camera.
    Render {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transition between two endpoints, each a params file (.toml) or an image.
    Interpolate {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Number of steps; T + 1 frames are written.
        #[arg(short = 'T', long = "frames")]
        frames: usize,
        #[arg(long)]
        refine: bool,
        #[arg(long, default_value_t = MAX_REFINE_ITERATIONS)]
        refine_iterations: usize,
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the bundled target silhouettes as PGM files.
    Targets {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = BUNDLED_SIZE)]
        size: usize,
    },
    /// Compare every analytic gradient stage against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupts the rasterizer adjoint; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Optimize { config } => {
            let rec = commands::cmd_optimize(&config)?;
            println!(
                "best restart {} image term {:.6e} converged {}",
                rec.best_restart, rec.final_report.image_term, rec.converged
            );
        }
        Command::Render { params, config, out } => commands::cmd_render(&params, &config, &out)?,
        Command::Interpolate { a, b, frames, refine, refine_iterations, config } => {
            commands::cmd_interpolate(&commands::InterpolateArgs { a, b, frames, refine, refine_iterations, config })?
        }
        Command::Targets { out, size } => {
            for path in commands::cmd_targets(&out, size)? {
                println!("{}", path.display());
            }
        }
        Command::Gradcheck { seed, inject_fault } => {
            commands::cmd_gradcheck(seed, inject_fault)?;
        }
    }
    Ok(())
}
