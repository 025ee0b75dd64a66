//! `dat run <config.json>` and `dat bench`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dat_cli::{run_bench, run_scenario, BenchOptions, RunOptions};
use dat_core::verify::bench::{format_table, BenchmarkParams};
use dat_core::TruncationMode;

#[derive(Parser)]
#[command(name = "dat", version, about = "Penetration-free displacement truncation: scenarios and benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a JSON scenario and write OBJ frames and metrics.
    Run {
        config: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// isotropic | planar | dap | global_ccd
        #[arg(long)]
        mode: Option<TruncationMode>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-triangle benchmark; defaults are the full-size run.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        meshes: usize,
        #[arg(long, default_value_t = 3000)]
        tris: usize,
        #[arg(long, default_value_t = 100)]
        deforms: usize,
        #[arg(long, default_value_t = 0.01)]
        deform_scale: f64,
        #[arg(long, default_value_t = 2.0)]
        rq_factor: f64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Triangle size as a fraction of the extent.
        #[arg(long, default_value_t = 0.1)]
        tri_size: f64,
        /// Minimum triangle gap in units of the deformation scale.
        #[arg(long, default_value_t = 0.01)]
        margin_factor: f64,
        /// Force (true) or suppress (false) samples.csv.
        #[arg(long)]
        samples: Option<bool>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "out/bench")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DAT_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, frames, mode, workers, out } => {
            match run_scenario(&RunOptions { config, frames, mode, workers, out }) {
                Ok(s) => {
                    println!("{}", s.line());
                    if s.failure.is_some() {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Bench {
            seed,
            meshes,
            tris,
            deforms,
            deform_scale,
            rq_factor,
            gamma,
            tri_size,
            margin_factor,
            samples,
            workers,
            out,
        } => {
            let params = BenchmarkParams {
                seed,
                n_meshes: meshes,
                n_tris: tris,
                n_deforms: deforms,
                deform_scale,
                r_q_factor: rq_factor,
                gamma_r: gamma,
                tri_size,
                margin_factor,
                keep_samples: false,
            };
            if !(deform_scale >= 0.0 && rq_factor > 0.0 && gamma > 0.0 && gamma < 1.0 && tri_size > 0.0) {
                eprintln!("error: need deform-scale ≥ 0, rq-factor > 0, 0 < gamma < 1, tri-size > 0");
                return ExitCode::FAILURE;
            }
            match run_bench(&BenchOptions { params, out, workers, samples }) {
                Ok(stats) => {
                    print!("{}", format_table(&stats));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
