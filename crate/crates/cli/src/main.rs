use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::error;

use supportopt::config::{self, Mode, RunConfig};
use supportopt::process::CompositeMode;
use supportopt::{runner, Error};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    Optimize,
    Compare,
}

/// Layer-wise LPBF heat simulation and support structure optimization.
#[derive(Debug, Parser)]
#[command(name = "lpbf-supportopt", version)]
struct Args {
    #[arg(value_enum)]
    mode: ModeArg,
    /// Embedded benchmark: overhang2d or mbb2d.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the stage maps; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// VTK cadence (stages for simulate, iterations for optimize); 0 writes the final state only.
    #[arg(long)]
    vtk_every: Option<usize>,
    /// Upper bound on optimization iterations, overrides the configuration.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Adds the sensitivity field to design snapshots.
    #[arg(long)]
    dump_sensitivity: bool,
    /// Writes the assembled C and K of the last stage.
    #[arg(long)]
    dump_matrices: bool,
    /// Composite field as a sum over layer-restricted stage fields.
    #[arg(long)]
    composite_sum: bool,
}

fn load(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => config::preset(name)?,
        (None, Some(path)) => config::parse_config(path)?,
        (None, None) => config::preset("overhang2d")?,
    };
    cfg.mode = match args.mode {
        ModeArg::Simulate => Mode::Simulate,
        ModeArg::Optimize => Mode::Optimize,
        ModeArg::Compare => Mode::Compare,
    };
    if let Some(out) = &args.out {
        cfg.output.directory = out.clone();
    }
    if let Some(k) = args.vtk_every {
        cfg.output.vtk_every = k;
    }
    if let Some(n) = args.max_iters {
        cfg.optimization.max_iters = n;
    }
    cfg.output.dump_sensitivity |= args.dump_sensitivity;
    cfg.output.dump_matrices |= args.dump_matrices;
    if args.composite_sum {
        cfg.output.composite_mode = CompositeMode::Sum;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), Error> {
    let cfg = load(args)?;
    match cfg.mode {
        Mode::Simulate => {
            let out = runner::simulate(&cfg, None)?;
            println!("F = {:.6e}", out.objective);
            println!("wrote {} files to {}", out.files.len(), cfg.output.directory.display());
        }
        Mode::Optimize => {
            let result = runner::optimize(&cfg)?;
            let last = result.records.last().expect("at least one iteration");
            println!(
                "{} after {} iterations: F = {:.6e}, volume fraction = {:.4}",
                if result.converged { "converged" } else { "not converged" },
                last.iter,
                last.objective,
                last.volume_fraction
            );
        }
        Mode::Compare => {
            let cmp = runner::compare(&cfg)?;
            print!("{}", cmp.report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
