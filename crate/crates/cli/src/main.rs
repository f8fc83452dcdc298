use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use wqed_cli::experiment::{simulate_markov, write_outputs};
use wqed_cli::{compare_series, load_series, run_experiment, run_sweep, RunConfig};

#[derive(Parser)]
#[command(name = "wqed", version, about = "Collective emitter decay in a delayed waveguide")]
struct Cli {
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "WQED_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration (eta = 0 runs the Markovian solver).
    Run {
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Markovian baseline for the configuration's emitters and initial state.
    Markov {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of the configuration's sweep axes.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative N_exc deviation of series A from reference B; exits 1 when
    /// above the tolerance.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        tol: f64,
        /// Only compare gamma*t in [MIN, MAX] (assumes gamma = 1 for the axis).
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        range: Option<Vec<f64>>,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<RunConfig, wqed_cli::CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => load(&config, out).and_then(|cfg| {
            let o = run_experiment(&cfg)?;
            println!(
                "{} steps, cumulative discarded weight {:.3e}, wrote {}",
                o.metadata.n_steps,
                o.metadata.cumulative_discarded,
                cfg.output_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }),
        Command::Markov { config, out } => load(&config, out).and_then(|cfg| {
            let mut o = simulate_markov(&cfg)?;
            write_outputs(&cfg.output_dir, &mut o, cfg.n_emitters)?;
            println!("wrote {}", cfg.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }),
        Command::Sweep { config, out } => load(&config, out).and_then(|cfg| {
            let s = run_sweep(&cfg, cli.threads)?;
            for p in &s.points {
                println!("{}  discarded {:.3e}  {:.1}s", p.name, p.cumulative_discarded, p.wall_time_s);
            }
            match s.max_pairwise_deviation {
                Some(d) => println!("max pairwise relative deviation {d:.3e}"),
                None => println!("single point, no deviation"),
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Compare { a, b, tol, range } => (|| {
            let sa = load_series(&a)?;
            let sb = load_series(&b)?;
            let range = range.map(|r| (r[0], r[1]));
            let d = compare_series(&sa, &sb, range)?;
            let pass = d.max_relative <= tol;
            println!(
                "max relative deviation {:.4e} at t = {}, rms {:.4e} over {} points: {}",
                d.max_relative,
                d.t_at_max,
                d.rms_relative,
                d.points,
                if pass { "within tolerance" } else { "EXCEEDS tolerance" }
            );
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        })(),
    };
    result.unwrap_or_else(|e| {
        error!("{e}");
        ExitCode::from(2)
    })
}
