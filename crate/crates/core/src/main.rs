use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saloha::experiment::{
    load_syntheses, run_experiment, simulate_all, synthesize_all, write_csv, write_synthesis, ExperimentSpec,
    RunOptions,
};
use saloha::Error;

#[derive(Parser)]
#[command(name = "saloha", version, about = "Threshold and power control for slotted ALOHA over Markov fading channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline synthesis only: write policy tables and convergence logs.
    Synth(Common),
    /// Simulate previously synthesized tables and write the metrics CSV.
    Simulate(Common),
    /// Synthesize, then simulate.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    spec: PathBuf,
    /// Added to every seed in the spec.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "SALOHA_JOBS")]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentSpec, RunOptions), Error> {
        let spec = ExperimentSpec::load(&self.spec).map_err(|e| Error::stage("spec", e))?;
        let mut opts = RunOptions {
            seed_offset: self.seed_offset,
            ..RunOptions::default()
        };
        if let Some(j) = self.jobs {
            opts.jobs = j.max(1);
        }
        Ok((spec, opts))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(c) => {
            let (spec, opts) = c.load()?;
            let s = synthesize_all(&spec, &opts)?;
            write_synthesis(&spec, &s)?;
            eprintln!("wrote {} policy tables under {}", s.len(), spec.output.dir.join("tables").display());
        }
        Command::Simulate(c) => {
            let (spec, opts) = c.load()?;
            let s = load_syntheses(&spec)?;
            let groups = simulate_all(&spec, &s, &opts)?;
            let path = write_csv(&spec, &groups)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Run(c) => {
            let (spec, opts) = c.load()?;
            run_experiment(&spec, &opts)?;
            eprintln!("wrote {}", spec.csv_path().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
