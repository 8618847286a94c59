use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use ofspi_core::experiment::{
    load_result, run_delta_sweep, run_experiment, verify_result, write_artifacts, ExperimentConfig,
    ExperimentResult,
};
use ofspi_core::SpiError;

#[derive(Parser)]
#[command(
    name = "ofspi",
    version,
    about = "Learn a stabilizing output-feedback gain from input/output data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in power-system experiment.
    Demo(RunArgs),
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Replay the model-based checks over a stored result.
    Verify {
        #[arg(long)]
        result: PathBuf,
        /// Defaults to the configuration embedded in the result.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Output directory.
    #[arg(long, default_value = "ofspi-out")]
    out: PathBuf,
    /// Comma-separated delta values, each run into its own subdirectory.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sweep_delta: Option<Vec<f64>>,
    /// Override the excitation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the model-based verification.
    #[arg(long)]
    no_verify: bool,
}

/// Error carrying the pipeline stage for the diagnostic prefix.
struct Failure {
    stage: &'static str,
    error: anyhow::Error,
}

impl From<SpiError> for Failure {
    fn from(e: SpiError) -> Self {
        Failure {
            stage: e.stage(),
            error: e.into(),
        }
    }
}

fn failure(stage: &'static str) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { stage, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Demo(args) => run(ExperimentConfig::demo(), &args),
        Command::Run { config, args } => ExperimentConfig::load(&config)
            .map_err(|e| Failure {
                stage: e.stage(),
                error: anyhow::Error::from(e).context(format!("reading {}", config.display())),
            })
            .and_then(|cfg| run(cfg, &args)),
        Command::Verify { result, config } => verify(&result, config.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error [{}]: {:#}", f.stage, f.error);
            ExitCode::FAILURE
        }
    }
}

fn run(mut cfg: ExperimentConfig, args: &RunArgs) -> Result<ExitCode, Failure> {
    if let Some(seed) = args.seed {
        cfg.excitation.seed = seed;
    }
    if args.no_verify {
        cfg.verification.enabled = false;
    }
    cfg.validate()?;

    if let Some(deltas) = &args.sweep_delta {
        let entries = run_delta_sweep(&cfg, deltas, &args.out)?;
        for e in &entries {
            println!(
                "delta={} iterations={} c_final={:.6} rho={} -> {}",
                e.delta,
                e.iterations,
                e.c_final,
                e.final_rho.map_or("n/a".into(), |r| format!("{r:.6}")),
                args.out.join(&e.directory).display()
            );
        }
        let ok = entries.iter().all(|e| e.all_pass.unwrap_or(true));
        return Ok(if ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }

    let out = run_experiment(&cfg)?;
    write_artifacts(&out, &args.out)?;
    summarize(&out.result);
    println!("artifacts written to {}", args.out.display());
    let ok = out.result.verification.as_ref().is_none_or(|v| v.all_pass);
    if !ok {
        eprintln!("error [verify]: per-iteration stability certificate failed");
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn summarize(r: &ExperimentResult) {
    println!(
        "open-loop spectral radius: {:.6}",
        r.open_loop.spectral_radius
    );
    println!(
        "rank condition: {}/{} with {} rows",
        r.rank.achieved, r.rank.required, r.rank.rows
    );
    println!("accepted beta: {}", r.accepted_beta);
    println!(
        "terminated after {} iterations with c = {:.6}",
        r.termination.iterations, r.termination.c_final
    );
    println!("gain: {:?}", r.final_gain);
    if let Some(v) = &r.verification {
        println!("closed-loop spectral radius: {:.6}", v.final_rho);
        println!("state-feedback equivalent: {:?}", v.final_state_gain);
        println!("certificate holds at every iteration: {}", v.all_pass);
    }
}

fn verify(result: &Path, config: Option<&Path>) -> Result<ExitCode, Failure> {
    let stored = load_result(result)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("reading {}", result.display()))
        .map_err(failure("input"))?;
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => stored.config.clone(),
    };
    let report = verify_result(&stored, &cfg)?;
    for it in &report.iterations {
        println!(
            "j={:<3} c={:.6} rho={:.6} bound={:.6} {}",
            it.j,
            it.c,
            it.check.rho_actual,
            it.check.rho_bound,
            if it.check.pass { "pass" } else { "FAIL" }
        );
    }
    println!("final closed-loop spectral radius: {:.6}", report.final_rho);
    if report.non_terminated {
        println!("non-terminated run: c_final = {:.6} < 1", report.c_final);
    }
    if report.pass {
        println!("verification passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error [verify]: verification failed (final rho = {:.6}{})",
            report.final_rho,
            if report.non_terminated {
                ", non-terminated run"
            } else {
                ""
            }
        );
        Ok(ExitCode::FAILURE)
    }
}
