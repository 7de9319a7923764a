use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qep_cli::{commands, CliError, Experiment, ExperimentConfig, FieldError};

/// Equilibrium propagation experiments on classical and quantum models.
#[derive(Parser)]
#[command(name = "qep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `run.output`, then `runs/<model>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `estimator.shots`.
    #[arg(long)]
    shots: Option<usize>,
    /// Overrides `estimator.beta`.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.ndjson and summary.json.
    Train(Common),
    /// Compare the gradient estimator with a finite-difference oracle.
    Gradcheck(Common),
    /// List the lowest levels of the free Hamiltonian.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Sample a commuting family of observables, e.g. `Z0` or `Z0Z1,X0X1`.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        observable: String,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QEP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(vec![FieldError::new("QEP_THREADS", format!("expected a positive integer, got {v:?}"))]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(vec![FieldError::new("QEP_THREADS", e.to_string())]))
}

fn load(c: &Common) -> Result<(Experiment, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.run.seed = seed;
    }
    if let Some(shots) = c.shots {
        cfg.estimator.shots = shots;
    }
    if let Some(beta) = c.beta {
        cfg.estimator.beta = beta;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.run.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(cfg.model.kind()));
    Ok((Experiment::build(cfg)?, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train(c) => {
            let (exp, out) = load(&c)?;
            let s = commands::train(&exp, &out)?;
            println!(
                "epochs {}  cost {:.6} -> {:.6}  shots {}  ({})",
                s.epochs_completed,
                s.initial_cost.unwrap_or(f64::NAN),
                s.final_cost.unwrap_or(f64::NAN),
                s.total_shots,
                out.display()
            );
        }
        Command::Gradcheck(c) => {
            let (exp, out) = load(&c)?;
            let r = commands::gradcheck(&exp, &out)?;
            println!("{:<12} {:>14} {:>14} {:>11} {:>11}", "weight", "estimate", "oracle", "abs err", "rel err");
            for row in &r.rows {
                println!(
                    "{:<12} {:>14.6e} {:>14.6e} {:>11.3e} {:>11.3e}",
                    row.name, row.estimate, row.oracle, row.abs_error, row.rel_error
                );
            }
            println!("beta halving (exact estimator):");
            for q in &r.ratios {
                let ratio = q.ratio.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!("  {:<10} err(beta) {:.3e}  err(beta/2) {:.3e}  ratio {ratio}", q.mode, q.error, q.half_beta_error);
            }
            if let Some(e) = &r.energy_gradient {
                println!("energy gradient: max rel err {:.3e} (tolerance {:.0e})", e.max_rel_error, e.tolerance);
            }
            println!("{}", if r.passed { "PASS" } else { "FAIL" });
            if !r.passed {
                return Err(CliError::Tolerance { max_rel_error: r.max_rel_error, tolerance: r.tolerance });
            }
        }
        Command::Spectrum { common, count } => {
            let (exp, out) = load(&common)?;
            let r = commands::spectrum(&exp, count, &out)?;
            for l in &r.levels {
                let gap = l.gap_to_next.map_or(String::new(), |g| format!("  gap {g:.6e}"));
                let flag = if l.degenerate { "  degenerate" } else { "" };
                println!("{:>4} {:>18.10}{gap}{flag}", l.index, l.energy);
            }
        }
        Command::Sample { common, observable } => {
            let (exp, out) = load(&common)?;
            let shots = exp.config.estimator.shots;
            let h = commands::sample(&exp, &observable, shots, &out)?;
            println!("{}  shots {}", h.observables.join(","), h.shots);
            for b in &h.bins {
                println!("  {:?}  count {:>8}  freq {:.5}  born {:.5}", b.outcome, b.count, b.frequency, b.probability);
            }
            println!("total variation {:.5}", h.total_variation);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
