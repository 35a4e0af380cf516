use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sdenkf::harness::output::summary_text;
use sdenkf::harness::selftest::{kernel_checks, transform_checks, Check};
use sdenkf::harness::{emit_results, run_twin_experiment, ExperimentConfig};
use sdenkf::theory::{power_law_error_ratio, standard_checks, TheoryCheck};

#[derive(Parser)]
#[command(
    name = "sdenkf",
    version,
    about = "Spectral diagonal ensemble Kalman filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Lorenz96,
    ShallowWater,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Output stem; files `<stem>.csv`, `<stem>.meta.toml`, `<stem>.timing.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of realizations.
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Check the closed-form covariance error expressions by Monte Carlo.
    VerifyTheory {
        #[arg(long, default_value_t = 20_000)]
        replications: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transform orthogonality and kernel-versus-dense-reference checks.
    Selftest {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a default configuration.
    Config {
        #[arg(value_enum, default_value = "lorenz96")]
        preset: Preset,
    },
}

fn print_checks(checks: &[Check]) -> bool {
    let mut ok = true;
    for c in checks {
        let status = if c.pass() { "PASS" } else { "FAIL" };
        println!("{status}  {:<44} {:>11.3e}  (< {:.0e})", c.name, c.value, c.tolerance);
        ok &= c.pass();
    }
    ok
}

fn print_theory(checks: &[TheoryCheck]) -> bool {
    println!(
        "{:<4}  {:<36} {:>13} {:>13} {:>11} {:>6}",
        "", "quantity", "theory", "monte carlo", "std error", "sigmas"
    );
    for c in checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        let z = if c.std_error > 0.0 {
            format!("{:.2}", (c.empirical - c.theoretical) / c.std_error)
        } else {
            "-".into()
        };
        println!(
            "{status}  {:<36} {:>13.6e} {:>13.6e} {:>11.3e} {:>6}",
            c.quantity, c.theoretical, c.empirical, c.std_error, z
        );
    }
    checks.iter().all(|c| c.pass)
}

fn run(cli: Cli) -> sdenkf::Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            realizations,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(r) = realizations {
                cfg.realizations = r;
            }
            let record = run_twin_experiment(&cfg)?;
            let stem = out.unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            let paths = emit_results(&record, &stem)?;
            print!("{}", summary_text(&record));
            println!("wrote {}", paths.table.display());
            Ok(true)
        }
        Command::VerifyTheory {
            replications,
            seed,
            out,
        } => {
            let checks = standard_checks(replications, seed)?;
            let ok = print_theory(&checks);
            println!();
            println!("diagonal / sample error ratio for lambda_k = k^-alpha (independent of N):");
            for alpha in [1.1, 1.5, 2.0] {
                let row: Vec<String> = [8, 32, 128, 1024]
                    .iter()
                    .map(|&n| power_law_error_ratio(alpha, n, 10).map(|r| format!("n={n}: {r:.4}")))
                    .collect::<sdenkf::Result<_>>()?;
                println!("  alpha = {alpha:<4} {}", row.join("  "));
            }
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path)?;
                for c in &checks {
                    w.serialize(c)?;
                }
                w.flush()?;
            }
            Ok(ok)
        }
        Command::Selftest { instances, seed } => {
            let transforms = print_checks(&transform_checks(seed)?);
            let kernels = print_checks(&kernel_checks(seed, instances)?);
            Ok(transforms && kernels)
        }
        Command::Config { preset } => {
            let cfg = match preset {
                Preset::Lorenz96 => ExperimentConfig::default(),
                Preset::ShallowWater => ExperimentConfig::shallow_water_desk(),
            };
            print!("{}", cfg.to_toml_string()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
