use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use compctrl::bench::check::{run_suite, Suite};
use compctrl::bench::config::load_system;
use compctrl::bench::output::emit_outputs;
use compctrl::bench::{run_experiment, ExperimentConfig};
use compctrl::competitive::compute_alpha_star;
use compctrl::dac::competitive_to_dac;
use compctrl::{Error, Result};

/// Competitive and regret-optimal control of linear systems.
#[derive(Parser)]
#[command(name = "compctrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the optimal competitive ratio of a system.
    AlphaStar {
        /// Preset name or TOML file.
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Write the DAC image of the competitive controller.
    DacOfCompetitive {
        #[arg(long)]
        system: String,
        #[arg(long = "horizon-H")]
        horizon_h: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a numerical property suite.
    Check {
        #[arg(long, value_parser = ["bounds", "regret", "tail"])]
        suite: String,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("COMPCTRL_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("COMPCTRL_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed_override()? {
                cfg.seed = seed;
            }
            let report = run_experiment(&cfg)?;
            if report.w_bound_exceeded {
                eprintln!("note: disturbances exceed the declared bound W; bound-based guarantees are advisory");
            }
            for f in &report.failures {
                eprintln!("error: controller {} failed: {}", f.controller, f.message);
            }
            if let Some(a) = report.alpha_star {
                println!("alpha_star {a:.6}");
            }
            for kind in cfg.roster() {
                if let Some(row) = report.final_row(kind) {
                    match row.cum_ratio {
                        Some(r) => println!("{kind} cum_cost {:.6e} ratio {r:.6}", row.cum_cost),
                        None => println!("{kind} cum_cost {:.6e}", row.cum_cost),
                    }
                }
            }
            for path in emit_outputs(&report, &cfg)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(report.exit_code())
        }
        Command::AlphaStar { system, tol } => {
            let sys = load_system(&system)?;
            let sol = compute_alpha_star(&sys, tol)?;
            println!("{:.6}", sol.alpha_star);
            Ok(0)
        }
        Command::DacOfCompetitive { system, horizon_h, out } => {
            let sys = load_system(&system)?;
            let comp = compute_alpha_star(&sys, 1e-4)?;
            let policy = competitive_to_dac(&sys, &comp, horizon_h)?;
            std::fs::write(&out, policy.to_text())?;
            eprintln!("wrote {} (H = {horizon_h}, alpha_star = {:.6})", out.display(), comp.alpha_star);
            Ok(0)
        }
        Command::Check { suite } => {
            let lines = run_suite(suite.parse::<Suite>()?)?;
            for line in &lines {
                println!("{line}");
            }
            Ok(if lines.iter().all(|l| l.passed) { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
