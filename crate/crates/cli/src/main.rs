use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use markov_order::comparison::Fault;
use markov_order::scenario::{load_scenario, run_scenario, write_outputs, Overrides, EXIT_INVALID, SCHEMA};
use markov_order::selftest::run_selftest;

/// Certified comparison of two time-inhomogeneous finite Markov chains.
#[derive(Parser)]
#[command(name = "markov-order", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check requested by a scenario file and write the report.
    Run {
        scenario: PathBuf,
        /// Output directory (default: the scenario's "output", else "out").
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        grid_steps: Option<usize>,
        /// Monte Carlo path count.
        #[arg(long)]
        paths: Option<usize>,
        /// Monte Carlo seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-form checks and the randomized soundness corpus.
    Selftest {
        /// Ten-scenario corpus subset.
        #[arg(long)]
        quick: bool,
        /// Flip the generator sign in every condition check (mutation test).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the JSON schema of scenario files.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, out, grid_steps, paths, seed } => {
            run(scenario, Overrides { out, grid_steps, paths, seed })
        }
        Command::Selftest { quick, inject_fault } => {
            match run_selftest(quick, inject_fault.then_some(Fault::FlipGeneratorSign)) {
                Ok(report) => {
                    print!("{}", report.table());
                    report.exit_code
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_INVALID
                }
            }
        }
        Command::Schema => {
            print!("{SCHEMA}");
            0
        }
    };
    ExitCode::from(code as u8)
}

fn run(path: PathBuf, overrides: Overrides) -> i32 {
    let result = load_scenario(&path).and_then(|mut sc| {
        sc.apply(&overrides)?;
        let out = run_scenario(&sc)?;
        let dir = sc.output.clone().unwrap_or_else(|| PathBuf::from("out"));
        write_outputs(&dir, &out.files)?;
        Ok((out, dir))
    });
    match result {
        Ok((out, dir)) => {
            for r in &out.report.comparisons {
                println!(
                    "{:<10} {:<12} t={:<8} {:<12} margin={:+.6} (E f(X)={:.6}, E f(Y)={:.6}){}",
                    r.theorem.name(),
                    r.function,
                    r.t,
                    format!("{:?}", r.verdict),
                    r.oracle_margin,
                    r.expectation_x,
                    r.expectation_y,
                    if r.soundness_violation { "  SOUNDNESS VIOLATION" } else { "" }
                );
            }
            for c in &out.report.classes {
                println!("class {:?} t={} {:?} (propagation holds: {})", c.cone, c.t, c.verdict, c.propagation.holds);
            }
            if let Some(mc) = &out.report.montecarlo {
                for m in &mc.martingale {
                    println!(
                        "martingale {}:{} max|z|={:.3} {}",
                        m.process,
                        m.function,
                        m.result.max_abs_z,
                        if m.result.pass { "pass" } else { "FAIL" }
                    );
                }
                for l in &mc.linking {
                    println!(
                        "linking {} t={} {:?} {}",
                        l.function,
                        l.t,
                        l.kind,
                        if l.pass { "pass" } else { "FAIL" }
                    );
                }
            }
            println!("wrote {} (exit {})", dir.display(), out.exit_code);
            out.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
