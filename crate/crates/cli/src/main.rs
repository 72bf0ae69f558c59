mod corpus;
mod files;
mod report;
mod session;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmkt_core::equilibrium::SolverConfig;
use pmkt_core::pipeline::PrepareOptions;

use crate::files::{parse_claim, to_pretty, write_prepared};
use crate::session::{load, market, read_text, run_solve, run_verify, Failure};

/// Pseudo-market equilibria for assignment problems with constraints.
///
/// Exit status: 0 success, 1 invalid input, 2 no equilibrium found,
/// 3 certificate rejected.
#[derive(Parser)]
#[command(name = "pmkt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive and classify the constraint system; write it for later solves.
    Preprocess {
        input: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Search for equilibrium prices and write a certificate.
    Solve {
        input: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-check the prices and assignment claimed by a certificate.
    Verify {
        input: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
        /// Residual tolerance; defaults to the one recorded in the certificate.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print a readable summary with efficiency and envy diagnostics.
    Report {
        input: PathBuf,
        /// Certificate to report on; solves afresh when omitted.
        #[arg(long)]
        cert: Option<PathBuf>,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve the golden corpus and diff against the stored certificates.
    Corpus {
        /// Directory holding manifest.json.
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus"))]
        dir: PathBuf,
        /// Also write every produced certificate under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite the golden certificates instead of comparing.
        #[arg(long)]
        bless: bool,
    },
}

#[derive(Args)]
struct PrepArgs {
    /// Use every roommate pair family instead of the odd-set subfamily.
    #[arg(long)]
    full_families: bool,
}

impl PrepArgs {
    fn options(&self) -> PrepareOptions {
        PrepareOptions { full_families: self.full_families.then_some(true), ..PrepareOptions::default() }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Income slack α in (0, 1]; overrides the instance.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Number of price starts.
    #[arg(long)]
    starts: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            alpha: self.alpha,
            seed: self.seed,
            tol: self.tol.unwrap_or(d.tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            restarts: self.starts.unwrap_or(d.restarts),
            ..d
        }
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Preprocess { input, prep, output } => {
            let loaded = load(&input, &prep.options())?;
            emit(output.as_deref(), &write_prepared(&loaded.original, &loaded.prepared, &loaded.options))?;
            let sys = &loaded.prepared.system;
            eprintln!(
                "{} priced, {} individual constraints",
                sys.priced.len(),
                sys.individual.iter().map(Vec::len).sum::<usize>()
            );
            Ok(0)
        }
        Command::Solve { input, prep, solver, output } => {
            let loaded = load(&input, &prep.options())?;
            let cert = run_solve(&loaded, &solver.config())?;
            emit(output.as_deref(), &to_pretty(&cert))?;
            let eq = &cert.equilibrium;
            eprintln!("{} via {} (score {:.3e})", if eq.converged { "converged" } else { "not converged" }, eq.method, eq.score());
            if eq.converged {
                Ok(0)
            } else {
                Err(Failure::NotConverged)
            }
        }
        Command::Verify { input, cert, prep, tol, output } => {
            let loaded = load(&input, &prep.options())?;
            let claim = parse_claim(&read_text(&cert)?).map_err(|m| Failure::Invalid(format!("{}: {m}", cert.display())))?;
            let mut cfg = claim.config.unwrap_or_default();
            if let Some(t) = tol.or(claim.equilibrium.tolerance) {
                cfg.tol = t;
            }
            let alpha = claim.equilibrium.alpha.or(cfg.alpha);
            let checked = run_verify(&loaded, &claim.equilibrium.prices, &claim.equilibrium.assignment, alpha, &cfg)?;
            emit(output.as_deref(), &to_pretty(&checked))?;
            let eq = &checked.equilibrium;
            if eq.converged {
                eprintln!("certificate verified (score {:.3e})", eq.score());
                Ok(0)
            } else {
                Err(Failure::Rejected(format!(
                    "demand {:.3e}, slackness {:.3e}, feasibility {:.3e}, member {}",
                    eq.max_demand_residual, eq.cs_residual, eq.feasibility_violation, eq.membership.member
                )))
            }
        }
        Command::Report { input, cert, prep, solver, output } => {
            let loaded = load(&input, &prep.options())?;
            let file = match cert {
                Some(path) => {
                    let claim =
                        parse_claim(&read_text(&path)?).map_err(|m| Failure::Invalid(format!("{}: {m}", path.display())))?;
                    let mut cfg = claim.config.unwrap_or_default();
                    if let Some(t) = claim.equilibrium.tolerance {
                        cfg.tol = t;
                    }
                    let alpha = claim.equilibrium.alpha.or(cfg.alpha);
                    run_verify(&loaded, &claim.equilibrium.prices, &claim.equilibrium.assignment, alpha, &cfg)?
                }
                None => run_solve(&loaded, &solver.config())?,
            };
            let m = market(&loaded)?.with_alpha(file.equilibrium.alpha);
            emit(output.as_deref(), &report::render(&loaded, &m, &file))?;
            if file.equilibrium.converged {
                Ok(0)
            } else {
                Err(Failure::Rejected("the reported point is not an equilibrium".into()))
            }
        }
        Command::Corpus { dir, out, bless } => corpus::run(&corpus::CorpusOptions { dir, out, bless }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
