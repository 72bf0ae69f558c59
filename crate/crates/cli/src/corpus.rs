//! Golden-corpus runner: solves every listed instance, compares certificates
//! byte for byte with the stored ones, and checks that every mutant is
//! rejected.

use std::path::{Path, PathBuf};

use pmkt_core::equilibrium::{thread_cap, SolverConfig};
use pmkt_core::pipeline::PrepareOptions;
use rayon::prelude::*;
use serde::Deserialize;

use crate::files::to_pretty;
use crate::session::{load, read_text, run_solve, Failure};

#[derive(Debug, Deserialize)]
struct Manifest {
    instances: Vec<Entry>,
    #[serde(default)]
    mutants: Vec<Mutant>,
}

#[derive(Debug, Deserialize)]
struct Entry {
    instance: String,
    golden: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    full_families: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct Mutant {
    instance: String,
    /// Substring the rejection message must contain.
    expect: String,
}

enum Outcome {
    Match { converged: bool },
    Differs,
    Missing,
    Written,
    Failed(String),
}

pub struct CorpusOptions {
    pub dir: PathBuf,
    pub out: Option<PathBuf>,
    pub bless: bool,
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_entry(dir: &Path, e: &Entry, opts: &CorpusOptions) -> Outcome {
    let prep_opts = PrepareOptions { full_families: e.full_families, ..PrepareOptions::default() };
    let loaded = match load(&dir.join(&e.instance), &prep_opts) {
        Ok(l) => l,
        Err(f) => return Outcome::Failed(f.to_string()),
    };
    let cfg = SolverConfig { seed: e.seed, alpha: e.alpha, ..SolverConfig::default() };
    let cert = match run_solve(&loaded, &cfg) {
        Ok(c) => c,
        Err(f) => return Outcome::Failed(f.to_string()),
    };
    let text = to_pretty(&cert);
    if let Some(out) = &opts.out {
        if let Err(m) = write(&out.join(&e.golden), &text) {
            return Outcome::Failed(m);
        }
    }
    let golden = dir.join(&e.golden);
    if opts.bless {
        return match write(&golden, &text) {
            Ok(()) => Outcome::Written,
            Err(m) => Outcome::Failed(m),
        };
    }
    match std::fs::read_to_string(&golden) {
        Ok(stored) if stored == text => Outcome::Match { converged: cert.equilibrium.converged },
        Ok(_) => Outcome::Differs,
        Err(_) => Outcome::Missing,
    }
}

/// Runs the corpus and returns the process exit code.
pub fn run(opts: &CorpusOptions) -> Result<u8, Failure> {
    let manifest_path = opts.dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", manifest_path.display())))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_cap() {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Failure::Invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> =
        pool.install(|| manifest.instances.par_iter().map(|e| run_entry(&opts.dir, e, opts)).collect());

    let (mut invalid, mut differs, mut unconverged) = (false, false, false);
    for (e, o) in manifest.instances.iter().zip(&outcomes) {
        let line = match o {
            Outcome::Match { converged: true } => "ok".to_string(),
            Outcome::Match { converged: false } => {
                unconverged = true;
                "ok (not converged)".to_string()
            }
            Outcome::Differs => {
                differs = true;
                "DIFFERS from golden".to_string()
            }
            Outcome::Missing => {
                differs = true;
                "golden missing".to_string()
            }
            Outcome::Written => "golden written".to_string(),
            Outcome::Failed(m) => {
                invalid = true;
                format!("FAILED: {m}")
            }
        };
        eprintln!("{:<40} {line}", e.golden);
    }
    for mt in &manifest.mutants {
        let line = match load(&opts.dir.join(&mt.instance), &PrepareOptions::default()) {
            Ok(_) => {
                invalid = true;
                "ACCEPTED (expected rejection)".to_string()
            }
            Err(f) if f.to_string().contains(&mt.expect) => "rejected".to_string(),
            Err(f) => {
                invalid = true;
                format!("rejected for the wrong reason: {f}")
            }
        };
        eprintln!("{:<40} {line}", mt.instance);
    }
    Ok(if invalid {
        1
    } else if differs {
        3
    } else if unconverged {
        2
    } else {
        0
    })
}
