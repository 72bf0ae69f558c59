//! Loading, solving and certificate assembly shared by the subcommands.

use std::fmt;
use std::path::Path;

use pmkt_core::demand::Market;
use pmkt_core::equilibrium::{solve, verify, EquilibriumCertificate, SolverConfig};
use pmkt_core::model::{endowment_violations, personalized_prices, structural_violations, Num};
use pmkt_core::pipeline::{prepare, PrepareOptions};
use pmkt_core::scalar::q_to_f64;
use pmkt_core::structured::bads_primal;

use crate::files::{parse_input, BadsSection, CertificateFile, Input, Loaded, Sparse, CERTIFICATE_FORMAT};

/// Failures mapped onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input.
    Invalid(String),
    /// The search ended without an equilibrium.
    NotConverged,
    /// A certificate does not pass verification.
    Rejected(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::NotConverged => 2,
            Failure::Rejected(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "error: {m}"),
            Failure::NotConverged => write!(f, "no equilibrium found within the restart budget"),
            Failure::Rejected(m) => write!(f, "certificate rejected: {m}"),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

/// Reads an instance or preprocessed file, preparing and validating as needed.
/// Options only apply to plain instances; preprocessed files carry their own.
pub fn load(path: &Path, opts: &PrepareOptions) -> Result<Loaded, Failure> {
    let text = read_text(path)?;
    let at = |m: String| Failure::Invalid(format!("{}: {m}", path.display()));
    match parse_input(&text).map_err(at)? {
        Input::Prepared(l) => Ok(*l),
        Input::Instance(inst) => {
            let v = structural_violations(&inst);
            if !v.is_empty() {
                return Err(at(v.join("; ")));
            }
            let prepared = prepare(&inst, opts).map_err(|e| at(e.to_string()))?;
            let v = endowment_violations(&inst, &prepared);
            if !v.is_empty() {
                return Err(at(v.join("; ")));
            }
            Ok(Loaded { original: inst, prepared, options: opts.clone() })
        }
    }
}

pub fn market(loaded: &Loaded) -> Result<Market, Failure> {
    Market::new(&loaded.prepared.instance, &loaded.prepared.system).map_err(|e| Failure::Invalid(e.to_string()))
}

/// Wraps a solver or verifier result with the data needed to reproduce and
/// interpret it.
pub fn certificate(loaded: &Loaded, m: &Market, cfg: &SolverConfig, eq: EquilibriumCertificate) -> CertificateFile {
    let prep = &loaded.prepared;
    let l = prep.system.n_objects;
    let personal = personalized_prices(&prep.system, &eq.prices).unwrap_or_default();
    let bads = prep.bads.as_ref().map(|d| {
        let primal = bads_primal(&eq.assignment);
        let shortfall = d
            .floors
            .iter()
            .enumerate()
            .map(|(o, q)| q_to_f64(q) - primal.iter().map(|r| r[o]).sum::<f64>())
            .fold(0.0, f64::max);
        BadsSection {
            objects: loaded.original.objects.clone(),
            primal_assignment: primal,
            floors: d.floors.iter().cloned().map(Num).collect(),
            floor_violation: shortfall,
        }
    });
    CertificateFile {
        format: CERTIFICATE_FORMAT.into(),
        constraint_kind: loaded.original.constraints.kind().into(),
        agents: prep.instance.agents.clone(),
        objects: prep.instance.objects.clone(),
        config: cfg.clone(),
        prepare: (&loaded.options).into(),
        utility_scale: m.utility_scale.clone(),
        priced_constraints: prep.system.priced.iter().map(|c| Sparse::of(c, l)).collect(),
        personalized_prices: personal,
        equilibrium: eq,
        bads,
    }
}

pub fn run_solve(loaded: &Loaded, cfg: &SolverConfig) -> Result<CertificateFile, Failure> {
    let m = market(loaded)?;
    let eq = solve(&m, &loaded.prepared.feasible, cfg).map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok(certificate(loaded, &m, cfg, eq))
}

/// Recomputes every condition for claimed prices and assignment.
pub fn run_verify(
    loaded: &Loaded,
    prices: &[f64],
    assignment: &[Vec<f64>],
    alpha: Option<f64>,
    cfg: &SolverConfig,
) -> Result<CertificateFile, Failure> {
    let m = market(loaded)?;
    let m = match alpha {
        Some(a) => m.with_alpha(a),
        None => m,
    };
    let x = assignment.to_vec();
    let eq = verify(&m, &loaded.prepared.feasible, prices, &x, cfg.tol).map_err(|e| Failure::Invalid(e.to_string()))?;
    Ok(certificate(loaded, &m, cfg, eq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Invalid(String::new()).code(), 1);
        assert_eq!(Failure::NotConverged.code(), 2);
        assert_eq!(Failure::Rejected(String::new()).code(), 3);
    }

    #[test]
    fn load_prefixes_errors_with_the_path() {
        let e = load(Path::new("no/such/file.json"), &PrepareOptions::default()).err().unwrap();
        assert!(e.to_string().contains("no/such/file.json"), "{e}");
    }
}
