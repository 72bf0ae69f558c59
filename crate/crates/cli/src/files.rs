//! On-disk formats: preprocessed systems and equilibrium certificates.

use pmkt_core::equilibrium::{EquilibriumCertificate, SolverConfig};
use pmkt_core::lcs::VPolytope;
use pmkt_core::model::{ConstraintSystem, ConsumptionSet, Instance, LinearConstraint, Num};
use pmkt_core::pipeline::{FeasibleSet, PrepareOptions, Prepared};
use pmkt_core::scalar::Q;
use pmkt_core::structured::bads_dual;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PREPARED_FORMAT: &str = "pmkt-prepared/1";
pub const CERTIFICATE_FORMAT: &str = "pmkt-certificate/1";

/// `Σ a·x[agent, object] ≤ b` listing only the nonzero coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sparse {
    pub terms: Vec<(usize, usize, Num)>,
    pub b: Num,
}

impl Sparse {
    pub fn of(c: &LinearConstraint, l: usize) -> Sparse {
        Sparse { terms: c.support().into_iter().map(|k| (k / l, k % l, Num(c.a[k].clone()))).collect(), b: Num(c.b.clone()) }
    }

    fn dense(&self, n: usize, l: usize) -> Result<LinearConstraint, String> {
        let mut c = LinearConstraint::zero(n * l);
        for (i, o, a) in &self.terms {
            if *i >= n || *o >= l {
                return Err(format!("constraint term ({i}, {o}) outside the {n}x{l} grid"));
            }
            c.a[i * l + o] = a.0.clone();
        }
        c.b = self.b.0.clone();
        Ok(c)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OwnRow {
    a: Vec<Num>,
    b: Num,
}

impl OwnRow {
    fn of((a, b): &(Vec<Q>, Q)) -> OwnRow {
        OwnRow { a: a.iter().cloned().map(Num).collect(), b: Num(b.clone()) }
    }

    fn pair(&self) -> (Vec<Q>, Q) {
        (self.a.iter().map(|v| v.0.clone()).collect(), self.b.0.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct XSet {
    rows: Vec<OwnRow>,
    floors: Vec<OwnRow>,
    forbidden: Vec<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SystemFile {
    forbidden: Sparse,
    individual: Vec<Vec<Sparse>>,
    priced: Vec<Sparse>,
    consumption_sets: Vec<XSet>,
    downward_closed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FeasibleFile {
    Vertices { vertices: Vec<Vec<Num>> },
    Inequalities { le: Vec<Sparse>, ge: Vec<Sparse> },
    LowerContour { rows: Vec<Sparse> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionsFile {
    pub dim_cap: usize,
    pub region_cap: usize,
    pub full_families: Option<bool>,
}

impl From<&PrepareOptions> for OptionsFile {
    fn from(o: &PrepareOptions) -> Self {
        OptionsFile { dim_cap: o.dim_cap, region_cap: o.region_cap, full_families: o.full_families }
    }
}

impl From<&OptionsFile> for PrepareOptions {
    fn from(o: &OptionsFile) -> Self {
        PrepareOptions { dim_cap: o.dim_cap, region_cap: o.region_cap, full_families: o.full_families }
    }
}

/// A preprocessed instance: the original instance plus everything derived
/// from it, so solving skips polytope work.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreparedFile {
    format: String,
    instance: Value,
    options: OptionsFile,
    system: SystemFile,
    feasible: FeasibleFile,
}

/// What an input file turned out to hold.
pub struct Loaded {
    /// The instance as written (before any bads transform).
    pub original: Instance,
    pub prepared: Prepared,
    pub options: PrepareOptions,
}

pub fn write_prepared(original: &Instance, prep: &Prepared, opts: &PrepareOptions) -> String {
    let sys = &prep.system;
    let (n, l) = (sys.n_agents, sys.n_objects);
    let sparse = |v: &[LinearConstraint]| v.iter().map(|c| Sparse::of(c, l)).collect::<Vec<_>>();
    let feasible = match &prep.feasible {
        FeasibleSet::Vertices(v) => FeasibleFile::Vertices {
            vertices: v.vertices.iter().map(|r| r.iter().cloned().map(Num).collect()).collect(),
        },
        FeasibleSet::Inequalities { le, ge } => FeasibleFile::Inequalities { le: sparse(le), ge: sparse(ge) },
        FeasibleSet::LowerContour(rows) => FeasibleFile::LowerContour { rows: sparse(rows) },
    };
    let file = PreparedFile {
        format: PREPARED_FORMAT.into(),
        instance: serde_json::from_str(&original.to_json()).expect("instance JSON is valid"),
        options: opts.into(),
        system: SystemFile {
            forbidden: Sparse::of(&sys.forbidden, l),
            individual: sys.individual.iter().map(|r| sparse(r)).collect(),
            priced: sparse(&sys.priced),
            consumption_sets: sys
                .consumption_sets
                .iter()
                .map(|x| XSet {
                    rows: x.rows.iter().map(OwnRow::of).collect(),
                    floors: x.floors.iter().map(OwnRow::of).collect(),
                    forbidden: x.forbidden.clone(),
                })
                .collect(),
            downward_closed: sys.downward_closed,
        },
        feasible,
    };
    debug_assert_eq!(file.system.consumption_sets.len(), n);
    to_pretty(&file)
}

fn read_prepared(file: PreparedFile) -> Result<Loaded, String> {
    let original = Instance::from_json(&file.instance.to_string()).map_err(|e| e.to_string())?;
    let (instance, bads) = if original.is_bads() {
        let d = bads_dual(&original).map_err(|e| e.to_string())?;
        (d.instance.clone(), Some(d))
    } else {
        (original.clone(), None)
    };
    let (n, l) = (instance.n(), instance.l());
    let dense = |v: &[Sparse]| v.iter().map(|s| s.dense(n, l)).collect::<Result<Vec<_>, _>>();
    let s = &file.system;
    if s.individual.len() != n || s.consumption_sets.len() != n {
        return Err(format!("prepared system must list {n} agents"));
    }
    let system = ConstraintSystem {
        n_agents: n,
        n_objects: l,
        forbidden: s.forbidden.dense(n, l)?,
        individual: s.individual.iter().map(|r| dense(r)).collect::<Result<_, _>>()?,
        priced: dense(&s.priced)?,
        consumption_sets: s
            .consumption_sets
            .iter()
            .map(|x| ConsumptionSet {
                rows: x.rows.iter().map(OwnRow::pair).collect(),
                floors: x.floors.iter().map(OwnRow::pair).collect(),
                forbidden: x.forbidden.clone(),
            })
            .collect(),
        downward_closed: s.downward_closed,
    };
    let feasible = match &file.feasible {
        FeasibleFile::Vertices { vertices } => FeasibleSet::Vertices(VPolytope {
            n_agents: n,
            n_objects: l,
            vertices: vertices.iter().map(|r| r.iter().map(|v| v.0.clone()).collect()).collect(),
        }),
        FeasibleFile::Inequalities { le, ge } => FeasibleSet::Inequalities { le: dense(le)?, ge: dense(ge)? },
        FeasibleFile::LowerContour { rows } => FeasibleSet::LowerContour(dense(rows)?),
    };
    Ok(Loaded {
        original,
        prepared: Prepared { instance, system, feasible, bads },
        options: (&file.options).into(),
    })
}

/// Input is either an instance file or a preprocessed one. Plain instances
/// are returned unprepared.
pub enum Input {
    Instance(Instance),
    Prepared(Box<Loaded>),
}

pub fn parse_input(text: &str) -> Result<Input, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    if value.get("format").and_then(Value::as_str) == Some(PREPARED_FORMAT) {
        let file: PreparedFile =
            serde_json::from_value(value).map_err(|e| format!("malformed preprocessed file: {e}"))?;
        return read_prepared(file).map(|l| Input::Prepared(Box::new(l)));
    }
    // Re-parse from text so error positions refer to the file.
    Instance::from_json(text).map(Input::Instance).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BadsSection {
    /// Objects of the original bads instance.
    pub objects: Vec<String>,
    /// `1 − x̃` for the avoidance assignment `x̃`.
    pub primal_assignment: Vec<Vec<f64>>,
    pub floors: Vec<Num>,
    /// Largest shortfall of `Σ_i x_{i,l}` below its floor.
    pub floor_violation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateFile {
    pub format: String,
    pub constraint_kind: String,
    pub agents: Vec<String>,
    pub objects: Vec<String>,
    pub config: SolverConfig,
    pub prepare: OptionsFile,
    /// Divisor applied to each agent's utilities before solving.
    pub utility_scale: Vec<f64>,
    pub priced_constraints: Vec<Sparse>,
    pub personalized_prices: Vec<Vec<f64>>,
    pub equilibrium: EquilibriumCertificate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bads: Option<BadsSection>,
}

/// The parts of a certificate needed to re-check it. Parsing only these keeps
/// verification working on certificates whose diagnostics hold nulls.
#[derive(Clone, Debug, Deserialize)]
pub struct CertificateClaim {
    pub equilibrium: Claim,
    #[serde(default)]
    pub config: Option<SolverConfig>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Claim {
    pub prices: Vec<f64>,
    pub assignment: Vec<Vec<f64>>,
    pub alpha: Option<f64>,
    pub tolerance: Option<f64>,
}

pub fn parse_claim(text: &str) -> Result<CertificateClaim, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed certificate: {e}"))
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
