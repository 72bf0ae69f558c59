//! Domain types, the JSON instance schema, and instance validation.

use crate::error::{PmktError, Result};
use crate::scalar::{fmt_q, parse_q, q_from_decimal, q_to_f64, Q};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

/// Rational read from JSON as a number (`0.25`) or a string (`"1/3"`), and
/// written back as a string.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Num(pub Q);

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            I(i64),
            F(f64),
            S(String),
        }
        let q = match Raw::deserialize(d)? {
            Raw::I(i) => Some(Q::from_integer(i.into())),
            Raw::F(f) => q_from_decimal(f),
            Raw::S(s) => parse_q(&s),
        };
        q.map(Num)
            .ok_or_else(|| serde::de::Error::custom("expected a finite number or \"num/den\" string"))
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(&self.0))
    }
}

fn nums(v: &[Num]) -> Vec<Q> {
    v.iter().map(|n| n.0.clone()).collect()
}

fn to_nums(v: &[Q]) -> Vec<Num> {
    v.iter().cloned().map(Num).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchySet {
    /// `[agent_id, object_id]` pairs.
    pub cells: Vec<(String, String)>,
    pub floor: Num,
    pub ceiling: Num,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoolQuota {
    pub minority_floor: Num,
    pub minority_ceiling: Num,
    pub majority_floor: Num,
    pub majority_ceiling: Num,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitInequality {
    /// N×L coefficient matrix.
    pub a: Vec<Vec<Num>>,
    pub b: Num,
}

/// Description of the feasible-assignment polytope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// Unit demand per agent and supply `q_l` per object.
    Hz,
    /// Floor/ceiling quotas on arbitrary cell sets.
    Hierarchy { sets: Vec<HierarchySet> },
    /// Unit demand, supply, and floor/ceiling quotas per region of objects.
    Regional {
        regions: Vec<Vec<String>>,
        floors: Vec<Num>,
        ceilings: Vec<Num>,
    },
    /// Unit demand, supply, and per-school quotas for two student types.
    SchoolChoice {
        minority_agents: Vec<String>,
        quotas: Vec<SchoolQuota>,
    },
    /// Objects are copies of the agents; assignments are convex combinations of matchings.
    Roommates {
        #[serde(default)]
        full_families: Option<bool>,
    },
    /// Objects are the nonempty agent subsets in bitmask order.
    Coalitions,
    /// Objects are bundles of items; each agent receives at most one bundle.
    Bundles {
        items: Vec<String>,
        item_quantities: Vec<Num>,
        bundles: Vec<Vec<String>>,
    },
    /// Explicit deterministic assignments spanning the feasible set.
    Vertices { vertices: Vec<Vec<Vec<Num>>> },
    /// Inequalities already in nonnegative lower-contour form.
    Explicit { inequalities: Vec<ExplicitInequality> },
}

impl ConstraintSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ConstraintSpec::Hz => "hz",
            ConstraintSpec::Hierarchy { .. } => "hierarchy",
            ConstraintSpec::Regional { .. } => "regional",
            ConstraintSpec::SchoolChoice { .. } => "school_choice",
            ConstraintSpec::Roommates { .. } => "roommates",
            ConstraintSpec::Coalitions => "coalitions",
            ConstraintSpec::Bundles { .. } => "bundles",
            ConstraintSpec::Vertices { .. } => "vertices",
            ConstraintSpec::Explicit { .. } => "explicit",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InstanceFile {
    agents: Vec<String>,
    objects: Vec<String>,
    quantities: Vec<Num>,
    utilities: Vec<Vec<Num>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endowments: Option<Vec<Vec<Num>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Num>,
    constraints: ConstraintSpec,
}

/// An allocation problem. Utilities are linear: `u_i(x_i) = v_i·x_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub agents: Vec<String>,
    pub objects: Vec<String>,
    pub quantities: Vec<Q>,
    pub utilities: Vec<Vec<f64>>,
    pub endowments: Option<Vec<Vec<Q>>>,
    pub alpha: f64,
    pub constraints: ConstraintSpec,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn l(&self) -> usize {
        self.objects.len()
    }

    pub fn from_json(text: &str) -> Result<Instance> {
        let f: InstanceFile =
            serde_json::from_str(text).map_err(|e| PmktError::Parse(format!("malformed instance JSON: {e}")))?;
        Ok(Instance {
            agents: f.agents,
            objects: f.objects,
            quantities: nums(&f.quantities),
            utilities: f
                .utilities
                .iter()
                .map(|r| r.iter().map(|n| q_to_f64(&n.0)).collect())
                .collect(),
            endowments: f.endowments.map(|e| e.iter().map(|r| nums(r)).collect()),
            alpha: f.alpha.map(|a| q_to_f64(&a.0)).unwrap_or(1.0),
            constraints: f.constraints,
        })
    }

    pub fn to_json(&self) -> String {
        let f = InstanceFile {
            agents: self.agents.clone(),
            objects: self.objects.clone(),
            quantities: to_nums(&self.quantities),
            utilities: self
                .utilities
                .iter()
                .map(|r| r.iter().map(|&v| Num(q_from_decimal(v).unwrap_or_default())).collect())
                .collect(),
            endowments: self.endowments.as_ref().map(|e| e.iter().map(|r| to_nums(r)).collect()),
            alpha: Some(Num(q_from_decimal(self.alpha).unwrap_or_default())),
            constraints: self.constraints.clone(),
        };
        serde_json::to_string_pretty(&f).expect("instance serializes")
    }

    pub fn agent_index(&self) -> BTreeMap<&str, usize> {
        self.agents.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect()
    }

    pub fn object_index(&self) -> BTreeMap<&str, usize> {
        self.objects.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect()
    }

    /// True when every utility coefficient is negative, i.e. objects are bads.
    pub fn is_bads(&self) -> bool {
        self.utilities.iter().flatten().all(|&v| v < 0.0) && !self.utilities.is_empty()
    }
}

/// Nonnegative matrix of shares; row `i` is agent `i`'s consumption.
pub type Assignment = Vec<Vec<f64>>;

/// One price per priced constraint, in the system's canonical order.
pub type PriceVector = Vec<f64>;

/// `a·x ≤ b` over the flattened N×L cell grid (row-major).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinearConstraint {
    pub a: Vec<Q>,
    pub b: Q,
}

impl LinearConstraint {
    pub fn zero(cells: usize) -> Self {
        LinearConstraint { a: vec![Q::zero(); cells], b: Q::zero() }
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.a.len()).filter(|&k| self.a[k].is_positive()).collect()
    }

    /// Agents whose row intersects the support.
    pub fn agents(&self, l: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.support().iter().map(|k| k / l).collect();
        out.dedup();
        out
    }

    pub fn is_trivial(&self) -> bool {
        self.a.iter().all(|v| v.is_zero()) && self.b.is_zero()
    }

    /// Scales so the largest coefficient is 1; no-op on the zero vector.
    pub fn normalized(&self) -> Self {
        let m = self.a.iter().max().cloned().unwrap_or_default();
        if !m.is_positive() {
            return self.clone();
        }
        LinearConstraint { a: self.a.iter().map(|v| v / &m).collect(), b: &self.b / &m }
    }

    pub fn row(&self, i: usize, l: usize) -> &[Q] {
        &self.a[i * l..(i + 1) * l]
    }

    pub fn eval(&self, x: &[Q]) -> Q {
        self.a.iter().zip(x).fold(Q::zero(), |acc, (a, v)| acc + a * v)
    }

    pub fn eval_f64(&self, x: &Assignment, l: usize) -> f64 {
        let mut s = 0.0;
        for k in self.support() {
            s += q_to_f64(&self.a[k]) * x[k / l][k % l];
        }
        s
    }
}

/// `X_i` in inequality form over agent `i`'s own row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConsumptionSet {
    /// `c·x_i ≤ d`.
    pub rows: Vec<(Vec<Q>, Q)>,
    /// `c·x_i ≥ d`. Only produced by the bads transform.
    pub floors: Vec<(Vec<Q>, Q)>,
    /// Cells fixed at zero by the forbidden constraint.
    pub forbidden: Vec<bool>,
}

/// The classified inequality system of a feasible set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub n_agents: usize,
    pub n_objects: usize,
    pub forbidden: LinearConstraint,
    pub individual: Vec<Vec<LinearConstraint>>,
    pub priced: Vec<LinearConstraint>,
    pub consumption_sets: Vec<ConsumptionSet>,
    /// True when the feasible set equals its lower contour set, so feasibility
    /// of every inequality already implies membership.
    pub downward_closed: bool,
}

impl ConstraintSystem {
    pub fn cells(&self) -> usize {
        self.n_agents * self.n_objects
    }

    /// All inequalities as one flat list: forbidden, individual, priced.
    pub fn all_constraints(&self) -> Vec<LinearConstraint> {
        let mut out = vec![self.forbidden.clone()];
        out.extend(self.individual.iter().flatten().cloned());
        out.extend(self.priced.iter().cloned());
        out
    }
}

/// `p_{i,l} = Σ_c a^c_{i,l} p_c`.
pub fn personalized_prices(system: &ConstraintSystem, p: &[f64]) -> Result<Vec<Vec<f64>>> {
    if p.len() != system.priced.len() {
        return Err(PmktError::Structural(format!(
            "price vector has {} entries but there are {} priced constraints",
            p.len(),
            system.priced.len()
        )));
    }
    let l = system.n_objects;
    let mut out = vec![vec![0.0; l]; system.n_agents];
    for (c, &pc) in system.priced.iter().zip(p) {
        if pc == 0.0 {
            continue;
        }
        for k in c.support() {
            out[k / l][k % l] += q_to_f64(&c.a[k]) * pc;
        }
    }
    Ok(out)
}

/// Groups agents with identical consumption sets, identical rows in every
/// priced constraint and, when present, identical endowments.
pub fn equal_type_partition(instance: &Instance, system: &ConstraintSystem) -> Vec<Vec<usize>> {
    let l = system.n_objects;
    let key = |i: usize| {
        let x = &system.consumption_sets[i];
        let mut rows = x.rows.clone();
        rows.sort();
        let mut floors = x.floors.clone();
        floors.sort();
        let priced: Vec<Vec<Q>> = system.priced.iter().map(|c| c.row(i, l).to_vec()).collect();
        let endow = instance.endowments.as_ref().map(|e| e[i].clone());
        (rows, floors, x.forbidden.clone(), priced, endow)
    };
    let mut classes: Vec<(_, Vec<usize>)> = Vec::new();
    for i in 0..system.n_agents {
        let k = key(i);
        match classes.iter_mut().find(|(kk, _)| *kk == k) {
            Some((_, members)) => members.push(i),
            None => classes.push((k, vec![i])),
        }
    }
    classes.into_iter().map(|(_, m)| m).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks that need no preprocessing.
pub fn structural_violations(inst: &Instance) -> Vec<String> {
    let mut v = Vec::new();
    let (n, l) = (inst.n(), inst.l());
    if n == 0 {
        v.push("agent set must be nonempty".to_string());
    }
    if l == 0 {
        v.push("object set must be nonempty".to_string());
    }
    if inst.quantities.len() != l {
        v.push(format!("expected {l} quantities, found {}", inst.quantities.len()));
    }
    for (k, q) in inst.quantities.iter().enumerate() {
        if !q.is_positive() {
            v.push(format!("quantity must be positive (object {})", inst.objects.get(k).map_or("?", |s| s)));
        }
    }
    if inst.utilities.len() != n || inst.utilities.iter().any(|r| r.len() != l) {
        v.push(format!("utilities must be a {n}x{l} matrix"));
    } else if inst.is_bads() {
        if !matches!(inst.constraints, ConstraintSpec::Hz) {
            v.push("bads instances require the hz constraint kind".to_string());
        }
        if inst.endowments.is_some() {
            v.push("bads instances do not take endowments".to_string());
        }
        let total: Q = inst.quantities.iter().sum();
        if total >= Q::from_integer((n as i64).into()) {
            v.push("bads need total quantity below the number of agents; with no slack the problem is pure hz".into());
        }
    } else {
        for (i, r) in inst.utilities.iter().enumerate() {
            if r.iter().any(|&u| !u.is_finite() || u < 0.0) || r.iter().all(|&u| u <= 0.0) {
                v.push(format!(
                    "utilities of agent {} must be nonnegative with a positive entry (or all negative for bads)",
                    inst.agents[i]
                ));
            }
        }
    }
    if !(inst.alpha > 0.0 && inst.alpha <= 1.0) {
        v.push("alpha must lie in (0, 1]".to_string());
    }
    if let Some(e) = &inst.endowments {
        if e.len() != n || e.iter().any(|r| r.len() != l) {
            v.push(format!("endowments must be a {n}x{l} matrix"));
        } else if e.iter().flatten().any(|w| w.is_negative()) {
            v.push("endowments must be nonnegative".to_string());
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in &inst.agents {
        if !seen.insert(a) {
            v.push(format!("duplicate agent id {a}"));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for o in &inst.objects {
        if !seen.insert(o) {
            v.push(format!("duplicate object id {o}"));
        }
    }
    v
}

/// Lists every violated instance invariant. Endowment feasibility is checked
/// with the membership test against the preprocessed feasible set.
pub fn validate(inst: &Instance) -> ValidationReport {
    let mut violations = structural_violations(inst);
    if !violations.is_empty() {
        return ValidationReport { violations };
    }
    match crate::pipeline::prepare(inst, &crate::pipeline::PrepareOptions::default()) {
        Err(e) => violations.push(e.to_string()),
        Ok(prep) => violations.extend(endowment_violations(inst, &prep)),
    }
    ValidationReport { violations }
}

/// Endowment checks that need the prepared feasible set.
pub fn endowment_violations(inst: &Instance, prep: &crate::pipeline::Prepared) -> Vec<String> {
    let mut v = Vec::new();
    let Some(e) = &inst.endowments else { return v };
    let w: Assignment = e.iter().map(|r| r.iter().map(q_to_f64).collect()).collect();
    if !crate::diagnostics::membership(&w, &prep.feasible).member {
        v.push("endowment infeasible: not a member of the feasible set".into());
    }
    for (k, c) in prep.system.priced.iter().enumerate() {
        if c.eval_f64(&w, inst.l()) <= 0.0 {
            v.push(format!("priced constraint {k} has no endowment on its support"));
        }
    }
    v
}
