//! From a parsed instance to a classified constraint system plus a feasible-set
//! description usable by membership and efficiency checks.

use std::collections::BTreeMap;

use num_traits::{One, Zero};

use crate::error::{PmktError, Result};
use crate::lcs::{classify, lcs_facets, VPolytope, DEFAULT_DIM_CAP};
use crate::model::{ConstraintSpec, ConstraintSystem, Instance, LinearConstraint};
use crate::scalar::{qi, Q};
use crate::structured::{
    bads_dual, check_bihierarchy, enumerate_bundles, enumerate_coalitions, enumerate_integral, enumerate_matchings,
    regional_feasible, regional_system, roommate_system, school_choice_system, school_feasible, supply_columns,
    unit_demand_rows, BadsDual, RegionalSpec, RoommateFamilies, SchoolChoiceSpec, DEFAULT_REGION_CAP,
    FULL_FAMILY_HARD_MAX,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    /// Largest number of active cells handed to generic facet enumeration.
    pub dim_cap: usize,
    /// Largest number of regions or schools for the subset recursions.
    pub region_cap: usize,
    /// Overrides the roommate family choice from the instance file.
    pub full_families: Option<bool>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions { dim_cap: DEFAULT_DIM_CAP, region_cap: DEFAULT_REGION_CAP, full_families: None }
    }
}

/// How the feasible set itself (not only its lower contour set) is known.
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    /// Convex hull of deterministic assignments.
    Vertices(VPolytope),
    /// An integral polytope `{x ≥ 0 : le rows ≤ b, ge rows ≥ b}`.
    Inequalities { le: Vec<LinearConstraint>, ge: Vec<LinearConstraint> },
    /// Only the lower contour set is known; members are its maximal points.
    LowerContour(Vec<LinearConstraint>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// The goods instance actually solved (the avoidance dual for bads).
    pub instance: Instance,
    pub system: ConstraintSystem,
    pub feasible: FeasibleSet,
    pub bads: Option<BadsDual>,
}

fn index_of(map: &BTreeMap<&str, usize>, id: &str, what: &str) -> Result<usize> {
    map.get(id).copied().ok_or_else(|| PmktError::Validation(format!("unknown {what} id {id}")))
}

fn cell_constraint(cells: usize, support: &[usize], b: Q) -> LinearConstraint {
    let mut c = LinearConstraint::zero(cells);
    for &k in support {
        c.a[k] = Q::one();
    }
    c.b = b;
    c
}

fn flatten_matrix(m: &[Vec<crate::model::Num>], n: usize, l: usize, what: &str) -> Result<Vec<Q>> {
    if m.len() != n || m.iter().any(|r| r.len() != l) {
        return Err(PmktError::Validation(format!("{what} must be an {n}x{l} matrix")));
    }
    Ok(m.iter().flatten().map(|v| v.0.clone()).collect())
}

/// Builds the classified system and feasible-set description.
pub fn prepare(inst: &Instance, opts: &PrepareOptions) -> Result<Prepared> {
    if inst.is_bads() {
        let dual = bads_dual(inst)?;
        let mut prep = prepare(&dual.instance, opts)?;
        let (n, l) = (inst.n(), inst.l());
        let need = qi(l as i64 - 1);
        let mut ge = Vec::new();
        for (i, xs) in prep.system.consumption_sets.iter_mut().enumerate() {
            xs.floors.push((vec![Q::one(); l], need.clone()));
            ge.push(cell_constraint(n * l, &(i * l..(i + 1) * l).collect::<Vec<_>>(), need.clone()));
        }
        prep.system.downward_closed = false;
        let le = match prep.feasible {
            FeasibleSet::LowerContour(w) => w,
            _ => unreachable!("bads dual is explicit"),
        };
        prep.feasible = FeasibleSet::Inequalities { le, ge };
        prep.bads = Some(dual);
        return Ok(prep);
    }

    let (n, l) = (inst.n(), inst.l());
    let cells = n * l;
    let agents = inst.agent_index();
    let objects = inst.object_index();
    let q = &inst.quantities;

    let (w, feasible, downward) = match &inst.constraints {
        ConstraintSpec::Hz => {
            let mut w = unit_demand_rows(n, l);
            w.extend(supply_columns(n, q));
            (w.clone(), FeasibleSet::Inequalities { le: w, ge: vec![] }, true)
        }
        ConstraintSpec::Hierarchy { sets } => {
            let mut le = Vec::new();
            let mut ge = Vec::new();
            let mut supports = Vec::new();
            for s in sets {
                let mut sup = Vec::new();
                for (a, o) in &s.cells {
                    sup.push(index_of(&agents, a, "agent")? * l + index_of(&objects, o, "object")?);
                }
                sup.sort_unstable();
                sup.dedup();
                if s.floor.0 > s.ceiling.0 || s.floor.0 < Q::zero() {
                    return Err(PmktError::Validation("hierarchy floor must lie in [0, ceiling]".into()));
                }
                le.push(cell_constraint(cells, &sup, s.ceiling.0.clone()));
                if s.floor.0 > Q::zero() {
                    ge.push(cell_constraint(cells, &sup, s.floor.0.clone()));
                }
                supports.push(sup);
            }
            let bihierarchy = check_bihierarchy(&supports).is_bihierarchy;
            if ge.is_empty() && bihierarchy {
                (le.clone(), FeasibleSet::Inequalities { le, ge }, true)
            } else {
                let poly = enumerate_integral(n, l, &le, &ge)?;
                let w = lcs_facets(&poly, opts.dim_cap)?;
                let feasible = if bihierarchy { FeasibleSet::Inequalities { le, ge } } else { FeasibleSet::Vertices(poly) };
                (w, feasible, false)
            }
        }
        ConstraintSpec::Regional { regions, floors, ceilings } => {
            let mut idx = Vec::new();
            let mut seen = vec![false; l];
            for r in regions {
                let mut v = Vec::new();
                for o in r {
                    let k = index_of(&objects, o, "object")?;
                    if seen[k] {
                        return Err(PmktError::Validation(format!("object {o} appears in two regions")));
                    }
                    seen[k] = true;
                    v.push(k);
                }
                idx.push(v);
            }
            if seen.iter().any(|s| !s) {
                return Err(PmktError::Validation("regions must partition the objects".into()));
            }
            if floors.len() != regions.len() || ceilings.len() != regions.len() {
                return Err(PmktError::Validation("one floor and one ceiling per region".into()));
            }
            let spec = RegionalSpec {
                regions: idx,
                floors: floors.iter().map(|v| v.0.clone()).collect(),
                ceilings: ceilings.iter().map(|v| v.0.clone()).collect(),
            };
            let w = regional_system(&spec, n, q, opts.region_cap)?;
            let (le, ge) = regional_feasible(&spec, n, q);
            (w, FeasibleSet::Inequalities { le, ge }, false)
        }
        ConstraintSpec::SchoolChoice { minority_agents, quotas } => {
            let mut minority = vec![false; n];
            for a in minority_agents {
                minority[index_of(&agents, a, "agent")?] = true;
            }
            if quotas.len() != l {
                return Err(PmktError::Validation("one quota record per school".into()));
            }
            let spec = SchoolChoiceSpec {
                minority,
                quotas: quotas
                    .iter()
                    .map(|s| {
                        [
                            s.minority_floor.0.clone(),
                            s.minority_ceiling.0.clone(),
                            s.majority_floor.0.clone(),
                            s.majority_ceiling.0.clone(),
                        ]
                    })
                    .collect(),
            };
            let w = school_choice_system(&spec, q, opts.region_cap)?;
            let (le, ge) = school_feasible(&spec, q);
            (w, FeasibleSet::Inequalities { le, ge }, false)
        }
        ConstraintSpec::Roommates { full_families } => {
            if l != n {
                return Err(PmktError::Validation("roommate objects must be one copy per agent".into()));
            }
            let full = opts.full_families.or(*full_families);
            let fam = match full {
                Some(true) if n > FULL_FAMILY_HARD_MAX => {
                    return Err(PmktError::Capacity(format!("full roommate families support at most {FULL_FAMILY_HARD_MAX} agents")))
                }
                Some(true) => RoommateFamilies::Full,
                Some(false) => RoommateFamilies::OddSets,
                None => RoommateFamilies::default_for(n),
            };
            let w = roommate_system(n, fam, true)?;
            let poly = VPolytope { n_agents: n, n_objects: l, vertices: enumerate_matchings(n) };
            (w, FeasibleSet::Vertices(poly), false)
        }
        ConstraintSpec::Coalitions => {
            if l != (1usize << n.min(20)) - 1 {
                return Err(PmktError::Validation("coalition objects must be the 2^N - 1 nonempty agent subsets".into()));
            }
            let poly = enumerate_coalitions(n)?;
            let w = lcs_facets(&poly, opts.dim_cap)?;
            (w, FeasibleSet::Vertices(poly), false)
        }
        ConstraintSpec::Bundles { items, item_quantities, bundles } => {
            if bundles.len() != l {
                return Err(PmktError::Validation("one bundle per object".into()));
            }
            if item_quantities.len() != items.len() {
                return Err(PmktError::Validation("one quantity per item".into()));
            }
            let item_idx: BTreeMap<&str, usize> = items.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
            let mut bidx = Vec::new();
            for b in bundles {
                bidx.push(b.iter().map(|s| index_of(&item_idx, s, "item")).collect::<Result<Vec<_>>>()?);
            }
            let iq: Vec<Q> = item_quantities.iter().map(|v| v.0.clone()).collect();
            let poly = enumerate_bundles(n, &iq, &bidx)?;
            let w = lcs_facets(&poly, opts.dim_cap)?;
            (w, FeasibleSet::Vertices(poly), false)
        }
        ConstraintSpec::Vertices { vertices } => {
            if vertices.is_empty() {
                return Err(PmktError::Validation("vertex list is empty".into()));
            }
            let mut vs = Vec::new();
            for v in vertices {
                let flat = flatten_matrix(v, n, l, "vertex")?;
                if flat.iter().any(|x| *x < Q::zero()) {
                    return Err(PmktError::Validation("vertices must be nonnegative".into()));
                }
                vs.push(flat);
            }
            let poly = VPolytope { n_agents: n, n_objects: l, vertices: vs };
            let w = lcs_facets(&poly, opts.dim_cap)?;
            (w, FeasibleSet::Vertices(poly), false)
        }
        ConstraintSpec::Explicit { inequalities } => {
            let mut w = Vec::new();
            for e in inequalities {
                let a = flatten_matrix(&e.a, n, l, "inequality")?;
                if a.iter().any(|x| *x < Q::zero()) || e.b.0 < Q::zero() {
                    return Err(PmktError::Validation("explicit inequalities need nonnegative coefficients".into()));
                }
                w.push(LinearConstraint { a, b: e.b.0.clone() });
            }
            (w.clone(), FeasibleSet::LowerContour(w), true)
        }
    };

    let mut system = classify(&w, n, l);
    system.downward_closed = downward;
    for k in 0..cells {
        if system.forbidden.a[k].is_zero() && !w.iter().any(|c| c.a[k] > Q::zero() && c.b > Q::zero()) {
            return Err(PmktError::Validation(format!(
                "cell ({}, {}) has no finite ceiling",
                inst.agents[k / l],
                inst.objects[k % l]
            )));
        }
    }
    bound_consumption_sets(&mut system, &w);
    Ok(Prepared { instance: inst.clone(), system, feasible, bads: None })
}

/// Caps every cell that no individual row bounds at the ceiling the other
/// rows imply, `min b/a_k`. The cap is valid on the lower contour set, so it
/// only makes each agent's consumption set compact.
fn bound_consumption_sets(system: &mut ConstraintSystem, w: &[LinearConstraint]) {
    let l = system.n_objects;
    for i in 0..system.n_agents {
        for o in 0..l {
            let k = i * l + o;
            let xs = &system.consumption_sets[i];
            if xs.forbidden[o] || xs.rows.iter().any(|(a, _)| a[o] > Q::zero()) {
                continue;
            }
            let Some(cap) = w.iter().filter(|c| c.a[k] > Q::zero()).map(|c| &c.b / &c.a[k]).min() else {
                continue;
            };
            let mut row = LinearConstraint::zero(system.cells());
            row.a[k] = Q::one();
            row.b = cap.clone();
            let mut own = vec![Q::zero(); l];
            own[o] = Q::one();
            system.consumption_sets[i].rows.push((own, cap));
            system.individual[i].push(row);
        }
    }
}
