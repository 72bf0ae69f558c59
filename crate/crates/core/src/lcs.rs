//! Lower-contour-set facets of a vertex-described feasible set, and the
//! classification of an inequality system into forbidden, individual and
//! priced constraints.

use crate::error::{PmktError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{ConsumptionSet, ConstraintSystem, LinearConstraint};
use crate::scalar::Q;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

/// Default bound on the number of non-identically-zero cells handled by
/// [`lcs_facets`].
pub const DEFAULT_DIM_CAP: usize = 16;

/// Feasible set given as the convex hull of finitely many assignments
/// (flattened row-major, length N·L).
#[derive(Clone, Debug, PartialEq)]
pub struct VPolytope {
    pub n_agents: usize,
    pub n_objects: usize,
    pub vertices: Vec<Vec<Q>>,
}

impl VPolytope {
    pub fn cells(&self) -> usize {
        self.n_agents * self.n_objects
    }
}

/// Inequalities `a·x ≤ b` with `a ≥ 0`, `b ≥ 0` whose intersection with the
/// nonnegative orthant is the lower contour set of `poly`.
///
/// Cells that are zero in every vertex become `x_k ≤ 0` rows; the remaining
/// coordinates go through a double-description pass on the cone generated by
/// the vertices and the negative unit rays, followed by LP redundancy removal.
pub fn lcs_facets(poly: &VPolytope, dim_cap: usize) -> Result<Vec<LinearConstraint>> {
    let d = poly.cells();
    if poly.vertices.is_empty() {
        return Err(PmktError::Validation("vertex set must be nonempty".into()));
    }
    if poly.vertices.iter().any(|v| v.len() != d || v.iter().any(|x| x.is_negative())) {
        return Err(PmktError::Validation("vertices must be nonnegative N×L matrices".into()));
    }
    let active: Vec<usize> = (0..d).filter(|&k| poly.vertices.iter().any(|v| v[k].is_positive())).collect();
    if active.len() > dim_cap {
        return Err(PmktError::Capacity(format!(
            "{} active cells exceed the facet-enumeration cap of {dim_cap}; use a structured constraint kind",
            active.len()
        )));
    }
    let mut out = Vec::new();
    for k in 0..d {
        if !active.contains(&k) {
            let mut a = vec![Q::zero(); d];
            a[k] = Q::one();
            out.push(LinearConstraint { a, b: Q::zero() });
        }
    }
    if active.is_empty() {
        return Ok(out);
    }
    let reduced: Vec<Vec<Q>> = poly.vertices.iter().map(|v| active.iter().map(|&k| v[k].clone()).collect()).collect();
    let mut facets: Vec<LinearConstraint> = Vec::new();
    for (a_red, b) in dd_facets(&reduced) {
        let mut a = vec![Q::zero(); d];
        for (j, &k) in active.iter().enumerate() {
            a[k] = a_red[j].clone();
        }
        facets.push(LinearConstraint { a, b }.normalized());
    }
    facets.sort();
    facets.dedup();
    let zero_cells: Vec<usize> = (0..d).filter(|k| !active.contains(k)).collect();
    out.extend(remove_redundant(&facets, d, &zero_cells));
    Ok(out)
}

type Bits = Vec<u64>;

fn bit_set(b: &mut Bits, i: usize) {
    b[i / 64] |= 1 << (i % 64);
}

fn bits_and(a: &Bits, b: &Bits) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn bits_count(a: &Bits) -> usize {
    a.iter().map(|x| x.count_ones() as usize).sum()
}

fn bits_superset(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == *y)
}

/// Rescales to a primitive integer vector (same direction).
fn primitive(v: &mut [Q]) {
    let mut lcm = BigInt::one();
    for x in v.iter() {
        lcm = lcm.lcm(x.denom());
    }
    let ints: Vec<BigInt> = v.iter().map(|x| (x * Q::from_integer(lcm.clone())).to_integer()).collect();
    let mut g = BigInt::zero();
    for x in &ints {
        g = g.gcd(x);
    }
    if g.is_zero() {
        return;
    }
    for (x, i) in v.iter_mut().zip(ints) {
        *x = Q::from_integer(i / &g);
    }
}

fn dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).fold(Q::zero(), |acc, (x, y)| if x.is_zero() || y.is_zero() { acc } else { acc + x * y })
}

/// Extreme rays of `{y : g·y ≤ 0}` over generators `(v,1)` and `(-e_k,0)`,
/// returned as `(a, b)` with `a·x ≤ b`.
fn dd_facets(vertices: &[Vec<Q>]) -> Vec<(Vec<Q>, Q)> {
    let d = vertices[0].len();
    let dim = d + 1;
    let mut gens: Vec<Vec<Q>> = Vec::new();
    for k in 0..d {
        let mut g = vec![Q::zero(); dim];
        g[k] = -Q::one();
        gens.push(g);
    }
    for v in vertices {
        let mut g = v.clone();
        g.push(Q::one());
        gens.push(g);
    }
    let words = gens.len().div_ceil(64);
    // Initial simplicial cone from the d rays and the first vertex.
    let v0 = &vertices[0];
    let mut rays: Vec<(Vec<Q>, Bits)> = Vec::new();
    for j in 0..=d {
        let mut r = vec![Q::zero(); dim];
        if j < d {
            r[j] = Q::one();
            r[d] = -v0[j].clone();
        } else {
            r[d] = -Q::one();
        }
        primitive(&mut r);
        rays.push((r, vec![0; words]));
    }
    let tight = |r: &Vec<Q>, upto: usize, gens: &Vec<Vec<Q>>| {
        let mut z = vec![0u64; words];
        for (gi, g) in gens.iter().enumerate().take(upto) {
            if dot(g, r).is_zero() {
                bit_set(&mut z, gi);
            }
        }
        z
    };
    let initial = d + 1;
    for r in rays.iter_mut() {
        r.1 = tight(&r.0, initial, &gens);
    }
    for gi in initial..gens.len() {
        let g = &gens[gi];
        let vals: Vec<Q> = rays.iter().map(|(r, _)| dot(g, r)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&i| vals[i].is_positive()).collect();
        if pos.is_empty() {
            for (i, r) in rays.iter_mut().enumerate() {
                if vals[i].is_zero() {
                    bit_set(&mut r.1, gi);
                }
            }
            continue;
        }
        let neg: Vec<usize> = (0..rays.len()).filter(|&i| vals[i].is_negative()).collect();
        let mut new_rays: Vec<(Vec<Q>, Bits)> = Vec::new();
        for &p in &pos {
            for &n in &neg {
                let common = bits_and(&rays[p].1, &rays[n].1);
                if bits_count(&common) + 2 < dim {
                    continue;
                }
                let adjacent = rays
                    .iter()
                    .enumerate()
                    .all(|(k, (_, z))| k == p || k == n || !bits_superset(z, &common));
                if !adjacent {
                    continue;
                }
                let mut r: Vec<Q> = rays[n]
                    .0
                    .iter()
                    .zip(&rays[p].0)
                    .map(|(rn, rp)| &vals[p] * rn - &vals[n] * rp)
                    .collect();
                primitive(&mut r);
                let mut z = common;
                bit_set(&mut z, gi);
                new_rays.push((r, z));
            }
        }
        let mut kept: Vec<(Vec<Q>, Bits)> = Vec::new();
        for (i, mut r) in rays.into_iter().enumerate() {
            if vals[i].is_positive() {
                continue;
            }
            if vals[i].is_zero() {
                bit_set(&mut r.1, gi);
            }
            kept.push(r);
        }
        kept.extend(new_rays);
        rays = kept;
    }
    let mut out = Vec::new();
    for (r, _) in rays {
        let a: Vec<Q> = r[..d].to_vec();
        if a.iter().all(|x| x.is_zero()) {
            continue;
        }
        out.push((a, -r[d].clone()));
    }
    out
}

/// Drops inequalities implied by the others together with `x ≥ 0` and the
/// zero cells. Deterministic: candidates are examined in the given order.
pub fn remove_redundant(cons: &[LinearConstraint], cells: usize, zero_cells: &[usize]) -> Vec<LinearConstraint> {
    let mut keep = vec![true; cons.len()];
    for k in 0..cons.len() {
        let others: Vec<&LinearConstraint> =
            (0..cons.len()).filter(|&j| j != k && keep[j]).map(|j| &cons[j]).collect();
        if implied(&cons[k], &others, cells, zero_cells) {
            keep[k] = false;
        }
    }
    cons.iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c.clone()).collect()
}

fn implied(c: &LinearConstraint, others: &[&LinearConstraint], cells: usize, zero_cells: &[usize]) -> bool {
    let mut lp = LpProblem::new(Sense::Max, c.a.clone());
    for o in others {
        lp.le(o.a.clone(), o.b.clone());
    }
    for &k in zero_cells {
        lp.upper[k] = Some(Q::zero());
    }
    let _ = cells;
    let s = solve_lp(&lp);
    match s.status {
        LpStatus::Optimal => s.objective <= c.b,
        LpStatus::Infeasible => true,
        LpStatus::Unbounded => false,
    }
}

/// True when every point of `{x ≥ 0 : inner}` satisfies every row of `outer`.
pub fn contains(outer: &[LinearConstraint], inner: &[LinearConstraint], cells: usize) -> bool {
    let inner_refs: Vec<&LinearConstraint> = inner.iter().collect();
    outer.iter().all(|c| implied(c, &inner_refs, cells, &[]))
}

/// Mutual inclusion of two lower-contour descriptions (exact).
pub fn same_polytope(a: &[LinearConstraint], b: &[LinearConstraint], cells: usize) -> bool {
    contains(a, b, cells) && contains(b, a, cells)
}

/// Exact test of `∃ x ∈ co(vertices) with y ≤ x`.
pub fn dominated_by_hull(y: &[Q], poly: &VPolytope) -> bool {
    let k = poly.vertices.len();
    let mut lp = LpProblem::new(Sense::Min, vec![Q::zero(); k]);
    lp.eq(vec![Q::one(); k], Q::one());
    for cell in 0..poly.cells() {
        let coeffs: Vec<Q> = poly.vertices.iter().map(|v| v[cell].clone()).collect();
        lp.ge(coeffs, y[cell].clone());
    }
    solve_lp(&lp).status == LpStatus::Optimal
}

fn canonical_key(c: &LinearConstraint) -> (Vec<usize>, Vec<Q>, Q) {
    (c.support(), c.a.iter().map(|v| -v.clone()).collect(), c.b.clone())
}

/// Splits `w` into the merged forbidden row, per-agent individual rows and the
/// priced rows (support spanning at least two agents). Priced and individual
/// rows are normalized to a maximum coefficient of one, deduplicated, and
/// sorted into a canonical order.
pub fn classify(w: &[LinearConstraint], n_agents: usize, n_objects: usize) -> ConstraintSystem {
    let cells = n_agents * n_objects;
    let l = n_objects;
    let mut forbidden = LinearConstraint::zero(cells);
    let mut individual: Vec<Vec<LinearConstraint>> = vec![Vec::new(); n_agents];
    let mut priced: Vec<LinearConstraint> = Vec::new();
    for c in w {
        if c.b.is_zero() {
            for (f, a) in forbidden.a.iter_mut().zip(&c.a) {
                if a > f {
                    *f = a.clone();
                }
            }
            continue;
        }
        let agents = c.agents(l);
        match agents.len() {
            0 => {}
            1 => individual[agents[0]].push(c.normalized()),
            _ => priced.push(c.normalized()),
        }
    }
    let canon = |v: &mut Vec<LinearConstraint>| {
        v.sort_by_key(canonical_key);
        v.dedup();
    };
    canon(&mut priced);
    for v in individual.iter_mut() {
        canon(v);
    }
    let consumption_sets = (0..n_agents)
        .map(|i| ConsumptionSet {
            rows: individual[i].iter().map(|c| (c.row(i, l).to_vec(), c.b.clone())).collect(),
            floors: Vec::new(),
            forbidden: forbidden.row(i, l).iter().map(|v| v.is_positive()).collect(),
        })
        .collect();
    ConstraintSystem {
        n_agents,
        n_objects,
        forbidden,
        individual,
        priced,
        consumption_sets,
        downward_closed: false,
    }
}
