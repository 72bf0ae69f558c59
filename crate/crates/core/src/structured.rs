//! Closed-form inequality generators for common constraint structures, plus
//! deterministic-assignment enumerators for coalition and bundle problems.

use crate::error::{PmktError, Result};
use crate::lcs::{remove_redundant, VPolytope};
use crate::model::{ConstraintSpec, Instance, LinearConstraint};
use crate::scalar::{qi, Q};
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub const DEFAULT_REGION_CAP: usize = 12;
pub const DEFAULT_ROOMMATE_CAP: usize = 6;
/// Largest group size for which the full pair-set family is emitted by default.
pub const FULL_FAMILY_DEFAULT_MAX: usize = 4;
/// Largest group size for which the full pair-set family can be requested.
pub const FULL_FAMILY_HARD_MAX: usize = 5;
pub const ENUMERATION_CAP: usize = 2_000_000;

fn indicator(cells: usize, support: impl IntoIterator<Item = usize>, b: Q) -> LinearConstraint {
    let mut a = vec![Q::zero(); cells];
    for k in support {
        a[k] = Q::one();
    }
    LinearConstraint { a, b }
}

/// Unit-demand rows `Σ_l x_{i,l} ≤ 1`.
pub fn unit_demand_rows(n: usize, l: usize) -> Vec<LinearConstraint> {
    (0..n).map(|i| indicator(n * l, (0..l).map(|o| i * l + o), Q::one())).collect()
}

/// Supply columns `Σ_i x_{i,l} ≤ q_l`.
pub fn supply_columns(n: usize, q: &[Q]) -> Vec<LinearConstraint> {
    let l = q.len();
    (0..l).map(|o| indicator(n * l, (0..n).map(|i| i * l + o), q[o].clone())).collect()
}

// ---------------------------------------------------------------- bihierarchy

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BihierarchyCheck {
    pub is_bihierarchy: bool,
    /// Indices of the two laminar families when the check succeeds.
    pub families: Option<(Vec<usize>, Vec<usize>)>,
    /// Two crossing sets forced into the same family when it fails.
    pub witness: Option<(usize, usize)>,
}

fn crossing(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> bool {
    let inter = a.intersection(b).count();
    inter > 0 && inter < a.len() && inter < b.len()
}

/// Decides whether the cell sets split into two laminar families by
/// two-colouring the graph whose edges join crossing sets.
pub fn check_bihierarchy(sets: &[Vec<usize>]) -> BihierarchyCheck {
    let sets: Vec<BTreeSet<usize>> = sets.iter().map(|s| s.iter().copied().collect()).collect();
    let m = sets.len();
    let mut color: Vec<Option<bool>> = vec![None; m];
    for start in 0..m {
        if color[start].is_some() {
            continue;
        }
        color[start] = Some(false);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                if v == u || !crossing(&sets[u], &sets[v]) {
                    continue;
                }
                match color[v] {
                    None => {
                        color[v] = Some(!color[u].unwrap());
                        queue.push_back(v);
                    }
                    Some(c) if c == color[u].unwrap() => {
                        return BihierarchyCheck {
                            is_bihierarchy: false,
                            families: None,
                            witness: Some((u.min(v), u.max(v))),
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    let h1 = (0..m).filter(|&i| color[i] == Some(false)).collect();
    let h2 = (0..m).filter(|&i| color[i] == Some(true)).collect();
    BihierarchyCheck { is_bihierarchy: true, families: Some((h1, h2)), witness: None }
}

// ------------------------------------------------------------------ regional

#[derive(Clone, Debug, PartialEq)]
pub struct RegionalSpec {
    /// Partition of object indices.
    pub regions: Vec<Vec<usize>>,
    pub floors: Vec<Q>,
    pub ceilings: Vec<Q>,
}

fn mask_members(mask: u32, k: usize) -> impl Iterator<Item = usize> {
    (0..k).filter(move |&x| mask >> x & 1 == 1)
}

/// Tightened ceiling for every union of regions, keyed by region bitmask.
pub fn regional_ceilings(spec: &RegionalSpec, n: usize, cap: usize) -> Result<BTreeMap<u32, Q>> {
    let k = spec.regions.len();
    if k > cap {
        return Err(PmktError::Capacity(format!("{k} regions exceed the cap of {cap}")));
    }
    if spec.floors.len() != k || spec.ceilings.len() != k {
        return Err(PmktError::Validation("regional floors and ceilings need one entry per region".into()));
    }
    let n = qi(n as i64);
    let total_floor: Q = spec.floors.iter().sum();
    let full: u32 = if k == 0 { 0 } else { (1u32 << k) - 1 };
    let outside_floor = |mask: u32| -> Q { mask_members(full & !mask, k).map(|x| spec.floors[x].clone()).sum() };
    let mut q: BTreeMap<u32, Q> = BTreeMap::new();
    let _ = total_floor;
    let mut masks: Vec<u32> = (1..=full).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let cap_n = &n - outside_floor(mask);
        let v = if mask.count_ones() == 1 {
            let x = mask.trailing_zeros() as usize;
            spec.ceilings[x].clone().min(cap_n)
        } else {
            mask_members(mask, k)
                .map(|x| &q[&(mask & !(1 << x))] + &q[&(1 << x)])
                .fold(cap_n, |a, b| a.min(b))
        };
        q.insert(mask, v);
    }
    Ok(q)
}

/// Unit demand, supply, and one ceiling per union of regions.
pub fn regional_system(spec: &RegionalSpec, n: usize, q: &[Q], cap: usize) -> Result<Vec<LinearConstraint>> {
    let l = q.len();
    let ceil = regional_ceilings(spec, n, cap)?;
    let mut w = unit_demand_rows(n, l);
    w.extend(supply_columns(n, q));
    for (&mask, qbar) in &ceil {
        let objs: Vec<usize> = mask_members(mask, spec.regions.len()).flat_map(|r| spec.regions[r].clone()).collect();
        let cells = (0..n).flat_map(|i| objs.iter().map(move |&o| i * l + o));
        w.push(indicator(n * l, cells, qbar.clone()));
    }
    Ok(w)
}

/// The defining constraints of the regional feasible set as `(≤ rows, ≥ rows)`.
pub fn regional_feasible(spec: &RegionalSpec, n: usize, q: &[Q]) -> (Vec<LinearConstraint>, Vec<LinearConstraint>) {
    let l = q.len();
    let mut le = unit_demand_rows(n, l);
    le.extend(supply_columns(n, q));
    let mut ge = Vec::new();
    for (r, objs) in spec.regions.iter().enumerate() {
        let cells: Vec<usize> = (0..n).flat_map(|i| objs.iter().map(move |&o| i * l + o)).collect();
        le.push(indicator(n * l, cells.clone(), spec.ceilings[r].clone()));
        ge.push(indicator(n * l, cells, spec.floors[r].clone()));
    }
    (le, ge)
}

// -------------------------------------------------------------- school choice

#[derive(Clone, Debug, PartialEq)]
pub struct SchoolChoiceSpec {
    pub minority: Vec<bool>,
    /// Per school: (minority floor, minority ceiling, majority floor, majority ceiling).
    pub quotas: Vec<[Q; 4]>,
}

/// Tightened per-type ceilings for every nonempty school subset, keyed by
/// bitmask: `(minority, majority)`.
pub fn school_ceilings(spec: &SchoolChoiceSpec, q: &[Q], cap: usize) -> Result<(BTreeMap<u32, Q>, BTreeMap<u32, Q>)> {
    let l = q.len();
    if l > cap {
        return Err(PmktError::Capacity(format!("{l} schools exceed the cap of {cap}")));
    }
    let n_m = qi(spec.minority.iter().filter(|&&m| m).count() as i64);
    let n_big = qi(spec.minority.iter().filter(|&&m| !m).count() as i64);
    let full: u32 = (1u32 << l) - 1;
    let mut masks: Vec<u32> = (1..=full).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let derive = |own_floor: usize, own_ceil: usize, other_floor: usize, pop: &Q| {
        let outside = |mask: u32| -> Q { mask_members(full & !mask, l).map(|o| spec.quotas[o][own_floor].clone()).sum() };
        let mut out: BTreeMap<u32, Q> = BTreeMap::new();
        for &mask in &masks {
            let cap_n = pop - outside(mask);
            let v = if mask.count_ones() == 1 {
                let o = mask.trailing_zeros() as usize;
                let s = &spec.quotas[o];
                s[own_ceil].clone().min(&q[o] - &s[other_floor]).min(cap_n)
            } else {
                mask_members(mask, l).map(|o| &out[&(mask & !(1 << o))] + &out[&(1 << o)]).fold(cap_n, |a, b| a.min(b))
            };
            out.insert(mask, v);
        }
        out
    };
    Ok((derive(0, 1, 2, &n_m), derive(2, 3, 0, &n_big)))
}

/// Unit demand, supply, and per-type ceilings over every nonempty school subset.
pub fn school_choice_system(spec: &SchoolChoiceSpec, q: &[Q], cap: usize) -> Result<Vec<LinearConstraint>> {
    let n = spec.minority.len();
    let l = q.len();
    let (qm, q_big) = school_ceilings(spec, q, cap)?;
    let mut w = unit_demand_rows(n, l);
    w.extend(supply_columns(n, q));
    for (ceil, minority) in [(&qm, true), (&q_big, false)] {
        let agents: Vec<usize> = (0..n).filter(|&i| spec.minority[i] == minority).collect();
        if agents.is_empty() {
            continue;
        }
        for (&mask, v) in ceil {
            let cells = agents.iter().flat_map(|&i| mask_members(mask, l).map(move |o| i * l + o));
            w.push(indicator(n * l, cells, v.clone()));
        }
    }
    Ok(w)
}

pub fn school_feasible(spec: &SchoolChoiceSpec, q: &[Q]) -> (Vec<LinearConstraint>, Vec<LinearConstraint>) {
    let n = spec.minority.len();
    let l = q.len();
    let mut le = unit_demand_rows(n, l);
    le.extend(supply_columns(n, q));
    let mut ge = Vec::new();
    for o in 0..l {
        for (minority, fl, ce) in [(true, 0, 1), (false, 2, 3)] {
            let cells: Vec<usize> = (0..n).filter(|&i| spec.minority[i] == minority).map(|i| i * l + o).collect();
            le.push(indicator(n * l, cells.clone(), spec.quotas[o][ce].clone()));
            ge.push(indicator(n * l, cells, spec.quotas[o][fl].clone()));
        }
    }
    (le, ge)
}

// ------------------------------------------------------------------- matching

/// Maximum matching size by augmenting paths with blossom contraction.
pub fn max_matching(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b && a < n && b < n {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for v in adj.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }
    const NONE: usize = usize::MAX;
    let mut mate = vec![NONE; n];
    let mut size = 0;
    for root in 0..n {
        if mate[root] != NONE {
            continue;
        }
        let mut parent = vec![NONE; n];
        let mut base: Vec<usize> = (0..n).collect();
        let mut used = vec![false; n];
        used[root] = true;
        let mut queue = VecDeque::from([root]);
        let mut end = NONE;
        'bfs: while let Some(v) = queue.pop_front() {
            for &to in &adj[v] {
                if base[v] == base[to] || mate[v] == to {
                    continue;
                }
                if to == root || (mate[to] != NONE && parent[mate[to]] != NONE) {
                    let cur = lca(&base, &mate, &parent, v, to);
                    let mut blossom = vec![false; n];
                    mark_path(&base, &mate, &mut parent, &mut blossom, v, cur, to);
                    mark_path(&base, &mate, &mut parent, &mut blossom, to, cur, v);
                    for i in 0..n {
                        if blossom[base[i]] {
                            base[i] = cur;
                            if !used[i] {
                                used[i] = true;
                                queue.push_back(i);
                            }
                        }
                    }
                } else if parent[to] == NONE {
                    parent[to] = v;
                    if mate[to] == NONE {
                        end = to;
                        break 'bfs;
                    }
                    used[mate[to]] = true;
                    queue.push_back(mate[to]);
                }
            }
        }
        if end != NONE {
            size += 1;
            let mut v = end;
            while v != NONE {
                let pv = parent[v];
                let ppv = mate[pv];
                mate[v] = pv;
                mate[pv] = v;
                v = ppv;
            }
        }
    }
    size
}

fn lca(base: &[usize], mate: &[usize], parent: &[usize], mut a: usize, mut b: usize) -> usize {
    let mut seen = vec![false; base.len()];
    loop {
        a = base[a];
        seen[a] = true;
        if mate[a] == usize::MAX {
            break;
        }
        a = parent[mate[a]];
    }
    loop {
        b = base[b];
        if seen[b] {
            return b;
        }
        b = parent[mate[b]];
    }
}

fn mark_path(
    base: &[usize],
    mate: &[usize],
    parent: &mut [usize],
    blossom: &mut [bool],
    mut v: usize,
    b: usize,
    mut child: usize,
) {
    while base[v] != b {
        blossom[base[v]] = true;
        blossom[base[mate[v]]] = true;
        parent[v] = child;
        child = mate[v];
        v = parent[mate[v]];
    }
}

/// Exhaustive maximum matching over edge subsets; limited to 20 edges.
pub fn brute_force_matching(n: usize, edges: &[(usize, usize)]) -> usize {
    assert!(edges.len() <= 20, "brute-force matching is limited to 20 edges");
    let mut best = 0;
    for mask in 0u32..(1u32 << edges.len()) {
        let mut used = vec![false; n];
        let mut ok = true;
        for (e, &(a, b)) in edges.iter().enumerate() {
            if mask >> e & 1 == 1 {
                if a == b || used[a] || used[b] {
                    ok = false;
                    break;
                }
                used[a] = true;
                used[b] = true;
            }
        }
        if ok {
            best = best.max(mask.count_ones() as usize);
        }
    }
    best
}

/// Matching size with the exhaustive method for tiny graphs.
pub fn matching_number(n: usize, edges: &[(usize, usize)]) -> usize {
    if edges.len() <= 12 {
        brute_force_matching(n, edges)
    } else {
        max_matching(n, edges)
    }
}

// ------------------------------------------------------------------ roommates

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoommateFamilies {
    /// Every orientation-free pair set.
    Full,
    /// Complete orientations of odd agent subsets only.
    OddSets,
}

impl RoommateFamilies {
    pub fn default_for(n: usize) -> Self {
        if n <= FULL_FAMILY_DEFAULT_MAX {
            RoommateFamilies::Full
        } else {
            RoommateFamilies::OddSets
        }
    }
}

/// Pair-set and per-agent cross inequalities describing the lower contour set
/// of the matching polytope on `n` agents (objects are agent copies).
pub fn roommate_system(n: usize, families: RoommateFamilies, prune: bool) -> Result<Vec<LinearConstraint>> {
    if n == 0 || n > DEFAULT_ROOMMATE_CAP {
        return Err(PmktError::Capacity(format!("roommate instances support 1..={DEFAULT_ROOMMATE_CAP} agents")));
    }
    if families == RoommateFamilies::Full && n > FULL_FAMILY_HARD_MAX {
        return Err(PmktError::Capacity(format!("full pair-set families are limited to {FULL_FAMILY_HARD_MAX} agents")));
    }
    let cells = n * n;
    let cell = |i: usize, j: usize| i * n + j;
    let mut w: Vec<LinearConstraint> = Vec::new();
    // Cross families: (i,i) plus one orientation of each pair touching i.
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        for mask in 0u32..(1u32 << others.len()) {
            let mut sup = vec![cell(i, i)];
            for (b, &j) in others.iter().enumerate() {
                sup.push(if mask >> b & 1 == 1 { cell(j, i) } else { cell(i, j) });
            }
            w.push(indicator(cells, sup, Q::one()));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    match families {
        RoommateFamilies::Full => {
            let total = 3usize.pow(pairs.len() as u32);
            for code in 1..total {
                let mut c = code;
                let mut sup = Vec::new();
                let mut edges = Vec::new();
                for &(i, j) in &pairs {
                    match c % 3 {
                        1 => {
                            sup.push(cell(i, j));
                            edges.push((i, j));
                        }
                        2 => {
                            sup.push(cell(j, i));
                            edges.push((i, j));
                        }
                        _ => {}
                    }
                    c /= 3;
                }
                let k = matching_number(n, &edges);
                w.push(indicator(cells, sup, qi(k as i64)));
            }
        }
        RoommateFamilies::OddSets => {
            for subset in 1u32..(1u32 << n) {
                let size = subset.count_ones() as usize;
                if size < 3 || size % 2 == 0 {
                    continue;
                }
                let members: Vec<usize> = mask_members(subset, n).collect();
                let sub_pairs: Vec<(usize, usize)> = pairs
                    .iter()
                    .copied()
                    .filter(|(i, j)| members.contains(i) && members.contains(j))
                    .collect();
                for orient in 0u64..(1u64 << sub_pairs.len()) {
                    let sup = sub_pairs
                        .iter()
                        .enumerate()
                        .map(|(b, &(i, j))| if orient >> b & 1 == 1 { cell(j, i) } else { cell(i, j) });
                    w.push(indicator(cells, sup, qi((size / 2) as i64)));
                }
            }
        }
    }
    if prune {
        w = prune_dominated(w);
        if w.len() <= 400 {
            w = remove_redundant(&w, cells, &[]);
        }
    }
    Ok(w)
}

/// Removes rows whose coefficient vector is dominated by another row with no
/// larger right-hand side. Duplicates keep their first occurrence.
pub fn prune_dominated(w: Vec<LinearConstraint>) -> Vec<LinearConstraint> {
    let mut w: Vec<LinearConstraint> = w.into_iter().map(|c| c.normalized()).collect();
    w.sort();
    w.dedup();
    let dominates = |big: &LinearConstraint, small: &LinearConstraint| {
        big.b <= small.b && big.a.iter().zip(&small.a).all(|(x, y)| x >= y)
    };
    let keep: Vec<bool> = (0..w.len())
        .map(|k| !(0..w.len()).any(|j| j != k && dominates(&w[j], &w[k]) && (w[j] != w[k])))
        .collect();
    w.into_iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c).collect()
}

/// All matchings on `n` agents as symmetric 0/1 matrices with unit diagonal
/// for unmatched agents.
pub fn enumerate_matchings(n: usize) -> Vec<Vec<Q>> {
    let mut out = Vec::new();
    let mut partner = vec![usize::MAX; n];
    fn rec(i: usize, n: usize, partner: &mut Vec<usize>, out: &mut Vec<Vec<Q>>) {
        if i == n {
            let mut m = vec![Q::zero(); n * n];
            for a in 0..n {
                m[a * n + partner[a]] = Q::one();
            }
            out.push(m);
            return;
        }
        if partner[i] != usize::MAX {
            rec(i + 1, n, partner, out);
            return;
        }
        partner[i] = i;
        rec(i + 1, n, partner, out);
        for j in i + 1..n {
            if partner[j] == usize::MAX {
                partner[i] = j;
                partner[j] = i;
                rec(i + 1, n, partner, out);
                partner[j] = usize::MAX;
            }
        }
        partner[i] = usize::MAX;
    }
    rec(0, n, &mut partner, &mut out);
    out
}

// ----------------------------------------------------------------- coalitions

/// Set partitions of `n` agents as assignments over the `2^n − 1` nonempty
/// coalitions (column `mask − 1` is coalition `mask`).
pub fn enumerate_coalitions(n: usize) -> Result<VPolytope> {
    if n == 0 || n > 6 {
        return Err(PmktError::Capacity("coalition enumeration supports 1..=6 agents".into()));
    }
    let l = (1usize << n) - 1;
    let mut block = vec![0usize; n];
    let mut out = Vec::new();
    fn rec(i: usize, n: usize, used: usize, block: &mut Vec<usize>, l: usize, out: &mut Vec<Vec<Q>>) {
        if i == n {
            let mut masks = vec![0usize; used];
            for (a, &b) in block.iter().enumerate() {
                masks[b] |= 1 << a;
            }
            let mut v = vec![Q::zero(); n * l];
            for (a, &b) in block.iter().enumerate() {
                v[a * l + masks[b] - 1] = Q::one();
            }
            out.push(v);
            return;
        }
        for b in 0..=used {
            block[i] = b;
            rec(i + 1, n, used.max(b + 1), block, l, out);
        }
    }
    rec(0, n, 0, &mut block, l, &mut out);
    Ok(VPolytope { n_agents: n, n_objects: l, vertices: out })
}

// -------------------------------------------------------------------- bundles

/// Deterministic assignments giving each agent at most one bundle while
/// respecting item quantities. `bundles[b]` lists item indices.
pub fn enumerate_bundles(n: usize, item_quantities: &[Q], bundles: &[Vec<usize>]) -> Result<VPolytope> {
    let l = bundles.len();
    let combos = (l as f64 + 1.0).powi(n as i32);
    if combos > ENUMERATION_CAP as f64 {
        return Err(PmktError::Capacity(format!("{combos} bundle assignments exceed the enumeration cap")));
    }
    let mut out = Vec::new();
    let mut choice = vec![0usize; n];
    loop {
        let mut used = vec![Q::zero(); item_quantities.len()];
        for &c in &choice {
            if c > 0 {
                for &it in &bundles[c - 1] {
                    used[it] += Q::one();
                }
            }
        }
        if used.iter().zip(item_quantities).all(|(u, q)| u <= q) {
            let mut v = vec![Q::zero(); n * l];
            for (i, &c) in choice.iter().enumerate() {
                if c > 0 {
                    v[i * l + c - 1] = Q::one();
                }
            }
            out.push(v);
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(VPolytope { n_agents: n, n_objects: l, vertices: out });
            }
            choice[k] += 1;
            if choice[k] <= l {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Integral assignments satisfying cell-set floors and ceilings, by
/// exhaustive search over each cell's admissible range.
pub fn enumerate_integral(
    n: usize,
    l: usize,
    le: &[LinearConstraint],
    ge: &[LinearConstraint],
) -> Result<VPolytope> {
    let cells = n * l;
    let mut hi = vec![i64::MAX; cells];
    for c in le {
        for k in c.support() {
            let bound = (&c.b / &c.a[k]).floor().to_integer();
            let bound: i64 = bound.try_into().unwrap_or(i64::MAX);
            hi[k] = hi[k].min(bound);
        }
    }
    if hi.contains(&i64::MAX) {
        return Err(PmktError::Validation("every cell must be covered by a finite ceiling".into()));
    }
    let combos: f64 = hi.iter().map(|&h| (h.max(0) + 1) as f64).product();
    if combos > ENUMERATION_CAP as f64 {
        return Err(PmktError::Capacity(format!("{combos} integral assignments exceed the enumeration cap")));
    }
    let mut out = Vec::new();
    let mut x = vec![0i64; cells];
    loop {
        let xv: Vec<Q> = x.iter().map(|&v| qi(v)).collect();
        if le.iter().all(|c| c.eval(&xv) <= c.b) && ge.iter().all(|c| c.eval(&xv) >= c.b) {
            out.push(xv);
        }
        let mut k = 0;
        loop {
            if k == cells {
                if out.is_empty() {
                    return Err(PmktError::Infeasible("no integral assignment satisfies the quotas".into()));
                }
                return Ok(VPolytope { n_agents: n, n_objects: l, vertices: out });
            }
            x[k] += 1;
            if x[k] <= hi[k].max(0) {
                break;
            }
            x[k] = 0;
            k += 1;
        }
    }
}

// ----------------------------------------------------------------------- bads

/// Result of turning a bads instance into a goods instance over avoidance options.
#[derive(Clone, Debug, PartialEq)]
pub struct BadsDual {
    pub instance: Instance,
    /// Per agent `Σ_l v_{i,l}`: original utility equals this constant plus the
    /// dual utility of the avoidance bundle.
    pub utility_constant: Vec<f64>,
    /// Minimum number of copies of each bad that must be assigned.
    pub floors: Vec<Q>,
}

/// Goods instance whose objects are the options of not consuming each bad.
pub fn bads_dual(inst: &Instance) -> Result<BadsDual> {
    let n = inst.n();
    if !inst.is_bads() {
        return Err(PmktError::Validation("bads transform needs strictly negative utilities".into()));
    }
    let total: Q = inst.quantities.iter().sum();
    if total >= qi(n as i64) {
        return Err(PmktError::Validation(
            "total bad quantity leaves no slack; the problem is pure hz and should use the base solver".into(),
        ));
    }
    let supply: Vec<Q> = inst.quantities.iter().map(|q| qi(n as i64) - q).collect();
    let l = inst.l();
    let mut ineqs = Vec::new();
    for c in supply_columns(n, &supply) {
        ineqs.push(c);
    }
    for k in 0..n * l {
        ineqs.push(indicator(n * l, [k], Q::one()));
    }
    let to_explicit = |c: &LinearConstraint| crate::model::ExplicitInequality {
        a: c.a.chunks(l).map(|r| r.iter().cloned().map(crate::model::Num).collect()).collect(),
        b: crate::model::Num(c.b.clone()),
    };
    let instance = Instance {
        agents: inst.agents.clone(),
        objects: inst.objects.iter().map(|o| format!("avoid_{o}")).collect(),
        quantities: supply,
        utilities: inst.utilities.iter().map(|r| r.iter().map(|v| -v).collect()).collect(),
        endowments: None,
        alpha: inst.alpha,
        constraints: ConstraintSpec::Explicit { inequalities: ineqs.iter().map(to_explicit).collect() },
    };
    Ok(BadsDual {
        instance,
        utility_constant: inst.utilities.iter().map(|r| r.iter().sum()).collect(),
        floors: inst.quantities.clone(),
    })
}

/// Primal bads assignment `1 − x̃`.
pub fn bads_primal(dual_x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    dual_x.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect()
}

pub fn positive(q: &Q) -> bool {
    q.is_positive()
}
