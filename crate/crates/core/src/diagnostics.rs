//! Normative checks on an assignment: feasibility, constrained efficiency,
//! envy, individual rationality and the endowment-value envy property.

use serde::{Deserialize, Serialize};

use crate::demand::{best_affordable, dot, Market};
use crate::error::{PmktError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{Assignment, LinearConstraint};
use crate::pipeline::FeasibleSet;
use crate::scalar::q_to_f64;

/// Shared comparison tolerances.
pub struct Tolerances;

impl Tolerances {
    /// Utility comparisons, on the normalized utility scale.
    pub const UTILITY: f64 = 1e-9;
    /// Constraint satisfaction and membership.
    pub const FEASIBILITY: f64 = 1e-7;
    /// Largest aggregate utility gain still counted as efficient.
    pub const PARETO: f64 = 1e-7;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Largest constraint violation (or L1 distance to the hull in vertex mode).
    pub violation: f64,
    /// Convex weights over the vertices, in vertex mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn flat(x: &Assignment) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

fn row_f64(c: &LinearConstraint) -> (Vec<f64>, f64) {
    (c.a.iter().map(q_to_f64).collect(), q_to_f64(&c.b))
}

fn shape_ok(x: &Assignment, n: usize, l: usize) -> bool {
    x.len() == n && x.iter().all(|r| r.len() == l)
}

fn violation_of(le: &[LinearConstraint], ge: &[LinearConstraint], y: &[f64]) -> f64 {
    let mut v = y.iter().fold(0.0f64, |m, &t| m.max(-t));
    for c in le {
        let (a, b) = row_f64(c);
        v = v.max(dot(&a, y) - b);
    }
    for c in ge {
        let (a, b) = row_f64(c);
        v = v.max(b - dot(&a, y));
    }
    v
}

fn dims(f: &FeasibleSet) -> Option<usize> {
    match f {
        FeasibleSet::Vertices(p) => Some(p.n_agents * p.n_objects),
        FeasibleSet::Inequalities { le, ge } => le.first().or(ge.first()).map(|c| c.a.len()),
        FeasibleSet::LowerContour(w) => w.first().map(|c| c.a.len()),
    }
}

/// Whether `x` lies in the feasible set.
pub fn membership(x: &Assignment, f: &FeasibleSet) -> Membership {
    let y = flat(x);
    if let Some(d) = dims(f) {
        if d != y.len() || x.is_empty() || y.len() % x.len() != 0 || !shape_ok(x, x.len(), d / x.len()) {
            return Membership { member: false, violation: f64::INFINITY, weights: None };
        }
    }
    match f {
        FeasibleSet::Vertices(p) => {
            let (k, cells) = (p.vertices.len(), y.len());
            // Variables: λ (k), then d⁺ and d⁻ per cell.
            let nv = k + 2 * cells;
            let mut obj = vec![0.0; nv];
            for o in obj.iter_mut().skip(k) {
                *o = 1.0;
            }
            let mut lp = LpProblem::new(Sense::Min, obj);
            for c in 0..cells {
                let mut a = vec![0.0; nv];
                for (j, v) in p.vertices.iter().enumerate() {
                    a[j] = q_to_f64(&v[c]);
                }
                a[k + c] = 1.0;
                a[k + cells + c] = -1.0;
                lp.eq(a, y[c]);
            }
            let mut a = vec![0.0; nv];
            for t in a.iter_mut().take(k) {
                *t = 1.0;
            }
            lp.eq(a, 1.0);
            let s = solve_lp(&lp);
            if s.status != LpStatus::Optimal {
                return Membership { member: false, violation: f64::INFINITY, weights: None };
            }
            let dist = (0..cells).map(|c| s.x[k + c] + s.x[k + cells + c]).fold(0.0f64, f64::max);
            Membership { member: dist <= Tolerances::FEASIBILITY, violation: dist, weights: Some(s.x[..k].to_vec()) }
        }
        FeasibleSet::Inequalities { le, ge } => {
            let v = violation_of(le, ge, &y);
            Membership { member: v <= Tolerances::FEASIBILITY, violation: v, weights: None }
        }
        FeasibleSet::LowerContour(w) => {
            let v = violation_of(w, &[], &y);
            // Maximal: every cell sits in some tight inequality.
            let rows: Vec<(Vec<f64>, f64)> = w.iter().map(row_f64).collect();
            let maximal = (0..y.len()).all(|k| {
                rows.iter().any(|(a, b)| a[k] > 0.0 && b - dot(a, &y) <= Tolerances::FEASIBILITY)
            });
            Membership { member: v <= Tolerances::FEASIBILITY && maximal, violation: v, weights: None }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub efficient: bool,
    /// Optimal aggregate (strong) or minimum (weak) utility gain.
    pub gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominating: Option<Assignment>,
}

/// Efficiency within the feasible set. The strong test maximizes the total
/// gain subject to nobody losing; the weak test maximizes the smallest gain.
pub fn pareto_test(x: &Assignment, m: &Market, f: &FeasibleSet, strong: bool) -> ParetoResult {
    let (n, l) = (m.n, m.l);
    let cells = n * l;
    let base: Vec<f64> = (0..n).map(|i| m.utility(i, &x[i])).collect();
    // Column k of the design maps decision variables to cell values.
    let (nvar, cell_of): (usize, Box<dyn Fn(usize) -> Vec<(usize, f64)>>) = match f {
        FeasibleSet::Vertices(p) => {
            let verts: Vec<Vec<f64>> = p.vertices.iter().map(|v| v.iter().map(q_to_f64).collect()).collect();
            let k = verts.len();
            (k, Box::new(move |c| (0..k).filter(|&j| verts[j][c] != 0.0).map(|j| (j, verts[j][c])).collect()))
        }
        _ => (cells, Box::new(|c| vec![(c, 1.0)])),
    };
    let extra = 1; // weak-test variable t
    let nv = nvar + extra;
    let t = nvar;
    let util_row = |i: usize| {
        let mut a = vec![0.0; nv];
        for o in 0..l {
            for (j, w) in cell_of(i * l + o) {
                a[j] += m.utilities[i][o] * w;
            }
        }
        a
    };
    let mut obj = vec![0.0; nv];
    if strong {
        for i in 0..n {
            for (j, w) in util_row(i).into_iter().enumerate() {
                obj[j] += w;
            }
        }
    } else {
        obj[t] = 1.0;
    }
    let mut lp = LpProblem::new(Sense::Max, obj);
    lp.upper[t] = Some(if strong { 0.0 } else { 1.0 });
    for (i, b) in base.iter().enumerate() {
        let mut a = util_row(i);
        if !strong {
            a[t] = -1.0;
        }
        lp.ge(a, b - 1e-10);
    }
    match f {
        FeasibleSet::Vertices(_) => {
            let mut a = vec![1.0; nv];
            a[t] = 0.0;
            lp.eq(a, 1.0);
        }
        FeasibleSet::Inequalities { le, ge } => {
            for c in le {
                let (mut a, b) = row_f64(c);
                a.push(0.0);
                lp.le(a, b);
            }
            for c in ge {
                let (mut a, b) = row_f64(c);
                a.push(0.0);
                lp.ge(a, b);
            }
        }
        FeasibleSet::LowerContour(w) => {
            for c in w {
                let (mut a, b) = row_f64(c);
                a.push(0.0);
                lp.le(a, b);
            }
        }
    }
    let s = solve_lp(&lp);
    if s.status != LpStatus::Optimal {
        // x is outside the set (within tolerance); nothing dominates it inside.
        return ParetoResult { efficient: true, gain: 0.0, dominating: None };
    }
    let gain = if strong { s.objective - base.iter().sum::<f64>() } else { s.objective };
    let efficient = gain <= Tolerances::PARETO;
    let dominating = (!efficient).then(|| {
        (0..n)
            .map(|i| (0..l).map(|o| cell_of(i * l + o).iter().map(|&(j, w)| w * s.x[j]).sum()).collect())
            .collect()
    });
    ParetoResult { efficient, gain, dominating }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvyReport {
    /// `(envious, envied, utility difference)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub equal_type_violations: Vec<(usize, usize)>,
}

/// All envy pairs, flagging those within an equal-type class.
pub fn envy_test(x: &Assignment, m: &Market, partition: &[Vec<usize>]) -> EnvyReport {
    let mut class = vec![usize::MAX; m.n];
    for (k, c) in partition.iter().enumerate() {
        for &i in c {
            class[i] = k;
        }
    }
    let mut pairs = Vec::new();
    let mut equal_type_violations = Vec::new();
    for i in 0..m.n {
        let own = m.utility(i, &x[i]);
        for j in 0..m.n {
            if i == j {
                continue;
            }
            let d = m.utility(i, &x[j]) - own;
            if d > Tolerances::UTILITY {
                pairs.push((i, j, d));
                if class[i] == class[j] {
                    equal_type_violations.push((i, j));
                }
            }
        }
    }
    EnvyReport { pairs, equal_type_violations }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    /// Best utility affordable at the value of the own endowment, minus realized utility.
    pub gaps: Vec<f64>,
    /// `u_i(ω_i) − u_i(x_i)`.
    pub plain_gaps: Vec<f64>,
    pub max_gap: f64,
    pub within_epsilon: bool,
}

pub fn ir_test(x: &Assignment, m: &Market, p: &[f64], epsilon: f64) -> Result<IrReport> {
    let w = m.endowments.as_ref().ok_or_else(|| PmktError::Validation("individual rationality needs endowments".into()))?;
    let mut gaps = Vec::with_capacity(m.n);
    let mut plain_gaps = Vec::with_capacity(m.n);
    for i in 0..m.n {
        let pi = m.personal_prices(i, p);
        let own = m.utility(i, &x[i]);
        let best = best_affordable(m, i, &pi, dot(&pi, &w[i])).unwrap_or(own);
        gaps.push(best - own);
        plain_gaps.push(m.utility(i, &w[i]) - own);
    }
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IrReport { within_epsilon: max_gap < epsilon, gaps, plain_gaps, max_gap })
}

/// Agents facing the same consumption set and the same priced coefficients.
pub fn price_equivalent(m: &Market, i: usize, j: usize) -> bool {
    if m.xsets[i] != m.xsets[j] {
        return false;
    }
    m.priced.iter().all(|r| {
        let row = |a: usize| -> Vec<(usize, f64)> {
            r.cells.iter().filter(|(k, _)| k / m.l == a).map(|&(k, c)| (k % m.l, c)).collect()
        };
        row(i) == row(j)
    })
}

/// For every envy pair between price-equivalent agents: the envied bundle
/// must cost more, and (with endowments) the envied agent's endowment must be
/// worth more. Returns one message per failed inequality.
pub fn envy_value_check(x: &Assignment, p: &[f64], m: &Market) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..m.n {
        let own = m.utility(i, &x[i]);
        let pi = m.personal_prices(i, p);
        for j in 0..m.n {
            if i == j || !price_equivalent(m, i, j) || m.utility(i, &x[j]) <= own + Tolerances::UTILITY {
                continue;
            }
            let dx = dot(&pi, &x[j]) - dot(&pi, &x[i]);
            if dx <= Tolerances::UTILITY {
                out.push(format!("input not an equilibrium: agent {i} envies {j} but the bundles differ in value by {dx:e}"));
            }
            if let Some(w) = &m.endowments {
                let dw = dot(&pi, &w[j]) - dot(&pi, &w[i]);
                if dw <= Tolerances::UTILITY {
                    out.push(format!(
                        "input not an equilibrium: agent {i} envies {j} but the endowments differ in value by {dw:e}"
                    ));
                }
            }
        }
    }
    out
}

/// Average endowment value `(1/N) Σ p_i·ω_i`, when endowments exist.
pub fn average_endowment_value(m: &Market, p: &[f64]) -> Option<f64> {
    let w = m.endowments.as_ref()?;
    Some((0..m.n).map(|i| dot(&m.personal_prices(i, p), &w[i])).sum::<f64>() / m.n as f64)
}
