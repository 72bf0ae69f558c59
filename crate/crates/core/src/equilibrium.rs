//! Equilibrium search over prices on the priced constraints, and independent
//! verification of candidate equilibria.
//!
//! The equilibrium gap at prices `p` and assignment `x` is
//!
//! ```text
//! gap(p, x) = Σ_i r_i² + Σ_c max(0, a_c·x − b_c)² + Σ_c (p_c · max(0, b_c − a_c·x) / μ)²
//! ```
//!
//! where `r_i` is agent `i`'s demand-optimality residual and `μ` is the mean
//! income at `p` (floored at 1e-12). Dividing the slackness products by the
//! income level keeps the gap invariant under rescaling prices when incomes
//! are pure endowment values. `gap(p)` evaluates this at the assignment chosen
//! by the selection program of [`evaluate`].

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{best_affordable, budget, cheapest_demand, dot, min_expenditure, Market, SATIATION_TOL};
use crate::diagnostics::{average_endowment_value, membership, Membership, Tolerances};
use crate::error::{PmktError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::Assignment;
use crate::pipeline::FeasibleSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Overrides the instance's income slack when set.
    pub alpha: Option<f64>,
    pub max_iters: usize,
    pub initial_step: f64,
    pub step_floor: f64,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
    /// Grid step as a fraction of the price ceiling.
    pub grid_resolution: f64,
    /// Iterations without improvement before a start gives up.
    pub stall_window: usize,
    pub polish: bool,
    pub nelder_mead: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: None,
            max_iters: 2_000,
            initial_step: 0.2,
            step_floor: 1e-4,
            restarts: 32,
            tol: 1e-6,
            seed: 0,
            grid_resolution: 0.05,
            stall_window: 200,
            polish: true,
            nelder_mead: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub prices: Vec<f64>,
    pub assignment: Assignment,
    /// `b_c − a_c·x` per priced constraint.
    pub slacks: Vec<f64>,
    /// `max_c p_c·|b_c − a_c·x|`.
    pub cs_residual: f64,
    pub demand_residuals: Vec<f64>,
    pub max_demand_residual: f64,
    /// Largest violation of any priced or consumption-set inequality.
    pub feasibility_violation: f64,
    pub membership: Membership,
    pub price_ceiling: f64,
    /// Some price sits at the ceiling, which an interior equilibrium never does.
    pub at_ceiling: bool,
    pub min_price: f64,
    pub average_endowment_value: Option<f64>,
    pub alpha: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub method: String,
    pub start: Option<usize>,
    pub converged: bool,
}

impl EquilibriumCertificate {
    /// Largest of the demand, slackness and feasibility residuals.
    pub fn score(&self) -> f64 {
        let m = if self.membership.member { 0.0 } else { self.membership.violation.max(1e-3) };
        self.max_demand_residual.max(self.cs_residual).max(self.feasibility_violation).max(m).max(-self.min_price)
    }
}

/// Upper end of the price box.
pub fn price_ceiling(m: &Market) -> Result<f64> {
    if m.priced.is_empty() {
        return Ok(1.0);
    }
    match &m.endowments {
        Some(w) => {
            let mut least = f64::INFINITY;
            for (c, row) in m.priced.iter().enumerate() {
                let v: f64 = row.cells.iter().map(|&(k, a)| a * w[k / m.l][k % m.l]).sum();
                if v <= 0.0 {
                    return Err(PmktError::Validation(format!(
                        "priced constraint {c} has no endowment on its support; endowment prices are unbounded"
                    )));
                }
                least = least.min(v);
            }
            Ok(2.0 * m.n as f64 / least)
        }
        None => {
            let bmin = m.priced.iter().map(|r| r.b).filter(|&b| b > 0.0).fold(f64::INFINITY, f64::min);
            Ok((m.n * m.l) as f64 / bmin + 1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub prices: Vec<f64>,
    pub income: f64,
    pub value: f64,
    pub cost: f64,
    pub satiated: bool,
    pub bundle: Vec<f64>,
}

/// One price evaluation: demands, the selected assignment and its excess.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub agents: Vec<AgentState>,
    pub x: Assignment,
    /// `a_c·x − b_c`.
    pub excess: Vec<f64>,
    pub gap: f64,
}

fn mean_income(agents: &[AgentState]) -> f64 {
    (agents.iter().map(|a| a.income).sum::<f64>() / agents.len().max(1) as f64).max(1e-12)
}

fn excess_of(m: &Market, x: &Assignment) -> Vec<f64> {
    m.priced.iter().map(|r| r.cells.iter().map(|&(k, a)| a * x[k / m.l][k % m.l]).sum::<f64>() - r.b).collect()
}

fn gap_of(m: &Market, p: &[f64], x: &Assignment, agents: &[AgentState]) -> f64 {
    let mu = mean_income(agents);
    let mut g = 0.0;
    for (i, a) in agents.iter().enumerate() {
        let spend = dot(&a.prices, &x[i]);
        let r = (a.value - m.utility(i, &x[i])).max(0.0) + (spend - a.income).max(0.0) + (spend - a.cost).max(0.0);
        g += r * r;
    }
    for (c, e) in excess_of(m, x).into_iter().enumerate() {
        let over = e.max(0.0);
        let under = p[c] * (-e).max(0.0) / mu;
        g += over * over + under * under;
    }
    g
}

/// Demands at `p` plus the assignment inside the product of cheapest-demand
/// sets that minimizes over-demand and priced under-demand.
pub fn evaluate(m: &Market, p: &[f64]) -> Result<Evaluation> {
    let n = m.n;
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let b = budget(m, i, p);
        let d = cheapest_demand(m, &b)?;
        let value = best_affordable(m, i, &b.prices, b.income).unwrap_or(d.utility).max(d.utility);
        agents.push(AgentState {
            prices: b.prices,
            income: b.income,
            value,
            cost: d.expenditure,
            satiated: d.satiated,
            bundle: d.bundle,
        });
    }
    let fallback: Assignment = agents.iter().map(|a| a.bundle.clone()).collect();
    let x = select(m, p, &agents).unwrap_or(fallback);
    let excess = excess_of(m, &x);
    let gap = gap_of(m, p, &x, &agents);
    Ok(Evaluation { agents, x, excess, gap })
}

fn select(m: &Market, p: &[f64], agents: &[AgentState]) -> Option<Assignment> {
    let (n, l) = (m.n, m.l);
    let cells = n * l;
    let k = m.priced.len();
    if k == 0 {
        return None;
    }
    let mu = mean_income(agents);
    // Variables: x (cells), s⁺ (k), s⁻ (k).
    let nv = cells + 2 * k;
    let tie = 1e-7 / cells as f64;
    let mut obj = vec![0.0; nv];
    for o in obj.iter_mut().take(cells) {
        *o = -tie;
    }
    for c in 0..k {
        obj[cells + c] = 1.0;
        obj[cells + k + c] = p[c] / mu;
    }
    let mut lp = LpProblem::new(Sense::Min, obj);
    for c in 0..k {
        if p[c] <= 0.0 {
            lp.upper[cells + k + c] = Some(0.0);
        }
    }
    let embed = |i: usize, row: &[f64]| {
        let mut a = vec![0.0; nv];
        a[i * l..(i + 1) * l].copy_from_slice(row);
        a
    };
    for (i, st) in agents.iter().enumerate() {
        let xs = &m.xsets[i];
        for (c, d) in &xs.rows {
            lp.le(embed(i, c), *d);
        }
        for (c, d) in &xs.floors {
            lp.ge(embed(i, c), *d);
        }
        for (o, &f) in xs.forbidden.iter().enumerate() {
            if f {
                lp.upper[i * l + o] = Some(0.0);
            }
        }
        // Demanded bundles reach their value within 1e-10; a looser floor lets
        // the solver's sign tolerance trade utility between equal agents.
        lp.ge(embed(i, &m.utilities[i]), st.value - 1e-10 * st.value.abs().max(1.0));
        if st.prices.iter().any(|&v| v != 0.0) {
            lp.le(embed(i, &st.prices), st.cost + SATIATION_TOL * st.cost.abs().max(1.0));
        }
    }
    for (c, r) in m.priced.iter().enumerate() {
        let mut a = vec![0.0; nv];
        for &(cell, v) in &r.cells {
            a[cell] = v;
        }
        a[cells + c] = -1.0;
        a[cells + k + c] = 1.0;
        lp.eq(a, r.b);
    }
    let s = solve_lp(&lp);
    if s.status != LpStatus::Optimal {
        return None;
    }
    Some((0..n).map(|i| (0..l).map(|o| s.x[i * l + o].max(0.0)).collect()).collect())
}

/// The equilibrium gap at `p` (see the module documentation).
pub fn equilibrium_gap(m: &Market, p: &[f64]) -> Result<f64> {
    Ok(evaluate(m, p)?.gap)
}

/// One damped update `clamp(p + η·z, 0, p̄)`; returns the new prices and `z`.
pub fn phi_step(m: &Market, p: &[f64], step: f64, ceiling: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let ev = evaluate(m, p)?;
    Ok((clamp_step(p, &ev.excess, step, ceiling), ev.excess))
}

fn clamp_step(p: &[f64], z: &[f64], step: f64, ceiling: f64) -> Vec<f64> {
    p.iter().zip(z).map(|(pc, zc)| (pc + step * zc).clamp(0.0, ceiling)).collect()
}

/// Recomputes every equilibrium condition for `(p, x)` from scratch.
pub fn verify(m: &Market, f: &FeasibleSet, p: &[f64], x: &Assignment, tol: f64) -> Result<EquilibriumCertificate> {
    let (n, l) = (m.n, m.l);
    if p.len() != m.priced.len() {
        return Err(PmktError::Validation(format!("expected {} prices, got {}", m.priced.len(), p.len())));
    }
    if x.len() != n || x.iter().any(|r| r.len() != l) {
        return Err(PmktError::Validation(format!("assignment must be {n}x{l}")));
    }
    let ceiling = price_ceiling(m)?;
    let slacks: Vec<f64> = excess_of(m, x).into_iter().map(|e| -e).collect();
    let cs_residual = p.iter().zip(&slacks).map(|(pc, s)| (pc * s).abs()).fold(0.0, f64::max);
    let mut feas = slacks.iter().map(|s| -s).fold(0.0f64, f64::max);
    let mut demand_residuals = Vec::with_capacity(n);
    for i in 0..n {
        feas = feas.max(m.xset_violation(i, &x[i]));
        let b = budget(m, i, p);
        let u = m.utility(i, &x[i]);
        let spend = dot(&b.prices, &x[i]);
        let value = best_affordable(m, i, &b.prices, b.income);
        let r1 = value.map_or(f64::INFINITY, |v| (v - u).max(0.0));
        let r2 = (spend - b.income).max(0.0);
        let satiated = value.is_some_and(|v| v >= m.satiation[i] - SATIATION_TOL);
        let level = u - 1e-12 * u.abs().max(1.0);
        let cheapest = min_expenditure(m, i, &b.prices, level, (!satiated).then_some(b.income));
        let r3 = cheapest.map_or(0.0, |e| (spend - e).max(0.0));
        demand_residuals.push(r1 + r2 + r3);
    }
    let max_demand_residual = demand_residuals.iter().copied().fold(0.0, f64::max);
    let mem = membership(x, f);
    let min_price = p.iter().copied().fold(0.0, f64::min);
    let converged = max_demand_residual <= tol
        && cs_residual <= tol
        && feas <= Tolerances::FEASIBILITY
        && mem.member
        && min_price >= 0.0;
    Ok(EquilibriumCertificate {
        prices: p.to_vec(),
        assignment: x.clone(),
        slacks,
        cs_residual,
        demand_residuals,
        max_demand_residual,
        feasibility_violation: feas,
        membership: mem,
        price_ceiling: ceiling,
        at_ceiling: p.iter().any(|&v| v >= ceiling * (1.0 - 1e-12)),
        min_price,
        average_endowment_value: average_endowment_value(m, p),
        alpha: m.alpha,
        tolerance: tol,
        iterations: 0,
        method: "verify".into(),
        start: None,
        converged,
    })
}

// ------------------------------------------------------------------ polish

struct Pattern {
    support: Vec<Vec<bool>>,
    rows: Vec<Vec<bool>>,
    floors: Vec<Vec<bool>>,
    binding: Vec<bool>,
    satiated: Vec<bool>,
}

fn pattern(m: &Market, p: &[f64], x: &Assignment, tau: f64, support: Option<&Vec<Vec<bool>>>) -> Pattern {
    let slack = excess_of(m, x);
    let pmax = p.iter().fold(1.0, |a: f64, &b| a.max(b));
    Pattern {
        support: (0..m.n)
            .map(|i| {
                (0..m.l)
                    .map(|o| support.map_or(x[i][o] > tau, |s| s[i][o]) && !m.xsets[i].forbidden[o])
                    .collect()
            })
            .collect(),
        rows: (0..m.n).map(|i| m.xsets[i].rows.iter().map(|(c, d)| d - dot(c, &x[i]) <= tau).collect()).collect(),
        floors: (0..m.n).map(|i| m.xsets[i].floors.iter().map(|(c, d)| dot(c, &x[i]) - d <= tau).collect()).collect(),
        // A clearly positive price outweighs a small slack.
        binding: slack.iter().zip(p).map(|(e, pc)| -e <= tau.max(pc / pmax)).collect(),
        satiated: (0..m.n).map(|i| m.utility(i, &x[i]) >= m.satiation[i] - tau).collect(),
    }
}

/// Agent `i`'s income as `constant + Σ_c coef_c·p_c`.
fn income_affine(m: &Market, i: usize) -> (f64, Vec<f64>) {
    match &m.endowments {
        Some(w) => (
            m.alpha,
            m.priced
                .iter()
                .map(|r| {
                    (1.0 - m.alpha)
                        * r.cells.iter().filter(|&&(k, _)| k / m.l == i).map(|&(k, a)| a * w[i][k % m.l]).sum::<f64>()
                })
                .collect(),
        ),
        None => (1.0, vec![0.0; m.priced.len()]),
    }
}

fn budget_residual(m: &Market, i: usize, p: &[f64], x: &[f64], satiated: bool) -> f64 {
    let b = budget(m, i, p);
    let r = dot(&b.prices, x) - b.income;
    if satiated {
        r.max(0.0)
    } else {
        r.abs()
    }
}

/// Penalty weight on pattern violations relative to budget residuals.
const ELASTIC_WEIGHT: f64 = 10.0;
const PATTERN_UPDATES: usize = 12;
const MIN_WEIGHT: f64 = 1e-3;

/// Column indices of the polish program for one pattern.
struct Layout {
    p: usize,
    t: Vec<usize>,
    mu: Vec<Vec<usize>>,
    phi: Vec<Vec<usize>>,
    e_cell: usize,
    e_priced: usize,
    e_row: Vec<Vec<usize>>,
    e_floor: Vec<Vec<usize>>,
    e_sat: usize,
    e_budget: usize,
    total: usize,
}

impl Layout {
    fn new(m: &Market) -> Layout {
        let (n, l, k) = (m.n, m.l, m.priced.len());
        let mut col = n * l;
        let p = col;
        col += k;
        let mut t = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        for i in 0..n {
            t.push(col);
            col += 1;
            mu.push((0..m.xsets[i].rows.len()).map(|j| col + j).collect());
            col += m.xsets[i].rows.len();
            phi.push((0..m.xsets[i].floors.len()).map(|j| col + j).collect());
            col += m.xsets[i].floors.len();
        }
        let e_cell = col;
        col += 2 * n * l;
        let e_priced = col;
        col += k;
        let mut e_row = Vec::with_capacity(n);
        let mut e_floor = Vec::with_capacity(n);
        for i in 0..n {
            e_row.push((0..m.xsets[i].rows.len()).map(|j| col + j).collect());
            col += m.xsets[i].rows.len();
            e_floor.push((0..m.xsets[i].floors.len()).map(|j| col + j).collect());
            col += m.xsets[i].floors.len();
        }
        let e_sat = col;
        col += n;
        let e_budget = col;
        col += 2 * n;
        Layout { p, t, mu, phi, e_cell, e_priced, e_row, e_floor, e_sat, e_budget, total: col }
    }
}

/// Builds the linearized first-order program around `(pk, xk)`.
#[allow(clippy::too_many_arguments)]
fn polish_lp(
    m: &Market,
    lay: &Layout,
    pat: &Pattern,
    ceiling: f64,
    pk: &[f64],
    xk: &Assignment,
    radius: f64,
    weight: f64,
) -> LpProblem<f64> {
    let (n, l, k) = (m.n, m.l, m.priced.len());
    let nv = lay.total;
    let mut obj = vec![0.0; nv];
    for o in obj.iter_mut().take(lay.e_budget).skip(lay.e_cell) {
        *o = weight;
    }
    for o in obj.iter_mut().skip(lay.e_budget) {
        *o = 1.0;
    }
    let mut lp = LpProblem::new(Sense::Min, obj);
    let prad = radius * pk.iter().fold(1.0, |a: f64, &b| a.max(b));
    for c in 0..k {
        lp.lower[lay.p + c] = (pk[c] - prad).max(0.0);
        lp.upper[lay.p + c] = Some((pk[c] + prad).min(ceiling));
    }
    let mut coef = vec![vec![0.0; n * l]; k];
    for (c, r) in m.priced.iter().enumerate() {
        for &(cell, a) in &r.cells {
            coef[c][cell] = a;
        }
    }
    for i in 0..n {
        let xs = &m.xsets[i];
        let embed = |row: &[f64]| {
            let mut a = vec![0.0; nv];
            a[i * l..(i + 1) * l].copy_from_slice(row);
            a
        };
        for o in 0..l {
            let v = i * l + o;
            if xs.forbidden[o] {
                lp.upper[v] = Some(0.0);
                continue;
            }
            lp.lower[v] = (xk[i][o] - radius).max(0.0);
            lp.upper[v] = Some(xk[i][o] + radius);
            // Stationarity residual r ≥ 0.
            let mut a = vec![0.0; nv];
            for c in 0..k {
                a[lay.p + c] = coef[c][v];
            }
            for (j, (g, _)) in xs.rows.iter().enumerate() {
                a[lay.mu[i][j]] = g[o];
            }
            for (j, (g, _)) in xs.floors.iter().enumerate() {
                a[lay.phi[i][j]] = -g[o];
            }
            a[lay.t[i]] = -m.utilities[i][o];
            let e = lay.e_cell + v;
            let dual = lay.e_cell + n * l + v;
            if pat.support[i][o] {
                let mut b = a.clone();
                b[e] = -1.0;
                lp.le(b, 0.0);
                lp.upper[dual] = Some(0.0);
            } else {
                let mut b = vec![0.0; nv];
                b[v] = 1.0;
                b[e] = -1.0;
                lp.le(b, 0.0);
            }
            a[dual] = 1.0;
            lp.ge(a, 0.0);
        }
        for (j, (g, h)) in xs.rows.iter().enumerate() {
            lp.le(embed(g), *h);
            let e = lay.e_row[i][j];
            if pat.rows[i][j] {
                let mut a = embed(g);
                a[e] = 1.0;
                lp.ge(a, *h);
            } else {
                let mut a = vec![0.0; nv];
                a[lay.mu[i][j]] = 1.0;
                a[e] = -1.0;
                lp.le(a, 0.0);
            }
        }
        for (j, (g, h)) in xs.floors.iter().enumerate() {
            lp.ge(embed(g), *h);
            let e = lay.e_floor[i][j];
            if pat.floors[i][j] {
                let mut a = embed(g);
                a[e] = -1.0;
                lp.le(a, *h);
            } else {
                let mut a = vec![0.0; nv];
                a[lay.phi[i][j]] = 1.0;
                a[e] = -1.0;
                lp.le(a, 0.0);
            }
        }
        // Linearized budget: π(pk)·x + π(p)·xk − coef·p = const + π(pk)·xk.
        let (inc0, inc) = income_affine(m, i);
        let pik = m.personal_prices(i, pk);
        let mut a = embed(&pik);
        for c in 0..k {
            a[lay.p + c] = dot(&coef[c][i * l..(i + 1) * l], &xk[i]) - inc[c];
        }
        let (ep, em) = (lay.e_budget + 2 * i, lay.e_budget + 2 * i + 1);
        a[ep] = 1.0;
        a[em] = -1.0;
        let rhs = inc0 + dot(&pik, &xk[i]);
        if pat.satiated[i] {
            lp.upper[ep] = Some(0.0);
            lp.le(a, rhs);
            let mut s = embed(&m.utilities[i]);
            s[lay.e_sat + i] = 1.0;
            lp.ge(s, m.satiation[i]);
        } else {
            lp.lower[lay.t[i]] = 1e-6;
            lp.upper[lay.e_sat + i] = Some(0.0);
            lp.eq(a, rhs);
        }
    }
    for (c, r) in m.priced.iter().enumerate() {
        let mut a = vec![0.0; nv];
        for &(cell, v) in &r.cells {
            a[cell] = v;
        }
        lp.le(a.clone(), r.b);
        let e = lay.e_priced + c;
        if pat.binding[c] {
            a[e] = 1.0;
            lp.ge(a, r.b);
        } else {
            let mut b = vec![0.0; nv];
            b[lay.p + c] = 1.0;
            b[e] = -1.0;
            lp.le(b, 0.0);
        }
    }
    lp
}

/// Flips every pattern entry whose elastic slack is active. Returns whether
/// anything changed.
fn update_pattern(m: &Market, lay: &Layout, pat: &mut Pattern, s: &[f64], x: &Assignment) -> bool {
    let tol = 1e-9;
    let mut changed = false;
    let mut flip = |b: &mut bool, e: f64| {
        if e > tol {
            *b = !*b;
            changed = true;
        }
    };
    for i in 0..m.n {
        for o in 0..m.l {
            if !m.xsets[i].forbidden[o] {
                let v = i * m.l + o;
                flip(&mut pat.support[i][o], s[lay.e_cell + v] + s[lay.e_cell + m.n * m.l + v]);
            }
        }
        for j in 0..pat.rows[i].len() {
            flip(&mut pat.rows[i][j], s[lay.e_row[i][j]]);
        }
        for j in 0..pat.floors[i].len() {
            flip(&mut pat.floors[i][j], s[lay.e_floor[i][j]]);
        }
        if pat.satiated[i] {
            flip(&mut pat.satiated[i], s[lay.e_sat + i]);
        } else if m.utility(i, &x[i]) >= m.satiation[i] - SATIATION_TOL {
            // Only worth trying when the budget cannot be met.
            flip(&mut pat.satiated[i], s[lay.e_budget + 2 * i] + s[lay.e_budget + 2 * i + 1]);
        }
    }
    for c in 0..pat.binding.len() {
        flip(&mut pat.binding[c], s[lay.e_priced + c]);
    }
    changed
}

/// Sequential linear programming on the first-order conditions. All
/// conditions are linear in (x, p, multipliers) except the budget identity,
/// which is linearized at the current iterate. Complementarity is imposed
/// through an active pattern whose violations are penalized; whenever
/// progress stalls with a violated pattern, the violated entries are flipped.
fn polish(m: &Market, ceiling: f64, p0: &[f64], x0: &Assignment, pat0: Pattern) -> Option<(Vec<f64>, Assignment)> {
    let (n, l) = (m.n, m.l);
    let lay = Layout::new(m);
    let mut pat = pat0;
    let mut pk: Vec<f64> = p0.iter().map(|v| v.clamp(0.0, ceiling)).collect();
    let mut xk = x0.clone();
    let mut result = None;
    let mut weight = ELASTIC_WEIGHT;
    for _ in 0..PATTERN_UPDATES {
        let mut radius = 0.0;
        let mut merit = f64::INFINITY;
        let mut last: Option<Vec<f64>> = None;
        for step in 0..20 {
            if step == 1 {
                radius = 0.25;
            }
            let s = solve_lp(&polish_lp(m, &lay, &pat, ceiling, &pk, &xk, radius, weight));
            if s.status != LpStatus::Optimal {
                if step == 0 {
                    continue;
                }
                radius *= 0.25;
                if radius < 1e-6 {
                    break;
                }
                continue;
            }
            let p: Vec<f64> = (0..pk.len()).map(|c| s.x[lay.p + c].clamp(0.0, ceiling)).collect();
            let x: Assignment = (0..n).map(|i| (0..l).map(|o| s.x[i * l + o].max(0.0)).collect()).collect();
            let elastic: f64 = s.x[lay.e_cell..lay.e_budget].iter().sum();
            let budget: f64 = (0..n).map(|i| budget_residual(m, i, &p, &x[i], pat.satiated[i])).sum();
            let new = budget + weight * elastic;
            if new < merit {
                let gain = merit - new;
                merit = new;
                pk = p;
                xk = x;
                last = Some(s.x);
                result = Some((pk.clone(), xk.clone()));
                if merit <= 1e-13 {
                    return result;
                }
                radius = (radius * 2.0).min(1.0);
                if gain < 1e-4 * merit {
                    break;
                }
            } else {
                radius *= 0.25;
                if radius < 1e-6 {
                    break;
                }
            }
        }
        let Some(s) = last else { break };
        if update_pattern(m, &lay, &mut pat, &s, &xk) {
            weight = ELASTIC_WEIGHT;
        } else if weight > MIN_WEIGHT {
            // Stuck with the pattern intact: make violations cheaper so the
            // program reveals which entries to flip.
            weight *= 0.1;
        } else {
            break;
        }
    }
    result
}

const POLISH_TAUS: [f64; 5] = [1e-7, 1e-5, 1e-3, 1e-2, 3e-2];
const LOOSE_TAUS: [f64; 4] = [1e-2, 5e-2, 1e-1, 2e-1];

/// A point to polish from, optionally with a support guessed from the
/// recent history of selections rather than from the point itself.
type Candidate = (Vec<f64>, Assignment, Option<Vec<Vec<bool>>>);

fn try_polish(m: &Market, f: &FeasibleSet, ceiling: f64, tol: f64, candidates: &[Candidate]) -> Option<EquilibriumCertificate> {
    let mut tried: Vec<(Vec<Vec<bool>>, Vec<bool>, Vec<bool>)> = Vec::new();
    for (p, x, support) in candidates {
        let taus: &[f64] = if support.is_some() { &LOOSE_TAUS } else { &POLISH_TAUS };
        for &tau in taus {
            let pat = pattern(m, p, x, tau, support.as_ref());
            let key = (pat.support.clone(), pat.binding.clone(), pat.satiated.clone());
            if tried.contains(&key) {
                continue;
            }
            tried.push(key);
            if let Some((pp, xx)) = polish(m, ceiling, p, x, pat) {
                if let Ok(cert) = verify(m, f, &pp, &xx, tol) {
                    if cert.converged {
                        return Some(cert);
                    }
                }
            }
        }
    }
    None
}

// ------------------------------------------------------------------- solve

struct StartResult {
    index: usize,
    converged: Option<EquilibriumCertificate>,
    best_p: Vec<f64>,
    best_gap: f64,
    iterations: usize,
}

fn start_prices(m: &Market, ceiling: f64, index: usize, seed: u64) -> Vec<f64> {
    let k = m.priced.len();
    match index {
        0 => vec![0.0; k],
        1 => {
            let bmax = m.priced.iter().map(|r| r.b).fold(0.0, f64::max).max(1e-12);
            m.priced.iter().map(|r| 0.5 * ceiling * r.b / bmax).collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64));
            (0..k).map(|_| rng.gen_range(0.0..=ceiling)).collect()
        }
    }
}

fn run_start(m: &Market, f: &FeasibleSet, cfg: &SolverConfig, ceiling: f64, index: usize, found: &AtomicUsize) -> StartResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut p = start_prices(m, ceiling, index, cfg.seed);
    let mut step = cfg.initial_step;
    let mut prev = f64::INFINITY;
    let mut best_gap = f64::INFINITY;
    let mut best_p = p.clone();
    let mut last_improve = 0usize;
    let mut avg_x: Option<Assignment> = None;
    let mut hits = vec![vec![0.0; m.l]; m.n];
    let mut avg_p = p.clone();
    let mut next_polish = 8usize;
    let ema = 0.05;
    let done = |iters: usize, cert: EquilibriumCertificate, method: &str| {
        let mut cert = cert;
        cert.iterations = iters;
        cert.method = method.into();
        cert.start = Some(index);
        cert
    };
    for it in 0..cfg.max_iters {
        // A lower-index start already converged and will be reported instead.
        if found.load(Ordering::Relaxed) < index {
            return StartResult { index, converged: None, best_p, best_gap, iterations: it };
        }
        let ev = match evaluate(m, &p) {
            Ok(ev) => ev,
            Err(_) => break,
        };
        if ev.gap < best_gap * (1.0 - 1e-6) {
            last_improve = it;
        }
        if ev.gap < best_gap {
            best_gap = ev.gap;
            best_p = p.clone();
        }
        if ev.gap <= (0.1 * cfg.tol).powi(2) {
            if let Ok(cert) = verify(m, f, &p, &ev.x, cfg.tol) {
                if cert.converged {
                    found.fetch_min(index, Ordering::Relaxed);
                    return StartResult { index, converged: Some(done(it + 1, cert, "tatonnement")), best_p, best_gap, iterations: it + 1 };
                }
            }
        }
        let ax = match avg_x.take() {
            None => ev.x.clone(),
            Some(a) => a.iter().zip(&ev.x).map(|(r, s)| r.iter().zip(s).map(|(u, v)| (1.0 - ema) * u + ema * v).collect()).collect(),
        };
        avg_p = avg_p.iter().zip(&p).map(|(u, v)| (1.0 - ema) * u + ema * v).collect();
        avg_x = Some(ax);
        for (hr, xr) in hits.iter_mut().zip(&ev.x) {
            for (h, &v) in hr.iter_mut().zip(xr) {
                *h = (1.0 - ema) * *h + if v > 1e-9 { ema } else { 0.0 };
            }
        }
        let stalled = it - last_improve >= cfg.stall_window;
        if cfg.polish && (it + 1 == next_polish || stalled) {
            next_polish *= 2;
            let seen: Vec<Vec<bool>> = hits.iter().map(|r| r.iter().map(|&h| h > 0.01).collect()).collect();
            let ax = avg_x.clone().unwrap();
            let cands = vec![(p.clone(), ev.x.clone(), None), (avg_p.clone(), ax.clone(), None), (avg_p.clone(), ax, Some(seen))];
            if let Some(cert) = try_polish(m, f, ceiling, cfg.tol, &cands) {
                found.fetch_min(index, Ordering::Relaxed);
                return StartResult { index, converged: Some(done(it + 1, cert, "polish")), best_p, best_gap, iterations: it + 1 };
            }
        }
        if stalled {
            if step <= cfg.step_floor {
                return StartResult { index, converged: None, best_p, best_gap, iterations: it + 1 };
            }
            last_improve = it;
            for v in p.iter_mut() {
                *v = (*v + rng.gen_range(-1e-8..=1e-8)).clamp(0.0, ceiling);
            }
        }
        if ev.gap > prev {
            step = (step * 0.5).max(cfg.step_floor);
        }
        prev = ev.gap;
        p = clamp_step(&p, &ev.excess, step, ceiling);
    }
    StartResult { index, converged: None, best_p, best_gap, iterations: cfg.max_iters }
}

/// Concurrency cap from `PMKT_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PMKT_THREADS").ok()?.trim().parse().ok().filter(|&t: &usize| t > 0)
}

const BATCH: usize = 8;

/// Multi-start damped price adjustment with pattern polishing, then a
/// Nelder–Mead fallback on the gap. Non-convergence is reported in the
/// certificate, not as an error.
pub fn solve(market: &Market, f: &FeasibleSet, cfg: &SolverConfig) -> Result<EquilibriumCertificate> {
    let alpha = cfg.alpha.unwrap_or(market.alpha);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PmktError::Validation(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(cfg.tol > 0.0) {
        return Err(PmktError::Validation("tolerance must be positive".into()));
    }
    let m = market.with_alpha(alpha);
    let ceiling = price_ceiling(&m)?;
    let k = m.priced.len();
    if k == 0 {
        let ev = evaluate(&m, &[])?;
        let mut cert = verify(&m, f, &[], &ev.x, cfg.tol)?;
        cert.iterations = 1;
        cert.method = "direct".into();
        return Ok(cert);
    }
    // Inside an outer pool (the corpus runner) each instance runs sequentially.
    let pool = if rayon::current_thread_index().is_some() {
        None
    } else {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = thread_cap() {
            b = b.num_threads(t);
        }
        Some(b.build().map_err(|e| PmktError::Validation(format!("thread pool: {e}")))?)
    };
    let starts = cfg.restarts.max(1);
    let mut best: Option<StartResult> = None;
    let mut total_iters = 0usize;
    let found = AtomicUsize::new(usize::MAX);
    let mut lo = 0;
    while lo < starts {
        let hi = (lo + BATCH).min(starts);
        let run = |s: usize| run_start(&m, f, cfg, ceiling, s, &found);
        let results: Vec<StartResult> = match &pool {
            Some(pool) => pool.install(|| (lo..hi).into_par_iter().map(run).collect()),
            None => (lo..hi).map(run).collect(),
        };
        total_iters += results.iter().map(|r| r.iterations).sum::<usize>();
        for r in results {
            if let Some(c) = r.converged {
                return Ok(c);
            }
            if best.as_ref().is_none_or(|b| r.best_gap < b.best_gap) {
                best = Some(r);
            }
        }
        lo = hi;
    }
    let best = best.expect("at least one start");
    let mut p = best.best_p.clone();
    let mut method = "best-start";
    if cfg.nelder_mead {
        let budget = (200 * (k + 1)).min(4000);
        let g = |q: &[f64]| equilibrium_gap(&m, q).unwrap_or(f64::INFINITY);
        let q = nelder_mead(&g, &p, 0.1 * ceiling, ceiling, budget);
        total_iters += budget;
        if g(&q) < best.best_gap {
            p = q;
            method = "nelder-mead";
        }
        let ev = evaluate(&m, &p)?;
        if cfg.polish {
            if let Some(mut cert) = try_polish(&m, f, ceiling, cfg.tol, &[(p.clone(), ev.x.clone(), None)]) {
                cert.iterations = total_iters;
                cert.method = "nelder-mead+polish".into();
                cert.start = Some(best.index);
                return Ok(cert);
            }
        }
    }
    let ev = evaluate(&m, &p)?;
    let mut cert = verify(&m, f, &p, &ev.x, cfg.tol)?;
    cert.iterations = total_iters;
    cert.method = method.into();
    cert.start = Some(best.index);
    Ok(cert)
}

/// Box-constrained Nelder–Mead (points are clamped into `[0, hi]`).
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], scale: f64, hi: f64, budget: usize) -> Vec<f64> {
    let d = x0.len();
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|t| t.clamp(0.0, hi)).collect() };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(d + 1);
    simplex.push((f(x0), x0.to_vec()));
    for j in 0..d {
        let mut v = x0.to_vec();
        v[j] = if v[j] + scale <= hi { v[j] + scale } else { v[j] - scale };
        let v = clamp(v);
        simplex.push((f(&v), v));
    }
    let mut evals = d + 1;
    while evals < budget {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        if simplex[d].0 - simplex[0].0 <= 1e-16 * simplex[0].0.abs().max(1e-300) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|s| s.1[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| clamp(centroid.iter().zip(&simplex[d].1).map(|(c, w)| c + t * (c - w)).collect());
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].0 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (fe, xe) } else { (fr, xr) };
        } else if fr < simplex[d - 1].0 {
            simplex[d] = (fr, xr);
        } else {
            let xc = along(if fr < simplex[d].0 { 0.5 } else { -0.5 });
            let fc = f(&xc);
            evals += 1;
            if fc < simplex[d].0.min(fr) {
                simplex[d] = (fc, xc);
            } else {
                let b = simplex[0].1.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.1 = clamp(s.1.iter().zip(&b).map(|(v, w)| w + 0.5 * (v - w)).collect());
                    s.0 = f(&s.1);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    simplex.swap_remove(0).1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub min_gap: f64,
    pub argmin: Vec<f64>,
    pub nodes: usize,
    /// Up to ten lowest-gap nodes, ascending.
    pub best: Vec<(f64, Vec<f64>)>,
}

/// Exhaustive sweep of the gap over a grid on `[0, upper]^{Ω*}`.
pub fn grid_oracle(m: &Market, upper: f64, step: f64) -> Result<GridResult> {
    let k = m.priced.len();
    if k == 0 || k > 3 {
        return Err(PmktError::Capacity(format!("grid oracle supports 1 to 3 priced constraints, got {k}")));
    }
    if !(step > 0.0) || !(upper > 0.0) {
        return Err(PmktError::Validation("grid step and upper bound must be positive".into()));
    }
    let per = (upper / step).round() as usize + 1;
    let nodes = per.pow(k as u32);
    let point = |idx: usize| -> Vec<f64> {
        let mut r = idx;
        (0..k)
            .map(|_| {
                let v = (r % per) as f64 * step;
                r /= per;
                v.min(upper)
            })
            .collect()
    };
    let mut vals: Vec<(f64, usize)> = (0..nodes)
        .into_par_iter()
        .map(|idx| (equilibrium_gap(m, &point(idx)).unwrap_or(f64::INFINITY), idx))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let best: Vec<(f64, Vec<f64>)> = vals.iter().take(10).map(|&(g, i)| (g, point(i))).collect();
    Ok(GridResult { min_gap: best[0].0, argmin: best[0].1.clone(), nodes, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{satiation_value, FloatConsumption, PricedRow};

    fn hz_market(utilities: Vec<Vec<f64>>, supply: Vec<f64>, endow: Option<Vec<Vec<f64>>>, alpha: f64) -> Market {
        let n = utilities.len();
        let l = supply.len();
        let xs = FloatConsumption { rows: vec![(vec![1.0; l], 1.0)], floors: vec![], forbidden: vec![false; l] };
        let priced = (0..l).map(|o| PricedRow { cells: (0..n).map(|i| (i * l + o, 1.0)).collect(), b: supply[o] }).collect();
        let mut m = Market {
            n,
            l,
            utility_scale: vec![1.0; n],
            utilities,
            priced,
            xsets: vec![xs; n],
            endowments: endow,
            alpha,
            satiation: vec![],
        };
        m.satiation = (0..n).map(|i| satiation_value(&m, i).unwrap()).collect();
        m
    }

    fn example(alpha: f64) -> Market {
        let u = vec![vec![1.0, 0.01], vec![1.0, 0.01], vec![0.01, 1.0]];
        hz_market(u, vec![1.0, 2.0], Some(vec![vec![1.0 / 3.0, 2.0 / 3.0]; 3]), alpha)
    }

    fn unit_feasible(n: usize, l: usize, supply: &[i64]) -> FeasibleSet {
        use crate::structured::{supply_columns, unit_demand_rows};
        let mut le = unit_demand_rows(n, l);
        le.extend(supply_columns(n, &supply.iter().map(|&q| crate::scalar::qi(q)).collect::<Vec<_>>()));
        FeasibleSet::Inequalities { le, ge: vec![] }
    }

    #[test]
    fn ceilings() {
        let m = hz_market(vec![vec![1.0, 1.0]; 3], vec![1.0, 1.0], None, 1.0);
        assert_eq!(price_ceiling(&m).unwrap(), 7.0);
        assert!((price_ceiling(&example(0.5)).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn clamp_behaviour() {
        assert_eq!(clamp_step(&[0.0, 5.0, 1.0], &[-1.0, 10.0, 0.0], 1.0, 6.0), vec![0.0, 6.0, 1.0]);
    }

    #[test]
    fn example_prices_verify() {
        let f = unit_feasible(3, 2, &[1, 2]);
        for alpha in [0.1, 0.5, 1.0] {
            let m = example(alpha);
            let p = vec![6.0 * alpha / (1.0 + 2.0 * alpha), 0.0];
            let x = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]];
            let c = verify(&m, &f, &p, &x, 1e-9).unwrap();
            assert!(c.converged, "{c:?}");
            let bad = vec![vec![0.6, 0.4], vec![0.5, 0.5], vec![0.0, 1.0]];
            assert!(!verify(&m, &f, &p, &bad, 1e-9).unwrap().converged);
        }
    }

    #[test]
    fn solve_recovers_example() {
        let f = unit_feasible(3, 2, &[1, 2]);
        let c = solve(&example(0.5), &f, &SolverConfig::default()).unwrap();
        assert!(c.converged, "{c:?}");
        assert!((c.prices[0] - 1.5).abs() < 1e-6, "{:?}", c.prices);
        assert!((c.assignment[0][0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_agent_single_object() {
        let m = hz_market(vec![vec![1.0]], vec![1.0], None, 1.0);
        let c = solve(&m, &unit_feasible(1, 1, &[1]), &SolverConfig::default()).unwrap();
        assert!(c.converged);
        assert_eq!(c.prices, vec![0.0]);
        assert!((c.assignment[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_under_seed() {
        let f = unit_feasible(3, 2, &[1, 2]);
        let cfg = SolverConfig { seed: 5, ..Default::default() };
        let a = solve(&example(0.3), &f, &cfg).unwrap();
        let b = solve(&example(0.3), &f, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
