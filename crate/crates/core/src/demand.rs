//! Agent-level optimization: budgets, satiation values, and cheapest-bundle
//! demand, all as small floating-point linear programs.

use crate::error::{PmktError, Result};
use crate::linprog::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{ConstraintSystem, Instance};
use crate::scalar::q_to_f64;

/// Utility tolerance for satiation and optimality comparisons.
pub const SATIATION_TOL: f64 = 1e-9;
const XSET_TOL: f64 = 1e-12;

/// Sparse priced row: `Σ coeff·x[cell] ≤ b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PricedRow {
    pub cells: Vec<(usize, f64)>,
    pub b: f64,
}

/// Floating-point view of one agent's consumption set.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatConsumption {
    pub rows: Vec<(Vec<f64>, f64)>,
    pub floors: Vec<(Vec<f64>, f64)>,
    pub forbidden: Vec<bool>,
}

/// Everything the equilibrium search needs, in floating point, with each
/// agent's utility rescaled to a maximum absolute coefficient of one.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub n: usize,
    pub l: usize,
    pub utilities: Vec<Vec<f64>>,
    pub utility_scale: Vec<f64>,
    pub priced: Vec<PricedRow>,
    pub xsets: Vec<FloatConsumption>,
    pub endowments: Option<Vec<Vec<f64>>>,
    pub alpha: f64,
    pub satiation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSpec {
    pub agent: usize,
    pub prices: Vec<f64>,
    pub income: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandResult {
    pub bundle: Vec<f64>,
    pub utility: f64,
    pub expenditure: f64,
    /// Maximum utility over the consumption set, ignoring the budget.
    pub satiation: f64,
    pub satiated: bool,
}

impl Market {
    pub fn new(inst: &Instance, sys: &ConstraintSystem) -> Result<Market> {
        let (n, l) = (sys.n_agents, sys.n_objects);
        let mut utilities = Vec::with_capacity(n);
        let mut utility_scale = Vec::with_capacity(n);
        for row in &inst.utilities {
            let s = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let s = if s > 0.0 { s } else { 1.0 };
            utility_scale.push(s);
            utilities.push(row.iter().map(|v| v / s).collect());
        }
        let priced = sys
            .priced
            .iter()
            .map(|c| PricedRow { cells: c.support().into_iter().map(|k| (k, q_to_f64(&c.a[k]))).collect(), b: q_to_f64(&c.b) })
            .collect();
        let conv = |v: &Vec<(Vec<crate::scalar::Q>, crate::scalar::Q)>| {
            v.iter().map(|(a, b)| (a.iter().map(q_to_f64).collect(), q_to_f64(b))).collect()
        };
        let xsets = sys
            .consumption_sets
            .iter()
            .map(|x| FloatConsumption { rows: conv(&x.rows), floors: conv(&x.floors), forbidden: x.forbidden.clone() })
            .collect();
        let endowments = inst.endowments.as_ref().map(|e| e.iter().map(|r| r.iter().map(q_to_f64).collect()).collect());
        let mut m = Market { n, l, utilities, utility_scale, priced, xsets, endowments, alpha: inst.alpha, satiation: vec![] };
        m.satiation = (0..n).map(|i| satiation_value(&m, i)).collect::<Result<_>>()?;
        Ok(m)
    }

    pub fn with_alpha(&self, alpha: f64) -> Market {
        Market { alpha, ..self.clone() }
    }

    /// `p_{i,·}` for one agent.
    pub fn personal_prices(&self, i: usize, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.l];
        for (row, &pc) in self.priced.iter().zip(p) {
            if pc == 0.0 {
                continue;
            }
            for &(k, a) in &row.cells {
                if k / self.l == i {
                    out[k % self.l] += a * pc;
                }
            }
        }
        out
    }

    pub fn utility(&self, i: usize, x: &[f64]) -> f64 {
        dot(&self.utilities[i], x)
    }

    /// Base LP over agent `i`'s consumption set.
    pub fn agent_lp(&self, i: usize, sense: Sense, objective: Vec<f64>) -> LpProblem<f64> {
        let xs = &self.xsets[i];
        let mut lp = LpProblem::new(sense, objective);
        for (c, d) in &xs.rows {
            lp.le(c.clone(), *d);
        }
        for (c, d) in &xs.floors {
            lp.ge(c.clone(), *d);
        }
        for (k, &f) in xs.forbidden.iter().enumerate() {
            if f {
                lp.upper[k] = Some(0.0);
            }
        }
        lp
    }

    /// Largest violation of agent `i`'s consumption-set constraints.
    pub fn xset_violation(&self, i: usize, x: &[f64]) -> f64 {
        let xs = &self.xsets[i];
        let mut v = x.iter().fold(0.0f64, |m, &y| m.max(-y));
        for (c, d) in &xs.rows {
            v = v.max(dot(c, x) - d);
        }
        for (c, d) in &xs.floors {
            v = v.max(d - dot(c, x));
        }
        for (k, &f) in xs.forbidden.iter().enumerate() {
            if f {
                v = v.max(x[k]);
            }
        }
        v
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum utility over the consumption set.
pub fn satiation_value(m: &Market, i: usize) -> Result<f64> {
    let s = solve_lp(&m.agent_lp(i, Sense::Max, m.utilities[i].clone()));
    match s.status {
        LpStatus::Optimal => Ok(s.objective),
        LpStatus::Infeasible => Err(PmktError::Infeasible(format!("consumption set of agent {i} is empty"))),
        LpStatus::Unbounded => Err(PmktError::Validation(format!("consumption set of agent {i} is unbounded"))),
    }
}

/// Personalized prices and income `α + (1−α)·p_i·ω_i` (exactly 1 without endowments).
pub fn budget(m: &Market, i: usize, p: &[f64]) -> BudgetSpec {
    let prices = m.personal_prices(i, p);
    let income = match &m.endowments {
        Some(w) => m.alpha + (1.0 - m.alpha) * dot(&prices, &w[i]),
        None => 1.0,
    };
    BudgetSpec { agent: i, prices, income }
}

/// Utility-maximizing bundle in the budget set, chosen to be cheapest among
/// equally good bundles and then maximal.
pub fn cheapest_demand(m: &Market, b: &BudgetSpec) -> Result<DemandResult> {
    let i = b.agent;
    let mut lp = m.agent_lp(i, Sense::Max, m.utilities[i].clone());
    lp.le(b.prices.clone(), b.income);
    let s1 = solve_lp(&lp);
    if s1.status != LpStatus::Optimal {
        return Err(PmktError::Infeasible(format!("budget set of agent {i} is empty")));
    }
    let value = s1.objective;
    let satiation = m.satiation[i];
    let satiated = value >= satiation - SATIATION_TOL;
    let level = value - 1e-10 * value.abs().max(1.0);

    let mut lp2 = m.agent_lp(i, Sense::Min, b.prices.clone());
    lp2.ge(m.utilities[i].clone(), level);
    if !satiated {
        lp2.le(b.prices.clone(), b.income);
    }
    let s2 = solve_lp(&lp2);
    // The float simplex can return later-stage points that miss their own
    // rows by more than rounding; keep the previous stage's bundle then.
    let tight = XSET_TOL * value.abs().max(1.0);
    let budget_cap = if satiated { f64::INFINITY } else { b.income };
    let accept = |x: &[f64], cap: f64| {
        m.xset_violation(i, x) <= XSET_TOL && m.utility(i, x) >= level - tight && dot(&b.prices, x) <= cap + tight
    };
    let (mut bundle, cost) = if s2.status == LpStatus::Optimal && accept(&s2.x, budget_cap) {
        (s2.x, s2.objective)
    } else {
        (s1.x.clone(), dot(&b.prices, &s1.x))
    };

    let cost_cap = cost + 1e-10 * cost.abs().max(1.0);
    let mut lp3 = m.agent_lp(i, Sense::Max, vec![1.0; m.l]);
    lp3.ge(m.utilities[i].clone(), level);
    lp3.le(b.prices.clone(), cost_cap);
    if !satiated {
        lp3.le(b.prices.clone(), b.income);
    }
    let s3 = solve_lp(&lp3);
    if s3.status == LpStatus::Optimal && accept(&s3.x, cost_cap.min(budget_cap)) {
        bundle = s3.x;
    }
    for v in bundle.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(DemandResult {
        utility: m.utility(i, &bundle),
        expenditure: dot(&b.prices, &bundle),
        bundle,
        satiation,
        satiated,
    })
}

/// Cheapest cost of reaching `level` utility within the consumption set (and
/// the budget when `income` is given).
pub fn min_expenditure(m: &Market, i: usize, prices: &[f64], level: f64, income: Option<f64>) -> Option<f64> {
    let mut lp = m.agent_lp(i, Sense::Min, prices.to_vec());
    lp.ge(m.utilities[i].clone(), level);
    if let Some(inc) = income {
        lp.le(prices.to_vec(), inc);
    }
    let s = solve_lp(&lp);
    (s.status == LpStatus::Optimal).then_some(s.objective)
}

/// Best utility in `{y ∈ X_i : prices·y ≤ income}`.
pub fn best_affordable(m: &Market, i: usize, prices: &[f64], income: f64) -> Option<f64> {
    let mut lp = m.agent_lp(i, Sense::Max, m.utilities[i].clone());
    lp.le(prices.to_vec(), income);
    let s = solve_lp(&lp);
    (s.status == LpStatus::Optimal).then_some(s.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit-demand agent over `l` objects with supply columns priced.
    pub(crate) fn hz_market(utilities: Vec<Vec<f64>>, supply: Vec<f64>, endow: Option<Vec<Vec<f64>>>, alpha: f64) -> Market {
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
        let w = vec![vec![1.0 / 3.0, 2.0 / 3.0]; 3];
        hz_market(u, vec![1.0, 2.0], Some(w), alpha)
    }

    #[test]
    fn satiation_on_unit_simplex() {
        let m = hz_market(vec![vec![100.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0], None, 1.0);
        assert_eq!(m.satiation, vec![100.0, 1.0]);
    }

    #[test]
    fn endowment_example_demands() {
        for alpha in [0.1, 0.5, 1.0] {
            let m = example(alpha);
            let p = vec![6.0 * alpha / (1.0 + 2.0 * alpha), 0.0];
            let b = budget(&m, 0, &p);
            assert!((b.income - 3.0 * alpha / (1.0 + 2.0 * alpha)).abs() < 1e-12);
            let d = cheapest_demand(&m, &b).unwrap();
            assert!((d.bundle[0] - 0.5).abs() < 1e-9 && (d.bundle[1] - 0.5).abs() < 1e-9, "{:?}", d.bundle);
            assert!(!d.satiated);
            let d3 = cheapest_demand(&m, &budget(&m, 2, &p)).unwrap();
            assert!(d3.bundle[0].abs() < 1e-9 && (d3.bundle[1] - 1.0).abs() < 1e-9);
            assert!(d3.satiated);
        }
    }

    #[test]
    fn refined_stages_stay_inside_the_consumption_set() {
        let m = hz_market(vec![vec![0.7404150296947177, 0.5224709152874559, 0.1, 0.5877007929487545]], vec![1.0; 4], None, 1.0);
        let d = cheapest_demand(&m, &budget(&m, 0, &[0.0; 4])).unwrap();
        assert_eq!(m.xset_violation(0, &d.bundle), 0.0, "{:?}", d.bundle);
        assert!((d.utility - 0.7404150296947177).abs() < SATIATION_TOL, "{:?}", d.bundle);

        let u = vec![0.10206273025229484, 0.10206273025229484, 1.0, 0.10206273025229484];
        let m = hz_market(vec![u], vec![1.0; 4], None, 1.0);
        let p = [0.8563652144358809, 1.89815683648467, 0.6187270877309902, 0.6216340963668616];
        let d = cheapest_demand(&m, &budget(&m, 0, &p)).unwrap();
        assert!(d.utility >= 1.0 - SATIATION_TOL, "{:?}", d.bundle);
    }

    #[test]
    fn zero_prices_give_bliss_at_no_cost() {
        let m = example(1.0);
        let d = cheapest_demand(&m, &budget(&m, 0, &[0.0, 0.0])).unwrap();
        assert!(d.satiated);
        assert_eq!(d.expenditure, 0.0);
        assert!((d.utility - 1.0).abs() < 1e-9);
    }

    #[test]
    fn income_reductions() {
        let m = example(1.0);
        assert_eq!(budget(&m, 0, &[5.0, 3.0]).income, 1.0);
        let w = example(1.0).with_alpha(0.0);
        // p·ω = 2 with p = (2, 2).
        assert!((budget(&w, 0, &[2.0, 2.0]).income - 2.0).abs() < 1e-12);
    }

    #[test]
    fn forbidden_cells_are_excluded() {
        let mut m = hz_market(vec![vec![1.0, 0.5, 0.2]], vec![1.0; 3], None, 1.0);
        m.xsets[0].forbidden = vec![true, false, false];
        assert!((satiation_value(&m, 0).unwrap() - 0.5).abs() < 1e-12);
    }
}
