//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! The solver is generic over [`Scalar`]: instantiate with `f64` for the
//! floating-point mode (tolerance 1e-9) or with [`Q`](crate::scalar::Q) for exact
//! rational pivoting. It never panics on infeasible or unbounded input; those
//! outcomes are reported through [`LpStatus`].

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Row<T> {
    pub coeffs: Vec<T>,
    pub sense: RowSense,
    pub rhs: T,
}

#[derive(Clone, Debug)]
pub struct LpProblem<T> {
    pub sense: Sense,
    pub objective: Vec<T>,
    pub rows: Vec<Row<T>>,
    pub lower: Vec<T>,
    pub upper: Vec<Option<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective: T,
    /// One multiplier per user row, in the sign convention of the stated
    /// objective sense. With zero lower bounds,
    /// `objective = Σ duals·rhs + Σ bound_duals·upper`.
    pub duals: Vec<T>,
    /// Multipliers of finite upper bounds (zero where no bound is set).
    pub bound_duals: Vec<T>,
}

impl<T: Scalar> LpProblem<T> {
    pub fn new(sense: Sense, objective: Vec<T>) -> Self {
        let n = objective.len();
        LpProblem {
            sense,
            objective,
            rows: Vec::new(),
            lower: vec![T::zero(); n],
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<T>, sense: RowSense, rhs: T) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push(Row { coeffs, sense, rhs });
    }

    pub fn le(&mut self, coeffs: Vec<T>, rhs: T) {
        self.add_row(coeffs, RowSense::Le, rhs);
    }

    pub fn ge(&mut self, coeffs: Vec<T>, rhs: T) {
        self.add_row(coeffs, RowSense::Ge, rhs);
    }

    pub fn eq(&mut self, coeffs: Vec<T>, rhs: T) {
        self.add_row(coeffs, RowSense::Eq, rhs);
    }

    fn well_formed(&self) -> bool {
        let n = self.num_vars();
        self.lower.len() == n
            && self.upper.len() == n
            && self.rows.iter().all(|r| r.coeffs.len() == n)
            && self.objective.iter().all(finite)
            && self.rows.iter().all(|r| finite(&r.rhs) && r.coeffs.iter().all(finite))
    }
}

fn finite<T: Scalar>(v: &T) -> bool {
    v.to_f64().is_finite()
}

/// Solves `p` exactly (for rationals) or within tolerance (for floats).
pub fn solve_lp<T: Scalar>(p: &LpProblem<T>) -> LpSolution<T> {
    let n = p.num_vars();
    let fail = |status| LpSolution {
        status,
        x: vec![T::zero(); n],
        objective: T::zero(),
        duals: vec![T::zero(); p.rows.len()],
        bound_duals: vec![T::zero(); n],
    };
    if !p.well_formed() {
        return fail(LpStatus::Infeasible);
    }
    for j in 0..n {
        if let Some(u) = &p.upper[j] {
            if u.sub(&p.lower[j]).is_neg() {
                return fail(LpStatus::Infeasible);
            }
        }
    }

    // Shift lower bounds to zero and append upper bounds as rows.
    let mut rows: Vec<(Vec<T>, RowSense, T)> = Vec::with_capacity(p.rows.len() + n);
    for r in &p.rows {
        let mut rhs = r.rhs.clone();
        for (a, l) in r.coeffs.iter().zip(&p.lower) {
            rhs.sub_mul_assign(a, l);
        }
        rows.push((r.coeffs.clone(), r.sense, rhs));
    }
    let mut bound_row = vec![usize::MAX; n];
    for j in 0..n {
        if let Some(u) = &p.upper[j] {
            let mut c = vec![T::zero(); n];
            c[j] = T::one();
            bound_row[j] = rows.len();
            rows.push((c, RowSense::Le, u.sub(&p.lower[j])));
        }
    }
    let cost: Vec<T> = match p.sense {
        Sense::Min => p.objective.clone(),
        Sense::Max => p.objective.iter().map(|c| c.neg()).collect(),
    };

    let core = simplex(n, &rows, &cost);
    match core {
        CoreResult::Infeasible => fail(LpStatus::Infeasible),
        CoreResult::Unbounded => fail(LpStatus::Unbounded),
        CoreResult::Optimal { x, y } => {
            let x: Vec<T> = x.iter().zip(&p.lower).map(|(v, l)| v.add(l)).collect();
            let mut objective = T::zero();
            for (c, v) in p.objective.iter().zip(&x) {
                objective = objective.add(&c.mul(v));
            }
            let flip = |v: &T| match p.sense {
                Sense::Min => v.clone(),
                Sense::Max => v.neg(),
            };
            let duals = (0..p.rows.len()).map(|r| flip(&y[r])).collect();
            let bound_duals = (0..n)
                .map(|j| {
                    if bound_row[j] == usize::MAX {
                        T::zero()
                    } else {
                        flip(&y[bound_row[j]])
                    }
                })
                .collect();
            LpSolution {
                status: LpStatus::Optimal,
                x,
                objective,
                duals,
                bound_duals,
            }
        }
    }
}

enum CoreResult<T> {
    Optimal { x: Vec<T>, y: Vec<T> },
    Infeasible,
    Unbounded,
}

struct Tableau<T> {
    a: Vec<Vec<T>>,
    rhs: Vec<T>,
    basis: Vec<usize>,
    obj: Vec<T>,
    obj_val: T,
}

impl<T: Scalar> Tableau<T> {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.a[r][c].clone();
        let inv = T::one().div(&piv);
        for v in self.a[r].iter_mut() {
            if !v.is_zero_exact() {
                *v = v.mul(&inv);
            }
        }
        self.a[r][c] = T::one();
        self.rhs[r] = self.rhs[r].mul(&inv);
        let prow = self.a[r].clone();
        let prhs = self.rhs[r].clone();
        for i in 0..self.a.len() {
            if i == r {
                continue;
            }
            let f = self.a[i][c].clone();
            if f.is_zero_exact() {
                continue;
            }
            for (v, pv) in self.a[i].iter_mut().zip(&prow) {
                if !pv.is_zero_exact() {
                    v.sub_mul_assign(&f, pv);
                }
            }
            self.a[i][c] = T::zero();
            self.rhs[i].sub_mul_assign(&f, &prhs);
        }
        let f = self.obj[c].clone();
        if !f.is_zero_exact() {
            for (v, pv) in self.obj.iter_mut().zip(&prow) {
                if !pv.is_zero_exact() {
                    v.sub_mul_assign(&f, pv);
                }
            }
            self.obj[c] = T::zero();
            self.obj_val.sub_mul_assign(&f, &prhs);
        }
        self.basis[r] = c;
    }

    fn set_objective(&mut self, cost: &[T]) {
        self.obj = cost.to_vec();
        self.obj_val = T::zero();
        for i in 0..self.a.len() {
            let cb = cost[self.basis[i]].clone();
            if cb.is_zero_exact() {
                continue;
            }
            for (v, av) in self.obj.iter_mut().zip(&self.a[i]) {
                v.sub_mul_assign(&cb, av);
            }
            self.obj_val.sub_mul_assign(&cb, &self.rhs[i]);
        }
    }

    /// Bland's rule; returns `false` when unbounded.
    fn run(&mut self, allowed: &[bool]) -> bool {
        let max_iter = 50_000 + 100 * (self.a.len() + self.obj.len());
        for _ in 0..max_iter {
            let Some(c) = (0..self.obj.len()).find(|&j| allowed[j] && self.obj[j].is_neg()) else {
                return true;
            };
            let mut best: Option<(usize, T)> = None;
            for i in 0..self.a.len() {
                if !self.a[i][c].is_pos() {
                    continue;
                }
                let ratio = self.rhs[i].div(&self.a[i][c]);
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let d = ratio.sub(&br);
                        if d.is_neg() || (!d.is_pos() && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
        true
    }
}

trait ExactZero {
    fn is_zero_exact(&self) -> bool;
}

impl<T: Scalar> ExactZero for T {
    fn is_zero_exact(&self) -> bool {
        !(self > &T::zero()) && !(self < &T::zero())
    }
}

fn simplex<T: Scalar>(n: usize, rows: &[(Vec<T>, RowSense, T)], cost: &[T]) -> CoreResult<T> {
    let m = rows.len();
    // Column layout: [structural n][one auxiliary per row][artificials].
    let n_aux = m;
    let mut n_art = 0;
    let mut art_of_row = vec![usize::MAX; m];
    let mut unit_col = vec![0usize; m];
    let mut row_sign = vec![false; m];
    for (i, (_, sense, rhs)) in rows.iter().enumerate() {
        let neg = rhs.is_neg() || (rhs.is_zero_exact() && *sense == RowSense::Ge);
        row_sign[i] = neg;
        let eff = match (sense, neg) {
            (RowSense::Le, false) | (RowSense::Ge, true) => RowSense::Le,
            (RowSense::Ge, false) | (RowSense::Le, true) => RowSense::Ge,
            (RowSense::Eq, _) => RowSense::Eq,
        };
        if eff != RowSense::Le {
            art_of_row[i] = n + n_aux + n_art;
            n_art += 1;
        }
    }
    let total = n + n_aux + n_art;
    let mut t = Tableau {
        a: Vec::with_capacity(m),
        rhs: Vec::with_capacity(m),
        basis: vec![0; m],
        obj: vec![],
        obj_val: T::zero(),
    };
    for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        let mut row = vec![T::zero(); total];
        let s = row_sign[i];
        for (j, c) in coeffs.iter().enumerate() {
            row[j] = if s { c.neg() } else { c.clone() };
        }
        let r = if s { rhs.neg() } else { rhs.clone() };
        let aux = n + i;
        match sense {
            RowSense::Le => row[aux] = if s { T::one().neg() } else { T::one() },
            RowSense::Ge => row[aux] = if s { T::one() } else { T::one().neg() },
            RowSense::Eq => {}
        }
        if art_of_row[i] != usize::MAX {
            row[art_of_row[i]] = T::one();
            t.basis[i] = art_of_row[i];
            unit_col[i] = art_of_row[i];
        } else {
            t.basis[i] = aux;
            unit_col[i] = aux;
        }
        t.a.push(row);
        t.rhs.push(r);
    }

    let mut allowed = vec![true; total];
    if n_art > 0 {
        let mut c1 = vec![T::zero(); total];
        for v in c1.iter_mut().skip(n + n_aux) {
            *v = T::one();
        }
        t.set_objective(&c1);
        t.run(&allowed);
        if t.obj_val.neg().is_pos() {
            return CoreResult::Infeasible;
        }
        // Drive remaining artificials out of the basis.
        let mut i = 0;
        while i < t.a.len() {
            if t.basis[i] >= n + n_aux {
                if let Some(c) = (0..n + n_aux).find(|&j| !t.a[i][j].is_zero_tol()) {
                    t.pivot(i, c);
                    i += 1;
                } else {
                    t.a.remove(i);
                    t.rhs.remove(i);
                    t.basis.remove(i);
                }
            } else {
                i += 1;
            }
        }
        for v in allowed.iter_mut().skip(n + n_aux) {
            *v = false;
        }
    }
    let mut c2 = vec![T::zero(); total];
    c2[..n].clone_from_slice(cost);
    t.set_objective(&c2);
    if !t.run(&allowed) {
        return CoreResult::Unbounded;
    }
    let mut x = vec![T::zero(); n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[i].clone();
        }
    }
    // Reduced cost of a row's unit column equals minus its multiplier.
    let y = (0..m)
        .map(|i| {
            let d = t.obj[unit_col[i]].neg();
            if row_sign[i] {
                d.neg()
            } else {
                d
            }
        })
        .collect();
    CoreResult::Optimal { x, y }
}
