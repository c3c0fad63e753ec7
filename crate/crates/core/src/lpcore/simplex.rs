//! Two-phase revised simplex with an explicit dense basis inverse.
//!
//! The program is brought to standard form `min c.x, A x = b, x >= 0, b >= 0`:
//! free variables are split, `>=` rows get surplus columns, rows with a negative
//! right-hand side are negated. Phase one minimizes the sum of artificials.
//! Pricing is Dantzig's rule with a Harris two-pass ratio test; after
//! `bland_factor * (rows + cols)` iterations both choices switch to Bland's
//! smallest-index rule, which cannot cycle.

use super::{LinearProgram, LpBackend, LpSolution, LpStatus, Sense, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::DenseLu;

/// The built-in solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct RevisedSimplex;

impl LpBackend for RevisedSimplex {
    fn name(&self) -> &'static str {
        "revised-simplex"
    }

    fn solve(&self, lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution> {
        lp.validate()?;
        let sf = StandardForm::new(lp);
        let mut solver = Solver::new(&sf, tol)?;
        let status = solver.run()?;
        solver.finish(lp, status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColKind {
    /// Original variable `orig`, with sign +1 or -1 for split free variables.
    Structural { orig: usize, sign: f64 },
    Surplus,
    Artificial,
}

struct StandardForm {
    m: usize,
    col_start: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
    kind: Vec<ColKind>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    row_sign: Vec<f64>,
    initial_basis: Vec<usize>,
}

impl StandardForm {
    fn new(lp: &LinearProgram) -> Self {
        let rows: Vec<_> = lp.eq_rows().iter().chain(lp.ge_rows()).collect();
        let m = rows.len();
        let n_eq = lp.eq_rows().len();
        let row_sign: Vec<f64> = rows
            .iter()
            .map(|r| if r.rhs < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let rhs: Vec<f64> = rows.iter().zip(&row_sign).map(|(r, s)| r.rhs * s).collect();

        let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_vars()];
        for (i, r) in rows.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                if a != 0.0 {
                    by_var[j].push((i, a * row_sign[i]));
                }
            }
        }
        let obj_sign = match lp.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };

        let mut sf = StandardForm {
            m,
            col_start: vec![0],
            row_idx: Vec::new(),
            vals: Vec::new(),
            kind: Vec::new(),
            cost: Vec::new(),
            rhs,
            row_sign,
            initial_basis: vec![usize::MAX; m],
        };
        for (j, entries) in by_var.iter_mut().enumerate() {
            entries.sort_by_key(|e| e.0);
            // Merge duplicate row entries.
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for &(i, a) in entries.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => merged.push((i, a)),
                }
            }
            let c = lp.objective()[j] * obj_sign;
            sf.push_col(&merged, ColKind::Structural { orig: j, sign: 1.0 }, c);
            if lp.is_free(j) {
                let neg: Vec<_> = merged.iter().map(|&(i, a)| (i, -a)).collect();
                sf.push_col(&neg, ColKind::Structural { orig: j, sign: -1.0 }, -c);
            }
        }
        for i in n_eq..m {
            let coef = -sf.row_sign[i];
            let col = sf.push_col(&[(i, coef)], ColKind::Surplus, 0.0);
            if coef > 0.0 {
                sf.initial_basis[i] = col;
            }
        }
        for i in 0..m {
            if sf.initial_basis[i] == usize::MAX {
                sf.initial_basis[i] = sf.push_col(&[(i, 1.0)], ColKind::Artificial, 0.0);
            }
        }
        sf
    }

    fn push_col(&mut self, entries: &[(usize, f64)], kind: ColKind, cost: f64) -> usize {
        for &(i, a) in entries {
            self.row_idx.push(i);
            self.vals.push(a);
        }
        self.col_start.push(self.row_idx.len());
        self.kind.push(kind);
        self.cost.push(cost);
        self.kind.len() - 1
    }

    fn n(&self) -> usize {
        self.kind.len()
    }

    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.col_start[j], self.col_start[j + 1]);
        self.row_idx[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    fn is_artificial(&self, j: usize) -> bool {
        self.kind[j] == ColKind::Artificial
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

struct Solver<'a> {
    sf: &'a StandardForm,
    tol: &'a Tolerances,
    m: usize,
    basis: Vec<usize>,
    position: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    bland_after: usize,
    max_iterations: usize,
    bland_engaged: bool,
}

const NONBASIC: usize = usize::MAX;

impl<'a> Solver<'a> {
    fn new(sf: &'a StandardForm, tol: &'a Tolerances) -> Result<Self> {
        let m = sf.m;
        let n = sf.n();
        let mut position = vec![NONBASIC; n];
        for (i, &j) in sf.initial_basis.iter().enumerate() {
            position[j] = i;
        }
        let mut s = Self {
            sf,
            tol,
            m,
            basis: sf.initial_basis.clone(),
            position,
            binv: Vec::new(),
            xb: Vec::new(),
            iterations: 0,
            since_refactor: 0,
            bland_after: tol.bland_factor.saturating_mul(m + n),
            max_iterations: 50usize.saturating_mul(m + n).saturating_add(10_000),
            bland_engaged: false,
        };
        s.refactor()?;
        Ok(s)
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, a) in self.sf.col(j) {
                b[i * m + k] = a;
            }
        }
        let lu = DenseLu::factor(m, b, 1e-14).ok_or_else(|| {
            Error::NumericalFailure(format!(
                "singular basis after {} iterations",
                self.iterations
            ))
        })?;
        self.binv = lu.inverse();
        let mut xb = self.sf.rhs.clone();
        lu.solve(&mut xb);
        // One step of iterative refinement.
        let mut r = self.sf.rhs.clone();
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, a) in self.sf.col(j) {
                r[i] -= a * xb[k];
            }
        }
        lu.solve(&mut r);
        for (x, d) in xb.iter_mut().zip(&r) {
            *x += d;
        }
        self.xb = xb;
        self.since_refactor = 0;
        Ok(())
    }

    fn cost(&self, phase: Phase, j: usize) -> f64 {
        match phase {
            Phase::One => {
                if self.sf.is_artificial(j) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => self.sf.cost[j],
        }
    }

    fn duals(&self, phase: Phase) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            let c = self.cost(phase, j);
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, phase: Phase, y: &[f64], j: usize) -> f64 {
        self.cost(phase, j) - self.sf.col(j).map(|(i, a)| y[i] * a).sum::<f64>()
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        for (r, a) in self.sf.col(j) {
            for (i, wi) in w.iter_mut().enumerate() {
                *wi += self.binv[i * m + r] * a;
            }
        }
        w
    }

    fn pivot(&mut self, r: usize, q: usize, w: &[f64]) {
        let m = self.m;
        // Harris steps may start from a slightly negative level; never step backwards.
        let theta = (self.xb[r] / w[r]).max(0.0);
        for (i, x) in self.xb.iter_mut().enumerate() {
            if i != r {
                *x -= theta * w[i];
            }
        }
        self.xb[r] = theta;

        let inv_p = 1.0 / w[r];
        for v in &mut self.binv[r * m..(r + 1) * m] {
            *v *= inv_p;
        }
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for (i, &wi) in w.iter().enumerate() {
            if i == r || wi == 0.0 {
                continue;
            }
            let row = &mut self.binv[i * m..(i + 1) * m];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= wi * p;
            }
        }
        self.position[self.basis[r]] = NONBASIC;
        self.basis[r] = q;
        self.position[q] = r;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    fn choose_entering(&self, phase: Phase, y: &[f64]) -> Option<usize> {
        let bland = self.iterations >= self.bland_after;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.sf.n() {
            if self.position[j] != NONBASIC {
                continue;
            }
            if phase == Phase::Two && self.sf.is_artificial(j) {
                continue;
            }
            let d = self.reduced_cost(phase, y, j);
            if d < -self.tol.optimality {
                if bland {
                    return Some(j);
                }
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Leaving row for entering direction `w`, or `None` if the ray is unbounded.
    fn choose_leaving(&self, phase: Phase, w: &[f64]) -> Option<usize> {
        let bland = self.iterations >= self.bland_after;
        let ptol = self.tol.pivot;
        // Artificials still basic in phase two sit on redundant rows, where `w` is
        // rounding noise; they never leave.
        let skip = |i: usize| phase == Phase::Two && self.sf.is_artificial(self.basis[i]);
        let blocking = |i: usize| -> Option<f64> {
            (!skip(i) && w[i] > ptol).then(|| self.xb[i].max(0.0) / w[i])
        };
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if let Some(ratio) = blocking(i) {
                    let better = match best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br - 1e-12 * (1.0 + br.abs())
                                || (ratio <= br + 1e-12 * (1.0 + br.abs())
                                    && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            return best.map(|(i, _)| i);
        }
        // Harris pass one: relaxed bound on the step.
        let mut theta_max = f64::INFINITY;
        for i in 0..self.m {
            if !skip(i) && w[i] > ptol {
                theta_max = theta_max.min((self.xb[i].max(0.0) + self.tol.feasibility) / w[i]);
            }
        }
        if theta_max.is_infinite() {
            return None;
        }
        // Pass two: largest pivot among rows whose exact ratio fits under the bound.
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            if let Some(ratio) = blocking(i) {
                if ratio <= theta_max && best.map_or(true, |(_, bw)| w[i].abs() > bw) {
                    best = Some((i, w[i].abs()));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn iterate(&mut self, phase: Phase) -> Result<LpStatus> {
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::NumericalFailure(format!(
                    "iteration limit {} reached",
                    self.max_iterations
                )));
            }
            if self.iterations >= self.bland_after && !self.bland_engaged {
                log::debug!("simplex: engaging Bland's rule at iteration {}", self.iterations);
                self.bland_engaged = true;
            }
            let y = self.duals(phase);
            let Some(q) = self.choose_entering(phase, &y) else {
                if self.since_refactor > 0 {
                    self.refactor()?;
                    continue;
                }
                return Ok(LpStatus::Optimal);
            };
            let w = self.ftran(q);
            let Some(r) = self.choose_leaving(phase, &w) else {
                return Ok(LpStatus::Unbounded);
            };
            self.pivot(r, q, &w);
            if self.since_refactor >= self.tol.refactor_interval {
                self.refactor()?;
            }
        }
    }

    /// Pivots zero-level artificials out of the basis where a structural column allows it.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.m;
        for r in 0..m {
            if !self.sf.is_artificial(self.basis[r]) {
                continue;
            }
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.sf.n() {
                if self.position[j] != NONBASIC || self.sf.is_artificial(j) {
                    continue;
                }
                let alpha: f64 = self.sf.col(j).map(|(i, a)| row[i] * a).sum();
                if alpha.abs() > 1e-7 && best.map_or(true, |(_, b)| alpha.abs() > b) {
                    best = Some((j, alpha.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.xb[r] = 0.0;
                let w = self.ftran(j);
                self.pivot(r, j, &w);
            }
        }
        self.refactor()
    }

    fn run(&mut self) -> Result<LpStatus> {
        if self.basis.iter().any(|&j| self.sf.is_artificial(j)) {
            match self.iterate(Phase::One)? {
                LpStatus::Optimal => {}
                _ => {
                    return Err(Error::NumericalFailure(
                        "phase one reported an unbounded ray".into(),
                    ))
                }
            }
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.xb)
                .filter(|(&j, _)| self.sf.is_artificial(j))
                .map(|(_, &x)| x.max(0.0))
                .sum();
            if infeasibility > self.tol.feasibility * (self.m as f64).max(1.0) {
                return Ok(LpStatus::Infeasible);
            }
            self.drive_out_artificials()?;
        }
        self.iterate(Phase::Two)
    }

    fn finish(self, lp: &LinearProgram, status: LpStatus) -> Result<LpSolution> {
        let base = LpSolution {
            status,
            objective: f64::NAN,
            primal: Vec::new(),
            duals: Vec::new(),
            iterations: self.iterations,
            primal_residual: f64::NAN,
            bland_engaged: self.bland_engaged,
        };
        if status != LpStatus::Optimal {
            return Ok(base);
        }
        let mut x = vec![0.0; lp.num_vars()];
        for (k, &j) in self.basis.iter().enumerate() {
            if let ColKind::Structural { orig, sign } = self.sf.kind[j] {
                x[orig] += sign * self.xb[k];
            }
        }
        for (j, v) in x.iter_mut().enumerate() {
            if !lp.is_free(j) && *v < 0.0 {
                if *v < -self.tol.feasibility {
                    return Err(Error::NumericalFailure(format!(
                        "variable {} ended at {v}",
                        lp.var_name(j)
                    )));
                }
                *v = 0.0;
            }
        }
        let residual = lp.primal_residual(&x);
        if residual > self.tol.feasibility {
            return Err(Error::NumericalFailure(format!(
                "primal residual {residual:e} exceeds tolerance"
            )));
        }
        let y = self.duals(Phase::Two);
        let obj_sign = match lp.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let duals = y
            .iter()
            .zip(&self.sf.row_sign)
            .map(|(d, s)| d * s * obj_sign)
            .collect();
        Ok(LpSolution {
            objective: lp.objective_value(&x),
            primal: x,
            duals,
            primal_residual: residual,
            ..base
        })
    }
}
