//! Linear programs over nonnegative variables with equality and `>=` rows, and a
//! self-contained revised simplex solver.
//!
//! Any [`LpBackend`] can stand in for the built-in solver; the programs module
//! only talks to the trait.

mod dump;
mod simplex;

use serde::Serialize;

use crate::error::{Error, Result};

pub use dump::write_text;
pub use simplex::RevisedSimplex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A sparse constraint row `sum coeffs . x (= or >=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    var_names: Vec<String>,
    free: Vec<bool>,
    eq_rows: Vec<Row>,
    ge_rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            var_names: Vec::new(),
            free: Vec::new(),
            eq_rows: Vec::new(),
            ge_rows: Vec::new(),
        }
    }

    /// Adds a nonnegative variable and returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.push_var(name.into(), cost, false)
    }

    /// Adds an unrestricted-sign variable.
    pub fn add_free_var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.push_var(name.into(), cost, true)
    }

    fn push_var(&mut self, name: String, cost: f64, free: bool) -> usize {
        self.objective.push(cost);
        self.var_names.push(name);
        self.free.push(free);
        self.objective.len() - 1
    }

    pub fn add_eq(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq_rows.push(Row {
            name: name.into(),
            coeffs,
            rhs,
        });
    }

    pub fn add_ge(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.ge_rows.push(Row {
            name: name.into(),
            coeffs,
            rhs,
        });
    }

    /// `sum coeffs . x <= rhs`, stored as the negated `>=` row.
    pub fn add_le(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let coeffs = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.add_ge(name, coeffs, -rhs);
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }
    pub fn objective(&self) -> &[f64] {
        &self.objective
    }
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.ge_rows.len()
    }
    pub fn var_name(&self, j: usize) -> &str {
        &self.var_names[j]
    }
    pub fn is_free(&self, j: usize) -> bool {
        self.free[j]
    }
    pub fn eq_rows(&self) -> &[Row] {
        &self.eq_rows
    }
    pub fn ge_rows(&self) -> &[Row] {
        &self.ge_rows
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "objective coefficient of {} is not finite",
                self.var_names[j]
            )));
        }
        for row in self.eq_rows.iter().chain(&self.ge_rows) {
            if !row.rhs.is_finite() {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has a non-finite right-hand side",
                    row.name
                )));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(Error::DimensionMismatch(format!(
                        "row {} references variable {j} with coefficient {a} ({n} variables)",
                        row.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest absolute row violation, including sign bounds on non-free variables.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let eq = self
            .eq_rows
            .iter()
            .map(|r| (r.activity(x) - r.rhs).abs());
        let ge = self
            .ge_rows
            .iter()
            .map(|r| (r.rhs - r.activity(x)).max(0.0));
        let bounds = x
            .iter()
            .zip(&self.free)
            .map(|(&v, &free)| if free { 0.0 } else { (-v).max(0.0) });
        eq.chain(ge).chain(bounds).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Primal feasibility, per row.
    pub feasibility: f64,
    /// Reduced-cost threshold for optimality.
    pub optimality: f64,
    /// Smallest acceptable pivot magnitude.
    pub pivot: f64,
    /// Bland's rule is engaged after `bland_factor * (rows + cols)` iterations.
    pub bland_factor: usize,
    /// Basis inverse is recomputed from scratch this often.
    pub refactor_interval: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            optimality: 1e-9,
            pivot: 1e-11,
            bland_factor: 5,
            refactor_interval: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective in the program's own sense; NaN unless optimal.
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Row duals, equality rows first then `>=` rows; empty unless optimal.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub bland_engaged: bool,
}

/// Seam for plugging in an alternative LP solver.
pub trait LpBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution>;
}

/// Solves `lp` with the built-in revised simplex.
pub fn solve_lp(lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution> {
    RevisedSimplex.solve(lp, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn max_of_free_variable_under_bounds() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let t = lp.add_free_var("theta", 1.0);
        lp.add_le("c1", vec![(t, 1.0)], 3.0);
        lp.add_le("c2", vec![(t, 1.0)], 5.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.primal[t], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn free_variable_can_go_negative() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let t = lp.add_free_var("theta", 1.0);
        lp.add_le("c1", vec![(t, 1.0)], -0.44);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(sol.objective, -0.44, epsilon = 1e-12);
    }

    #[test]
    fn equality_forces_objective() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let a = lp.add_var("x1", 1.0);
        let b = lp.add_var("x2", 1.0);
        lp.add_eq("sum", vec![(a, 1.0), (b, 1.0)], 1.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        lp.add_var("x", -1.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_var("x", 1.0);
        lp.add_eq("neg", vec![(x, 1.0)], -1.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn textbook_problem_with_duals() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var("x", 3.0);
        let y = lp.add_var("y", 5.0);
        lp.add_le("a", vec![(x, 1.0)], 4.0);
        lp.add_le("b", vec![(y, 2.0)], 12.0);
        lp.add_le("c", vec![(x, 3.0), (y, 2.0)], 18.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(sol.objective, 36.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.primal[x], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.primal[y], 6.0, epsilon = 1e-10);
        // Strong duality on the stored >= rows: sum y_r * rhs_r = objective.
        let dual_obj: f64 = lp
            .ge_rows()
            .iter()
            .zip(&sol.duals)
            .map(|(r, d)| r.rhs * d)
            .sum();
        assert_abs_diff_eq!(dual_obj, 36.0, epsilon = 1e-9);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let a = lp.add_var("a", 2.0);
        let b = lp.add_var("b", 1.0);
        lp.add_eq("r1", vec![(a, 1.0), (b, 1.0)], 1.0);
        lp.add_eq("r2", vec![(a, 2.0), (b, 2.0)], 2.0);
        lp.add_eq("r3", vec![(a, 1.0), (b, -1.0)], 0.0);
        let sol = solve_lp(&lp, &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(sol.objective, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn bad_index_rejected() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        lp.add_var("x", 1.0);
        lp.add_eq("r", vec![(3, 1.0)], 1.0);
        assert!(solve_lp(&lp, &Tolerances::default()).is_err());
    }
}
