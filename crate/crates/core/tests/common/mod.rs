#![allow(dead_code)]

use std::sync::Arc;

use fairshare::cmdp::{ActionMode, CmdpInstance};
use fairshare::lpcore::{LinearProgram, LpBackend, LpSolution, LpStatus, Sense, Tolerances};
use fairshare::netgen::{build_joint_chain, Coupling, JointChain, UserModel};
use fairshare::Result;
use rand::Rng;

pub fn two_state(label: &str, p: f64, q: f64) -> UserModel {
    UserModel::two_state(label, p, q).unwrap()
}

/// Two-state user whose rows are identical: net generation is i.i.d. with
/// `P(X = +1) = alpha`.
pub fn iid(label: &str, alpha: f64) -> UserModel {
    two_state(label, alpha, 1.0 - alpha)
}

pub fn u_hi() -> UserModel {
    iid("hi", 0.95)
}
pub fn u_lo() -> UserModel {
    iid("lo", 0.51)
}
pub fn u_dem() -> UserModel {
    iid("dem", 0.4)
}
pub fn u_gen() -> UserModel {
    iid("gen", 0.6)
}

/// Three users of the 3-user frontier figure.
pub fn frontier_three() -> Vec<UserModel> {
    vec![iid("p1", 0.6), iid("p2", 0.9), two_state("p3", 0.6, 0.5)]
}

/// Five users of the 5-user frontier figure.
pub fn frontier_five() -> Vec<UserModel> {
    vec![
        two_state("p1", 0.7, 0.6),
        two_state("p2", 0.6, 0.1),
        two_state("p3", 0.6, 0.8),
        iid("p4", 0.8),
        iid("p5", 0.51),
    ]
}

pub fn chain(users: Vec<UserModel>) -> Arc<JointChain> {
    Arc::new(build_joint_chain(users, Coupling::Independent).unwrap())
}

pub fn instance(users: Vec<UserModel>, b_max: usize, mode: ActionMode) -> Arc<CmdpInstance> {
    Arc::new(CmdpInstance::build(chain(users), b_max, mode).unwrap())
}

/// Random two-state user with both rows bounded away from 0 and 1.
pub fn random_user<R: Rng>(rng: &mut R, label: &str) -> UserModel {
    let p = rng.gen_range(0.05..0.95);
    let q = rng.gen_range(0.05..0.95);
    two_state(label, p, q)
}

/// `Delta = (p - q) / (2 - p - q)` for a two-state `{+1, -1}` user.
pub fn two_state_drift(p: f64, q: f64) -> f64 {
    let alpha = (1.0 - q) / (2.0 - p - q);
    2.0 * alpha - 1.0
}

/// Stationary distribution of the clamped +/-1 walk on `0..=b_max` with i.i.d.
/// steps (`+1` w.p. `alpha`), via detailed balance.
pub fn birth_death_stationary(alpha: f64, b_max: usize) -> Vec<f64> {
    let r = alpha / (1.0 - alpha);
    let w: Vec<f64> = (0..=b_max).map(|k| r.powi(k as i32)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Greedy single-user loss-of-load rate for an i.i.d. `+/-1` user.
pub fn birth_death_llr(alpha: f64, b_max: usize) -> f64 {
    birth_death_stationary(alpha, b_max)[0] * (1.0 - alpha)
}

/// Independent LP backend used to cross-check the built-in simplex.
pub struct MicroLp;

impl LpBackend for MicroLp {
    fn name(&self) -> &'static str {
        "microlp"
    }

    fn solve(&self, lp: &LinearProgram, _tol: &Tolerances) -> Result<LpSolution> {
        use microlp::{ComparisonOp, OptimizationDirection, Problem};
        let dir = match lp.sense() {
            Sense::Minimize => OptimizationDirection::Minimize,
            Sense::Maximize => OptimizationDirection::Maximize,
        };
        let mut p = Problem::new(dir);
        let vars: Vec<_> = (0..lp.num_vars())
            .map(|j| {
                let lo = if lp.is_free(j) { f64::NEG_INFINITY } else { 0.0 };
                p.add_var(lp.objective()[j], (lo, f64::INFINITY))
            })
            .collect();
        for (rows, op) in [(lp.eq_rows(), ComparisonOp::Eq), (lp.ge_rows(), ComparisonOp::Ge)] {
            for r in rows {
                let expr: Vec<_> = r.coeffs.iter().map(|&(j, a)| (vars[j], a)).collect();
                p.add_constraint(expr, op, r.rhs);
            }
        }
        let failed = |status| LpSolution {
            status,
            objective: f64::NAN,
            primal: Vec::new(),
            duals: Vec::new(),
            iterations: 0,
            primal_residual: f64::NAN,
            bland_engaged: false,
        };
        let sol = match p.solve() {
            Ok(outcome) => outcome
                .into_solution()
                .map_err(|_| fairshare::Error::NumericalFailure("microlp interrupted".into()))?,
            Err(microlp::Error::Infeasible) => return Ok(failed(LpStatus::Infeasible)),
            Err(microlp::Error::Unbounded) => return Ok(failed(LpStatus::Unbounded)),
            Err(e) => return Err(fairshare::Error::NumericalFailure(e.to_string())),
        };
        let primal: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective: sol.objective(),
            primal_residual: lp.primal_residual(&primal),
            primal,
            duals: Vec::new(),
            iterations: 0,
            bland_engaged: false,
        })
    }
}
