//! Occupation-measure linear programs.
//!
//! * `P` / `P_delta`: minimize the system loss-of-load rate subject to every
//!   user's net contribution being at least `-delta` (full action sets).
//! * `F`: over efficient action sets, maximize `theta` with `theta <= C_i` for all users.
//!
//! Variables are `rho(s, k)` for every state `s` and action index `k`, laid out
//! state-major; `F` appends the free variable `theta`.

use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::cmdp::{ActionMode, CmdpInstance};
use crate::error::{Error, Result};
use crate::lpcore::{LinearProgram, LpBackend, LpStatus, RevisedSimplex, Sense, Tolerances};
use crate::markov::communicating_classes;

/// Masses below this are treated as zero when reading a measure's support.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Right-hand side of the relaxed fairness rows `C_i >= -delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FairnessSlack {
    Bounded(f64),
    /// No fairness rows at all.
    Unconstrained,
}

impl FairnessSlack {
    pub fn bounded(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self::Bounded(delta))
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Bounded(d) => d,
            Self::Unconstrained => f64::INFINITY,
        }
    }
}

impl Serialize for FairnessSlack {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Bounded(d) => s.serialize_f64(*d),
            Self::Unconstrained => s.serialize_str("infinity"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Problem {
    P,
    #[serde(rename = "P_delta")]
    PDelta,
    F,
}

/// A stationary probability distribution over (state, action) pairs.
#[derive(Debug, Clone)]
pub struct OccupationMeasure {
    instance: Arc<CmdpInstance>,
    mass: Vec<Vec<f64>>,
}

impl OccupationMeasure {
    /// Wraps per-state action masses; entries above `-1e-12` are clamped to zero.
    pub fn new(instance: Arc<CmdpInstance>, mut mass: Vec<Vec<f64>>) -> Result<Self> {
        if mass.len() != instance.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "{} state rows, instance has {}",
                mass.len(),
                instance.num_states()
            )));
        }
        for (s, row) in mass.iter_mut().enumerate() {
            if row.len() != instance.actions(s).len() {
                return Err(Error::DimensionMismatch(format!(
                    "state {s}: {} masses for {} actions",
                    row.len(),
                    instance.actions(s).len()
                )));
            }
            for v in row.iter_mut() {
                if *v < -SUPPORT_TOL || !v.is_finite() {
                    return Err(Error::InvalidProbability {
                        row: s,
                        col: 0,
                        value: *v,
                    });
                }
                *v = v.max(0.0);
            }
        }
        Ok(Self { instance, mass })
    }

    fn from_primal(instance: Arc<CmdpInstance>, primal: &[f64]) -> Result<Self> {
        let mut it = primal.iter().copied();
        let mass = (0..instance.num_states())
            .map(|s| it.by_ref().take(instance.actions(s).len()).collect())
            .collect();
        Self::new(instance, mass)
    }

    pub fn instance(&self) -> &Arc<CmdpInstance> {
        &self.instance
    }
    pub fn mass(&self, s: usize, k: usize) -> f64 {
        self.mass[s][k]
    }
    pub fn state_masses(&self, s: usize) -> &[f64] {
        &self.mass[s]
    }
    pub fn state_mass(&self, s: usize) -> f64 {
        self.mass[s].iter().sum()
    }
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().flatten().sum()
    }

    /// `max_s' |inflow(s') - outflow(s')|`.
    pub fn stationarity_residual(&self) -> f64 {
        let inst = &self.instance;
        let mut flow: Vec<f64> = (0..inst.num_states()).map(|s| self.state_mass(s)).collect();
        for (s, row) in self.mass.iter().enumerate() {
            for (k, &m) in row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (t, p) in inst.transitions(s, k) {
                    flow[t] -= m * p;
                }
            }
        }
        flow.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `sum rho(s, a) * sum_i a_i`; zero for a stationary measure.
    pub fn net_battery_flow(&self) -> f64 {
        let inst = &self.instance;
        self.mass
            .iter()
            .enumerate()
            .flat_map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(k, &m)| m * inst.actions(s)[k].iter().sum::<i64>() as f64)
            })
            .sum()
    }

    /// Number of closed communicating classes formed by the measure's support.
    pub fn support_classes(&self) -> usize {
        let inst = &self.instance;
        let n = inst.num_states();
        let support: Vec<usize> = (0..n)
            .filter(|&s| self.state_mass(s) > SUPPORT_TOL)
            .collect();
        let mut local = vec![usize::MAX; n];
        for (i, &s) in support.iter().enumerate() {
            local[s] = i;
        }
        let mut kernel = vec![vec![0.0; support.len()]; support.len()];
        let mut leaks = vec![false; support.len()];
        for (i, &s) in support.iter().enumerate() {
            for (k, &m) in self.mass[s].iter().enumerate() {
                if m <= SUPPORT_TOL {
                    continue;
                }
                for (t, p) in inst.transitions(s, k) {
                    if local[t] == usize::MAX {
                        leaks[i] = true;
                    } else {
                        kernel[i][local[t]] += p;
                    }
                }
            }
        }
        let classes = communicating_classes(&kernel);
        let mut class_of = vec![0; support.len()];
        for (c, members) in classes.iter().enumerate() {
            for &m in members {
                class_of[m] = c;
            }
        }
        classes
            .iter()
            .enumerate()
            .filter(|(c, members)| {
                members.iter().all(|&i| {
                    !leaks[i]
                        && kernel[i]
                            .iter()
                            .enumerate()
                            .all(|(j, &p)| p == 0.0 || class_of[j] == *c)
                })
            })
            .count()
    }
}

/// Linear functionals of an occupation measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marginals {
    /// `C_i = sum rho(s, a) a_i`.
    pub contributions: Vec<f64>,
    /// `LLR_i = sum rho(s, a) 1{x_i < 0} (a_i - x_i)`.
    pub llr_per_user: Vec<f64>,
    /// `rho(x, b)`, indexed like the instance's states.
    pub state_marginal: Vec<f64>,
    /// `rho(b)` for `b = 0..=b_max`.
    pub battery_marginal: Vec<f64>,
}

pub fn occupation_marginals(rho: &OccupationMeasure) -> Marginals {
    let inst = &rho.instance;
    let n = inst.num_users();
    let mut contributions = vec![0.0; n];
    let mut llr_per_user = vec![0.0; n];
    let mut state_marginal = vec![0.0; inst.num_states()];
    let mut battery_marginal = vec![0.0; inst.b_max() + 1];
    for s in 0..inst.num_states() {
        for (k, &m) in rho.mass[s].iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for i in 0..n {
                contributions[i] += m * inst.fairness_coeff(s, k, i);
                llr_per_user[i] += m * inst.user_lost_load(s, k, i);
            }
        }
        let sm = rho.state_mass(s);
        state_marginal[s] = sm;
        battery_marginal[inst.state(s).b] += sm;
    }
    Marginals {
        contributions,
        llr_per_user,
        state_marginal,
        battery_marginal,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub backend: &'static str,
    pub mode: ActionMode,
    pub b_max: usize,
    pub variables: usize,
    pub constraints: usize,
    pub iterations: usize,
    pub bland_engaged: bool,
    pub primal_residual: f64,
    pub stationarity_residual: f64,
    pub mass_error: f64,
    pub net_battery_flow: f64,
    /// Closed classes in the measure's support; more than one means the optimum
    /// mixes ergodic behaviors that no single initial state realizes.
    pub support_classes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub problem: Problem,
    /// `LLR_sys` for P / P_delta, `theta*` for F (energy units per step).
    pub objective: f64,
    pub delta: Option<FairnessSlack>,
    pub llr_per_user: Vec<f64>,
    pub contributions: Vec<f64>,
    pub battery_marginal: Vec<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub measure: OccupationMeasure,
}

impl SolveReport {
    pub fn llr_sys(&self) -> f64 {
        self.llr_per_user.iter().sum()
    }
}

fn occupation_lp(instance: &CmdpInstance, sense: Sense) -> LinearProgram {
    let mut lp = LinearProgram::new(sense);
    let n_states = instance.num_states();
    let mut stat_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_states];
    let mut mass_row = Vec::with_capacity(instance.num_pairs());
    for s in 0..n_states {
        for k in 0..instance.actions(s).len() {
            let cost = match sense {
                Sense::Minimize => instance.cost(s, k),
                Sense::Maximize => 0.0,
            };
            let v = lp.add_var(format!("r_s{s}_a{k}"), cost);
            mass_row.push((v, 1.0));
            let mut own = 1.0;
            for (t, p) in instance.transitions(s, k) {
                if t == s {
                    own -= p;
                } else {
                    stat_rows[t].push((v, -p));
                }
            }
            if own != 0.0 {
                stat_rows[s].push((v, own));
            }
        }
    }
    lp.add_eq("mass", mass_row, 1.0);
    for (s, row) in stat_rows.into_iter().enumerate() {
        lp.add_eq(format!("stat_{s}"), row, 0.0);
    }
    lp
}

fn contribution_terms(instance: &CmdpInstance, user: usize) -> Vec<(usize, f64)> {
    let mut v = 0;
    let mut out = Vec::new();
    for s in 0..instance.num_states() {
        for k in 0..instance.actions(s).len() {
            let a = instance.fairness_coeff(s, k, user);
            if a != 0.0 {
                out.push((v, a));
            }
            v += 1;
        }
    }
    out
}

/// LP for `P` (delta = 0), `P_delta`, or the unconstrained efficiency problem.
pub fn build_lp_p(instance: &CmdpInstance, delta: FairnessSlack) -> Result<LinearProgram> {
    instance.require_mode(ActionMode::Full)?;
    let mut lp = occupation_lp(instance, Sense::Minimize);
    if let FairnessSlack::Bounded(d) = delta {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidDelta(d));
        }
        for i in 0..instance.num_users() {
            lp.add_ge(format!("fair_{i}"), contribution_terms(instance, i), -d);
        }
    }
    Ok(lp)
}

/// LP for `F`: `max theta` s.t. `C_i - theta >= 0` over efficient actions.
pub fn build_lp_f(instance: &CmdpInstance) -> Result<LinearProgram> {
    instance.require_mode(ActionMode::Efficient)?;
    let mut lp = occupation_lp(instance, Sense::Maximize);
    let theta = lp.add_free_var("theta", 1.0);
    for i in 0..instance.num_users() {
        let mut row = contribution_terms(instance, i);
        row.push((theta, -1.0));
        lp.add_ge(format!("fair_{i}"), row, 0.0);
    }
    Ok(lp)
}

pub fn solve_p(instance: &Arc<CmdpInstance>, delta: FairnessSlack) -> Result<SolveReport> {
    solve_p_with(instance, delta, &RevisedSimplex, &Tolerances::default())
}

pub fn solve_p_with(
    instance: &Arc<CmdpInstance>,
    delta: FairnessSlack,
    backend: &dyn LpBackend,
    tol: &Tolerances,
) -> Result<SolveReport> {
    let lp = build_lp_p(instance, delta)?;
    let problem = match delta {
        FairnessSlack::Bounded(d) if d == 0.0 => Problem::P,
        _ => Problem::PDelta,
    };
    solve(instance, &lp, problem, Some(delta), backend, tol)
}

pub fn solve_f(instance: &Arc<CmdpInstance>) -> Result<SolveReport> {
    solve_f_with(instance, &RevisedSimplex, &Tolerances::default())
}

pub fn solve_f_with(
    instance: &Arc<CmdpInstance>,
    backend: &dyn LpBackend,
    tol: &Tolerances,
) -> Result<SolveReport> {
    let lp = build_lp_f(instance)?;
    solve(instance, &lp, Problem::F, None, backend, tol)
}

fn solve(
    instance: &Arc<CmdpInstance>,
    lp: &LinearProgram,
    problem: Problem,
    delta: Option<FairnessSlack>,
    backend: &dyn LpBackend,
    tol: &Tolerances,
) -> Result<SolveReport> {
    let sol = backend.solve(lp, tol)?;
    match sol.status {
        LpStatus::Optimal => {}
        status => {
            return Err(Error::Internal(format!(
                "occupation LP reported {status:?}; a feasible bounded optimum always exists"
            )))
        }
    }
    let measure = OccupationMeasure::from_primal(instance.clone(), &sol.primal)?;
    let marg = occupation_marginals(&measure);
    let diagnostics = Diagnostics {
        backend: backend.name(),
        mode: instance.mode(),
        b_max: instance.b_max(),
        variables: lp.num_vars(),
        constraints: lp.num_rows(),
        iterations: sol.iterations,
        bland_engaged: sol.bland_engaged,
        primal_residual: sol.primal_residual,
        stationarity_residual: measure.stationarity_residual(),
        mass_error: (measure.total_mass() - 1.0).abs(),
        net_battery_flow: measure.net_battery_flow(),
        support_classes: measure.support_classes(),
    };
    log::debug!(
        "{problem:?}: objective {:.12e}, {} iterations, {} support classes",
        sol.objective,
        sol.iterations,
        diagnostics.support_classes
    );
    Ok(SolveReport {
        problem,
        objective: sol.objective,
        delta,
        llr_per_user: marg.llr_per_user,
        contributions: marg.contributions,
        battery_marginal: marg.battery_marginal,
        diagnostics,
        measure,
    })
}
