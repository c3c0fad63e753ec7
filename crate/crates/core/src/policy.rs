//! Stationary randomized policies: extraction from occupation measures,
//! greedy efficient reference policies, and exact steady-state evaluation.

use std::str::FromStr;
use std::sync::Arc;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::cmdp::{efficiency_case, ActionMode, CmdpInstance, EfficiencyCase};
use crate::error::{Error, Result};
use crate::markov::{reachable_closed_classes, stationary_on_class};
use crate::netgen::{build_joint_chain, Coupling, UserModel};
use crate::programs::{OccupationMeasure, SUPPORT_TOL};

/// Per-state action laws must sum to one within this tolerance.
pub const LAW_TOL: f64 = 1e-12;

/// Rule used where an occupation measure puts no mass on a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    GreedyEfficient,
    /// The all-zero action; replaced by the greedy efficient action where zero
    /// is not an admissible action (efficient-mode instances).
    ZeroAction,
}

/// How a greedy efficient policy splits a shared battery constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Serve or absorb users in index order.
    #[default]
    LowestIndexFirst,
    /// Split in proportion to `|x_i|` by largest remainder; exact ties in the
    /// remainder are broken uniformly at random.
    Proportional,
}

impl FromStr for TieRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lowest_index_first" => Ok(Self::LowestIndexFirst),
            "proportional" => Ok(Self::Proportional),
            other => Err(format!(
                "unknown tie rule {other:?} (expected lowest_index_first or proportional)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryPolicy {
    instance: Arc<CmdpInstance>,
    /// Per state: `(action index, probability)` with positive probabilities.
    law: Vec<Vec<(usize, f64)>>,
    fallback: Option<Fallback>,
}

impl StationaryPolicy {
    /// Validates and wraps explicit per-state laws.
    pub fn new(instance: Arc<CmdpInstance>, law: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let p = Self {
            instance,
            law,
            fallback: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(instance: Arc<CmdpInstance>, choice: &[usize]) -> Result<Self> {
        Self::new(instance, choice.iter().map(|&k| vec![(k, 1.0)]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let inst = &self.instance;
        if self.law.len() != inst.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "policy covers {} states, instance has {}",
                self.law.len(),
                inst.num_states()
            )));
        }
        for (s, dist) in self.law.iter().enumerate() {
            let mut total = 0.0;
            for &(k, p) in dist {
                if k >= inst.actions(s).len() {
                    return Err(Error::DimensionMismatch(format!(
                        "state {s}: action index {k} out of range"
                    )));
                }
                if !(0.0..=1.0 + LAW_TOL).contains(&p) {
                    return Err(Error::InvalidProbability {
                        row: s,
                        col: k,
                        value: p,
                    });
                }
                total += p;
            }
            if (total - 1.0).abs() > LAW_TOL {
                return Err(Error::NotStochastic { row: s, sum: total });
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> &Arc<CmdpInstance> {
        &self.instance
    }
    pub fn law(&self, s: usize) -> &[(usize, f64)] {
        &self.law[s]
    }
    pub fn fallback(&self) -> Option<Fallback> {
        self.fallback
    }
    pub fn is_deterministic(&self) -> bool {
        self.law.iter().all(|d| d.len() == 1)
    }

    /// Kernel of the induced chain over the instance's (x, b) states.
    pub fn induced_kernel(&self) -> Vec<Vec<f64>> {
        let inst = &self.instance;
        let n = inst.num_states();
        let mut kernel = vec![vec![0.0; n]; n];
        for (s, dist) in self.law.iter().enumerate() {
            for &(k, phi) in dist {
                for (t, p) in inst.transitions(s, k) {
                    kernel[s][t] += phi * p;
                }
            }
        }
        kernel
    }
}

impl Serialize for StationaryPolicy {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct State<'a> {
            x: &'a [i64],
            b: usize,
        }
        #[derive(Serialize)]
        struct Choice<'a> {
            a: &'a [i64],
            p: f64,
        }
        #[derive(Serialize)]
        struct Entry<'a> {
            state: State<'a>,
            actions: Vec<Choice<'a>>,
        }
        let inst = &self.instance;
        let mut seq = ser.serialize_seq(Some(self.law.len()))?;
        for (s, dist) in self.law.iter().enumerate() {
            seq.serialize_element(&Entry {
                state: State {
                    x: inst.x_values(s),
                    b: inst.state(s).b,
                },
                actions: dist
                    .iter()
                    .map(|&(k, p)| Choice {
                        a: &inst.actions(s)[k],
                        p,
                    })
                    .collect(),
            })?;
        }
        seq.end()
    }
}

/// `phi(a | s) = rho(s, a) / rho(s)` on the measure's support, `fallback` elsewhere.
pub fn extract_policy(rho: &OccupationMeasure, fallback: Fallback) -> StationaryPolicy {
    let inst = rho.instance().clone();
    let law = (0..inst.num_states())
        .map(|s| {
            let total = rho.state_mass(s);
            if total > SUPPORT_TOL {
                rho.state_masses(s)
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m > 0.0)
                    .map(|(k, &m)| (k, m / total))
                    .collect()
            } else {
                fallback_law(&inst, s, fallback)
            }
        })
        .collect();
    StationaryPolicy {
        instance: inst,
        law,
        fallback: Some(fallback),
    }
}

fn fallback_law(inst: &CmdpInstance, s: usize, fallback: Fallback) -> Vec<(usize, f64)> {
    if fallback == Fallback::ZeroAction {
        let zero = vec![0; inst.num_users()];
        if let Some(k) = inst.action_index(s, &zero) {
            return vec![(k, 1.0)];
        }
    }
    greedy_law(inst, s, TieRule::LowestIndexFirst)
}

/// Greedy efficient policy: store all surplus and serve all demand that the
/// battery allows, splitting boundary cases by `tie_rule`.
pub fn greedy_efficient_policy(
    instance: &Arc<CmdpInstance>,
    tie_rule: TieRule,
) -> Result<StationaryPolicy> {
    instance.require_mode(ActionMode::Efficient)?;
    let law = (0..instance.num_states())
        .map(|s| greedy_law(instance, s, tie_rule))
        .collect();
    Ok(StationaryPolicy {
        instance: instance.clone(),
        law,
        fallback: None,
    })
}

fn greedy_law(inst: &CmdpInstance, s: usize, rule: TieRule) -> Vec<(usize, f64)> {
    let x = inst.x_values(s);
    let b = inst.state(s).b as i64;
    let b_max = inst.b_max() as i64;
    // Users sharing the constrained side and the amount they jointly move.
    let (eligible, total, sign): (Vec<usize>, i64, i64) =
        match efficiency_case(x, inst.state(s).b, inst.b_max()) {
            EfficiencyCase::Fits => {
                let k = inst.action_index(s, x).expect("a = x is admissible");
                return vec![(k, 1.0)];
            }
            EfficiencyCase::Overflow => {
                let demand: i64 = x.iter().filter(|&&v| v < 0).sum();
                let gens = (0..x.len()).filter(|&i| x[i] > 0).collect();
                (gens, b_max - b - demand, 1)
            }
            EfficiencyCase::Shortfall => {
                let supply: i64 = x.iter().filter(|&&v| v > 0).sum();
                let dems = (0..x.len()).filter(|&i| x[i] < 0).collect();
                (dems, b + supply, -1)
            }
        };
    debug_assert!(total >= 0);
    let base: Vec<i64> = x
        .iter()
        .map(|&v| if v * sign > 0 { 0 } else { v })
        .collect();
    let splits = match rule {
        TieRule::LowestIndexFirst => vec![(fill_in_order(x, &eligible, total), 1.0)],
        TieRule::Proportional => proportional_splits(x, &eligible, total),
    };
    let mut law: Vec<(usize, f64)> = splits
        .into_iter()
        .map(|(amounts, p)| {
            let mut a = base.clone();
            for (&i, m) in eligible.iter().zip(amounts) {
                a[i] = sign * m;
            }
            let k = inst
                .action_index(s, &a)
                .expect("greedy split is an efficient action");
            (k, p)
        })
        .collect();
    law.sort_by_key(|&(k, _)| k);
    law
}

fn fill_in_order(x: &[i64], eligible: &[usize], total: i64) -> Vec<i64> {
    let mut left = total;
    eligible
        .iter()
        .map(|&i| {
            let m = x[i].abs().min(left);
            left -= m;
            m
        })
        .collect()
}

/// Largest-remainder split of `total` in proportion to `|x_i|`, as a law over
/// integer compositions.
fn proportional_splits(x: &[i64], eligible: &[usize], total: i64) -> Vec<(Vec<i64>, f64)> {
    let weights: Vec<i64> = eligible.iter().map(|&i| x[i].abs()).collect();
    let w_sum: i64 = weights.iter().sum();
    if w_sum == 0 {
        return vec![(vec![], 1.0)];
    }
    let floors: Vec<i64> = weights.iter().map(|&w| total * w / w_sum).collect();
    // Remainders scaled by w_sum, so ties compare exactly.
    let rems: Vec<i64> = weights.iter().map(|&w| total * w % w_sum).collect();
    let extra = (total - floors.iter().sum::<i64>()) as usize;
    if extra == 0 {
        return vec![(floors, 1.0)];
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]));
    let cutoff = rems[order[extra - 1]];
    let sure: Vec<usize> = order.iter().copied().filter(|&j| rems[j] > cutoff).collect();
    let tied: Vec<usize> = order.iter().copied().filter(|&j| rems[j] == cutoff).collect();
    let need = extra - sure.len();
    let subsets = combinations(&tied, need);
    let p = 1.0 / subsets.len() as f64;
    subsets
        .into_iter()
        .map(|chosen| {
            let mut m = floors.clone();
            for &j in sure.iter().chain(&chosen) {
                m[j] += 1;
            }
            (m, p)
        })
        .collect()
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out: Vec<Vec<usize>> = combinations(&items[1..], k - 1)
        .into_iter()
        .map(|mut c| {
            c.insert(0, items[0]);
            c
        })
        .collect();
    out.extend(combinations(&items[1..], k));
    out
}

/// Steady-state performance of a stationary policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactEvaluation {
    /// `mu(x, b)` indexed like the instance's states.
    pub state_distribution: Vec<f64>,
    pub battery_marginal: Vec<f64>,
    pub llr_per_user: Vec<f64>,
    pub contributions: Vec<f64>,
    pub p_empty: f64,
    pub p_full: f64,
    pub total_llr: f64,
}

/// Evaluates `policy` on the recurrent class reached from `x ~ pi`, `b = 0`.
///
/// Fails with [`Error::Reducible`] when more than one closed class is reachable;
/// [`evaluate_classes`] evaluates each of them separately.
pub fn exact_evaluate(policy: &StationaryPolicy) -> Result<ExactEvaluation> {
    let kernel = policy.induced_kernel();
    let closed = reachable_closed_classes(&kernel, &initial_states(&policy.instance));
    if closed.len() != 1 {
        return Err(Error::Reducible { classes: closed });
    }
    Ok(evaluate_on(policy, &kernel, &closed[0]))
}

/// Per-class evaluation for policies whose induced chain splits.
pub fn evaluate_classes(policy: &StationaryPolicy) -> Vec<(Vec<usize>, ExactEvaluation)> {
    let kernel = policy.induced_kernel();
    let closed = reachable_closed_classes(&kernel, &initial_states(&policy.instance));
    if closed.len() > 1 {
        log::warn!(
            "policy induces {} recurrent classes; evaluating each separately",
            closed.len()
        );
    }
    closed
        .into_iter()
        .map(|c| {
            let e = evaluate_on(policy, &kernel, &c);
            (c, e)
        })
        .collect()
}

fn initial_states(inst: &CmdpInstance) -> Vec<usize> {
    inst.chain()
        .stationary()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, _)| inst.state_index(x, 0))
        .collect()
}

fn evaluate_on(policy: &StationaryPolicy, kernel: &[Vec<f64>], class: &[usize]) -> ExactEvaluation {
    let inst = &policy.instance;
    let mu = stationary_on_class(kernel, class);
    let n = inst.num_users();
    let mut llr = vec![0.0; n];
    let mut contrib = vec![0.0; n];
    let mut battery = vec![0.0; inst.b_max() + 1];
    for (s, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        battery[inst.state(s).b] += m;
        for &(k, phi) in &policy.law[s] {
            for i in 0..n {
                llr[i] += m * phi * inst.user_lost_load(s, k, i);
                contrib[i] += m * phi * inst.fairness_coeff(s, k, i);
            }
        }
    }
    ExactEvaluation {
        p_empty: battery[0],
        p_full: battery[inst.b_max()],
        total_llr: llr.iter().sum(),
        state_distribution: mu,
        battery_marginal: battery,
        llr_per_user: llr,
        contributions: contrib,
    }
}

/// Exact performance of the clamped greedy battery for one user alone.
pub fn single_user_greedy_evaluate(user: &UserModel, b_max: usize) -> Result<ExactEvaluation> {
    let chain = Arc::new(build_joint_chain(vec![user.clone()], Coupling::Independent)?);
    let inst = Arc::new(CmdpInstance::build(chain, b_max, ActionMode::Efficient)?);
    exact_evaluate(&greedy_efficient_policy(&inst, TieRule::LowestIndexFirst)?)
}
