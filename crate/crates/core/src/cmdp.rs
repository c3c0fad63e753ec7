//! The controlled Markov process over (joint net generation, battery level).
//!
//! States are indexed as `x * (b_max + 1) + b` where `x` is the joint-chain state
//! index and `b` the battery level. Per-state action lists are in ascending
//! lexicographic order of the action vector `(a_1, ..., a_n)`, so LP column order
//! is reproducible. The battery moves deterministically to `b + sum(a)`; the
//! background component moves by the joint kernel.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::JointChain;

/// One energy allocation: `a_i > 0` accepts energy from user i, `a_i < 0` supplies it.
pub type Action = Vec<i64>;

/// Default cap on `|states| * max |actions|`.
pub const DEFAULT_ACTION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Every action satisfying the box and capacity constraints.
    Full,
    /// Only actions that store all available surplus and serve demand when possible.
    Efficient,
}

impl ActionMode {
    pub fn name(self) -> &'static str {
        match self {
            ActionMode::Full => "full",
            ActionMode::Efficient => "efficient",
        }
    }
}

/// Which efficiency condition applies in a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfficiencyCase {
    /// `0 <= b + sum(x) <= b_max`: take `a = x`.
    Fits,
    /// `b + sum(x) > b_max`: serve all demand, fill the battery exactly.
    Overflow,
    /// `b + sum(x) < 0`: accept all surplus, drain the battery exactly.
    Shortfall,
}

pub fn efficiency_case(x: &[i64], b: usize, b_max: usize) -> EfficiencyCase {
    let level = b as i64 + x.iter().sum::<i64>();
    if level > b_max as i64 {
        EfficiencyCase::Overflow
    } else if level < 0 {
        EfficiencyCase::Shortfall
    } else {
        EfficiencyCase::Fits
    }
}

fn check_battery(b: usize, b_max: usize) -> Result<()> {
    if b > b_max {
        return Err(Error::BatteryOutOfRange { b, b_max });
    }
    Ok(())
}

/// Per-user bounds of the action box: `{0..x_i}` for surplus, `{x_i..0}` for deficit.
fn action_box(x: &[i64]) -> (Vec<i64>, Vec<i64>) {
    x.iter().map(|&v| (v.min(0), v.max(0))).unzip()
}

fn box_size(lo: &[i64], hi: &[i64]) -> u128 {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| (h - l + 1) as u128)
        .fold(1u128, |acc, v| acc.saturating_mul(v))
}

/// All integer vectors in `[lo, hi]` (lexicographic) whose sum lies in `[min_sum, max_sum]`.
fn enumerate_box(lo: &[i64], hi: &[i64], min_sum: i64, max_sum: i64) -> Vec<Action> {
    let n = lo.len();
    let mut out = Vec::new();
    let mut cur = lo.to_vec();
    loop {
        let s: i64 = cur.iter().sum();
        if (min_sum..=max_sum).contains(&s) {
            out.push(cur.clone());
        }
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] < hi[k] {
                cur[k] += 1;
                for j in (k + 1)..n {
                    cur[j] = lo[j];
                }
                break;
            }
        }
    }
}

/// The full action set `A(x, b)`.
pub fn allowed_actions(x: &[i64], b: usize, b_max: usize) -> Result<Vec<Action>> {
    check_battery(b, b_max)?;
    let (lo, hi) = action_box(x);
    let b = b as i64;
    Ok(enumerate_box(&lo, &hi, -b, b_max as i64 - b))
}

/// The efficient action set `A_e(x, b)`.
pub fn efficient_actions(x: &[i64], b: usize, b_max: usize) -> Result<Vec<Action>> {
    check_battery(b, b_max)?;
    let (lo, hi) = efficient_box(x, b, b_max);
    let total = efficient_total(x, b, b_max);
    Ok(enumerate_box(&lo, &hi, total, total))
}

/// Net battery change under any efficient action.
pub fn efficient_total(x: &[i64], b: usize, b_max: usize) -> i64 {
    let level = b as i64 + x.iter().sum::<i64>();
    level.clamp(0, b_max as i64) - b as i64
}

/// Box for efficient actions: free coordinates are generators (overflow) or
/// demanders (shortfall); everything else is pinned to `x_i`.
pub(crate) fn efficient_box(x: &[i64], b: usize, b_max: usize) -> (Vec<i64>, Vec<i64>) {
    match efficiency_case(x, b, b_max) {
        EfficiencyCase::Fits => (x.to_vec(), x.to_vec()),
        EfficiencyCase::Overflow => x
            .iter()
            .map(|&v| if v > 0 { (0, v) } else { (v, v) })
            .unzip(),
        EfficiencyCase::Shortfall => x
            .iter()
            .map(|&v| if v < 0 { (v, 0) } else { (v, v) })
            .unzip(),
    }
}

/// Lost load `sum_i 1{x_i < 0} (a_i - x_i)`.
pub fn stage_cost(x: &[i64], a: &[i64]) -> f64 {
    x.iter()
        .zip(a)
        .filter(|(&xi, _)| xi < 0)
        .map(|(&xi, &ai)| (ai - xi) as f64)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StateKey {
    /// Joint-chain state index.
    pub x: usize,
    /// Battery level.
    pub b: usize,
}

#[derive(Debug, Clone)]
pub struct CmdpInstance {
    chain: Arc<JointChain>,
    b_max: usize,
    mode: ActionMode,
    states: Vec<StateKey>,
    actions: Vec<Vec<Action>>,
    costs: Vec<Vec<f64>>,
}

impl CmdpInstance {
    pub fn build(chain: Arc<JointChain>, b_max: usize, mode: ActionMode) -> Result<Self> {
        Self::build_with_cap(chain, b_max, mode, DEFAULT_ACTION_CAP)
    }

    pub fn build_with_cap(
        chain: Arc<JointChain>,
        b_max: usize,
        mode: ActionMode,
        cap: u128,
    ) -> Result<Self> {
        let levels = b_max + 1;
        let n_states = chain.len() * levels;
        let mut states = Vec::with_capacity(n_states);
        let mut actions = Vec::with_capacity(n_states);
        let mut costs = Vec::with_capacity(n_states);
        let mut widest = 0usize;
        for (xi, x) in chain.states().iter().enumerate() {
            let (lo, hi) = action_box(x);
            let bound = box_size(&lo, &hi);
            if bound > cap {
                return Err(Error::InstanceTooLarge {
                    size: bound.saturating_mul(n_states as u128),
                    cap,
                });
            }
            for b in 0..levels {
                let acts = match mode {
                    ActionMode::Full => allowed_actions(x, b, b_max)?,
                    ActionMode::Efficient => efficient_actions(x, b, b_max)?,
                };
                debug_assert!(!acts.is_empty());
                widest = widest.max(acts.len());
                let size = (widest as u128) * n_states as u128;
                if size > cap {
                    return Err(Error::InstanceTooLarge { size, cap });
                }
                costs.push(acts.iter().map(|a| stage_cost(x, a)).collect());
                actions.push(acts);
                states.push(StateKey { x: xi, b });
            }
        }
        Ok(Self {
            chain,
            b_max,
            mode,
            states,
            actions,
            costs,
        })
    }

    pub fn chain(&self) -> &Arc<JointChain> {
        &self.chain
    }
    pub fn b_max(&self) -> usize {
        self.b_max
    }
    pub fn mode(&self) -> ActionMode {
        self.mode
    }
    pub fn num_users(&self) -> usize {
        self.chain.num_users()
    }
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
    pub fn states(&self) -> &[StateKey] {
        &self.states
    }
    pub fn state(&self, s: usize) -> StateKey {
        self.states[s]
    }
    pub fn state_index(&self, x: usize, b: usize) -> usize {
        x * (self.b_max + 1) + b
    }
    /// Net-generation vector of state `s`.
    pub fn x_values(&self, s: usize) -> &[i64] {
        &self.chain.states()[self.states[s].x]
    }
    pub fn actions(&self, s: usize) -> &[Action] {
        &self.actions[s]
    }
    /// Total number of (state, action) pairs.
    pub fn num_pairs(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }
    pub fn cost(&self, s: usize, k: usize) -> f64 {
        self.costs[s][k]
    }
    /// Fairness coefficient of user `i`: the energy accepted from it.
    pub fn fairness_coeff(&self, s: usize, k: usize, i: usize) -> f64 {
        self.actions[s][k][i] as f64
    }
    /// Lost load of user `i` under action `k` in state `s`.
    pub fn user_lost_load(&self, s: usize, k: usize, i: usize) -> f64 {
        let xi = self.x_values(s)[i];
        if xi < 0 {
            (self.actions[s][k][i] - xi) as f64
        } else {
            0.0
        }
    }
    pub fn action_index(&self, s: usize, action: &[i64]) -> Option<usize> {
        self.actions[s].binary_search_by(|a| a.as_slice().cmp(action)).ok()
    }
    pub fn next_battery(&self, s: usize, k: usize) -> usize {
        (self.states[s].b as i64 + self.actions[s][k].iter().sum::<i64>()) as usize
    }

    /// Successor distribution `(next state index, probability)` for action index `k`.
    pub fn transitions(&self, s: usize, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let nb = self.next_battery(s, k);
        let row = &self.chain.kernel()[self.states[s].x];
        row.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(move |(x2, &p)| (self.state_index(x2, nb), p))
    }

    /// Successor distribution for an explicit action vector.
    pub fn transition_step(&self, s: usize, action: &[i64]) -> Result<Vec<(usize, f64)>> {
        let k = self.action_index(s, action).ok_or_else(|| Error::ActionNotAllowed {
            state: s,
            action: action.to_vec(),
        })?;
        Ok(self.transitions(s, k).collect())
    }

    pub(crate) fn require_mode(&self, expected: ActionMode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::ModeMismatch {
                expected: expected.name(),
                found: self.mode.name(),
            });
        }
        Ok(())
    }
}
