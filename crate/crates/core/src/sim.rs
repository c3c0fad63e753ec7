//! Monte Carlo simulation of stationary policies.
//!
//! Trajectories use ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`). Each
//! step draws exactly two uniforms on `[0, 1)`: the first selects the action by
//! inverse CDF over the state's law (in action-index order), the second selects
//! the next joint state by inverse CDF over the kernel row. When `x0` is drawn
//! from the stationary law, one extra uniform is consumed before the first step.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::StationaryPolicy;

pub const DEFAULT_BATCHES: usize = 100;

/// How the initial joint net-generation state is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialX {
    /// Sampled from the background chain's stationary law.
    #[default]
    Stationary,
    /// A fixed joint-state index.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub battery0: usize,
    #[serde(default)]
    pub x0: InitialX,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

impl SimConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            battery0: 0,
            x0: InitialX::Stationary,
            batches: DEFAULT_BATCHES,
        }
    }
}

/// A time average with its batch-means standard error (absent with fewer
/// than two batches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialState {
    pub x_index: usize,
    pub x: Vec<i64>,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub steps: u64,
    pub seed: u64,
    pub batches: usize,
    pub initial: InitialState,
    pub final_battery: usize,
    pub llr_per_user: Vec<Estimate>,
    pub contributions: Vec<Estimate>,
    pub total_llr: Estimate,
    /// Visits to each battery level over steps `0..T`.
    pub battery_histogram: Vec<u64>,
    /// `sum_t a_i(t)` per user.
    pub accepted: Vec<i64>,
    /// `sum_t 1{x_i < 0} (a_i(t) - x_i(t))` per user.
    pub lost: Vec<u64>,
}

impl SimResult {
    /// `sum_t sum_i a_i(t) = b(T) - b(0)`, checked in integers.
    pub fn telescopes(&self) -> bool {
        self.accepted.iter().sum::<i64>() == self.final_battery as i64 - self.initial.b as i64
    }
}

fn sample(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    weights
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

pub fn simulate_policy(policy: &StationaryPolicy, config: &SimConfig) -> Result<SimResult> {
    let inst = policy.instance();
    let chain = inst.chain();
    if config.steps == 0 {
        return Err(Error::InvalidGrid("simulation needs at least one step".into()));
    }
    if config.battery0 > inst.b_max() {
        return Err(Error::BatteryOutOfRange {
            b: config.battery0,
            b_max: inst.b_max(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = match config.x0 {
        InitialX::Stationary => sample(&cumulative(chain.stationary().iter().copied()), rng.gen()),
        InitialX::Fixed(i) if i < chain.len() => i,
        InitialX::Fixed(i) => {
            return Err(Error::DimensionMismatch(format!(
                "initial joint state {i} out of range ({} states)",
                chain.len()
            )))
        }
    };
    let initial = InitialState {
        x_index: x,
        x: chain.states()[x].clone(),
        b: config.battery0,
    };

    let kernel_cum: Vec<Vec<f64>> = chain
        .kernel()
        .iter()
        .map(|row| cumulative(row.iter().copied()))
        .collect();
    let law_cum: Vec<Vec<f64>> = (0..inst.num_states())
        .map(|s| cumulative(policy.law(s).iter().map(|&(_, p)| p)))
        .collect();

    let n = inst.num_users();
    let t_total = config.steps;
    let batches = config.batches.min(t_total as usize).max(1);
    let mut batch_lost = vec![vec![0u64; n]; batches];
    let mut batch_acc = vec![vec![0i64; n]; batches];
    let mut batch_len = vec![0u64; batches];
    let mut accepted = vec![0i64; n];
    let mut lost = vec![0u64; n];
    let mut hist = vec![0u64; inst.b_max() + 1];
    let mut b = config.battery0;

    for t in 0..t_total {
        let batch = (t as u128 * batches as u128 / t_total as u128) as usize;
        batch_len[batch] += 1;
        hist[b] += 1;
        let s = inst.state_index(x, b);
        let k = policy.law(s)[sample(&law_cum[s], rng.gen())].0;
        let a = &inst.actions(s)[k];
        let xs = &chain.states()[x];
        for i in 0..n {
            accepted[i] += a[i];
            batch_acc[batch][i] += a[i];
            if xs[i] < 0 {
                let l = (a[i] - xs[i]) as u64;
                lost[i] += l;
                batch_lost[batch][i] += l;
            }
        }
        let nb = b as i64 + a.iter().sum::<i64>();
        assert!(
            (0..=inst.b_max() as i64).contains(&nb),
            "battery left [0, b_max] at step {t}"
        );
        b = nb as usize;
        x = sample(&kernel_cum[x], rng.gen());
    }

    let t = t_total as f64;
    let estimate = |total: f64, per_batch: &dyn Fn(usize) -> f64| {
        let std_error = (batches >= 2).then(|| {
            let means: Vec<f64> = (0..batches)
                .map(|j| per_batch(j) / batch_len[j] as f64)
                .collect();
            let m = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        });
        Estimate {
            mean: total / t,
            std_error,
        }
    };
    let llr_per_user = (0..n)
        .map(|i| estimate(lost[i] as f64, &|j| batch_lost[j][i] as f64))
        .collect();
    let contributions = (0..n)
        .map(|i| estimate(accepted[i] as f64, &|j| batch_acc[j][i] as f64))
        .collect();
    let total_llr = estimate(lost.iter().sum::<u64>() as f64, &|j| {
        batch_lost[j].iter().sum::<u64>() as f64
    });

    let result = SimResult {
        steps: t_total,
        seed: config.seed,
        batches,
        initial,
        final_battery: b,
        llr_per_user,
        contributions,
        total_llr,
        battery_histogram: hist,
        accepted,
        lost,
    };
    debug_assert!(result.telescopes());
    Ok(result)
}

/// Battery histogram as `level,count` CSV.
pub fn write_histogram_csv<W: Write>(result: &SimResult, mut out: W) -> io::Result<()> {
    writeln!(out, "level,count")?;
    for (level, count) in result.battery_histogram.iter().enumerate() {
        writeln!(out, "{level},{count}")?;
    }
    Ok(())
}
