//! Derived quantities: the efficient loss-of-load rate, price of fairness,
//! lower and upper bounds on the fair optimum, decay-rate fits, and sweeps.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::cmdp::{ActionMode, CmdpInstance};
use crate::error::{Error, Result};
use crate::markov::stationary_from;
use crate::netgen::{drifts, JointChain, UserModel};
use crate::policy::single_user_greedy_evaluate;
use crate::programs::{solve_f, solve_p, Diagnostics, FairnessSlack};

/// Loss-of-load values below this are treated as solver noise in decay fits.
pub const DECAY_FLOOR: f64 = 1e-14;
/// Minimum R^2 for an "exponential" verdict.
pub const EXPONENTIAL_R2: f64 = 0.99;

/// Minimum system loss-of-load rate without fairness constraints.
///
/// Evaluates the chain induced by any efficient policy, whose battery moves to
/// `clamp(b + sum x, 0, b_max)`, started from `x ~ pi`, `b = 0`.
pub fn compute_llr_e(chain: &JointChain, b_max: usize) -> Result<f64> {
    let levels = b_max + 1;
    let n = chain.len() * levels;
    let mut kernel = vec![vec![0.0; n]; n];
    let mut cost = vec![0.0; n];
    for (x, xs) in chain.states().iter().enumerate() {
        let net: i64 = xs.iter().sum();
        for b in 0..levels {
            let s = x * levels + b;
            let level = b as i64 + net;
            cost[s] = (-level).max(0) as f64;
            let nb = level.clamp(0, b_max as i64) as usize;
            for (x2, &p) in chain.kernel()[x].iter().enumerate() {
                kernel[s][x2 * levels + nb] += p;
            }
        }
    }
    let initial: Vec<usize> = chain
        .stationary()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, _)| x * levels)
        .collect();
    let mu = stationary_from(&kernel, &initial)?;
    Ok(mu.iter().zip(&cost).map(|(m, c)| m * c).sum())
}

/// `LLR_o / LLR_e`, kept symbolic when the denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PofRatio {
    Finite(f64),
    /// `LLR_e = 0 < LLR_o`.
    Infinite,
    /// `LLR_e = LLR_o = 0`.
    Indeterminate,
}

impl PofRatio {
    fn from_rates(llr_o: f64, llr_e: f64) -> Self {
        if llr_e > 0.0 {
            Self::Finite(llr_o / llr_e)
        } else if llr_o > ZERO_RATE {
            Self::Infinite
        } else {
            Self::Indeterminate
        }
    }

    pub fn as_finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            _ => None,
        }
    }
}

/// Fair optima at or below this are reported as zero when `LLR_e = 0`.
const ZERO_RATE: f64 = 1e-12;

impl fmt::Display for PofRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v:?}"),
            Self::Infinite => f.write_str("infinity"),
            Self::Indeterminate => f.write_str("indeterminate"),
        }
    }
}

impl Serialize for PofRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => s.serialize_f64(*v),
            other => s.collect_str(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceOfFairness {
    pub llr_o: f64,
    pub llr_e: f64,
    pub ratio: PofRatio,
    #[serde(skip)]
    pub diagnostics: Option<Diagnostics>,
}

impl PriceOfFairness {
    /// The ratio as a number; [`Error::EfficientLlrZero`] when `LLR_e = 0`.
    pub fn value(&self) -> Result<f64> {
        self.ratio.as_finite().ok_or(Error::EfficientLlrZero {
            llr_o: self.llr_o,
            llr_e: self.llr_e,
        })
    }
}

pub fn price_of_fairness(chain: &Arc<JointChain>, b_max: usize) -> Result<PriceOfFairness> {
    let inst = Arc::new(CmdpInstance::build(chain.clone(), b_max, ActionMode::Full)?);
    let report = solve_p(&inst, FairnessSlack::Bounded(0.0))?;
    let llr_e = compute_llr_e(chain, b_max)?;
    Ok(PriceOfFairness {
        llr_o: report.objective,
        llr_e,
        ratio: PofRatio::from_rates(report.objective, llr_e),
        diagnostics: Some(report.diagnostics),
    })
}

/// `sum over net-demanding users of -Delta_i`: no policy, fair or not, does better.
pub fn theorem1_bound(chain: &JointChain) -> f64 {
    let d = drifts(chain);
    d.demanding.iter().fold(0.0, |acc, &i| acc - d.user_drifts[i])
}

/// Treatment of the `b_max mod n` units left over by equal chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkRemainder {
    #[default]
    Unallocated,
    /// One extra unit each to the users with the largest drift.
    ByDrift,
}

/// Loss-of-load rate of the fair policy that gives each user a private chunk of
/// the battery and runs it greedily; an upper bound on the fair optimum.
pub fn chunked_bound(users: &[UserModel], b_max: usize, remainder: ChunkRemainder) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::EmptyUserList);
    }
    let mut drift = Vec::with_capacity(users.len());
    for (i, u) in users.iter().enumerate() {
        let d = u.drift()?;
        if d <= 0.0 {
            return Err(Error::NotAllGenerating { user: i, drift: d });
        }
        drift.push(d);
    }
    let n = users.len();
    let mut chunks = vec![b_max / n; n];
    if remainder == ChunkRemainder::ByDrift {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| drift[b].total_cmp(&drift[a]).then(a.cmp(&b)));
        for &i in order.iter().take(b_max % n) {
            chunks[i] += 1;
        }
    }
    users
        .iter()
        .zip(&chunks)
        .map(|(u, &c)| single_user_greedy_evaluate(u, c).map(|e| e.total_llr))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVerdict {
    Exponential,
    NotExponential,
}

/// Least-squares fit of `log LLR = intercept + slope * b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub b_values: Vec<usize>,
    pub llr_values: Vec<f64>,
    /// Battery sizes dropped because their LLR was below the noise floor.
    pub excluded: Vec<usize>,
    /// `-lambda`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Set when every usable point has the same log LLR, making R^2 undefined.
    pub degenerate: bool,
    pub verdict: DecayVerdict,
}

impl DecayFit {
    pub fn lambda(&self) -> f64 {
        -self.slope
    }
}

pub fn decay_rate<F>(mut evaluator: F, b_values: &[usize]) -> Result<DecayFit>
where
    F: FnMut(usize) -> Result<f64>,
{
    let llr_values = b_values
        .iter()
        .map(|&b| evaluator(b))
        .collect::<Result<Vec<f64>>>()?;
    let (mut xs, mut ys, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for (&b, &v) in b_values.iter().zip(&llr_values) {
        if v >= DECAY_FLOOR {
            xs.push(b as f64);
            ys.push(v.ln());
        } else {
            excluded.push(b);
        }
    }
    if xs.len() < 4 {
        return Err(Error::TooFewPoints { usable: xs.len() });
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidGrid("decay fit needs distinct battery sizes".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let degenerate = syy <= f64::EPSILON * my.abs().max(1.0) * m;
    let r_squared = if degenerate {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    let slope = if degenerate { 0.0 } else { slope };
    let verdict = if r_squared >= EXPONENTIAL_R2 && slope < 0.0 {
        DecayVerdict::Exponential
    } else {
        DecayVerdict::NotExponential
    };
    Ok(DecayFit {
        b_values: b_values.to_vec(),
        llr_values,
        excluded,
        slope,
        intercept,
        r_squared,
        degenerate,
        verdict,
    })
}

/// Fair optimum `LLR_o(b)` as a decay-fit evaluator.
pub fn llr_o_evaluator(chain: Arc<JointChain>) -> impl FnMut(usize) -> Result<f64> {
    move |b| {
        let inst = Arc::new(CmdpInstance::build(chain.clone(), b, ActionMode::Full)?);
        Ok(solve_p(&inst, FairnessSlack::Bounded(0.0))?.objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    PofVsB,
    FairnessVsB,
    Frontier,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::PofVsB => "pof_vs_b",
            Self::FairnessVsB => "fairness_vs_b",
            Self::Frontier => "frontier",
        }
    }
}

impl FromStr for SweepKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pof_vs_b" => Ok(Self::PofVsB),
            "fairness_vs_b" => Ok(Self::FairnessVsB),
            "frontier" => Ok(Self::Frontier),
            other => Err(format!(
                "unknown sweep kind {other:?} (expected pof_vs_b, fairness_vs_b or frontier)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepGrid {
    /// Battery sizes, for `pof_vs_b` and `fairness_vs_b`.
    Battery(Vec<usize>),
    /// Fairness slacks at a fixed battery size, for `frontier`.
    Delta { b_max: usize, deltas: Vec<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llr_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llr_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llr_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pof: Option<PofRatio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<f64>,
    /// `LLR_delta / LLR_e - 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub abscissa: f64,
    pub metrics: SweepMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn check_increasing<T: PartialOrd + fmt::Debug>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidGrid(format!(
            "grid must be strictly increasing ({:?} then {:?})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Evaluates one sweep row per grid point on `jobs` worker threads.
///
/// Rows come back in grid order whatever `jobs` is; a failing point yields a
/// row with empty metrics and its error message.
pub fn sweep(
    kind: SweepKind,
    chain: &Arc<JointChain>,
    grid: &SweepGrid,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let points: Vec<(f64, usize, Option<f64>)> = match (kind, grid) {
        (SweepKind::Frontier, SweepGrid::Delta { b_max, deltas }) => {
            check_increasing(deltas)?;
            if let Some(d) = deltas.iter().find(|d| !d.is_finite() || **d < 0.0) {
                return Err(Error::InvalidDelta(*d));
            }
            deltas.iter().map(|&d| (d, *b_max, Some(d))).collect()
        }
        (SweepKind::PofVsB | SweepKind::FairnessVsB, SweepGrid::Battery(bs)) => {
            check_increasing(bs)?;
            bs.iter().map(|&b| (b as f64, b, None)).collect()
        }
        (SweepKind::Frontier, _) => {
            return Err(Error::InvalidGrid(
                "frontier sweeps need a fixed b_max and a delta grid".into(),
            ))
        }
        _ => {
            return Err(Error::InvalidGrid(format!(
                "{} sweeps need a battery-size grid",
                kind.name()
            )))
        }
    };
    let frontier_llr_e = match grid {
        SweepGrid::Delta { b_max, .. } => Some(compute_llr_e(chain, *b_max)),
        SweepGrid::Battery(_) => None,
    };
    let eval = |&(abscissa, b, delta): &(f64, usize, Option<f64>)| {
        let result = match kind {
            SweepKind::PofVsB => price_of_fairness(chain, b).map(|p| {
                let m = SweepMetrics {
                    llr_o: Some(p.llr_o),
                    llr_e: Some(p.llr_e),
                    pof: Some(p.ratio),
                    ..Default::default()
                };
                (m, p.diagnostics)
            }),
            SweepKind::FairnessVsB => {
                CmdpInstance::build(chain.clone(), b, ActionMode::Efficient).and_then(|inst| {
                    let r = solve_f(&Arc::new(inst))?;
                    let m = SweepMetrics {
                        theta_star: Some(r.objective),
                        ..Default::default()
                    };
                    Ok((m, Some(r.diagnostics)))
                })
            }
            SweepKind::Frontier => frontier_point(
                chain,
                b,
                delta.expect("frontier point carries delta"),
                frontier_llr_e.clone().expect("frontier grid"),
            ),
        };
        match result {
            Ok((metrics, diagnostics)) => SweepRow {
                kind,
                abscissa,
                metrics,
                diagnostics,
                error: None,
            },
            Err(e) => {
                log::warn!("{} point {abscissa}: {e}", kind.name());
                SweepRow {
                    kind,
                    abscissa,
                    metrics: SweepMetrics::default(),
                    diagnostics: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(eval).collect()))
}

fn frontier_point(
    chain: &Arc<JointChain>,
    b_max: usize,
    delta: f64,
    llr_e: Result<f64>,
) -> Result<(SweepMetrics, Option<Diagnostics>)> {
    let llr_e = llr_e?;
    let inst = Arc::new(CmdpInstance::build(chain.clone(), b_max, ActionMode::Full)?);
    let r = solve_p(&inst, FairnessSlack::bounded(delta)?)?;
    let epsilon = (llr_e > 0.0).then(|| r.objective / llr_e - 1.0);
    let m = SweepMetrics {
        llr_e: Some(llr_e),
        llr_delta: Some(r.objective),
        epsilon,
        ..Default::default()
    };
    Ok((m, Some(r.diagnostics)))
}

pub const SWEEP_CSV_HEADER: &str = "kind,abscissa,llr_o,llr_e,llr_delta,pof,theta_star,epsilon";

/// Writes rows as CSV; numbers use the shortest round-trip representation and
/// inapplicable or failed metrics are left empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    fn cell(v: Option<f64>) -> String {
        v.map(|v| format!("{v:?}")).unwrap_or_default()
    }
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let m = &r.metrics;
        let abscissa = match r.kind {
            SweepKind::Frontier => format!("{:?}", r.abscissa),
            _ => format!("{}", r.abscissa as usize),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.kind.name(),
            abscissa,
            cell(m.llr_o),
            cell(m.llr_e),
            cell(m.llr_delta),
            m.pof.map(|p| p.to_string()).unwrap_or_default(),
            cell(m.theta_star),
            cell(m.epsilon),
        )?;
    }
    Ok(())
}
