//! Command implementations. Each returns the artifacts to write and a one-line summary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fairshare::analysis::{
    chunked_bound, compute_llr_e, decay_rate, price_of_fairness, sweep, theorem1_bound,
    write_sweep_csv, ChunkRemainder, SweepGrid, SweepKind,
};
use fairshare::cmdp::{ActionMode, CmdpInstance};
use fairshare::lpcore::{write_text, Tolerances};
use fairshare::netgen::{drifts, JointChain};
use fairshare::policy::{
    exact_evaluate, extract_policy, greedy_efficient_policy, Fallback, StationaryPolicy, TieRule,
};
use fairshare::programs::{
    build_lp_f, build_lp_p, solve_f_with, solve_p_with, FairnessSlack, SolveReport,
};
use fairshare::sim::{simulate_policy, write_histogram_csv, SimConfig};
use fairshare::lpcore::RevisedSimplex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, DeltaSpec, PolicyChoice, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} invariant check(s) failed")]
    InvariantsFailed(usize),
}

impl From<fairshare::Error> for CliError {
    fn from(e: fairshare::Error) -> Self {
        Self::Config(ConfigError::Model(e))
    }
}

impl CliError {
    /// 2 for solver failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(ConfigError::Model(e)) if e.is_solver_failure() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveP,
    SolveF,
    LlrE,
    Pof,
    Decay,
    Sweep,
    Simulate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::SolveP => "solve-p",
            Self::SolveF => "solve-f",
            Self::LlrE => "llr-e",
            Self::Pof => "pof",
            Self::Decay => "decay",
            Self::Sweep => "sweep",
            Self::Simulate => "simulate",
            Self::Validate => "validate",
        }
    }
}

/// Settings that are not part of the run configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub dump_lp: Option<PathBuf>,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    pub json: Value,
    /// CSV companion (sweep rows or the battery histogram).
    pub csv: Option<String>,
    /// Number of failed checks, for `validate`.
    pub failures: usize,
}

impl Outcome {
    fn new(summary: String, json: Value) -> Self {
        Self {
            summary,
            json,
            csv: None,
            failures: 0,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

pub fn run(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let chain = Arc::new(cfg.chain()?);
    let tol = cfg.tolerances()?;
    match cmd {
        Command::SolveP => solve_p_cmd(cfg, &chain, &tol, opts),
        Command::SolveF => solve_f_cmd(cfg, &chain, &tol, opts),
        Command::LlrE => llr_e_cmd(cfg, &chain),
        Command::Pof => pof_cmd(cfg, &chain),
        Command::Decay => decay_cmd(cfg, &chain, &tol),
        Command::Sweep => sweep_cmd(cfg, &chain, opts),
        Command::Simulate => simulate_cmd(cfg, &chain, &tol),
        Command::Validate => validate_cmd(cfg, &chain, &tol),
    }
}

fn instance(chain: &Arc<JointChain>, b_max: usize, mode: ActionMode) -> Result<Arc<CmdpInstance>, CliError> {
    Ok(Arc::new(CmdpInstance::build(chain.clone(), b_max, mode)?))
}

fn dump(path: &Path, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn delta_of(cfg: &RunConfig) -> Result<(DeltaSpec, FairnessSlack), CliError> {
    let spec = cfg.delta.unwrap_or(DeltaSpec::Finite(0.0));
    Ok((spec, spec.to_slack()?))
}

fn solve_p_cmd(
    cfg: &RunConfig,
    chain: &Arc<JointChain>,
    tol: &Tolerances,
    opts: &RunOptions,
) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let (spec, delta) = delta_of(cfg)?;
    let inst = instance(chain, b_max, ActionMode::Full)?;
    if let Some(path) = &opts.dump_lp {
        dump(path, write_text(&build_lp_p(&inst, delta)?))?;
    }
    let r = solve_p_with(&inst, delta, &RevisedSimplex, tol)?;
    let summary = format!(
        "solve-p: LLR_sys = {:?} (b_max = {b_max}, delta = {spec}, {} iterations)",
        r.objective, r.diagnostics.iterations
    );
    Ok(Outcome::new(summary, report_json(&r)))
}

fn report_json(r: &SolveReport) -> Value {
    to_value(r)
}

fn solve_f_cmd(
    cfg: &RunConfig,
    chain: &Arc<JointChain>,
    tol: &Tolerances,
    opts: &RunOptions,
) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let inst = instance(chain, b_max, ActionMode::Efficient)?;
    if let Some(path) = &opts.dump_lp {
        dump(path, write_text(&build_lp_f(&inst)?))?;
    }
    let r = solve_f_with(&inst, &RevisedSimplex, tol)?;
    let summary = format!(
        "solve-f: theta* = {:?} (b_max = {b_max}, {} iterations)",
        r.objective, r.diagnostics.iterations
    );
    Ok(Outcome::new(summary, report_json(&r)))
}

fn llr_e_cmd(cfg: &RunConfig, chain: &Arc<JointChain>) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let llr_e = compute_llr_e(chain, b_max)?;
    let d = drifts(chain);
    let json = json!({
        "b_max": b_max,
        "llr_e": llr_e,
        "theorem1_bound": theorem1_bound(chain),
        "user_drifts": d.user_drifts,
        "system_drift": d.system_drift,
    });
    Ok(Outcome::new(
        format!("llr-e: LLR_e = {llr_e:?} (b_max = {b_max})"),
        json,
    ))
}

fn pof_cmd(cfg: &RunConfig, chain: &Arc<JointChain>) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let p = price_of_fairness(chain, b_max)?;
    let json = json!({
        "b_max": b_max,
        "llr_o": p.llr_o,
        "llr_e": p.llr_e,
        "pof": p.ratio,
    });
    Ok(Outcome::new(
        format!(
            "pof: PoF = {} (LLR_o = {:?}, LLR_e = {:?}, b_max = {b_max})",
            p.ratio, p.llr_o, p.llr_e
        ),
        json,
    ))
}

fn decay_cmd(cfg: &RunConfig, chain: &Arc<JointChain>, tol: &Tolerances) -> Result<Outcome, CliError> {
    let grid = cfg.require_b_grid()?;
    let (spec, delta) = delta_of(cfg)?;
    let fit = decay_rate(
        |b| {
            let inst = Arc::new(CmdpInstance::build(chain.clone(), b, ActionMode::Full)?);
            Ok(solve_p_with(&inst, delta, &RevisedSimplex, tol)?.objective)
        },
        &grid,
    )?;
    let mut json = to_value(&fit);
    json["delta"] = to_value(&spec);
    json["lambda"] = json!(fit.lambda());
    let summary = format!(
        "decay: slope = {:?}, R^2 = {:?}, verdict {:?} ({} points, delta = {spec})",
        fit.slope,
        fit.r_squared,
        fit.verdict,
        grid.len()
    );
    Ok(Outcome::new(summary, json))
}

fn sweep_cmd(cfg: &RunConfig, chain: &Arc<JointChain>, opts: &RunOptions) -> Result<Outcome, CliError> {
    let kind = cfg
        .kind
        .ok_or_else(|| ConfigError::Invalid("sweep kind is required (config or --kind)".into()))?;
    let grid = match kind {
        SweepKind::Frontier => SweepGrid::Delta {
            b_max: cfg.require_b_max()?,
            deltas: cfg.require_delta_grid()?,
        },
        _ => SweepGrid::Battery(cfg.require_b_grid()?),
    };
    let rows = sweep(kind, chain, &grid, opts.jobs.max(1))?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).expect("writing to memory");
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "sweep point {} failed: {}",
            r.abscissa,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let json = json!({ "kind": kind, "rows": rows });
    let summary = format!(
        "sweep: {} rows of {} ({failed} failed)",
        rows.len(),
        kind.name()
    );
    Ok(Outcome {
        csv: Some(String::from_utf8(csv).expect("CSV is UTF-8")),
        ..Outcome::new(summary, json)
    })
}

fn build_policy(
    cfg: &RunConfig,
    chain: &Arc<JointChain>,
    tol: &Tolerances,
    b_max: usize,
) -> Result<(StationaryPolicy, &'static str), CliError> {
    let choice = cfg.policy.unwrap_or(PolicyChoice::Greedy);
    Ok(match choice {
        PolicyChoice::Greedy => {
            let inst = instance(chain, b_max, ActionMode::Efficient)?;
            let rule = cfg.tie_rule.unwrap_or(TieRule::LowestIndexFirst);
            (greedy_efficient_policy(&inst, rule)?, "greedy")
        }
        PolicyChoice::Fair => {
            let (_, delta) = delta_of(cfg)?;
            let inst = instance(chain, b_max, ActionMode::Full)?;
            let r = solve_p_with(&inst, delta, &RevisedSimplex, tol)?;
            (extract_policy(&r.measure, Fallback::GreedyEfficient), "fair")
        }
        PolicyChoice::MaxminEfficient => {
            let inst = instance(chain, b_max, ActionMode::Efficient)?;
            let r = solve_f_with(&inst, &RevisedSimplex, tol)?;
            (
                extract_policy(&r.measure, Fallback::GreedyEfficient),
                "maxmin_efficient",
            )
        }
    })
}

fn simulate_cmd(cfg: &RunConfig, chain: &Arc<JointChain>, tol: &Tolerances) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let (policy, name) = build_policy(cfg, chain, tol, b_max)?;
    let sim_cfg = SimConfig {
        steps: cfg.steps.unwrap_or(1_000_000),
        seed: cfg.seed.unwrap_or(0),
        battery0: cfg.battery0.unwrap_or(0),
        batches: cfg.batches.unwrap_or(fairshare::sim::DEFAULT_BATCHES),
        ..SimConfig::new(0, 0)
    };
    let result = simulate_policy(&policy, &sim_cfg)?;
    let exact = match exact_evaluate(&policy) {
        Ok(e) => Some(e),
        Err(e) => {
            log::warn!("no exact reference for the simulated policy: {e}");
            None
        }
    };
    let mut csv = Vec::new();
    write_histogram_csv(&result, &mut csv).expect("writing to memory");
    let mut json = to_value(&result);
    json["policy"] = json!(name);
    json["telescoping_holds"] = json!(result.telescopes());
    json["exact"] = exact.as_ref().map(to_value).unwrap_or(Value::Null);
    let summary = format!(
        "simulate: total LLR = {:?} +/- {} over {} steps ({name} policy, b_max = {b_max})",
        result.total_llr.mean,
        result
            .total_llr
            .std_error
            .map(|s| format!("{s:.3e}"))
            .unwrap_or_else(|| "n/a".into()),
        result.steps
    );
    Ok(Outcome {
        csv: Some(String::from_utf8(csv).expect("CSV is UTF-8")),
        ..Outcome::new(summary, json)
    })
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: &'static str, passed: bool, detail: String) {
        if !passed {
            log::error!("invariant {name} failed: {detail}");
        }
        self.0.push(Check {
            name,
            passed,
            detail,
        });
    }
}

fn report_checks(checks: &mut Checks, tag: &'static str, r: &SolveReport, floor: f64) {
    let d = &r.diagnostics;
    let min_llr = r.llr_per_user.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum_c: f64 = r.contributions.iter().sum();
    let min_c = r.contributions.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.add(
        tag,
        min_llr >= -1e-10
            && (r.llr_sys() - r.objective).abs() <= 1e-9
            && sum_c.abs() <= 1e-8
            && min_c >= floor - 1e-8
            && d.stationarity_residual <= 1e-8
            && d.mass_error <= 1e-9
            && d.net_battery_flow.abs() <= 1e-8,
        format!(
            "min LLR_i {min_llr:.3e}, sum C_i {sum_c:.3e}, min C_i {min_c:.3e}, stationarity {:.1e}, mass {:.1e}, net flow {:.1e}",
            d.stationarity_residual, d.mass_error, d.net_battery_flow
        ),
    );
}

fn validate_cmd(cfg: &RunConfig, chain: &Arc<JointChain>, tol: &Tolerances) -> Result<Outcome, CliError> {
    let b_max = cfg.require_b_max()?;
    let mut checks = Checks(Vec::new());
    let res = chain.stationarity_residual();
    checks.add("background_stationary", res <= 1e-10, format!("residual {res:.1e}"));

    let full = instance(chain, b_max, ActionMode::Full)?;
    let eff = instance(chain, b_max, ActionMode::Efficient)?;
    let fair = solve_p_with(&full, FairnessSlack::Bounded(0.0), &RevisedSimplex, tol)?;
    let open = solve_p_with(&full, FairnessSlack::Unconstrained, &RevisedSimplex, tol)?;
    report_checks(&mut checks, "fair_report", &fair, 0.0);
    report_checks(&mut checks, "unconstrained_report", &open, f64::NEG_INFINITY);

    let bound = theorem1_bound(chain);
    checks.add(
        "net_demand_lower_bound",
        fair.objective >= bound - 1e-8,
        format!("LLR_o {:?} vs bound {bound:?}", fair.objective),
    );
    let llr_e = compute_llr_e(chain, b_max)?;
    checks.add(
        "llr_e_cross_method",
        (llr_e - open.objective).abs() <= 1e-8,
        format!("induced chain {llr_e:?} vs LP {:?}", open.objective),
    );
    let mut ordered = llr_e <= fair.objective + 1e-9;
    let mut detail = format!("LLR_e {llr_e:?} <= LLR_o {:?}", fair.objective);
    if let Some(spec) = cfg.delta {
        let slack = spec.to_slack()?;
        let mid = solve_p_with(&full, slack, &RevisedSimplex, tol)?;
        report_checks(&mut checks, "relaxed_report", &mid, -slack.value());
        ordered &= llr_e <= mid.objective + 1e-9 && mid.objective <= fair.objective + 1e-9;
        detail = format!(
            "LLR_e {llr_e:?} <= LLR_delta {:?} <= LLR_o {:?}",
            mid.objective, fair.objective
        );
    }
    checks.add("relaxation_order", ordered, detail);

    let f = solve_f_with(&eff, &RevisedSimplex, tol)?;
    let min_c = f.contributions.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.add(
        "maxmin_fairness",
        f.objective <= 1e-9 && (min_c - f.objective).abs() <= 1e-8,
        format!("theta* {:?}, min C_i {min_c:?}", f.objective),
    );

    if fair.diagnostics.support_classes == 1 {
        let e = exact_evaluate(&extract_policy(&fair.measure, Fallback::GreedyEfficient))?;
        let dev = e
            .llr_per_user
            .iter()
            .zip(&fair.llr_per_user)
            .chain(e.contributions.iter().zip(&fair.contributions))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        checks.add(
            "policy_round_trip",
            dev <= 1e-6,
            format!("max deviation {dev:.2e}"),
        );
    } else {
        log::info!(
            "skipping policy round trip: fair measure spans {} closed classes",
            fair.diagnostics.support_classes
        );
    }

    let lif = exact_evaluate(&greedy_efficient_policy(&eff, TieRule::LowestIndexFirst)?)?;
    let prop = exact_evaluate(&greedy_efficient_policy(&eff, TieRule::Proportional)?)?;
    let dmu = lif
        .state_distribution
        .iter()
        .zip(&prop.state_distribution)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let dllr = (lif.total_llr - prop.total_llr).abs();
    checks.add(
        "tie_rule_invariance",
        dmu <= 1e-9 && dllr <= 1e-9 && (lif.total_llr - llr_e).abs() <= 1e-9,
        format!("max mu diff {dmu:.1e}, LLR diff {dllr:.1e}"),
    );

    let d = drifts(chain);
    if cfg.joint.is_none() && d.generating.len() == chain.num_users() {
        let ub = chunked_bound(chain.users(), b_max, ChunkRemainder::Unallocated)?;
        checks.add(
            "chunked_upper_bound",
            ub >= fair.objective - 1e-8,
            format!("chunked {ub:?} vs LLR_o {:?}", fair.objective),
        );
    }
    if b_max >= 1 {
        let smaller = instance(chain, b_max - 1, ActionMode::Full)?;
        let prev = solve_p_with(&smaller, FairnessSlack::Bounded(0.0), &RevisedSimplex, tol)?;
        checks.add(
            "battery_monotonicity",
            fair.objective <= prev.objective + 1e-9,
            format!(
                "LLR_o({b_max}) {:?} vs LLR_o({}) {:?}",
                fair.objective,
                b_max - 1,
                prev.objective
            ),
        );
    }

    let failures = checks.0.iter().filter(|c| !c.passed).count();
    let total = checks.0.len();
    let json = json!({
        "b_max": b_max,
        "passed": failures == 0,
        "checks": checks.0,
    });
    Ok(Outcome {
        failures,
        ..Outcome::new(
            format!("validate: {} of {total} checks passed", total - failures),
            json,
        )
    })
}
