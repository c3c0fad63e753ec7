//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use fairshare::analysis::{
    chunked_bound, compute_llr_e, decay_rate, llr_o_evaluator, price_of_fairness, sweep,
    theorem1_bound, ChunkRemainder, SweepGrid, SweepKind,
};
use fairshare::cmdp::ActionMode;
use fairshare::netgen::UserModel;
use fairshare::policy::{
    exact_evaluate, greedy_efficient_policy, single_user_greedy_evaluate, TieRule,
};
use fairshare::programs::{solve_f, solve_p, FairnessSlack};
use fairshare::sim::{simulate_policy, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const FAIR: FairnessSlack = FairnessSlack::Bounded(0.0);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: fairshare::Error) -> String {
    e.to_string()
}

fn c1_parity_theta() -> Outcome {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for b in [2, 4, 6, 8, 10, 12] {
        let t = Instant::now();
        let inst = instance(vec![u_hi(), u_lo()], b, ActionMode::Efficient);
        let theta = solve_f(&inst).map_err(err)?.objective;
        let secs = t.elapsed().as_secs_f64();
        let dev = (theta + 0.44).abs();
        ensure(dev <= 1e-6, || format!("b_max={b}: theta*={theta:?}"))?;
        ensure(secs < 10.0, || format!("b_max={b}: {secs:.2}s"))?;
        worst = worst.max(dev);
        slowest = slowest.max(secs);
    }
    Ok(format!("max |theta*+0.44| = {worst:.1e}, slowest point {slowest:.3}s"))
}

fn random_two_user_with_demander(rng: &mut ChaCha8Rng) -> Vec<UserModel> {
    loop {
        let users = vec![random_user(rng, "a"), random_user(rng, "b")];
        if users.iter().any(|u| u.drift().unwrap() < 0.0) {
            return users;
        }
    }
}

fn c2_theorem1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut min_gap = f64::INFINITY;
    for trial in 0..50 {
        let users = random_two_user_with_demander(&mut rng);
        let b = rng.gen_range(1..=8);
        let c = chain(users);
        let bound = theorem1_bound(&c);
        let inst = Arc::new(
            fairshare::cmdp::CmdpInstance::build(c, b, ActionMode::Full).map_err(err)?,
        );
        let llr_o = solve_p(&inst, FAIR).map_err(err)?.objective;
        ensure(llr_o >= bound - 1e-8, || {
            format!("trial {trial}: LLR_o={llr_o:?} < bound={bound:?}")
        })?;
        min_gap = min_gap.min(llr_o - bound);
    }
    Ok(format!("50 instances, min LLR_o - bound = {min_gap:.3e}"))
}

fn c3_single_user() -> Outcome {
    let oracle = birth_death_llr(0.6, 2);
    let greedy = single_user_greedy_evaluate(&u_gen(), 2).map_err(err)?.total_llr;
    ensure((greedy - oracle).abs() <= 1e-9, || {
        format!("greedy {greedy:?} vs birth-death {oracle:?}")
    })?;
    ensure((greedy - 0.084211).abs() <= 5e-7, || {
        format!("greedy {greedy:?} does not round to 0.084211")
    })?;
    let r = solve_p(&instance(vec![u_gen()], 2, ActionMode::Full), FAIR).map_err(err)?;
    ensure((r.objective - greedy).abs() <= 1e-6, || {
        format!("LLR_o {:?} vs greedy {greedy:?}", r.objective)
    })?;
    let slack = r.contributions[0];
    ensure(slack >= -1e-9, || format!("fairness slack {slack:?}"))?;
    Ok(format!(
        "greedy {greedy:.12}, LP {:.12}, C_1 = {slack:.1e}",
        r.objective
    ))
}

fn c4_decay() -> Outcome {
    let bs: Vec<usize> = (2..=20).step_by(2).collect();
    let fit = decay_rate(llr_o_evaluator(chain(vec![u_gen()])), &bs).map_err(err)?;
    ensure(fit.slope < 0.0, || format!("slope {:?}", fit.slope))?;
    ensure(fit.r_squared >= 0.999, || format!("R^2 {:?}", fit.r_squared))?;
    Ok(format!("slope {:.6}, R^2 {:.8}", fit.slope, fit.r_squared))
}

fn c5_unbounded_pof() -> Outcome {
    let c = chain(vec![u_hi(), u_dem()]);
    let mut prev: Option<(f64, f64)> = None;
    let mut last = 0.0;
    for b in (2..=12).step_by(2) {
        let p = price_of_fairness(&c, b).map_err(err)?;
        ensure(p.llr_o >= 0.2 - 1e-8, || format!("b_max={b}: LLR_o {:?}", p.llr_o))?;
        let pof = p.value().map_err(err)?;
        if let Some((e, q)) = prev {
            ensure(p.llr_e < e, || format!("b_max={b}: LLR_e {:?} >= {e:?}", p.llr_e))?;
            ensure(pof > q, || format!("b_max={b}: PoF {pof:?} <= {q:?}"))?;
        }
        prev = Some((p.llr_e, pof));
        last = pof;
    }
    Ok(format!("PoF(12) = {last:.4e}"))
}

fn c6_fig1a() -> Outcome {
    let c = chain(vec![u_hi(), u_lo()]);
    let mut pofs = Vec::new();
    for b in 2..=12 {
        let p = price_of_fairness(&c, b).map_err(err)?;
        pofs.push(p.value().map_err(err)?);
    }
    for (k, w) in pofs.windows(2).enumerate() {
        ensure(w[1] >= w[0], || {
            format!("PoF({}) = {:?} < PoF({}) = {:?}", k + 3, w[1], k + 2, w[0])
        })?;
    }
    ensure(pofs[10] > pofs[0], || "PoF(12) <= PoF(2)".into())?;
    Ok(format!("PoF(2) = {:.4}, PoF(12) = {:.4e}", pofs[0], pofs[10]))
}

fn c7_tie_rule_invariance() -> Outcome {
    let mut worst = 0.0f64;
    let cases = [
        (vec![u_hi(), u_lo()], 6),
        (vec![u_hi(), u_dem()], 5),
        (frontier_three(), 8),
    ];
    for (users, b) in cases {
        let inst = instance(users, b, ActionMode::Efficient);
        let lif = exact_evaluate(&greedy_efficient_policy(&inst, TieRule::LowestIndexFirst).map_err(err)?)
            .map_err(err)?;
        let prop = exact_evaluate(&greedy_efficient_policy(&inst, TieRule::Proportional).map_err(err)?)
            .map_err(err)?;
        let dmu = lif
            .state_distribution
            .iter()
            .zip(&prop.state_distribution)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let dllr = (lif.total_llr - prop.total_llr).abs();
        ensure(dmu <= 1e-9, || format!("b_max={b}: max |mu diff| {dmu:.3e}"))?;
        ensure(dllr <= 1e-9, || format!("b_max={b}: LLR diff {dllr:.3e}"))?;
        worst = worst.max(dmu).max(dllr);
    }
    Ok(format!("3 instances, max deviation {worst:.1e}"))
}

fn c8_odd_mass() -> Outcome {
    let mut worst = 0.0f64;
    for b in [2, 4, 6, 8, 10, 12] {
        let r = solve_f(&instance(vec![u_hi(), u_lo()], b, ActionMode::Efficient)).map_err(err)?;
        let odd: f64 = r.battery_marginal.iter().skip(1).step_by(2).sum();
        ensure(odd <= 1e-9, || format!("b_max={b}: odd mass {odd:.3e}"))?;
        worst = worst.max(odd);
    }
    Ok(format!("max odd-level mass {worst:.1e}"))
}

fn c9_frontier() -> Outcome {
    let c = chain(frontier_three());
    let mut deltas: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
    deltas.push(1.0);
    let rows = sweep(
        SweepKind::Frontier,
        &c,
        &SweepGrid::Delta { b_max: 12, deltas },
        4,
    )
    .map_err(err)?;
    let mut prev = f64::INFINITY;
    for r in &rows {
        if let Some(e) = &r.error {
            return Err(format!("delta {}: {e}", r.abscissa));
        }
        let llr = r.metrics.llr_delta.unwrap();
        let eps = r.metrics.epsilon.ok_or("LLR_e = 0")?;
        ensure(llr <= prev + 1e-12, || {
            format!("delta {}: LLR_delta {llr:?} > {prev:?}", r.abscissa)
        })?;
        ensure(eps >= -1e-9, || format!("delta {}: epsilon {eps:?}", r.abscissa))?;
        prev = llr;
    }
    let last = rows.last().unwrap().metrics.epsilon.unwrap();
    ensure(last.abs() <= 1e-8, || format!("epsilon at delta = 1: {last:?}"))?;
    Ok(format!(
        "epsilon(0) = {:.4}, epsilon(1) = {last:.1e}",
        rows[0].metrics.epsilon.unwrap()
    ))
}

fn c10_cross_method() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_e = 0.0f64;
    for trial in 0..20 {
        let n = rng.gen_range(1..=3);
        let users: Vec<_> = (0..n).map(|i| random_user(&mut rng, &format!("u{i}"))).collect();
        let b = rng.gen_range(0..=6);
        let c = chain(users);
        let direct = compute_llr_e(&c, b).map_err(err)?;
        let inst = Arc::new(
            fairshare::cmdp::CmdpInstance::build(c, b, ActionMode::Full).map_err(err)?,
        );
        let lp = solve_p(&inst, FairnessSlack::Unconstrained).map_err(err)?.objective;
        ensure((direct - lp).abs() <= 1e-8, || {
            format!("trial {trial}: chain {direct:?} vs LP {lp:?}")
        })?;
        worst_e = worst_e.max((direct - lp).abs());
    }
    let mut min_gap = f64::INFINITY;
    let mut done = 0;
    while done < 20 {
        let n = rng.gen_range(1..=3);
        let users: Vec<_> = (0..n).map(|i| random_user(&mut rng, &format!("g{i}"))).collect();
        if users.iter().any(|u| u.drift().unwrap() <= 0.0) {
            continue;
        }
        let b = rng.gen_range(n..=7);
        let bound = chunked_bound(&users, b, ChunkRemainder::Unallocated).map_err(err)?;
        let llr_o = solve_p(&instance(users, b, ActionMode::Full), FAIR)
            .map_err(err)?
            .objective;
        ensure(bound >= llr_o - 1e-8, || {
            format!("instance {done}: chunked {bound:?} < LLR_o {llr_o:?}")
        })?;
        min_gap = min_gap.min(bound - llr_o);
        done += 1;
    }
    Ok(format!(
        "max |LLR_e diff| {worst_e:.1e}; min chunked - LLR_o {min_gap:.3e}"
    ))
}

fn c11_simulation() -> Outcome {
    let inst = instance(vec![u_hi(), u_lo()], 2, ActionMode::Efficient);
    let policy = greedy_efficient_policy(&inst, TieRule::LowestIndexFirst).map_err(err)?;
    let exact = exact_evaluate(&policy).map_err(err)?;
    let sim = simulate_policy(&policy, &SimConfig::new(1_000_000, 20240611)).map_err(err)?;
    ensure(sim.telescopes(), || "telescoping identity violated".into())?;
    ensure(sim.battery_histogram.iter().sum::<u64>() == sim.steps, || {
        "histogram does not sum to T".into()
    })?;
    let mut worst = 0.0f64;
    let mut pairs = vec![("LLR", sim.total_llr, exact.total_llr)];
    for i in 0..2 {
        pairs.push(("C", sim.contributions[i], exact.contributions[i]));
    }
    for (name, est, truth) in pairs {
        let se = est.std_error.ok_or("no standard error")?;
        let z = (est.mean - truth).abs() / se;
        ensure(z <= 3.0, || {
            format!("{name}: sim {:?} vs exact {truth:?} ({z:.2} SE)", est.mean)
        })?;
        worst = worst.max(z);
    }
    Ok(format!("max deviation {worst:.2} SE, telescoping exact"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("parity instance theta* = -0.44", c1_parity_theta),
        ("fair optimum above net-demand bound", c2_theorem1),
        ("single-user consistency", c3_single_user),
        ("exponential decay of LLR_o", c4_decay),
        ("unbounded PoF with a demanding user", c5_unbounded_pof),
        ("PoF growth for two generating users", c6_fig1a),
        ("efficient tie-rule invariance", c7_tie_rule_invariance),
        ("no odd battery levels under F", c8_odd_mass),
        ("fairness-efficiency frontier", c9_frontier),
        ("LLR_e and chunked bound cross-checks", c10_cross_method),
        ("simulation agrees with exact evaluation", c11_simulation),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
