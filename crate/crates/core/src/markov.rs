//! Finite Markov chain utilities: validation, communicating classes and stationary laws.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::linalg::DenseLu;

/// Row sums may deviate from 1 by at most this much.
pub const STOCHASTIC_TOL: f64 = 1e-9;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;
const RESIDUAL_TOL: f64 = 1e-10;

/// Checks that `kernel` is square with entries in [0, 1] and rows summing to one.
pub fn check_stochastic(kernel: &[Vec<f64>]) -> Result<()> {
    let n = kernel.len();
    for (i, row) in kernel.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbability { row: i, col: j, value: v });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// Strongly connected components of the support graph (edges where `p > 0`).
/// Components are returned with sorted members, ordered by their smallest member.
pub fn communicating_classes(kernel: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = kernel.len();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * 4);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, row) in kernel.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Closed (recurrent) classes reachable from `initial`.
pub fn reachable_closed_classes(kernel: &[Vec<f64>], initial: &[usize]) -> Vec<Vec<usize>> {
    let n = kernel.len();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = initial.to_vec();
    for &s in initial {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        for (t, &p) in kernel[s].iter().enumerate() {
            if p > 0.0 && !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    let mut class_of = vec![usize::MAX; n];
    let classes = communicating_classes(kernel);
    for (c, members) in classes.iter().enumerate() {
        for &m in members {
            class_of[m] = c;
        }
    }
    classes
        .iter()
        .enumerate()
        .filter(|(_, members)| seen[members[0]])
        .filter(|(c, members)| {
            members.iter().all(|&s| {
                kernel[s]
                    .iter()
                    .enumerate()
                    .all(|(t, &p)| p == 0.0 || class_of[t] == *c)
            })
        })
        .map(|(_, m)| m.clone())
        .collect()
}

/// Stationary distribution of an irreducible row-stochastic matrix.
///
/// Solves `(P^T - I) pi = 0` with the last equation replaced by `sum(pi) = 1`.
/// Falls back to power iteration on the lazy chain `(P + I) / 2` when the
/// direct solve is ill-conditioned.
pub fn stationary_distribution(kernel: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_stochastic(kernel)?;
    if kernel.is_empty() {
        return Err(Error::DimensionMismatch("empty kernel".into()));
    }
    let classes = communicating_classes(kernel);
    if classes.len() != 1 {
        return Err(Error::Reducible { classes });
    }
    Ok(stationary_unchecked(kernel))
}

/// Stationary law of the chain restricted to a closed class; zero elsewhere.
pub fn stationary_on_class(kernel: &[Vec<f64>], class: &[usize]) -> Vec<f64> {
    let sub: Vec<Vec<f64>> = class
        .iter()
        .map(|&i| class.iter().map(|&j| kernel[i][j]).collect())
        .collect();
    let pi_sub = stationary_unchecked(&sub);
    let mut pi = vec![0.0; kernel.len()];
    for (k, &i) in class.iter().enumerate() {
        pi[i] = pi_sub[k];
    }
    pi
}

/// Stationary law started from `initial`, provided exactly one closed class is reachable.
pub fn stationary_from(kernel: &[Vec<f64>], initial: &[usize]) -> Result<Vec<f64>> {
    let closed = reachable_closed_classes(kernel, initial);
    match closed.len() {
        1 => Ok(stationary_on_class(kernel, &closed[0])),
        _ => Err(Error::Reducible { classes: closed }),
    }
}

fn stationary_unchecked(kernel: &[Vec<f64>]) -> Vec<f64> {
    let n = kernel.len();
    if n == 1 {
        return vec![1.0];
    }
    if let Some(pi) = direct_solve(kernel) {
        return pi;
    }
    log::debug!("stationary: direct solve ill-conditioned, using power iteration (n = {n})");
    power_iteration(kernel)
}

fn direct_solve(kernel: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = kernel.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = kernel[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1) * n + j] = 1.0;
    }
    let lu = DenseLu::factor(n, a, 1e-300)?;
    if lu.min_rel_pivot < 1e-13 {
        return None;
    }
    let mut pi = vec![0.0; n];
    pi[n - 1] = 1.0;
    lu.solve(&mut pi);
    let pi = normalize(pi)?;
    (residual(kernel, &pi) <= RESIDUAL_TOL).then_some(pi)
}

fn power_iteration(kernel: &[Vec<f64>]) -> Vec<f64> {
    let n = kernel.len();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..POWER_MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in kernel.iter().enumerate() {
            let w = 0.5 * pi[i];
            next[i] += w;
            for (j, &p) in row.iter().enumerate() {
                next[j] += w * p;
            }
        }
        let diff = pi
            .iter()
            .zip(&next)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut pi, &mut next);
        if diff < POWER_TOL {
            break;
        }
    }
    normalize(pi).unwrap_or_else(|| vec![1.0 / n as f64; n])
}

fn normalize(mut pi: Vec<f64>) -> Option<Vec<f64>> {
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-12 {
                return None;
            }
            *v = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    pi.iter_mut().for_each(|v| *v /= s);
    Some(pi)
}

/// `max_j |(pi P)_j - pi_j|`.
pub fn residual(kernel: &[Vec<f64>], pi: &[f64]) -> f64 {
    let n = kernel.len();
    let mut out = vec![0.0; n];
    for (i, row) in kernel.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            out[j] += pi[i] * p;
        }
    }
    out.iter()
        .zip(pi)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}
