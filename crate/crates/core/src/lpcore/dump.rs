//! Plain-text dump of a linear program.
//!
//! ```text
//! # fairshare-lp v1
//! sense: minimize
//! objective: +0.4 r_s1_a0 +1 r_s3_a0
//! free: theta
//! mass: +1 r_s0_a0 +1 r_s0_a1, =, 1
//! fair_0: +1 r_s0_a1 -1 r_s1_a0, >=, -0
//! ```
//!
//! One row per line: `name: terms, sense, rhs`. Terms are `<signed coefficient>
//! <variable name>` separated by spaces; zero objective coefficients are omitted.
//! Variables not listed under `free:` are nonnegative.

use std::fmt::Write as _;

use super::{LinearProgram, Row, Sense};

fn terms(out: &mut String, lp: &LinearProgram, coeffs: impl Iterator<Item = (usize, f64)>) {
    let mut first = true;
    for (j, a) in coeffs {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{}{:?} {}", if a < 0.0 { "" } else { "+" }, a, lp.var_name(j));
    }
}

fn row(out: &mut String, lp: &LinearProgram, r: &Row, sense: &str) {
    let _ = write!(out, "{}: ", r.name);
    terms(out, lp, r.coeffs.iter().copied());
    let _ = writeln!(out, ", {sense}, {:?}", r.rhs);
}

/// Renders `lp` in the text format described in the module docs.
pub fn write_text(lp: &LinearProgram) -> String {
    let mut out = String::from("# fairshare-lp v1\n");
    let sense = match lp.sense() {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    let _ = writeln!(out, "sense: {sense}");
    out.push_str("objective: ");
    terms(
        &mut out,
        lp,
        lp.objective()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, c)| c != 0.0),
    );
    out.push('\n');
    let free: Vec<&str> = (0..lp.num_vars())
        .filter(|&j| lp.is_free(j))
        .map(|j| lp.var_name(j))
        .collect();
    let _ = writeln!(out, "free: {}", free.join(" "));
    for r in lp.eq_rows() {
        row(&mut out, lp, r, "=");
    }
    for r in lp.ge_rows() {
        row(&mut out, lp, r, ">=");
    }
    out
}
