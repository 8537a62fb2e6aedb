//! Reference coefficient tables and the plain-text coefficient catalog.
//!
//! The fourth-order shifted pair is tabulated explicitly as exact rationals
//! and is the build source for that family. The constraint system that
//! derives closures recovers its quadrature weights uniquely and its rows up
//! to one free parameter; the tabulated rows use a different (historical)
//! pin than the derivation's minimum-norm choice, so the table wins here.
//! Other orders are derived on demand and cached.

use super::closure::{cached_closure, ClosureKind, ClosureSolution};
use super::rational::{rat, rat_to_string, Rat};
use crate::Result;
use std::sync::Arc;

/// Diagonal quadrature entries next to the boundary, unit spacing.
pub const SHIFTED_P4_H: [(i64, i64); 4] = [(49, 144), (61, 48), (41, 48), (149, 144)];

/// Leading rows of D⁺, unit spacing; row `i` starts at column 0.
pub const SHIFTED_P4_D_PLUS: [&[(i64, i64)]; 4] = [
    &[(-59, 42), (12, 7), (-3, 14), (-2, 21)],
    &[(-103, 183), (15, 122), (31, 61), (-49, 366), (4, 61)],
    &[(59, 246), (-38, 41), (-21, 82), (176, 123), (-24, 41), (4, 41)],
    &[
        (-5, 447),
        (15, 298),
        (-51, 149),
        (-665, 894),
        (216, 149),
        (-72, 149),
        (12, 149),
    ],
];

/// Leading rows of D⁻, unit spacing.
pub const SHIFTED_P4_D_MINUS: [&[(i64, i64)]; 4] = [
    &[(-451, 294), (103, 49), (-59, 98), (5, 147)],
    &[(-28, 61), (-15, 122), (38, 61), (-5, 122)],
    &[(7, 82), (-31, 41), (21, 82), (17, 41)],
    &[(14, 447), (49, 298), (-176, 149), (665, 894), (36, 149)],
];

/// Interior D⁺ stencil at offsets (−1, 0, 1, 2, 3) from the diagonal.
pub const SHIFTED_P4_INTERIOR_PLUS: [(i64, i64); 5] =
    [(-1, 4), (-5, 6), (3, 2), (-1, 2), (1, 12)];

fn rows_to_rat(rows: &[&[(i64, i64)]]) -> Vec<Vec<Rat>> {
    rows.iter()
        .map(|r| r.iter().map(|&(n, d)| rat(n, d)).collect())
        .collect()
}

/// Golden fourth-order shifted closure, assembled from the static tables.
pub fn golden_shifted_p4() -> ClosureSolution {
    let interior_plus: Vec<Rat> = SHIFTED_P4_INTERIOR_PLUS
        .iter()
        .map(|&(n, d)| rat(n, d))
        .collect();
    let mut interior_minus: Vec<Rat> = interior_plus.iter().map(|v| -v.clone()).collect();
    interior_minus.reverse();
    ClosureSolution {
        p: 4,
        kind: ClosureKind::Shifted,
        boundary_weights: SHIFTED_P4_H.iter().map(|&(n, d)| rat(n, d)).collect(),
        d_plus_rows: rows_to_rat(&SHIFTED_P4_D_PLUS),
        d_minus_rows: rows_to_rat(&SHIFTED_P4_D_MINUS),
        interior_plus,
        interior_plus_offset: -1,
        interior_minus,
        interior_minus_offset: -3,
        identity_residual: 0.0,
        accuracy_residual: 0.0,
        free_parameters: 0,
        free_parameter_values: Vec::new(),
    }
}

/// Closure used by the uniform-grid builders: the golden table for the
/// fourth-order shifted family, the cached derivation elsewhere.
pub fn closure_for(p: usize, kind: ClosureKind) -> Result<Arc<ClosureSolution>> {
    if p == 4 && kind == ClosureKind::Shifted {
        static GOLDEN: std::sync::OnceLock<Arc<ClosureSolution>> = std::sync::OnceLock::new();
        return Ok(GOLDEN.get_or_init(|| Arc::new(golden_shifted_p4())).clone());
    }
    cached_closure(p, kind)
}

/// Render a closure as the plain-text coefficient catalog: header comments,
/// then one line per quantity with entries as exact rationals.
pub fn emit_catalog(sol: &ClosureSolution) -> String {
    let mut out = String::new();
    out.push_str(&format!("# order {}\n", sol.p));
    out.push_str(&format!(
        "# kind {}\n",
        match sol.kind {
            ClosureKind::Shifted => "shifted",
            ClosureKind::Symmetric => "symmetric",
        }
    ));
    out.push_str(&format!(
        "# identity_residual {:e}\n",
        sol.identity_residual
    ));
    out.push_str(&format!(
        "# free_parameters {}\n",
        sol.free_parameters
    ));
    let line = |items: &[Rat]| -> String {
        items
            .iter()
            .map(rat_to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.push_str(&format!("h {}\n", line(&sol.boundary_weights)));
    out.push_str(&format!(
        "interior_plus offset {} {}\n",
        sol.interior_plus_offset,
        line(&sol.interior_plus)
    ));
    out.push_str(&format!(
        "interior_minus offset {} {}\n",
        sol.interior_minus_offset,
        line(&sol.interior_minus)
    ));
    for (i, row) in sol.d_plus_rows.iter().enumerate() {
        out.push_str(&format!("d_plus {} {}\n", i + 1, line(row)));
    }
    for (i, row) in sol.d_minus_rows.iter().enumerate() {
        out.push_str(&format!("d_minus {} {}\n", i + 1, line(row)));
    }
    out
}
