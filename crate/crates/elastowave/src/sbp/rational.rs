//! Exact rational linear algebra for operator-closure construction.
//!
//! Boundary closures are solutions of small linear systems that must hold
//! exactly, not merely to rounding: the summation-by-parts identity is an
//! algebraic statement about the coefficients. Solving in arbitrary-precision
//! rational arithmetic keeps it exact and makes the derivation reproducible
//! bit for bit.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

/// Rational from an integer pair, `num/den`.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// `x^m` with the convention `0^0 = 1`, as used in monomial exactness
/// conditions.
pub fn rat_pow(x: &Rat, m: usize) -> Rat {
    let mut acc = Rat::one();
    for _ in 0..m {
        acc *= x;
    }
    acc
}

/// Convert to `f64` through a 64-bit fixed-point quotient. The naive
/// `numer as f64 / denom as f64` overflows once either integer exceeds the
/// f64 range, which happens routinely after exact elimination.
pub fn rat_to_f64(r: &Rat) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let shifted: BigInt = (r.numer() << 64u32) / r.denom();
    shifted
        .to_f64()
        .map(|v| v / 18446744073709551616.0)
        .unwrap_or(f64::NAN)
}

/// Format as `num` or `num/den`, matching the coefficient-catalog syntax.
pub fn rat_to_string(r: &Rat) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn dot(a: &[Rat], b: &[Rat]) -> Rat {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Rat::zero();
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// The full solution set of a consistent linear system: one particular
/// solution plus a basis of the homogeneous solutions.
#[derive(Clone, Debug)]
pub struct AffineSolution {
    pub particular: Vec<Rat>,
    pub nullspace: Vec<Vec<Rat>>,
}

/// Solve `A x = b` exactly by Gauss–Jordan elimination. Returns `None` when
/// the system is inconsistent. Pivots are chosen by smallest bit size to keep
/// intermediate integers short; the result is independent of that choice.
pub fn solve_affine(rows: &[Vec<Rat>], rhs: &[Rat]) -> Option<AffineSolution> {
    let m = rows.len();
    assert_eq!(m, rhs.len(), "system shape mismatch");
    let n = rows.first().map_or(0, |r| r.len());
    let mut aug: Vec<Vec<Rat>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, b)| {
            assert_eq!(r.len(), n, "ragged system");
            let mut v = r.clone();
            v.push(b.clone());
            v
        })
        .collect();

    let mut pivot_cols: Vec<usize> = Vec::new();
    for col in 0..n {
        let rank = pivot_cols.len();
        let pivot = (rank..m)
            .filter(|&i| !aug[i][col].is_zero())
            .min_by_key(|&i| aug[i][col].numer().bits() + aug[i][col].denom().bits());
        let Some(p) = pivot else { continue };
        aug.swap(rank, p);
        let inv = aug[rank][col].clone();
        for v in aug[rank].iter_mut() {
            if !v.is_zero() {
                *v /= &inv;
            }
        }
        let pivot_row = aug[rank].clone();
        for (i, row) in aug.iter_mut().enumerate() {
            if i == rank || row[col].is_zero() {
                continue;
            }
            let factor = row[col].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &factor * pv;
                }
            }
        }
        pivot_cols.push(col);
        if pivot_cols.len() == m {
            break;
        }
    }

    let rank = pivot_cols.len();
    for row in aug.iter().skip(rank) {
        if !row[n].is_zero() {
            return None;
        }
    }

    let mut particular = vec![Rat::zero(); n];
    for (r, &pc) in pivot_cols.iter().enumerate() {
        particular[pc] = aug[r][n].clone();
    }

    let mut nullspace = Vec::new();
    let pivot_set: std::collections::HashSet<usize> = pivot_cols.iter().copied().collect();
    for free in (0..n).filter(|c| !pivot_set.contains(c)) {
        let mut v = vec![Rat::zero(); n];
        v[free] = Rat::one();
        for (r, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -aug[r][free].clone();
        }
        nullspace.push(v);
    }

    Some(AffineSolution {
        particular,
        nullspace,
    })
}

/// Among all solutions `particular + span(nullspace)`, return the one closest
/// in the Euclidean sense to `target`, together with the nullspace
/// coordinates that achieve it. This is the documented pin for leftover
/// closure degrees of freedom.
pub fn min_norm_toward(sol: &AffineSolution, target: &[Rat]) -> (Vec<Rat>, Vec<Rat>) {
    let k = sol.nullspace.len();
    if k == 0 {
        return (sol.particular.clone(), Vec::new());
    }
    let diff: Vec<Rat> = target
        .iter()
        .zip(&sol.particular)
        .map(|(t, p)| t - p)
        .collect();
    let gram: Vec<Vec<Rat>> = sol
        .nullspace
        .iter()
        .map(|vi| sol.nullspace.iter().map(|vj| dot(vi, vj)).collect())
        .collect();
    let rhs: Vec<Rat> = sol.nullspace.iter().map(|vi| dot(vi, &diff)).collect();
    let alpha = solve_affine(&gram, &rhs)
        .expect("Gram matrix of independent nullspace vectors is invertible");
    assert!(
        alpha.nullspace.is_empty(),
        "Gram matrix of independent nullspace vectors is invertible"
    );
    let mut x = sol.particular.clone();
    for (a, v) in alpha.particular.iter().zip(&sol.nullspace) {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += a * vi;
        }
    }
    (x, alpha.particular)
}

/// Magnitude as f64, for residual reporting.
pub fn rat_abs_f64(r: &Rat) -> f64 {
    rat_to_f64(&r.abs())
}
