//! Joint derivation of boundary closures and quadrature weights.
//!
//! Interior stencils are fixed by standard order conditions. Near the left
//! boundary the first `r = p` derivative rows and the first `r` quadrature
//! weights are unknowns, determined jointly so that
//!
//! * the pair satisfies `H D⁺ + (D⁻)ᵀ H = Q` exactly,
//! * every closure row differentiates monomials up to degree `p/2` exactly,
//! * interior rows keep the prescribed order-`p` stencils.
//!
//! Writing `M = H D⁺` turns the bilinear identity into a linear constraint
//! (the identity fixes `H D⁻` in terms of `M`), so the whole closure is the
//! solution set of one exact linear system. Leftover degrees of freedom are
//! pinned by the least-squares choice closest to zero matrix entries and
//! unit weights. The right boundary follows from the mirror rule and is not
//! derived separately.

use super::rational::{
    min_norm_toward, rat_int, rat_pow, rat_to_f64, solve_affine, Rat,
};
use crate::{Error, Result};
use num_traits::{One, Signed, Zero};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ClosureKind {
    /// Dual pair: D⁺ forward-shifted, D⁻ backward-shifted, distinct matrices.
    Shifted,
    /// Classical single operator: D⁺ = D⁻ = D with a central interior stencil.
    Symmetric,
}

/// Exact boundary closure for one uniform-grid operator family, at unit
/// spacing. Row `i` of `d_plus_rows`/`d_minus_rows` holds the dense leading
/// entries of that matrix row starting at column 0.
#[derive(Clone, Debug)]
pub struct ClosureSolution {
    pub p: usize,
    pub kind: ClosureKind,
    /// First `p` diagonal entries of H (unit spacing). Interior entries are 1.
    pub boundary_weights: Vec<Rat>,
    pub d_plus_rows: Vec<Vec<Rat>>,
    pub d_minus_rows: Vec<Vec<Rat>>,
    /// Interior stencil of D⁺ and the column offset of its first tap
    /// relative to the row index.
    pub interior_plus: Vec<Rat>,
    pub interior_plus_offset: isize,
    pub interior_minus: Vec<Rat>,
    pub interior_minus_offset: isize,
    /// Max-norm residual of the operator identity over a grid wide enough to
    /// exercise every distinct row; exact arithmetic, reported as f64.
    pub identity_residual: f64,
    /// Max-norm residual of the monomial exactness conditions.
    pub accuracy_residual: f64,
    /// Dimension of the solution set before pinning.
    pub free_parameters: usize,
    /// Pinned coordinates in the nullspace basis, for the record.
    pub free_parameter_values: Vec<f64>,
}

/// First-derivative stencil on integer offsets `first..first+len`, exact on
/// monomials up to degree `len-1`. The system is square and nonsingular
/// (a Vandermonde system), so the stencil is unique.
pub fn derivative_stencil(first: isize, len: usize) -> Vec<Rat> {
    let mut rows = Vec::with_capacity(len);
    let mut rhs = Vec::with_capacity(len);
    for m in 0..len {
        rows.push(
            (0..len)
                .map(|k| rat_pow(&rat_int(first as i64 + k as i64), m))
                .collect(),
        );
        rhs.push(if m == 1 { Rat::one() } else { Rat::zero() });
    }
    let sol = solve_affine(&rows, &rhs).expect("Vandermonde system is nonsingular");
    assert!(sol.nullspace.is_empty());
    sol.particular
}

/// Interior D⁺ stencil: offsets `−p/2+1 ..= p/2+1`, order p.
pub fn interior_plus_stencil(p: usize) -> Vec<Rat> {
    derivative_stencil(1 - (p as isize) / 2, p + 1)
}

/// Interior D⁻ stencil: the reflected negation of D⁺, offsets `−p/2−1 ..= p/2−1`.
pub fn interior_minus_stencil(p: usize) -> Vec<Rat> {
    let mut s = interior_plus_stencil(p);
    s.reverse();
    for v in &mut s {
        *v = -v.clone();
    }
    s
}

/// Standard central stencil: offsets `−p/2 ..= p/2`, order p.
pub fn central_stencil(p: usize) -> Vec<Rat> {
    derivative_stencil(-(p as isize) / 2, p + 1)
}

/// Derivative of `x^m` at integer node `i`: `m·i^(m−1)`, with `0^0 = 1`.
fn monomial_derivative(i: usize, m: usize) -> Rat {
    if m == 0 {
        Rat::zero()
    } else {
        rat_int(m as i64) * rat_pow(&rat_int(i as i64), m - 1)
    }
}

fn npow(j: usize, m: usize) -> Rat {
    rat_pow(&rat_int(j as i64), m)
}

/// Derive the boundary closure for order `p` of the requested kind.
///
/// `tolerance` bounds the reported residuals; since the construction is
/// exact the check only fails if the caller passes a nonpositive value.
pub fn derive_closure(p: usize, kind: ClosureKind, tolerance: f64) -> Result<ClosureSolution> {
    if tolerance <= 0.0 {
        return Err(Error::Operator(format!(
            "closure tolerance must be positive, got {tolerance}"
        )));
    }
    let supported = match kind {
        ClosureKind::Shifted => matches!(p, 4 | 6 | 8),
        ClosureKind::Symmetric => matches!(p, 2 | 4 | 6 | 8),
    };
    if !supported {
        return Err(Error::Operator(format!(
            "unsupported interior order {p} for {kind:?} closure"
        )));
    }
    let mut sol = match kind {
        ClosureKind::Shifted => derive_shifted(p)?,
        ClosureKind::Symmetric => derive_symmetric(p)?,
    };
    validate_exact(&mut sol)?;
    if sol.identity_residual > tolerance || sol.accuracy_residual > tolerance {
        return Err(Error::Operator(format!(
            "closure residuals exceed tolerance {tolerance}"
        )));
    }
    Ok(sol)
}

/// Process-wide cache: closures depend only on (p, kind) and are immutable.
pub fn cached_closure(p: usize, kind: ClosureKind) -> Result<Arc<ClosureSolution>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, ClosureKind), Arc<ClosureSolution>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("closure cache poisoned");
    if let Some(hit) = guard.get(&(p, kind)) {
        return Ok(hit.clone());
    }
    let sol = Arc::new(derive_closure(p, kind, 1e-12)?);
    guard.insert((p, kind), sol.clone());
    Ok(sol)
}

fn derive_shifted(p: usize) -> Result<ClosureSolution> {
    let r = p; // number of closure rows
    let q = p / 2;
    let cplus = interior_plus_stencil(p); // offsets 1-q ..= q+1
    let cminus = interior_minus_stencil(p); // offsets -q-1 ..= q-1

    // Entry of the interior stencils at a signed column offset, zero outside.
    let cplus_at = |o: isize| -> Rat {
        let k = o + q as isize - 1;
        if (0..cplus.len() as isize).contains(&k) {
            cplus[k as usize].clone()
        } else {
            Rat::zero()
        }
    };
    let cminus_at = |o: isize| -> Rat {
        let k = o + q as isize + 1;
        if (0..cminus.len() as isize).contains(&k) {
            cminus[k as usize].clone()
        } else {
            Rat::zero()
        }
    };

    // Unknowns: M[i][j] = (H D⁺)_{ij} for i,j < r, then the r weights.
    let n_unknowns = r * r + r;
    let midx = |i: usize, j: usize| i * r + j;
    let hidx = |i: usize| r * r + i;

    let mut rows: Vec<Vec<Rat>> = Vec::new();
    let mut rhs: Vec<Rat> = Vec::new();

    // Exactness of D⁺ rows: sum_j M_{ij} x_j^m = m x_i^{m-1} h_i.
    // Columns j >= r of M are forced by the identity against interior D⁻
    // rows: M_{ij} = -c⁻(i-j) there.
    for i in 0..r {
        for m in 0..=q {
            let mut row = vec![Rat::zero(); n_unknowns];
            for j in 0..r {
                row[midx(i, j)] = npow(j, m);
            }
            row[hidx(i)] = -monomial_derivative(i, m);
            let mut b = Rat::zero();
            for j in r..=(i + q + 1) {
                let forced = -cminus_at(i as isize - j as isize);
                b -= forced * npow(j, m);
            }
            rows.push(row);
            rhs.push(b);
        }
    }

    // Exactness of D⁻ rows, with (H D⁻)_{ij} eliminated through the identity:
    // (H D⁻)_{ij} = Q_{ij} - M_{ji} for j < r and -c⁺(i-j) for j >= r.
    for i in 0..r {
        for m in 0..=q {
            let mut row = vec![Rat::zero(); n_unknowns];
            for j in 0..r {
                row[midx(j, i)] = -npow(j, m);
            }
            row[hidx(i)] = -monomial_derivative(i, m);
            let mut b = Rat::zero();
            for j in r..i + q {
                // columns r ..= i+q-1
                let forced = -cplus_at(i as isize - j as isize);
                b -= forced * npow(j, m);
            }
            if i == 0 && m == 0 {
                // Q_{00} = -1 contributes to the row sum of H D⁻.
                b += Rat::one();
            }
            rows.push(row);
            rhs.push(b);
        }
    }

    let family = solve_affine(&rows, &rhs).ok_or_else(|| {
        Error::Operator(format!("shifted closure system for p={p} is inconsistent"))
    })?;
    let mut target = vec![Rat::zero(); n_unknowns];
    for t in target.iter_mut().skip(r * r) {
        *t = Rat::one();
    }
    let (z, alpha) = min_norm_toward(&family, &target);

    let weights: Vec<Rat> = (0..r).map(|i| z[hidx(i)].clone()).collect();
    for (i, w) in weights.iter().enumerate() {
        if !w.is_positive() {
            return Err(Error::Operator(format!(
                "derived weight h[{i}] = {w} is not positive (p={p}, shifted)"
            )));
        }
    }

    let mut d_plus_rows = Vec::with_capacity(r);
    let mut d_minus_rows = Vec::with_capacity(r);
    for i in 0..r {
        let wp = r.max(i + q + 2);
        let mut rp = Vec::with_capacity(wp);
        for j in 0..wp {
            let entry = if j < r {
                z[midx(i, j)].clone()
            } else {
                -cminus_at(i as isize - j as isize)
            };
            rp.push(entry / &weights[i]);
        }
        d_plus_rows.push(rp);

        let wm = r.max(i + q);
        let mut rm = Vec::with_capacity(wm);
        for j in 0..wm {
            let entry = if j < r {
                let qij = if i == 0 && j == 0 { -Rat::one() } else { Rat::zero() };
                qij - &z[midx(j, i)]
            } else {
                -cplus_at(i as isize - j as isize)
            };
            rm.push(entry / &weights[i]);
        }
        d_minus_rows.push(rm);
    }

    Ok(ClosureSolution {
        p,
        kind: ClosureKind::Shifted,
        boundary_weights: weights,
        d_plus_rows,
        d_minus_rows,
        interior_plus: cplus,
        interior_plus_offset: 1 - q as isize,
        interior_minus: cminus,
        interior_minus_offset: -(q as isize) - 1,
        identity_residual: 0.0,
        accuracy_residual: 0.0,
        free_parameters: family.nullspace.len(),
        free_parameter_values: alpha.iter().map(rat_to_f64).collect(),
    })
}

fn derive_symmetric(p: usize) -> Result<ClosureSolution> {
    let r = p;
    let q = p / 2;
    let central = central_stencil(p); // offsets -q ..= q
    let central_at = |o: isize| -> Rat {
        let k = o + q as isize;
        if (0..central.len() as isize).contains(&k) {
            central[k as usize].clone()
        } else {
            Rat::zero()
        }
    };

    // With one operator D, the identity reads S + Sᵀ = Q for S = H D, which
    // fixes the diagonal (S_{00} = -1/2, zero elsewhere in the closure) and
    // makes the lower triangle the negated upper triangle. Unknowns: the
    // strict upper triangle of the r×r corner of S, then the r weights.
    let mut upper = Vec::new();
    for i in 0..r {
        for j in (i + 1)..r {
            upper.push((i, j));
        }
    }
    let uidx: HashMap<(usize, usize), usize> = upper
        .iter()
        .enumerate()
        .map(|(k, &ij)| (ij, k))
        .collect();
    let n_unknowns = upper.len() + r;
    let hidx = |i: usize| upper.len() + i;

    let s_diag = |i: usize| -> Rat {
        if i == 0 {
            -Rat::new(1.into(), 2.into())
        } else {
            Rat::zero()
        }
    };

    let mut rows: Vec<Vec<Rat>> = Vec::new();
    let mut rhs: Vec<Rat> = Vec::new();
    for i in 0..r {
        for m in 0..=q {
            let mut row = vec![Rat::zero(); n_unknowns];
            for j in 0..r {
                if j == i {
                    continue;
                }
                let (key, sign) = if i < j { ((i, j), Rat::one()) } else { ((j, i), -Rat::one()) };
                row[uidx[&key]] += sign * npow(j, m);
            }
            row[hidx(i)] = -monomial_derivative(i, m);
            let mut b = -s_diag(i) * npow(i, m);
            for j in r..=(i + q) {
                let forced = -central_at(i as isize - j as isize);
                b -= forced * npow(j, m);
            }
            rows.push(row);
            rhs.push(b);
        }
    }

    let family = solve_affine(&rows, &rhs).ok_or_else(|| {
        Error::Operator(format!(
            "symmetric closure system for p={p} is inconsistent"
        ))
    })?;
    let mut target = vec![Rat::zero(); n_unknowns];
    for t in target.iter_mut().skip(upper.len()) {
        *t = Rat::one();
    }
    let (z, alpha) = min_norm_toward(&family, &target);

    let weights: Vec<Rat> = (0..r).map(|i| z[hidx(i)].clone()).collect();
    for (i, w) in weights.iter().enumerate() {
        if !w.is_positive() {
            return Err(Error::Operator(format!(
                "derived weight h[{i}] = {w} is not positive (p={p}, symmetric)"
            )));
        }
    }

    let s_at = |i: usize, j: usize| -> Rat {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Equal => s_diag(i),
            Ordering::Less => z[uidx[&(i, j)]].clone(),
            Ordering::Greater => -z[uidx[&(j, i)]].clone(),
        }
    };

    let mut d_rows = Vec::with_capacity(r);
    for i in 0..r {
        let w = r.max(i + q + 1);
        let mut row = Vec::with_capacity(w);
        for j in 0..w {
            let entry = if j < r {
                s_at(i, j)
            } else {
                -central_at(i as isize - j as isize)
            };
            row.push(entry / &weights[i]);
        }
        d_rows.push(row);
    }

    Ok(ClosureSolution {
        p,
        kind: ClosureKind::Symmetric,
        boundary_weights: weights,
        d_plus_rows: d_rows.clone(),
        d_minus_rows: d_rows,
        interior_plus: central.clone(),
        interior_plus_offset: -(q as isize),
        interior_minus: central,
        interior_minus_offset: -(q as isize),
        identity_residual: 0.0,
        accuracy_residual: 0.0,
        free_parameters: family.nullspace.len(),
        free_parameter_values: alpha.iter().map(rat_to_f64).collect(),
    })
}

/// Assemble dense rational D⁺, D⁻, H on a grid with `n` nodes at unit
/// spacing, mirroring the closure onto the right boundary.
pub fn dense_rational(sol: &ClosureSolution, n: usize) -> (Vec<Vec<Rat>>, Vec<Vec<Rat>>, Vec<Rat>) {
    let r = sol.d_plus_rows.len();
    assert!(n >= 2 * r + sol.interior_plus.len());
    let mut dp = vec![vec![Rat::zero(); n]; n];
    let mut dm = vec![vec![Rat::zero(); n]; n];
    let mut h = vec![Rat::one(); n];
    for i in 0..r {
        h[i] = sol.boundary_weights[i].clone();
        h[n - 1 - i] = sol.boundary_weights[i].clone();
        for (j, v) in sol.d_plus_rows[i].iter().enumerate() {
            dp[i][j] = v.clone();
            // mirror rule: d⁺ bottom rows come from d⁻ top rows
            dm[n - 1 - i][n - 1 - j] = -v.clone();
        }
        for (j, v) in sol.d_minus_rows[i].iter().enumerate() {
            dm[i][j] = v.clone();
            dp[n - 1 - i][n - 1 - j] = -v.clone();
        }
    }
    for i in r..n - r {
        for (k, v) in sol.interior_plus.iter().enumerate() {
            let j = (i as isize + sol.interior_plus_offset) as usize + k;
            dp[i][j] = v.clone();
        }
        for (k, v) in sol.interior_minus.iter().enumerate() {
            let j = (i as isize + sol.interior_minus_offset) as usize + k;
            dm[i][j] = v.clone();
        }
    }
    (dp, dm, h)
}

/// Largest entry of H D⁺ + (D⁻)ᵀ H − Q on an `n`-node grid, computed in
/// exact rational arithmetic. A zero result certifies the identity holds to
/// the last bit; any nonzero value is a construction defect, not rounding.
pub fn rational_identity_residual(sol: &ClosureSolution, n: usize) -> Rat {
    let (dp, dm, h) = dense_rational(sol, n);
    let mut identity_max = Rat::zero();
    for i in 0..n {
        for j in 0..n {
            // (H D⁺ + (D⁻)ᵀ H - Q)_{ij}
            let mut v = &h[i] * &dp[i][j] + &dm[j][i] * &h[j];
            if i == j && i == 0 {
                v += Rat::one();
            }
            if i == j && i == n - 1 {
                v -= Rat::one();
            }
            if v.abs() > identity_max {
                identity_max = v.abs();
            }
        }
    }
    identity_max
}

/// Exact validation: operator identity, monomial exactness, mirror rule.
/// Residuals are computed in rational arithmetic, so any nonzero value is a
/// genuine construction defect rather than rounding.
fn validate_exact(sol: &mut ClosureSolution) -> Result<()> {
    let r = sol.d_plus_rows.len();
    let q = sol.p / 2;
    let n = 2 * r + sol.interior_plus.len() + 2;
    let (dp, dm, _) = dense_rational(sol, n);
    let identity_max = rational_identity_residual(sol, n);

    let mut accuracy_max = Rat::zero();
    for (mat, label) in [(&dp, "D+"), (&dm, "D-")] {
        for i in 0..n {
            let degree = if i < r || i >= n - r { q } else { sol.p };
            for m in 0..=degree {
                let mut acc = Rat::zero();
                for (j, mv) in mat[i].iter().enumerate() {
                    if !mv.is_zero() {
                        acc += mv * npow(j, m);
                    }
                }
                acc -= monomial_derivative(i, m);
                if acc.abs() > accuracy_max {
                    accuracy_max = acc.abs();
                }
                if !acc.is_zero() {
                    return Err(Error::Operator(format!(
                        "{label} row {i} misses degree {m} exactness by {acc}"
                    )));
                }
            }
        }
    }

    if !identity_max.is_zero() {
        return Err(Error::Operator(format!(
            "operator identity residual {identity_max} is nonzero"
        )));
    }
    sol.identity_residual = rat_to_f64(&identity_max);
    sol.accuracy_residual = rat_to_f64(&accuracy_max);
    Ok(())
}
