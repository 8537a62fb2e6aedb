//! One-dimensional summation-by-parts first-derivative operators.
//!
//! A triplet (D⁺, D⁻, H) is a pair of first-derivative approximations and a
//! positive diagonal quadrature H satisfying
//!
//! ```text
//! H D⁺ + (D⁻)ᵀ H = Q,    Q = diag(−1, 0, …, 0, 1),
//! ```
//!
//! which is the discrete integration-by-parts rule used throughout the
//! solver. Three families are built here: dual forward/backward pairs on
//! uniform grids (`ShiftedUniform`), the classical single-operator family
//! with a central interior stencil where D⁺ = D⁻ (`SymmetricUniform`), and
//! spectral collocation operators on Gauss–Lobatto–Legendre nodes
//! (`GaussLobatto`).

pub mod closure;
pub mod gll;
pub mod rational;
pub mod tables;

pub use closure::{derive_closure, ClosureKind, ClosureSolution};

use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OperatorKind {
    ShiftedUniform,
    SymmetricUniform,
    GaussLobatto,
}

/// Matrix stored as explicit leading rows, a repeated interior stencil, and
/// explicit trailing rows. Dense operators store every row in `top`.
#[derive(Clone, Debug)]
pub struct RowCompressed {
    n: usize,
    /// Row `i` for `i < top.len()`, dense from column 0.
    top: Vec<Vec<f64>>,
    /// Row `n - bottom.len() + k`, dense and right-aligned at column `n - 1`.
    bottom: Vec<Vec<f64>>,
    /// Interior taps; entry `k` sits at column `i + stencil_offset + k`.
    stencil: Vec<f64>,
    stencil_offset: isize,
}

impl RowCompressed {
    pub fn new(
        n: usize,
        top: Vec<Vec<f64>>,
        bottom: Vec<Vec<f64>>,
        stencil: Vec<f64>,
        stencil_offset: isize,
    ) -> Self {
        assert!(top.len() + bottom.len() <= n);
        if top.len() + bottom.len() < n {
            let first = top.len() as isize;
            let last = (n - bottom.len()) as isize - 1;
            assert!(first + stencil_offset >= 0, "stencil leaks past column 0");
            assert!(
                last + stencil_offset + stencil.len() as isize <= n as isize,
                "stencil leaks past the last column"
            );
        }
        RowCompressed {
            n,
            top,
            bottom,
            stencil,
            stencil_offset,
        }
    }

    pub fn dense(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n));
        RowCompressed {
            n,
            top: rows,
            bottom: Vec::new(),
            stencil: Vec::new(),
            stencil_offset: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn top_rows(&self) -> &[Vec<f64>] {
        &self.top
    }

    pub fn bottom_rows(&self) -> &[Vec<f64>] {
        &self.bottom
    }

    pub fn stencil(&self) -> (&[f64], isize) {
        (&self.stencil, self.stencil_offset)
    }

    /// Row `i` as `(first_column, coefficients)`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        assert!(i < self.n);
        if i < self.top.len() {
            (0, &self.top[i])
        } else if i >= self.n - self.bottom.len() {
            let r = &self.bottom[i - (self.n - self.bottom.len())];
            (self.n - r.len(), r)
        } else {
            ((i as isize + self.stencil_offset) as usize, &self.stencil)
        }
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.top.len() {
            let row = &self.top[i];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        let interior_end = self.n - self.bottom.len();
        for i in self.top.len()..interior_end {
            let start = (i as isize + self.stencil_offset) as usize;
            let mut acc = 0.0;
            for (k, c) in self.stencil.iter().enumerate() {
                acc += c * x[start + k];
            }
            y[i] = acc;
        }
        for (k, row) in self.bottom.iter().enumerate() {
            let i = interior_end + k;
            let start = self.n - row.len();
            y[i] = row.iter().zip(&x[start..]).map(|(a, b)| a * b).sum();
        }
    }

    /// yᵀ = xᵀ A, accumulated into `y` (y += Aᵀ x).
    pub fn apply_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (start, row) = self.row(i);
            let xi = x[i];
            if xi != 0.0 {
                for (k, c) in row.iter().enumerate() {
                    y[start + k] += c * xi;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let (start, row) = self.row(i);
            for (k, c) in row.iter().enumerate() {
                out[i][start + k] = *c;
            }
        }
        out
    }

    /// Multiply every coefficient by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let scale = |rows: &[Vec<f64>]| {
            rows.iter()
                .map(|r| r.iter().map(|v| v * s).collect())
                .collect()
        };
        RowCompressed {
            n: self.n,
            top: scale(&self.top),
            bottom: scale(&self.bottom),
            stencil: self.stencil.iter().map(|v| v * s).collect(),
            stencil_offset: self.stencil_offset,
        }
    }
}

/// An immutable summation-by-parts triplet on one grid line.
#[derive(Clone, Debug)]
pub struct OperatorTriplet {
    pub kind: OperatorKind,
    pub interior_order: usize,
    pub boundary_order: usize,
    /// Strictly increasing abscissae.
    pub nodes: Vec<f64>,
    /// Diagonal of H; all positive.
    pub h_weights: Vec<f64>,
    pub d_plus: RowCompressed,
    pub d_minus: RowCompressed,
}

impl OperatorTriplet {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Diagonal of the boundary signature Q = diag(−1, 0, …, 0, 1).
    pub fn q_entry(&self, i: usize) -> f64 {
        if i == 0 {
            -1.0
        } else if i + 1 == self.n_nodes() {
            1.0
        } else {
            0.0
        }
    }

    pub fn apply_d_plus(&self, x: &[f64], y: &mut [f64]) {
        self.d_plus.apply(x, y);
    }

    pub fn apply_d_minus(&self, x: &[f64], y: &mut [f64]) {
        self.d_minus.apply(x, y);
    }

    /// (u, v)_H = Σ h_i u_i v_i.
    pub fn h_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h_weights
            .iter()
            .zip(u)
            .zip(v)
            .map(|((h, a), b)| h * a * b)
            .sum()
    }

    /// Affinely remap the node interval onto [a, b]; derivatives and weights
    /// rescale by the inverse/direct interval ratio so the triplet identity
    /// is preserved.
    pub fn scaled_to(&self, a: f64, b: f64) -> Result<OperatorTriplet> {
        if !(b > a) {
            return Err(Error::Operator(format!(
                "target interval [{a}, {b}] is empty"
            )));
        }
        let x0 = self.nodes[0];
        let x1 = *self.nodes.last().expect("triplet has nodes");
        let factor = (b - a) / (x1 - x0);
        Ok(OperatorTriplet {
            kind: self.kind,
            interior_order: self.interior_order,
            boundary_order: self.boundary_order,
            nodes: self.nodes.iter().map(|&x| a + (x - x0) * factor).collect(),
            h_weights: self.h_weights.iter().map(|&w| w * factor).collect(),
            d_plus: self.d_plus.scaled(1.0 / factor),
            d_minus: self.d_minus.scaled(1.0 / factor),
        })
    }
}

fn rows_to_f64(rows: &[Vec<rational::Rat>], scale: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| rational::rat_to_f64(v) * scale).collect())
        .collect()
}

fn build_uniform(
    closure: &ClosureSolution,
    kind: OperatorKind,
    n_nodes: usize,
    spacing: f64,
) -> Result<OperatorTriplet> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::Operator(format!("spacing must be positive, got {spacing}")));
    }
    let r = closure.d_plus_rows.len();
    if n_nodes < 2 * r + 1 {
        return Err(Error::Operator(format!(
            "{n_nodes} nodes cannot hold two {r}-row closures and an interior"
        )));
    }
    let inv_h = 1.0 / spacing;

    let mirror = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        // bottom rows, ordered top-to-bottom: global row n-1-i mirrors row i
        (0..r)
            .rev()
            .map(|i| rows[i].iter().rev().map(|v| -v).collect())
            .collect()
    };

    let top_plus = rows_to_f64(&closure.d_plus_rows, inv_h);
    let top_minus = rows_to_f64(&closure.d_minus_rows, inv_h);
    let bottom_plus = mirror(&top_minus);
    let bottom_minus = mirror(&top_plus);

    let stencil_plus: Vec<f64> = closure
        .interior_plus
        .iter()
        .map(|v| rational::rat_to_f64(v) * inv_h)
        .collect();
    let stencil_minus: Vec<f64> = closure
        .interior_minus
        .iter()
        .map(|v| rational::rat_to_f64(v) * inv_h)
        .collect();

    let mut h_weights = vec![spacing; n_nodes];
    for (i, w) in closure.boundary_weights.iter().enumerate() {
        let w = rational::rat_to_f64(w) * spacing;
        h_weights[i] = w;
        h_weights[n_nodes - 1 - i] = w;
    }

    Ok(OperatorTriplet {
        kind,
        interior_order: closure.p,
        boundary_order: closure.p / 2,
        nodes: (0..n_nodes).map(|i| i as f64 * spacing).collect(),
        h_weights,
        d_plus: RowCompressed::new(
            n_nodes,
            top_plus,
            bottom_plus,
            stencil_plus,
            closure.interior_plus_offset,
        ),
        d_minus: RowCompressed::new(
            n_nodes,
            top_minus,
            bottom_minus,
            stencil_minus,
            closure.interior_minus_offset,
        ),
    })
}

/// Dual forward/backward pair on a uniform grid with nodes `i * spacing`.
/// The fourth-order coefficients come from the exact reference tables;
/// higher orders from the closure derivation.
pub fn build_shifted_uniform(p: usize, n_nodes: usize, spacing: f64) -> Result<OperatorTriplet> {
    if !matches!(p, 4 | 6 | 8) {
        return Err(Error::Operator(format!(
            "shifted operators support orders 4, 6, 8; got {p}"
        )));
    }
    if n_nodes <= 2 * p {
        return Err(Error::Operator(format!(
            "shifted order {p} needs more than {} nodes, got {n_nodes}",
            2 * p
        )));
    }
    let closure = tables::closure_for(p, ClosureKind::Shifted)?;
    build_uniform(&closure, OperatorKind::ShiftedUniform, n_nodes, spacing)
}

/// Classical single-operator family: D⁺ = D⁻ = D with the standard central
/// interior stencil, so the triplet identity reduces to H D + Dᵀ H = Q.
pub fn build_symmetric_uniform(p: usize, n_nodes: usize, spacing: f64) -> Result<OperatorTriplet> {
    if !matches!(p, 2 | 4 | 6 | 8) {
        return Err(Error::Operator(format!(
            "symmetric operators support orders 2, 4, 6, 8; got {p}"
        )));
    }
    let closure = tables::closure_for(p, ClosureKind::Symmetric)?;
    build_uniform(&closure, OperatorKind::SymmetricUniform, n_nodes, spacing)
}

/// Spectral collocation triplet on `n_nodes` Gauss–Lobatto–Legendre nodes
/// over [−1, 1], with D⁺ = D⁻ = D the cardinal-function derivative.
pub fn build_gll(n_nodes: usize) -> Result<OperatorTriplet> {
    let nodes = gll::gll_nodes(n_nodes)?;
    let weights = gll::gll_weights(&nodes);
    let d = RowCompressed::dense(gll::gll_derivative(&nodes));
    Ok(OperatorTriplet {
        kind: OperatorKind::GaussLobatto,
        interior_order: n_nodes - 1,
        boundary_order: n_nodes - 1,
        nodes,
        h_weights: weights,
        d_plus: d.clone(),
        d_minus: d,
    })
}

/// Validation report for a triplet.
#[derive(Clone, Debug)]
pub struct TripletReport {
    /// max |(H D⁺ + (D⁻)ᵀ H − Q)_{ij}| over the sparsity pattern.
    pub identity_residual: f64,
    /// Per node: the largest degree d such that both operator rows
    /// differentiate every monomial up to x^d exactly (1e−10 relative);
    /// −1 if even the constant fails.
    pub per_row_order: Vec<i32>,
    /// Whether d⁺_i(j) = −d⁻_{N−1−i}(N−1−j) holds entrywise to 1e−12.
    pub mirror_ok: bool,
}

/// Check the triplet identity, per-row accuracy, and mirror symmetry.
pub fn verify_triplet(t: &OperatorTriplet) -> TripletReport {
    let n = t.n_nodes();
    let mut entries: std::collections::HashMap<(usize, usize), f64> =
        std::collections::HashMap::new();
    for i in 0..n {
        let (start, row) = t.d_plus.row(i);
        for (k, c) in row.iter().enumerate() {
            *entries.entry((i, start + k)).or_insert(0.0) += t.h_weights[i] * c;
        }
        let (start, row) = t.d_minus.row(i);
        for (k, c) in row.iter().enumerate() {
            *entries.entry((start + k, i)).or_insert(0.0) += c * t.h_weights[i];
        }
    }
    *entries.entry((0, 0)).or_insert(0.0) += 1.0;
    *entries.entry((n - 1, n - 1)).or_insert(0.0) -= 1.0;
    let identity_residual = entries.values().fold(0.0_f64, |m, v| m.max(v.abs()));

    let cap = match t.kind {
        OperatorKind::GaussLobatto => n - 1,
        _ => t.interior_order + 2,
    };
    let mut per_row_order = vec![cap as i32; n];
    for mat in [&t.d_plus, &t.d_minus] {
        for i in 0..n {
            let (start, row) = mat.row(i);
            let mut order: i32 = -1;
            for m in 0..=cap {
                let mut num = 0.0;
                let mut scale = 1.0_f64;
                for (k, c) in row.iter().enumerate() {
                    let term = c * t.nodes[start + k].powi(m as i32);
                    num += term;
                    scale += term.abs();
                }
                let exact = if m == 0 {
                    0.0
                } else {
                    m as f64 * t.nodes[i].powi(m as i32 - 1)
                };
                scale += exact.abs();
                if (num - exact).abs() > 1e-10 * scale {
                    break;
                }
                order = m as i32;
            }
            per_row_order[i] = per_row_order[i].min(order);
        }
    }

    let mut mirror_ok = true;
    'outer: for i in 0..n {
        let (start, row) = t.d_plus.row(i);
        for (k, &v) in row.iter().enumerate() {
            let j = start + k;
            let (ms, mrow) = t.d_minus.row(n - 1 - i);
            let mj = n - 1 - j;
            let mv = if mj >= ms && mj - ms < mrow.len() {
                mrow[mj - ms]
            } else {
                0.0
            };
            if (v + mv).abs() > 1e-12 * (1.0 + v.abs()) {
                mirror_ok = false;
                break 'outer;
            }
        }
    }

    TripletReport {
        identity_residual,
        per_row_order,
        mirror_ok,
    }
}

/// Grid function representing a unit point mass at `node_index` under the
/// quadrature H: zero except 1/h_weights at the node, so (δ, 1)_H = 1.
pub fn discrete_delta(t: &OperatorTriplet, node_index: usize) -> Result<Vec<f64>> {
    if node_index >= t.n_nodes() {
        return Err(Error::Operator(format!(
            "delta node {node_index} out of range for {} nodes",
            t.n_nodes()
        )));
    }
    let mut v = vec![0.0; t.n_nodes()];
    v[node_index] = 1.0 / t.h_weights[node_index];
    Ok(v)
}
