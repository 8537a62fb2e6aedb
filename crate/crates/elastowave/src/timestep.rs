//! Explicit central time integration of G ü + B u̇ + A u = f.
//!
//! G is a positive diagonal mass matrix, B a positive-semidefinite damping
//! term that is nonzero only near absorbing boundaries, and A a symmetric
//! positive-semidefinite stiffness map applied matrix-free. The update
//!
//! ```text
//! (G/τ² + B/2τ) u^{k+1} = f^k − A u^k + (2G/τ²) u^k − (G/τ² − B/2τ) u^{k−1}
//! ```
//!
//! is explicit because the left factor is diagonal (or block-diagonal over
//! single boundary nodes). The scheme is stable for τ ≤ 2/√((1+ε)λ_max)
//! with λ_max the largest generalized eigenvalue of (A, G), estimated here
//! by a Lanczos iteration on the symmetrized operator G^{−1/2} A G^{−1/2}.
//!
//! The quantity the scheme conserves exactly when B = 0 and f = 0 is the
//! staggered energy E = ½‖(u^k − u^{k−1})/τ‖²_G + ½ (A u^k, u^{k−1}); with
//! B ⪰ 0 it is non-increasing, step by step, in exact arithmetic.

use crate::{Error, Result};

/// Matrix-free symmetric linear map.
pub trait LinearOp {
    fn dof(&self) -> usize;
    /// y = A x. Must not alias.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Adapter turning a closure into a [`LinearOp`].
pub struct FnOp<F: Fn(&[f64], &mut [f64])> {
    pub dof: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> LinearOp for FnOp<F> {
    fn dof(&self) -> usize {
        self.dof
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Damping structure. Scalar problems use a plain diagonal; the elastic
/// absorbing boundary couples the displacement components of each boundary
/// node, giving small symmetric blocks on a component-strided layout.
#[derive(Clone, Debug, Default)]
pub enum Damping {
    #[default]
    None,
    /// b_i per degree of freedom, all ≥ 0.
    Diagonal(Vec<f64>),
    /// Symmetric dim×dim blocks at selected nodes. Degree of freedom `c` of
    /// node `n` lives at index `n + c·stride`.
    NodeBlocks {
        dim: usize,
        stride: usize,
        blocks: Vec<(usize, Vec<f64>)>,
    },
}

/// The assembled second-order system; `a` must be symmetric and positive
/// semidefinite for the stability and energy statements to hold.
pub struct SecondOrderSystem<'a> {
    pub g_diag: Vec<f64>,
    pub damping: Damping,
    pub a: &'a dyn LinearOp,
}

impl<'a> SecondOrderSystem<'a> {
    pub fn new(g_diag: Vec<f64>, damping: Damping, a: &'a dyn LinearOp) -> Result<Self> {
        let sys = SecondOrderSystem { g_diag, damping, a };
        sys.validate()?;
        Ok(sys)
    }

    pub fn dof(&self) -> usize {
        self.g_diag.len()
    }

    fn validate(&self) -> Result<()> {
        if self.g_diag.len() != self.a.dof() {
            return Err(Error::Stepping(format!(
                "mass diagonal has {} entries but the operator acts on {}",
                self.g_diag.len(),
                self.a.dof()
            )));
        }
        if self.g_diag.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::Stepping("mass diagonal must be positive".into()));
        }
        match &self.damping {
            Damping::None => {}
            Damping::Diagonal(b) => {
                if b.len() != self.dof() {
                    return Err(Error::Stepping("damping diagonal length mismatch".into()));
                }
                if b.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::Stepping("damping diagonal must be nonnegative".into()));
                }
            }
            Damping::NodeBlocks {
                dim,
                stride,
                blocks,
            } => {
                if *dim == 0 || *stride == 0 {
                    return Err(Error::Stepping("damping block layout is degenerate".into()));
                }
                for (node, mat) in blocks {
                    if mat.len() != dim * dim {
                        return Err(Error::Stepping(format!(
                            "damping block at node {node} has {} entries, expected {}",
                            mat.len(),
                            dim * dim
                        )));
                    }
                    if node + (dim - 1) * stride >= self.dof() {
                        return Err(Error::Stepping(format!(
                            "damping block at node {node} exceeds the system size"
                        )));
                    }
                    // symmetry is judged against the block's overall scale:
                    // off-diagonal entries may nearly cancel between faces
                    // meeting at an edge, so a per-entry relative test would
                    // reject harmless accumulation rounding
                    let amax = mat.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    for r in 0..*dim {
                        for c in 0..r {
                            let d = mat[r * dim + c] - mat[c * dim + r];
                            if d.abs() > 1e-12 * (1.0 + amax) {
                                return Err(Error::Stepping(format!(
                                    "damping block at node {node} is not symmetric"
                                )));
                            }
                        }
                        if mat[r * dim + r] < 0.0 {
                            return Err(Error::Stepping(format!(
                                "damping block at node {node} has a negative diagonal"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// τ = 2/√((1+ε)·λ_max), the largest stable step with safety margin ε.
pub fn stable_dt(lambda_max: f64, epsilon: f64) -> Result<f64> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Stepping(format!(
            "stable_dt needs a positive eigenvalue bound, got {lambda_max}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Stepping(format!(
            "stable_dt needs a positive safety margin, got {epsilon}"
        )));
    }
    Ok(2.0 / ((1.0 + epsilon) * lambda_max).sqrt())
}

/// Largest generalized eigenvalue of (A, G), i.e. the spectral top of
/// G^{−1/2} A G^{−1/2}, to relative tolerance `rel_tol`.
///
/// Uses a Lanczos iteration with a fixed, reproducible seed that is
/// orthogonalized against the G^{1/2}-image of the constant vector (the
/// typical null direction of free boundaries). The Ritz estimate comes from
/// the top eigenvalue of the growing tridiagonal matrix; convergence is
/// declared on relative stagnation between successive evaluations.
pub fn lambda_max(sys: &SecondOrderSystem, rel_tol: f64) -> Result<f64> {
    if !(rel_tol > 0.0) {
        return Err(Error::Stepping(format!(
            "relative tolerance must be positive, got {rel_tol}"
        )));
    }
    let n = sys.dof();
    if n == 0 {
        return Err(Error::Stepping("empty system".into()));
    }
    let g_isqrt: Vec<f64> = sys.g_diag.iter().map(|&g| 1.0 / g.sqrt()).collect();
    let g_sqrt: Vec<f64> = sys.g_diag.iter().map(|&g| g.sqrt()).collect();

    // y = G^{-1/2} A G^{-1/2} x
    let mut pre = vec![0.0; n];
    let mut post = vec![0.0; n];
    let mut apply_sym = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            pre[i] = x[i] * g_isqrt[i];
        }
        sys.a.apply(&pre, &mut post);
        for i in 0..n {
            y[i] = post[i] * g_isqrt[i];
        }
    };

    // reproducible scrambled-ramp seed
    let mut seed: Vec<f64> = {
        let mut s: u64 = 0x9e3779b97f4a7c15;
        (0..n)
            .map(|i| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5 + 0.25 * (i as f64 / n as f64)
            })
            .collect()
    };
    // deflate against the transformed constant unless that empties the seed
    {
        let norm_c: f64 = g_sqrt.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proj: f64 = seed.iter().zip(&g_sqrt).map(|(a, b)| a * b).sum::<f64>() / (norm_c * norm_c);
        let mut deflated = seed.clone();
        for (d, c) in deflated.iter_mut().zip(&g_sqrt) {
            *d -= proj * c;
        }
        let before: f64 = seed.iter().map(|v| v * v).sum::<f64>().sqrt();
        let after: f64 = deflated.iter().map(|v| v * v).sum::<f64>().sqrt();
        if after > 1e-12 * before {
            seed = deflated;
        }
    }

    let maxit = (10 * n).clamp(64, 100_000);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s0 = norm(&seed);
    if s0 == 0.0 {
        return Err(Error::Stepping("eigenvalue seed vanished".into()));
    }
    let mut v: Vec<f64> = seed.iter().map(|x| x / s0).collect();
    let mut v_prev = vec![0.0; n];
    let mut beta_prev = 0.0_f64;
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];

    let mut last_eval: Option<f64> = None;
    let mut next_eval_at = 4usize;

    for j in 1..=maxit {
        apply_sym(&v, &mut w);
        for i in 0..n {
            w[i] -= beta_prev * v_prev[i];
        }
        let alpha: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        for i in 0..n {
            w[i] -= alpha * v[i];
        }
        alphas.push(alpha);
        let beta = norm(&w);

        let exhausted = beta <= 1e-14 * alpha.abs().max(1.0) || j == n || j == maxit;
        if j >= next_eval_at || exhausted {
            let top = tridiagonal_top_eigenvalue(&alphas, &betas);
            if let Some(prev) = last_eval {
                let scale = top.abs().max(f64::MIN_POSITIVE);
                if (top - prev).abs() <= rel_tol * scale {
                    return Ok(top);
                }
            }
            if exhausted {
                // either an invariant subspace was hit or the Krylov space is
                // the whole space; the estimate cannot improve further
                return Ok(top);
            }
            last_eval = Some(top);
            next_eval_at = j + 1 + j / 16;
        }

        betas.push(beta);
        v_prev.copy_from_slice(&v);
        for i in 0..n {
            v[i] = w[i] / beta;
        }
        beta_prev = beta;
    }

    Err(Error::Stepping(format!(
        "eigenvalue iteration did not reach relative tolerance {rel_tol} in {maxit} steps"
    )))
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
fn tridiagonal_top_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let n = alpha.len();
    assert!(n >= 1 && beta.len() + 1 >= n);
    let b = |i: isize| -> f64 {
        if i < 0 || i as usize >= n - 1 || i as usize >= beta.len() {
            0.0
        } else {
            beta[i as usize].abs()
        }
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius = b(i as isize - 1) + b(i as isize);
        lo = lo.min(alpha[i] - radius);
        hi = hi.max(alpha[i] + radius);
    }
    // count of eigenvalues strictly below x
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0_f64;
        for i in 0..n {
            let off = b(i as isize - 1);
            d = alpha[i] - x - off * off / d;
            if d == 0.0 {
                d = -f64::MIN_POSITIVE;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let scale = hi.abs().max(lo.abs()).max(1.0);
    let mut a = lo;
    let mut bnd = hi + scale * 1e-12;
    while bnd - a > 1e-13 * scale {
        let mid = 0.5 * (a + bnd);
        if count_below(mid) >= n {
            bnd = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + bnd)
}

/// Marching state for the central scheme. Buffers are preallocated; one call
/// to [`Stepper::step`] advances a single time level.
pub struct Stepper<'a, 'b> {
    sys: &'b SecondOrderSystem<'a>,
    tau: f64,
    pub u_curr: Vec<f64>,
    pub u_prev: Vec<f64>,
    step_index: usize,
    a_buf: Vec<f64>,
    next: Vec<f64>,
    /// 1 / (g/τ² + b/2τ) for scalar-solvable degrees of freedom.
    inv_diag: Vec<f64>,
    /// Precomputed dense inverses of the node blocks of (G/τ² + B/2τ).
    block_inv: Vec<(usize, Vec<f64>)>,
    forcing_scale: f64,
}

impl<'a, 'b> Stepper<'a, 'b> {
    /// Start from rest (u⁰ = u¹ = 0). The caller supplies τ, normally from
    /// [`stable_dt`]; stability at larger steps is the caller's risk.
    pub fn new(sys: &'b SecondOrderSystem<'a>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Stepping(format!("time step must be positive, got {tau}")));
        }
        sys.validate()?;
        let n = sys.dof();
        let inv_tau2 = 1.0 / (tau * tau);
        let mut inv_diag: Vec<f64> = sys.g_diag.iter().map(|&g| 1.0 / (g * inv_tau2)).collect();
        let mut block_inv = Vec::new();
        match &sys.damping {
            Damping::None => {}
            Damping::Diagonal(bd) => {
                for i in 0..n {
                    inv_diag[i] = 1.0 / (sys.g_diag[i] * inv_tau2 + bd[i] / (2.0 * tau));
                }
            }
            Damping::NodeBlocks {
                dim,
                stride,
                blocks,
            } => {
                let d = *dim;
                for (node, mat) in blocks {
                    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
                    for r in 0..d {
                        for c in 0..d {
                            m[(r, c)] = mat[r * d + c] / (2.0 * tau);
                        }
                        m[(r, r)] += sys.g_diag[node + r * stride] * inv_tau2;
                    }
                    let inv = m.try_inverse().ok_or_else(|| {
                        Error::Stepping(format!(
                            "effective mass block at node {node} is singular"
                        ))
                    })?;
                    block_inv.push((*node, inv.as_slice().to_vec()));
                }
            }
        }
        Ok(Stepper {
            sys,
            tau,
            u_curr: vec![0.0; n],
            u_prev: vec![0.0; n],
            step_index: 0,
            a_buf: vec![0.0; n],
            next: vec![0.0; n],
            inv_diag,
            block_inv,
            forcing_scale: 0.0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Advance one level with the forcing evaluated at the current time.
    pub fn step(&mut self, forcing: &[f64]) -> Result<()> {
        let n = self.sys.dof();
        assert_eq!(forcing.len(), n, "forcing length mismatch");
        let tau = self.tau;
        let inv_tau2 = 1.0 / (tau * tau);

        self.sys.a.apply(&self.u_curr, &mut self.a_buf);
        for i in 0..n {
            let g = self.sys.g_diag[i] * inv_tau2;
            self.next[i] =
                forcing[i] - self.a_buf[i] + 2.0 * g * self.u_curr[i] - g * self.u_prev[i];
        }
        match &self.sys.damping {
            Damping::None => {}
            Damping::Diagonal(bd) => {
                for i in 0..n {
                    self.next[i] += bd[i] / (2.0 * tau) * self.u_prev[i];
                }
            }
            Damping::NodeBlocks {
                dim,
                stride,
                blocks,
            } => {
                let d = *dim;
                for (node, mat) in blocks {
                    for r in 0..d {
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += mat[r * d + c] * self.u_prev[node + c * stride];
                        }
                        self.next[node + r * stride] += acc / (2.0 * tau);
                    }
                }
            }
        }

        // solve the diagonal/block-diagonal left factor
        for i in 0..n {
            self.next[i] *= self.inv_diag[i];
        }
        if let Damping::NodeBlocks { dim, stride, .. } = &self.sys.damping {
            let d = *dim;
            let mut rhs = vec![0.0; d];
            for (node, inv) in &self.block_inv {
                for (r, slot) in rhs.iter_mut().enumerate() {
                    // undo the diagonal scaling applied above
                    let idx = node + r * stride;
                    *slot = self.next[idx] / self.inv_diag[idx];
                }
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        // nalgebra stores column-major
                        acc += inv[c * d + r] * rhs[c];
                    }
                    self.next[node + r * stride] = acc;
                }
            }
        }

        if self.step_index == 0 {
            // anchor the guard to initial data set directly on the state
            let state_peak = self
                .u_curr
                .iter()
                .chain(&self.u_prev)
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            self.forcing_scale = self.forcing_scale.max(state_peak);
        }
        let peak_f = forcing.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.forcing_scale = self.forcing_scale.max(peak_f);
        let guard = 1e12 * self.forcing_scale.max(f64::MIN_POSITIVE.sqrt());
        for &v in &self.next {
            if !v.is_finite() {
                return Err(Error::Stepping(format!(
                    "non-finite state at step {}",
                    self.step_index + 1
                )));
            }
            if v.abs() > guard {
                return Err(Error::Stepping(format!(
                    "state magnitude {v:.3e} exceeds the instability guard at step {}",
                    self.step_index + 1
                )));
            }
        }

        std::mem::swap(&mut self.u_prev, &mut self.u_curr);
        std::mem::swap(&mut self.u_curr, &mut self.next);
        self.step_index += 1;
        Ok(())
    }

    /// Staggered discrete energy of the current state pair.
    pub fn energy(&mut self) -> f64 {
        discrete_energy(self.sys, &self.u_curr, &self.u_prev, self.tau, &mut self.a_buf)
    }
}

/// E = ½ Σ g_i ((u_i − v_i)/τ)² + ½ (A u, v), the quantity conserved by the
/// central scheme when B = 0 and f = 0 and non-increasing when B ⪰ 0.
pub fn discrete_energy(
    sys: &SecondOrderSystem,
    u_curr: &[f64],
    u_prev: &[f64],
    tau: f64,
    scratch: &mut [f64],
) -> f64 {
    let n = sys.dof();
    let mut kinetic = 0.0;
    for i in 0..n {
        let r = (u_curr[i] - u_prev[i]) / tau;
        kinetic += sys.g_diag[i] * r * r;
    }
    sys.a.apply(u_curr, scratch);
    let potential: f64 = scratch.iter().zip(u_prev).map(|(a, b)| a * b).sum();
    0.5 * kinetic + 0.5 * potential
}
