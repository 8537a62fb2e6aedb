//! Independent verification oracles: dense materialization of linear
//! operators, manufactured solutions with exact continuous forcing, the
//! Rayleigh secular equation, C-norm self-convergence measurement, and
//! drivers for the two desk-scale benchmarks (a surface pulse on a uniform
//! half-space, and two anisotropic layers under random topography).

use nalgebra::DMatrix;

use crate::elastic::{
    face_index, ElasticAssembly, ElasticBlock, FaceBc, RunOptions, RunOutput, SourceTerm,
    TimeSignal,
};
use crate::geometry::{boundary_stretching, gaussian_topography, BlockGrid, Mapping, SurfaceFn};
use crate::sbp::{build_shifted_uniform, OperatorTriplet};
use crate::stiffness::{isotropic_stiffness, tti_stiffness, VoigtMatrix};
use crate::timestep::LinearOp;
use crate::{Error, Result};

/// Hard cap on materialized operator size (the dense matrix is n² doubles).
pub const MATERIALIZE_CAP: usize = 10_000;

/// Dense matrix of a linear map, built column by column: column `j` is
/// `op(e_j)`. Every dense symmetry or definiteness check in the crate
/// routes through this one function, so there is a single audited path
/// from an operator to its matrix.
pub fn materialize(op: &dyn LinearOp) -> Result<DMatrix<f64>> {
    let n = op.dof();
    if n > MATERIALIZE_CAP {
        return Err(Error::Verify(format!(
            "refusing to materialize a {n}-dof operator (cap {MATERIALIZE_CAP})"
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for j in 0..n {
        x[j] = 1.0;
        op.apply(&x, &mut y);
        for i in 0..n {
            a[(i, j)] = y[i];
        }
        x[j] = 0.0;
    }
    Ok(a)
}

/// Largest |a_ij − a_ji| of a square matrix.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest and largest eigenvalue of the symmetric part (A + Aᵀ)/2.
pub fn symmetric_spectrum_bounds(a: &DMatrix<f64>) -> (f64, f64) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

type Field = Box<dyn Fn(f64, &[f64], usize) -> f64>;
type HessianField = Box<dyn Fn(f64, &[f64], usize, usize, usize) -> f64>;

/// A target solution u*(t, x) carrying its own analytic second derivatives.
/// Substituting it into the continuous equations yields a forcing with a
/// known exact answer, so the discrete operator error becomes the measured
/// quantity.
pub struct Manufactured {
    pub dim: usize,
    pub components: usize,
    value: Field,
    ddt2: Field,
    hessian: HessianField,
}

impl Manufactured {
    /// `value(t, x, c)`, `ddt2 = ∂²value/∂t²`, and
    /// `hessian(t, x, c, j, b) = ∂²value_c/∂x_j ∂x_b`.
    pub fn new(
        dim: usize,
        components: usize,
        value: Field,
        ddt2: Field,
        hessian: HessianField,
    ) -> Self {
        Manufactured {
            dim,
            components,
            value,
            ddt2,
            hessian,
        }
    }

    pub fn zero(dim: usize, components: usize) -> Self {
        Manufactured::new(
            dim,
            components,
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _, _, _| 0.0),
        )
    }

    /// u_c(t, x) = (Σ_j g_cj x_j + s_c) · cos(ω t): linear in space, so all
    /// spatial second derivatives vanish identically.
    pub fn linear_in_space(gradients: Vec<Vec<f64>>, shifts: Vec<f64>, omega: f64) -> Self {
        let components = gradients.len();
        let dim = gradients[0].len();
        assert_eq!(shifts.len(), components);
        let profile = move |x: &[f64], c: usize, g: &[Vec<f64>], s: &[f64]| -> f64 {
            s[c] + g[c].iter().zip(x).map(|(gj, xj)| gj * xj).sum::<f64>()
        };
        let (g1, s1) = (gradients.clone(), shifts.clone());
        let (g2, s2) = (gradients, shifts);
        Manufactured::new(
            dim,
            components,
            Box::new(move |t, x, c| profile(x, c, &g1, &s1) * (omega * t).cos()),
            Box::new(move |t, x, c| -omega * omega * profile(x, c, &g2, &s2) * (omega * t).cos()),
            Box::new(|_, _, _, _, _| 0.0),
        )
    }

    /// First component Π_k sin(π x_k) · cos(ω t), all other components zero.
    pub fn sine_product(dim: usize, components: usize, omega: f64) -> Self {
        use std::f64::consts::PI;
        let u0 = move |t: f64, x: &[f64]| -> f64 {
            let mut v = (omega * t).cos();
            for &xk in &x[..dim] {
                v *= (PI * xk).sin();
            }
            v
        };
        let hess = move |t: f64, x: &[f64], c: usize, j: usize, b: usize| -> f64 {
            if c != 0 {
                return 0.0;
            }
            if j == b {
                return -PI * PI * u0(t, x);
            }
            // mixed derivative: the two sines at axes j and b become cosines
            let mut v = PI * PI * (omega * t).cos();
            for (k, &xk) in x[..dim].iter().enumerate() {
                v *= if k == j || k == b {
                    (PI * xk).cos()
                } else {
                    (PI * xk).sin()
                };
            }
            v
        };
        Manufactured::new(
            dim,
            components,
            Box::new(move |t, x, c| if c == 0 { u0(t, x) } else { 0.0 }),
            Box::new(move |t, x, c| {
                if c == 0 {
                    -omega * omega * u0(t, x)
                } else {
                    0.0
                }
            }),
            Box::new(hess),
        )
    }

    pub fn value(&self, t: f64, x: &[f64], c: usize) -> f64 {
        (self.value)(t, x, c)
    }

    pub fn ddt2(&self, t: f64, x: &[f64], c: usize) -> f64 {
        (self.ddt2)(t, x, c)
    }

    pub fn hessian(&self, t: f64, x: &[f64], c: usize, j: usize, b: usize) -> f64 {
        (self.hessian)(t, x, c, j, b)
    }
}

/// Spatially constant material model for manufactured-solution work.
pub enum MediumModel {
    Scalar { rho: f64, rho_c2: f64 },
    Elastic { rho: f64, stiffness: VoigtMatrix },
}

impl MediumModel {
    pub fn rho(&self) -> f64 {
        match self {
            MediumModel::Scalar { rho, .. } | MediumModel::Elastic { rho, .. } => *rho,
        }
    }
}

/// Forcing f_c(t, x) = ρ ∂²_t u*_c − (div σ(u*))_c with all derivatives of
/// u* taken analytically: the exact continuous residual of the target
/// solution, evaluated pointwise.
pub fn manufactured_forcing(
    medium: &MediumModel,
    u: &Manufactured,
    t: f64,
    x: &[f64],
    c: usize,
) -> f64 {
    match medium {
        MediumModel::Scalar { rho, rho_c2 } => {
            debug_assert_eq!(u.components, 1);
            let mut lap = 0.0;
            for j in 0..u.dim {
                lap += u.hessian(t, x, 0, j, j);
            }
            rho * u.ddt2(t, x, 0) - rho_c2 * lap
        }
        MediumModel::Elastic { rho, stiffness } => {
            let mut div = 0.0;
            for j in 0..u.dim {
                for a in 0..u.components {
                    for b in 0..u.dim {
                        let cc = stiffness.tensor(c, j, a, b);
                        if cc != 0.0 {
                            div += cc * u.hessian(t, x, a, j, b);
                        }
                    }
                }
            }
            rho * u.ddt2(t, x, c) - div
        }
    }
}

/// The same residual with every derivative replaced by a central difference
/// of `u.value` — an independent O(step²) check of the analytic
/// derivatives behind [`manufactured_forcing`].
pub fn manufactured_forcing_fd(
    medium: &MediumModel,
    u: &Manufactured,
    t: f64,
    x: &[f64],
    c: usize,
    step: f64,
) -> f64 {
    let s = step;
    let d2t = |c: usize| {
        (u.value(t + s, x, c) - 2.0 * u.value(t, x, c) + u.value(t - s, x, c)) / (s * s)
    };
    let mut xs = x.to_vec();
    let mut d2x = |a: usize, j: usize, b: usize| -> f64 {
        if j == b {
            xs[j] = x[j] + s;
            let up = u.value(t, &xs, a);
            xs[j] = x[j] - s;
            let dn = u.value(t, &xs, a);
            xs[j] = x[j];
            (up - 2.0 * u.value(t, x, a) + dn) / (s * s)
        } else {
            let mut corner = |sj: f64, sb: f64| -> f64 {
                xs[j] = x[j] + sj;
                xs[b] = x[b] + sb;
                let v = u.value(t, &xs, a);
                xs[j] = x[j];
                xs[b] = x[b];
                v
            };
            (corner(s, s) - corner(s, -s) - corner(-s, s) + corner(-s, -s)) / (4.0 * s * s)
        }
    };
    match medium {
        MediumModel::Scalar { rho, rho_c2 } => {
            let mut lap = 0.0;
            for j in 0..u.dim {
                lap += d2x(0, j, j);
            }
            rho * d2t(0) - rho_c2 * lap
        }
        MediumModel::Elastic { rho, stiffness } => {
            let mut div = 0.0;
            for j in 0..u.dim {
                for a in 0..u.components {
                    for b in 0..u.dim {
                        let cc = stiffness.tensor(c, j, a, b);
                        if cc != 0.0 {
                            div += cc * d2x(a, j, b);
                        }
                    }
                }
            }
            rho * d2t(c) - div
        }
    }
}

/// Speed of the free surface wave on a uniform half-space: the root of
/// (2 − ξ)² = 4 √(1 − κξ) √(1 − ξ) with ξ = (c/vs)² and κ = (vs/vp)²,
/// located by bisection on (0, vs) to 1e-9 relative accuracy.
pub fn rayleigh_speed(vp: f64, vs: f64) -> Result<f64> {
    if !(vp > vs && vs > 0.0) {
        return Err(Error::Verify(format!(
            "surface-wave speed needs vp > vs > 0, got vp = {vp}, vs = {vs}"
        )));
    }
    let kappa = (vs / vp) * (vs / vp);
    let g = |xi: f64| (2.0 - xi).powi(2) - 4.0 * (1.0 - kappa * xi).sqrt() * (1.0 - xi).sqrt();
    // ξ = 0 solves the equation trivially; just above it g < 0 (slope
    // 2κ − 2), and g(1) = 1, so the physical root is bracketed by (0, 1).
    let mut lo = 1e-9;
    let mut hi = 1.0;
    assert!(g(lo) < 0.0, "secular function not negative above zero");
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(vs * (0.5 * (lo + hi)).sqrt())
}

/// Relative maximum-in-time error between two receiver traces sampled on
/// nested time grids, `stride` fine levels per coarse level. Traces are
/// time-level major with `dim` components per level; the result is the peak
/// Euclidean magnitude of the difference over the shared levels, divided by
/// the reference's own peak magnitude.
pub fn relative_c_norm(trace: &[f64], reference: &[f64], dim: usize, stride: usize) -> Result<f64> {
    if dim == 0 || stride == 0 || trace.len() % dim != 0 || reference.len() % dim != 0 {
        return Err(Error::Verify(format!(
            "trace lengths {} and {} do not match {dim} components at stride {stride}",
            trace.len(),
            reference.len()
        )));
    }
    let nc = trace.len() / dim;
    let nf = reference.len() / dim;
    if nc == 0 || (nc - 1) * stride + 1 != nf {
        return Err(Error::Verify(format!(
            "a {nc}-level trace at stride {stride} needs {} reference levels, got {nf}",
            if nc == 0 { 0 } else { (nc - 1) * stride + 1 }
        )));
    }
    let mag = |samples: &[f64], level: usize| -> f64 {
        let mut m = 0.0;
        for c in 0..dim {
            let v = samples[level * dim + c];
            m += v * v;
        }
        m.sqrt()
    };
    let mut num = 0.0_f64;
    for k in 0..nc {
        let mut diff = 0.0;
        for c in 0..dim {
            let d = trace[k * dim + c] - reference[k * stride * dim + c];
            diff += d * d;
        }
        num = num.max(diff.sqrt());
    }
    let mut den = 0.0_f64;
    for k in 0..nf {
        den = den.max(mag(reference, k));
    }
    if den == 0.0 {
        return if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Verify(
                "reference trace is identically zero but the compared trace is not".into(),
            ))
        };
    }
    Ok(num / den)
}

/// Integer time-step ratio between a run and a finer reference run.
fn tau_ratio(coarse: f64, fine: f64) -> Result<usize> {
    let q = coarse / fine;
    let r = q.round();
    if !(r >= 1.0) || (q - r).abs() > 1e-9 * q {
        return Err(Error::Verify(format!(
            "time steps {coarse} and {fine} are not integer multiples"
        )));
    }
    Ok(r as usize)
}

/// Per-receiver relative error of `run` against `reference`, keyed by the
/// receiver's distance from `source` and sorted by that distance.
pub struct ErrorCurve {
    pub distances: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ErrorCurve {
    /// The error at the sampled distance nearest to `d`.
    pub fn at(&self, d: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (dist, err) in self.distances.iter().zip(&self.errors) {
            if (dist - d).abs() < best.0 {
                best = ((dist - d).abs(), *err);
            }
        }
        best.1
    }
}

/// Relative C-norm error of every receiver of `run` against the matching
/// receiver of `reference` (the finer self-convergence level), as a curve
/// over distance from `source`. The two runs must share the receiver
/// layout: same count, same requested positions.
pub fn error_vs_distance(
    run: &RunOutput,
    reference: &RunOutput,
    source: &[f64],
) -> Result<ErrorCurve> {
    if run.receivers.len() != reference.receivers.len() {
        return Err(Error::Verify(format!(
            "receiver layouts differ: {} vs {} receivers",
            run.receivers.len(),
            reference.receivers.len()
        )));
    }
    let stride = tau_ratio(run.tau, reference.tau)?;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(run.receivers.len());
    for (r, (a, b)) in run.receivers.iter().zip(&reference.receivers).enumerate() {
        let scale = a
            .requested
            .iter()
            .map(|v| v.abs())
            .fold(1.0_f64, f64::max);
        let mismatch = a
            .requested
            .iter()
            .zip(&b.requested)
            .any(|(x, y)| (x - y).abs() > 1e-9 * scale);
        if a.requested.len() != b.requested.len() || mismatch {
            return Err(Error::Verify(format!(
                "receiver {r} was requested at {:?} in one run and {:?} in the other",
                a.requested, b.requested
            )));
        }
        let dim = a.requested.len();
        let err = relative_c_norm(&a.samples, &b.samples, dim, stride)?;
        let dist = a
            .position
            .iter()
            .zip(source)
            .map(|(p, s)| (p - s) * (p - s))
            .sum::<f64>()
            .sqrt();
        curve.push((dist, err));
    }
    curve.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(ErrorCurve {
        distances: curve.iter().map(|c| c.0).collect(),
        errors: curve.iter().map(|c| c.1).collect(),
    })
}

/// Self-convergence measurement over nested grid levels: per-receiver
/// errors of every level against the finest, and the observed orders from
/// consecutive error ratios.
pub struct ConvergenceReport {
    /// Grid dimensions per level, coarsest first.
    pub dims: Vec<Vec<usize>>,
    pub taus: Vec<f64>,
    /// `errors[l][r]`: level l (finest excluded) vs the finest, receiver r.
    pub errors: Vec<Vec<f64>>,
    /// `orders[l][r] = log₂(errors[l][r] / errors[l+1][r])`.
    pub orders: Vec<Vec<f64>>,
}

/// Build a [`ConvergenceReport`] from runs on nested grids, coarsest first;
/// the finest run is the reference. Levels must be nested by factor-2
/// refinement (each axis doubles its interval count) and every coarser time
/// step must be an integer multiple of the finest.
pub fn self_convergence(dims: &[Vec<usize>], runs: &[&RunOutput]) -> Result<ConvergenceReport> {
    if runs.len() < 2 || runs.len() != dims.len() {
        return Err(Error::Verify(format!(
            "self-convergence needs at least two matching levels, got {} runs and {} grids",
            runs.len(),
            dims.len()
        )));
    }
    for l in 0..dims.len() - 1 {
        if dims[l].len() != dims[l + 1].len()
            || dims[l]
                .iter()
                .zip(&dims[l + 1])
                .any(|(c, f)| 2 * c - 1 != *f)
        {
            return Err(Error::Verify(format!(
                "levels {:?} and {:?} are not nested by factor-2 refinement",
                dims[l],
                dims[l + 1]
            )));
        }
    }
    let finest = runs[runs.len() - 1];
    let mut errors = Vec::with_capacity(runs.len() - 1);
    for run in &runs[..runs.len() - 1] {
        let origin = vec![0.0; run.receivers[0].requested.len()];
        let curve = error_vs_distance(run, finest, &origin)?;
        errors.push(curve.errors);
    }
    let n_rec = errors[0].len();
    let mut orders = Vec::new();
    for l in 0..errors.len().saturating_sub(1) {
        let mut row = Vec::with_capacity(n_rec);
        for r in 0..n_rec {
            let o = (errors[l][r] / errors[l + 1][r]).log2();
            if !o.is_finite() {
                return Err(Error::Verify(format!(
                    "order at receiver {r} is not finite (errors {} and {})",
                    errors[l][r],
                    errors[l + 1][r]
                )));
            }
            row.push(o);
        }
        orders.push(row);
    }
    Ok(ConvergenceReport {
        dims: dims.to_vec(),
        taus: runs.iter().map(|r| r.tau).collect(),
        errors,
        orders,
    })
}

/// Time and value of the peak Euclidean magnitude of a trace within the
/// closed window `[w0, w1]`, sampling at t = k·τ.
pub fn peak_magnitude_time(
    samples: &[f64],
    dim: usize,
    tau: f64,
    window: (f64, f64),
) -> Result<(f64, f64)> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(Error::Verify(format!(
            "trace length {} is not a multiple of {dim} components",
            samples.len()
        )));
    }
    let n = samples.len() / dim;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n {
        let t = k as f64 * tau;
        if t < window.0 || t > window.1 {
            continue;
        }
        let mut m = 0.0;
        for c in 0..dim {
            let v = samples[k * dim + c];
            m += v * v;
        }
        let m = m.sqrt();
        if best.map_or(true, |(_, bm)| m > bm) {
            best = Some((t, m));
        }
    }
    best.ok_or_else(|| {
        Error::Verify(format!(
            "no samples inside the window [{}, {}]",
            window.0, window.1
        ))
    })
}

/// Time and value of the peak |u·d| of a trace within the closed window,
/// where `direction` is projected out of each sample before taking the
/// magnitude. For a surface pulse excited by a surface-normal force, the
/// surface-tangential component carries an undistorted copy of the source
/// wavelet, so its peak marks the arrival; the two-component magnitude
/// instead has twin lobes straddling the arrival (the normal component is
/// the quarter-period-shifted partner of the tangential one) and its raw
/// maximum rides whichever lobe is taller.
pub fn peak_projection_time(
    samples: &[f64],
    dim: usize,
    tau: f64,
    window: (f64, f64),
    direction: &[f64],
) -> Result<(f64, f64)> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(Error::Verify(format!(
            "trace length {} is not a multiple of {dim} components",
            samples.len()
        )));
    }
    if direction.len() != dim {
        return Err(Error::Verify(format!(
            "projection direction has {} components, trace has {dim}",
            direction.len()
        )));
    }
    let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Verify("projection direction is zero".into()));
    }
    let n = samples.len() / dim;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n {
        let t = k as f64 * tau;
        if t < window.0 || t > window.1 {
            continue;
        }
        let mut m = 0.0;
        for c in 0..dim {
            m += samples[k * dim + c] * direction[c];
        }
        let m = (m / norm).abs();
        if best.map_or(true, |(_, bm)| m > bm) {
            best = Some((t, m));
        }
    }
    best.ok_or_else(|| {
        Error::Verify(format!(
            "no samples inside the window [{}, {}]",
            window.0, window.1
        ))
    })
}

/// Setup of the half-space surface-pulse benchmark: a surface-normal point
/// force on the free surface of a uniform isotropic half-space, receivers
/// along the surface. The defaults give the desk-scale configuration
/// (3 km × 1.5 km box, vp = 3200 m/s, vs = 1847.5 m/s, ρ = 2200 kg/m³,
/// 10 Hz wavelet), and `tilt_deg` rotates the whole problem so the free
/// surface becomes an inclined line through the origin.
pub struct LambOptions {
    pub nx: usize,
    pub nz: usize,
    pub tau: f64,
    pub t_end: f64,
    /// Interior order of the shifted-pair difference operators.
    pub order: usize,
    pub tilt_deg: f64,
    /// Source position as arclength along the surface from the origin.
    pub source_arc: f64,
    /// Receiver positions as arclength along the surface from the origin.
    pub receiver_arc: Vec<f64>,
    pub vp: f64,
    pub vs: f64,
    pub rho: f64,
    pub nu0: f64,
    pub workers: usize,
}

impl Default for LambOptions {
    fn default() -> Self {
        LambOptions {
            nx: 251,
            nz: 181,
            tau: 4e-4,
            t_end: 0.6,
            order: 8,
            tilt_deg: 0.0,
            source_arc: 0.0,
            receiver_arc: vec![600.0],
            vp: 3200.0,
            vs: 1847.5,
            rho: 2200.0,
            nu0: 10.0,
            workers: 1,
        }
    }
}

impl LambOptions {
    /// The same setup refined `l` times: each level halves the grid spacing
    /// and quarters the time step (the boundary-normal accuracy is half the
    /// interior order, so errors drop by 2^(order/2) per level and the
    /// leapfrog error keeps pace).
    pub fn refined(&self, l: u32) -> LambOptions {
        LambOptions {
            nx: ((self.nx - 1) << l) + 1,
            nz: ((self.nz - 1) << l) + 1,
            tau: self.tau / 4f64.powi(l as i32),
            receiver_arc: self.receiver_arc.clone(),
            ..*self
        }
    }

    /// Surface point at arclength `d` from the origin.
    pub fn surface_point(&self, d: f64) -> Vec<f64> {
        let (s, c) = self.tilt_deg.to_radians().sin_cos();
        vec![d * c, d * s]
    }

    /// Unit vector along the surface, pointing toward growing arclength.
    pub fn surface_tangent(&self) -> Vec<f64> {
        self.surface_point(1.0)
    }
}

/// Assemble and run the half-space benchmark; receivers come back in the
/// order of `receiver_arc`.
pub fn lamb_halfspace(opts: &LambOptions) -> Result<RunOutput> {
    let lo = [-1500.0, -1500.0];
    let hi = [1500.0, 0.0];
    let mapping = if opts.tilt_deg == 0.0 {
        Mapping::box_map(2, &lo, &hi)?
    } else {
        Mapping::oblique_halfplane(opts.tilt_deg, &lo, &hi)?
    };
    let trips: Vec<OperatorTriplet> = [opts.nx, opts.nz]
        .iter()
        .map(|&n| build_shifted_uniform(opts.order, n, 1.0)?.scaled_to(0.0, 1.0))
        .collect::<Result<_>>()?;
    let grid = BlockGrid::new(trips, &mapping)?;
    let c = isotropic_stiffness(2, opts.vp, opts.vs, opts.rho)?;
    let mut bcs = vec![FaceBc::NonReflecting; 4];
    bcs[face_index(1, true)] = FaceBc::FreeSurface;
    let block = ElasticBlock::uniform(grid, &mapping, opts.rho, c, bcs)?;
    let mut asm = ElasticAssembly::new(vec![block])?;
    asm.set_workers(opts.workers);

    // surface-normal force at the source point
    let (s, c) = opts.tilt_deg.to_radians().sin_cos();
    let normal = [-s, c];
    let src = opts.surface_point(opts.source_arc);
    let mut pattern = Vec::new();
    let mut snap = 0.0;
    for (comp, &w) in normal.iter().enumerate() {
        if w != 0.0 {
            let (pat, d) = asm.point_force_pattern(&src, comp)?;
            pattern.extend(pat.into_iter().map(|(dof, v)| (dof, v * w)));
            snap = d;
        }
    }
    let source = SourceTerm {
        pattern,
        signal: TimeSignal::standard(opts.nu0),
        snap_distance: snap,
    };

    let receivers = opts
        .receiver_arc
        .iter()
        .map(|&d| opts.surface_point(d))
        .collect();
    asm.run(
        &[source],
        &RunOptions {
            t_end: opts.t_end,
            tau: Some(opts.tau),
            receivers,
            ..RunOptions::default()
        },
        None,
    )
}

/// Setup of the two-layer anisotropic benchmark: two tilted transversely
/// isotropic layers under a random Gaussian land surface, welded along a
/// random interface whose shape the flat-bottomed grid repeats, free on
/// top and absorbing elsewhere, with an explosion source at the center of
/// the land surface. Horizontal extent is 6 km × 6 km.
pub struct TtiOptions {
    /// Horizontal nodes per axis (both layers share the horizontal grids).
    pub nh: usize,
    /// Vertical nodes of the top and bottom layer.
    pub nv_top: usize,
    pub nv_bottom: usize,
    /// Interior order of the shifted-pair operators on every finite
    /// difference axis.
    pub order: usize,
    pub seed: u64,
    pub nu0: f64,
    pub workers: usize,
    /// Compression of vertical spacing toward the land surface and the
    /// interface (1 = uniform).
    pub stretch: f64,
}

impl Default for TtiOptions {
    fn default() -> Self {
        TtiOptions {
            nh: 61,
            nv_top: 25,
            nv_bottom: 21,
            order: 4,
            seed: 0x7709_5EED,
            nu0: 10.0,
            workers: 1,
            stretch: 2.0,
        }
    }
}

/// Elevation profiles of the benchmark: land surface around 0 m, interface
/// around −2500 m, flat-shifted copy of the interface at −4300 m.
pub fn tti_surfaces(opts: &TtiOptions) -> Result<(SurfaceFn, SurfaceFn, SurfaceFn)> {
    let lo = [0.0, 0.0];
    let hi = [6000.0, 6000.0];
    let land = gaussian_topography(opts.seed, 0.0, 1450.0, 5, &lo, &hi)?;
    let interface = gaussian_topography(opts.seed ^ 0x9E37_79B9, -2500.0, 150.0, 4, &lo, &hi)?;
    let bottom = interface.clone().shifted(-1800.0);
    Ok((land, interface, bottom))
}

fn tti_block(
    mapping: &Mapping,
    dims: [usize; 3],
    order: usize,
    stiffness: VoigtMatrix,
    rho: f64,
    bcs: Vec<FaceBc>,
) -> Result<ElasticBlock> {
    let trips: Vec<OperatorTriplet> = dims
        .iter()
        .map(|&n| build_shifted_uniform(order, n, 1.0)?.scaled_to(0.0, 1.0))
        .collect::<Result<_>>()?;
    let grid = BlockGrid::new(trips, mapping)?;
    ElasticBlock::uniform(grid, mapping, rho, stiffness, bcs)
}

/// Assemble the two-layer benchmark. The two layers share the interface
/// nodes exactly (same horizontal grids, same elevation profile), so the
/// assembly welds them into one grid there.
pub fn tti_assembly(opts: &TtiOptions) -> Result<ElasticAssembly> {
    let lo = [0.0, 0.0];
    let hi = [6000.0, 6000.0];
    let (land, interface, bottom) = tti_surfaces(opts)?;

    let c_top = tti_stiffness(2000.0, 1200.0, 2000.0, 0.334, 0.575, 0.818, 45.0, 45.0)?;
    let c_bot = tti_stiffness(3000.0, 1600.0, 2000.0, 0.022, 0.087, -0.072, 90.0, 15.0)?;
    let rho = 2000.0;

    let vertical = if opts.stretch > 1.0 {
        Some(boundary_stretching(opts.stretch, 0.12)?)
    } else {
        None
    };
    let map_top = Mapping::layer(3, &lo, &hi, interface.clone(), land, vertical.clone())?;
    let map_bot = Mapping::layer(3, &lo, &hi, bottom, interface, vertical.map(|s| s.flipped()))?;

    // top layer: free on the land surface, welded below, absorbing sides
    let mut bcs_top = vec![FaceBc::NonReflecting; 6];
    bcs_top[face_index(2, true)] = FaceBc::FreeSurface;
    bcs_top[face_index(2, false)] = FaceBc::FreeSurface; // interface: welded
    // bottom layer: welded above, absorbing elsewhere
    let mut bcs_bot = vec![FaceBc::NonReflecting; 6];
    bcs_bot[face_index(2, true)] = FaceBc::FreeSurface; // interface: welded

    let top = tti_block(
        &map_top,
        [opts.nh, opts.nh, opts.nv_top],
        opts.order,
        c_top,
        rho,
        bcs_top,
    )?;
    let bot = tti_block(
        &map_bot,
        [opts.nh, opts.nh, opts.nv_bottom],
        opts.order,
        c_bot,
        rho,
        bcs_bot,
    )?;
    let mut asm = ElasticAssembly::new(vec![top, bot])?;
    asm.set_workers(opts.workers);
    Ok(asm)
}

/// Run the two-layer benchmark for `n_steps` steps at the derived stable
/// step, recording the discrete energy every `energy_every` steps.
pub fn tti_run(opts: &TtiOptions, n_steps: usize, energy_every: usize) -> Result<RunOutput> {
    let asm = tti_assembly(opts)?;
    let (land, _, _) = tti_surfaces(opts)?;
    let center = [3000.0, 3000.0];
    let src = [3000.0, 3000.0, land.eval(&center)];
    let source = asm.explosion(&src, TimeSignal::standard(opts.nu0))?;
    asm.run(
        &[source],
        &RunOptions {
            t_end: f64::INFINITY,
            n_steps: Some(n_steps),
            receivers: vec![src.to_vec()],
            energy_every,
            ..RunOptions::default()
        },
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbp::build_gll;
    use crate::timestep::FnOp;
    use crate::wave1d::{BoundaryCondition1D, BoundarySpec1D, Medium1D, Wave1DProblem};
    use approx::assert_abs_diff_eq;

    #[test]
    fn materialize_reproduces_the_identity_and_enforces_the_cap() {
        let id = FnOp {
            dof: 5,
            f: |x: &[f64], y: &mut [f64]| y.copy_from_slice(x),
        };
        let a = materialize(&id).unwrap();
        assert_eq!(a, DMatrix::identity(5, 5));

        let big = FnOp {
            dof: MATERIALIZE_CAP + 1,
            f: |_: &[f64], _: &mut [f64]| {},
        };
        let err = materialize(&big).unwrap_err().to_string();
        assert!(err.contains("10000"), "unexpected message: {err}");
    }

    #[test]
    fn scalar_operator_matches_its_direct_dense_construction() {
        // same matrix two ways: through the assembled operator, and from
        // the raw pieces as (D⁺)ᵀ H diag(ρc²) D⁺ restricted to the
        // interior (both ends clamped)
        let n = 20;
        let trip = build_shifted_uniform(4, n, 1.0 / (n as f64 - 1.0)).unwrap();
        let rho: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let speed: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * (0.7 * i as f64).cos()).collect();
        let problem = Wave1DProblem::new(
            trip.clone(),
            Medium1D::new(rho.clone(), speed.clone()).unwrap(),
            BoundarySpec1D {
                left: BoundaryCondition1D::Dirichlet,
                right: BoundaryCondition1D::Dirichlet,
            },
        )
        .unwrap();
        let assembled = problem.assemble().unwrap();
        let through_op = materialize(&assembled).unwrap();

        let dp = trip.d_plus.to_dense();
        let mut direct = DMatrix::zeros(n - 2, n - 2);
        for col in 1..n - 1 {
            // column of S e_col with S = (D⁺)ᵀ H diag(ρc²) D⁺
            let mut w = vec![0.0; n];
            for i in 0..n {
                w[i] = dp[i][col] * trip.h_weights[i] * rho[i] * speed[i] * speed[i];
            }
            for row in 1..n - 1 {
                let mut v = 0.0;
                for i in 0..n {
                    v += dp[i][row] * w[i];
                }
                direct[(row - 1, col - 1)] = v;
            }
        }
        let worst = (&through_op - &direct).amax();
        assert!(worst < 1e-12, "constructions disagree by {worst}");
    }

    #[test]
    fn elastic_operator_on_a_small_grid_is_symmetric() {
        let mapping = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let trips: Vec<OperatorTriplet> = (0..2)
            .map(|_| build_gll(7).unwrap().scaled_to(0.0, 1.0).unwrap())
            .collect();
        let grid = BlockGrid::new(trips, &mapping).unwrap();
        let c = isotropic_stiffness(2, 2.0, 1.2, 1.0).unwrap();
        let block =
            ElasticBlock::uniform(grid, &mapping, 1.0, c, vec![FaceBc::FreeSurface; 4]).unwrap();
        let asm = ElasticAssembly::new(vec![block]).unwrap();
        let a = materialize(&asm).unwrap();
        let scale = a.amax();
        assert!(max_asymmetry(&a) <= 1e-12 * scale);
        let (_, hi) = symmetric_spectrum_bounds(&(-a));
        assert!(
            hi <= 1e-10 * scale,
            "operator has a positive mode {hi} at scale {scale}"
        );
    }

    #[test]
    fn zero_and_linear_solutions_have_closed_form_forcing() {
        let medium = MediumModel::Elastic {
            rho: 1.7,
            stiffness: isotropic_stiffness(2, 3.0, 1.5, 1.7).unwrap(),
        };
        let zero = Manufactured::zero(2, 2);
        let linear = Manufactured::linear_in_space(
            vec![vec![0.4, -0.3], vec![1.1, 0.2]],
            vec![0.5, -0.25],
            3.0,
        );
        for &(t, x0, x1) in &[(0.0, 0.3, 0.9), (0.7, -1.2, 0.4), (1.3, 2.0, -0.6)] {
            let x = [x0, x1];
            for c in 0..2 {
                assert_eq!(manufactured_forcing(&medium, &zero, t, &x, c), 0.0);
                // linear in space: the stress divergence vanishes
                let expect = 1.7 * linear.ddt2(t, &x, c);
                assert_abs_diff_eq!(
                    manufactured_forcing(&medium, &linear, t, &x, c),
                    expect,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn analytic_forcing_agrees_with_its_finite_difference_evaluation() {
        // order-unity media keep the finite-difference noise floor well
        // under the 1e-6 agreement target
        let shipped: Vec<(MediumModel, Manufactured)> = vec![
            (
                MediumModel::Scalar {
                    rho: 1.0,
                    rho_c2: 2.25,
                },
                Manufactured::sine_product(1, 1, 4.0),
            ),
            (
                MediumModel::Elastic {
                    rho: 1.3,
                    stiffness: isotropic_stiffness(2, 1.4, 0.8, 1.3).unwrap(),
                },
                Manufactured::sine_product(2, 2, 3.0),
            ),
            (
                MediumModel::Elastic {
                    rho: 1.0,
                    stiffness: tti_stiffness(1.0, 0.6, 1.0, 0.334, 0.575, 0.818, 45.0, 45.0)
                        .unwrap(),
                },
                Manufactured::sine_product(3, 3, 2.0),
            ),
        ];
        let mut rng = crate::geometry::SplitMix64(0x00D1_CE00);
        for (medium, u) in &shipped {
            for _ in 0..20 {
                let t = rng.next_f64();
                let x: Vec<f64> = (0..u.dim).map(|_| 0.1 + 0.8 * rng.next_f64()).collect();
                for c in 0..u.components {
                    let sym = manufactured_forcing(medium, u, t, &x, c);
                    let fd = manufactured_forcing_fd(medium, u, t, &x, c, 1e-4);
                    assert!(
                        (sym - fd).abs() <= 1e-6,
                        "dim {} component {c}: {sym} vs {fd}",
                        u.dim
                    );
                }
            }
        }
    }

    #[test]
    fn surface_wave_speed_reproduces_known_roots() {
        let c = rayleigh_speed(3200.0, 1847.5).unwrap();
        assert!((c - 1698.6).abs() < 0.1, "got {c}");
        // vp/vs = √3 has the classical root c/vs ≈ 0.9194
        let vs = 2.0;
        let c = rayleigh_speed(3f64.sqrt() * vs, vs).unwrap();
        assert!((c / vs - 0.9194).abs() < 1e-3, "got {}", c / vs);
        assert!(rayleigh_speed(1.0, 1.0).is_err());
        assert!(rayleigh_speed(1.0, 2.0).is_err());
    }

    #[test]
    fn trace_errors_detect_layout_mismatches_and_vanish_on_coincidence() {
        let fine: Vec<f64> = (0..18).map(|i| (0.3 * i as f64).sin()).collect();
        // nine two-component reference levels subsampled at stride 4
        let coarse: Vec<f64> = [0usize, 4, 8]
            .iter()
            .flat_map(|&k| [fine[2 * k], fine[2 * k + 1]])
            .collect();
        assert_eq!(relative_c_norm(&fine, &fine, 2, 1).unwrap(), 0.0);
        assert_eq!(relative_c_norm(&coarse, &fine, 2, 4).unwrap(), 0.0);
        assert!(relative_c_norm(&coarse, &fine, 2, 2).is_err());
        assert!(relative_c_norm(&coarse, &fine, 4, 4).is_err());
        assert_eq!(relative_c_norm(&[0.0; 4], &[0.0; 4], 2, 1).unwrap(), 0.0);
        assert!(relative_c_norm(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], 2, 1).is_err());

        // a single perturbed level of magnitude 0.05 against peak 1.0
        let reference = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut trace = reference.clone();
        trace[4] += 0.03;
        trace[5] -= 0.04;
        assert_abs_diff_eq!(
            relative_c_norm(&trace, &reference, 2, 1).unwrap(),
            0.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn synthetic_nested_runs_report_fourth_order() {
        // three nested levels with errors shrinking 16× per level
        let make = |tau: f64, amp: f64, n: usize| -> RunOutput {
            let samples: Vec<f64> = (0..=n)
                .flat_map(|k| {
                    let t = k as f64 * tau;
                    [(6.0 * t).sin() + amp * (40.0 * t).sin(), 0.2 * (5.0 * t).cos()]
                })
                .collect();
            RunOutput {
                tau,
                lambda: 1.0,
                n_steps: n,
                receivers: vec![crate::elastic::ReceiverTrace {
                    active: 0,
                    position: vec![100.0, 0.0],
                    requested: vec![100.0, 0.0],
                    distance: 0.0,
                    samples,
                }],
                energy: Vec::new(),
                final_state: Vec::new(),
                wall_seconds: 0.0,
            }
        };
        let runs = [
            make(0.01, 16e-3, 100),
            make(0.0025, 1e-3, 400),
            make(0.000625, 0.0, 1600),
        ];
        let dims = [vec![11, 6], vec![21, 11], vec![41, 21]];
        let report =
            self_convergence(&dims, &[&runs[0], &runs[1], &runs[2]]).unwrap();
        assert_eq!(report.errors.len(), 2);
        assert_eq!(report.orders.len(), 1);
        let order = report.orders[0][0];
        assert!((order - 4.0).abs() < 0.2, "observed order {order}");

        let bad_dims = [vec![11, 6], vec![20, 11], vec![41, 21]];
        assert!(self_convergence(&bad_dims, &[&runs[0], &runs[1], &runs[2]]).is_err());
    }

    #[test]
    fn peak_picking_respects_the_window() {
        let tau = 0.1;
        let samples: Vec<f64> = (0..=60)
            .flat_map(|k| {
                let t = k as f64 * tau;
                // pulses at t = 2 (larger) and t = 4 (smaller)
                let v = 2.0 * (-(t - 2.0) * (t - 2.0) / 0.02).exp()
                    + (-(t - 4.0) * (t - 4.0) / 0.02).exp();
                [v, 0.0]
            })
            .collect();
        let (t1, m1) = peak_magnitude_time(&samples, 2, tau, (0.0, 6.0)).unwrap();
        assert_abs_diff_eq!(t1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m1, 2.0, epsilon = 1e-9);
        let (t2, _) = peak_magnitude_time(&samples, 2, tau, (3.0, 6.0)).unwrap();
        assert_abs_diff_eq!(t2, 4.0, epsilon = 1e-12);
        assert!(peak_magnitude_time(&samples, 2, tau, (7.0, 8.0)).is_err());
    }

    #[test]
    fn projected_peak_centers_an_elliptically_polarized_pulse() {
        // component 0 carries a symmetric pulse centered at t = 3; component 1
        // carries its quarter-period-shifted partner with a larger amplitude,
        // so the two-component magnitude peaks away from the center while the
        // projection onto component 0 stays put
        let tau = 0.01;
        let om = 2.0 * std::f64::consts::PI; // carrier period 1, envelope width 1
        let samples: Vec<f64> = (0..=600)
            .flat_map(|k| {
                let t = k as f64 * tau - 3.0;
                let env = (-0.5 * t * t).exp();
                [env * (om * t).cos(), 1.4 * env * (om * t).sin()]
            })
            .collect();
        let window = (2.0, 4.0);
        let (t_mag, _) = peak_magnitude_time(&samples, 2, tau, window).unwrap();
        let (t_proj, m_proj) =
            peak_projection_time(&samples, 2, tau, window, &[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(t_proj, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m_proj, 1.0, epsilon = 1e-9);
        assert!(
            (t_mag - 3.0).abs() > 5.0 * tau,
            "magnitude peak at {t_mag} should ride an off-center lobe"
        );
        // projecting onto the partner component lands on a lobe instead
        let (t_n, _) = peak_projection_time(&samples, 2, tau, window, &[0.0, 1.0]).unwrap();
        assert!((t_n - 3.0).abs() > 5.0 * tau);
        assert!(peak_projection_time(&samples, 2, tau, window, &[0.0, 0.0]).is_err());
        assert!(peak_projection_time(&samples, 2, tau, window, &[1.0]).is_err());
        assert!(peak_projection_time(&samples, 2, tau, (9.0, 10.0), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn half_space_driver_places_sources_and_receivers_on_the_surface() {
        // desk-scale smoke at a deliberately tiny size: the driver builds,
        // runs, and records surface receivers without snapping
        let opts = LambOptions {
            nx: 31,
            nz: 21,
            tau: 2e-3,
            t_end: 0.25,
            tilt_deg: 10.0,
            source_arc: 0.0,
            receiver_arc: vec![200.0, 900.0],
            ..LambOptions::default()
        };
        let out = lamb_halfspace(&opts).unwrap();
        assert_eq!(out.n_steps, 125);
        assert_eq!(out.receivers.len(), 2);
        for rec in &out.receivers {
            assert!(rec.distance < 1e-9, "receiver snapped {} m", rec.distance);
            assert!(rec.samples.iter().all(|v| v.is_finite()));
        }
        let (s10, c10) = 10f64.to_radians().sin_cos();
        let r = &out.receivers[0];
        assert_abs_diff_eq!(r.position[0], 200.0 * c10, epsilon = 1e-9);
        assert_abs_diff_eq!(r.position[1], 200.0 * s10, epsilon = 1e-9);
        // by 0.25 s the compressional front has passed the near receiver
        let peak = |rec: &crate::elastic::ReceiverTrace| {
            rec.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        assert!(peak(&out.receivers[0]) > 0.0);
    }

    #[test]
    fn layered_driver_welds_the_interface_and_stays_finite() {
        let opts = TtiOptions {
            nh: 9,
            nv_top: 9,
            nv_bottom: 9,
            workers: 2,
            ..TtiOptions::default()
        };
        let asm = tti_assembly(&opts).unwrap();
        // interface nodes shared once: 9·9·(9+9) minus one welded 9·9 sheet
        assert_eq!(asm.n_active(), 9 * 9 * 17);
        let out = tti_run(&opts, 25, 5).unwrap();
        assert_eq!(out.n_steps, 25);
        assert!(out.final_state.iter().all(|v| v.is_finite()));
        assert!(out.energy.iter().all(|(_, e)| e.is_finite()));
    }
}
