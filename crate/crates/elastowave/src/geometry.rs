//! Coordinate mappings x(ξ), analytic metric fields, and block grids.
//!
//! Every mapping in the catalog carries its exact Jacobian, so metric terms
//! are analytic rather than differenced: J = det ∂x/∂ξ and T = (∂x/∂ξ)⁻¹
//! are computed per node by direct small-matrix formulas. This guarantees
//! that two blocks built from the same tangential mapping see identical
//! metric rows on a shared face.
//!
//! Mappings that bend the grid (stretching, topography) expect the
//! reference block to be the unit cube [0,1]^d; affine mappings accept any
//! reference box.

use crate::sbp::OperatorTriplet;
use crate::{Error, Result};

/// Smooth monotone reparameterization of [0,1] that compresses spacing
/// near ξ = 1 (an interface or a surface needing resolution) and expands
/// it toward ξ = 0 (an open boundary). The local spacing multiplier drops
/// smoothly from ≈1 to ≈1/strength across a logistic transition of the
/// given width centered at 1 − 4·width.
#[derive(Clone, Copy, Debug)]
pub struct Stretch1D {
    strength: f64,
    width: f64,
    /// Mirror the profile so compression happens at ξ = 0 instead.
    flipped: bool,
    /// Normalization ∫₀¹ g, precomputed.
    total: f64,
}

impl Stretch1D {
    pub fn new(strength: f64, width: f64) -> Result<Self> {
        if !(strength >= 1.0) || !strength.is_finite() {
            return Err(Error::Geometry(format!(
                "stretch strength must be ≥ 1, got {strength}"
            )));
        }
        if !(width > 0.0 && width < 0.25) {
            return Err(Error::Geometry(format!(
                "stretch width must lie in (0, 0.25), got {width}"
            )));
        }
        let mut s = Stretch1D {
            strength,
            width,
            flipped: false,
            total: 1.0,
        };
        s.total = s.antiderivative(1.0) - s.antiderivative(0.0);
        Ok(s)
    }

    pub fn flipped(mut self) -> Self {
        self.flipped = !self.flipped;
        self
    }

    /// Unnormalized spacing multiplier g(u) = 1 / (1 + (strength−1)·σ(z)),
    /// σ the logistic function, z = (u − c)/width, c = 1 − 4·width.
    fn g(&self, u: f64) -> f64 {
        let k = self.strength - 1.0;
        let z = (u - (1.0 - 4.0 * self.width)) / self.width;
        let sigma = 1.0 / (1.0 + (-z).exp());
        1.0 / (1.0 + k * sigma)
    }

    /// Closed-form ∫ g du (up to a constant): with a = strength and
    /// t = e^(−z), g = (1+t)/(a+t) and ∫ g du = (w/a)·(z − k·ln(t + a)).
    fn antiderivative(&self, u: f64) -> f64 {
        let k = self.strength - 1.0;
        let a = self.strength;
        let w = self.width;
        let z = (u - (1.0 - 4.0 * w)) / w;
        // ln(e^(−z) + a), evaluated without overflow on either tail
        let ln_term = if z >= 0.0 {
            a.ln() + (((-z).exp()) / a).ln_1p()
        } else {
            -z + (a * z.exp()).ln_1p()
        };
        (w / a) * (z - k * ln_term)
    }

    /// The reparameterized coordinate s(ξ) ∈ [0,1].
    pub fn eval(&self, xi: f64) -> f64 {
        if self.flipped {
            return 1.0 - self.eval_unflipped(1.0 - xi);
        }
        self.eval_unflipped(xi)
    }

    fn eval_unflipped(&self, xi: f64) -> f64 {
        (self.antiderivative(xi) - self.antiderivative(0.0)) / self.total
    }

    /// ds/dξ, strictly positive.
    pub fn derivative(&self, xi: f64) -> f64 {
        let u = if self.flipped { 1.0 - xi } else { xi };
        self.g(u) / self.total
    }

    /// Smallest/largest spacing multiplier over [0,1] (sampled): the ratio
    /// min/max approaches 1/strength.
    pub fn spacing_ratio(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for i in 0..=1000 {
            let d = self.derivative(i as f64 / 1000.0);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        lo / hi
    }
}

/// Construct the catalog stretch function: strength 1 is the identity.
pub fn boundary_stretching(strength: f64, width: f64) -> Result<Stretch1D> {
    Stretch1D::new(strength, width)
}

/// One Gaussian hill or valley of a random topography.
#[derive(Clone, Copy, Debug)]
struct Bump {
    center: [f64; 2],
    width: f64,
    amplitude: f64,
}

/// Elevation profile z(x₁[, x₂]): a base level plus Gaussian bumps.
#[derive(Clone, Debug)]
pub struct SurfaceFn {
    base: f64,
    bumps: Vec<Bump>,
    horizontal_dim: usize,
}

impl SurfaceFn {
    pub fn flat(base: f64, horizontal_dim: usize) -> Self {
        SurfaceFn {
            base,
            bumps: Vec::new(),
            horizontal_dim,
        }
    }

    /// The same profile shifted vertically by `delta`.
    pub fn shifted(mut self, delta: f64) -> Self {
        self.base += delta;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut z = self.base;
        for b in &self.bumps {
            let mut r2 = 0.0;
            for k in 0..self.horizontal_dim {
                let d = (x[k] - b.center[k]) / b.width;
                r2 += d * d;
            }
            z += b.amplitude * (-r2).exp();
        }
        z
    }

    /// ∂z/∂x_k for the horizontal components.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for o in out[..self.horizontal_dim].iter_mut() {
            *o = 0.0;
        }
        for b in &self.bumps {
            let mut r2 = 0.0;
            for k in 0..self.horizontal_dim {
                let d = (x[k] - b.center[k]) / b.width;
                r2 += d * d;
            }
            let e = b.amplitude * (-r2).exp();
            for k in 0..self.horizontal_dim {
                out[k] += e * (-2.0 * (x[k] - b.center[k]) / (b.width * b.width));
            }
        }
    }
}

/// SplitMix64: tiny seeded PRNG for reproducible random topography.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random topography: `count` Gaussian hills and valleys with seeded
/// centers, widths, and signs, spread over the given horizontal extent.
pub fn gaussian_topography(
    seed: u64,
    base: f64,
    amplitude: f64,
    count: usize,
    lo: &[f64],
    hi: &[f64],
) -> Result<SurfaceFn> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Geometry(format!(
            "topography amplitude must be ≥ 0, got {amplitude}"
        )));
    }
    let hd = lo.len();
    if hd == 0 || hd > 2 || hi.len() != hd {
        return Err(Error::Geometry(
            "topography takes 1 or 2 horizontal extents".into(),
        ));
    }
    let mut rng = SplitMix64(seed);
    let mut bumps = Vec::with_capacity(count);
    for _ in 0..count {
        let mut center = [0.0; 2];
        let mut span_min = f64::INFINITY;
        for k in 0..hd {
            center[k] = lo[k] + (hi[k] - lo[k]) * rng.next_f64();
            span_min = span_min.min(hi[k] - lo[k]);
        }
        // widths between 8% and 25% of the narrowest extent
        let width = span_min * (0.08 + 0.17 * rng.next_f64());
        let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let amp = amplitude * (0.3 + 0.7 * rng.next_f64()) * sign;
        bumps.push(Bump {
            center,
            width,
            amplitude: amp,
        });
    }
    Ok(SurfaceFn {
        base,
        bumps,
        horizontal_dim: hd,
    })
}

enum MapKind {
    /// x = A ξ + b.
    Affine { a: [[f64; 3]; 3], b: [f64; 3] },
    /// x_k = lo_k + (hi_k − lo_k) · s_k(ξ_k) on the unit cube.
    TensorStretch {
        lo: [f64; 3],
        hi: [f64; 3],
        stretch: [Option<Stretch1D>; 3],
    },
    /// Horizontal axes affine on the unit cube; the vertical (last) axis
    /// blends linearly between two elevation profiles:
    /// x_d = z_bot(x_horiz)·(1 − s(ξ_d)) + z_top(x_horiz)·s(ξ_d).
    Topography {
        lo: [f64; 3],
        hi: [f64; 3],
        bottom: SurfaceFn,
        top: SurfaceFn,
        vertical: Option<Stretch1D>,
    },
}

/// An analytic coordinate mapping ξ → x with its exact Jacobian.
pub struct Mapping {
    dim: usize,
    kind: MapKind,
}

impl Mapping {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Mapping::affine(dim, eye(), [0.0; 3])
    }

    /// x = A ξ + b; A must have positive determinant on its leading
    /// dim×dim block.
    pub fn affine(dim: usize, a: [[f64; 3]; 3], b: [f64; 3]) -> Result<Self> {
        check_dim(dim)?;
        let d = det(&a, dim);
        if !(d > 0.0) {
            return Err(Error::Geometry(format!(
                "affine mapping must be orientation-preserving, det = {d}"
            )));
        }
        Ok(Mapping {
            dim,
            kind: MapKind::Affine { a, b },
        })
    }

    pub fn scaling(dim: usize, factors: &[f64]) -> Result<Self> {
        let mut a = eye();
        for (k, &f) in factors.iter().enumerate().take(dim) {
            a[k][k] = f;
        }
        Mapping::affine(dim, a, [0.0; 3])
    }

    /// x₁ = ξ₁ + α ξ₂, x₂ = ξ₂.
    pub fn shear_2d(alpha: f64) -> Result<Self> {
        let mut a = eye();
        a[0][1] = alpha;
        Mapping::affine(2, a, [0.0; 3])
    }

    /// Axis-aligned box: the unit cube maps onto [lo, hi] per axis.
    pub fn box_map(dim: usize, lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_extents(dim, lo, hi)?;
        let mut a = eye();
        let mut b = [0.0; 3];
        for k in 0..dim {
            a[k][k] = hi[k] - lo[k];
            b[k] = lo[k];
        }
        Mapping::affine(dim, a, b)
    }

    /// A 2D half-plane box rotated so its top face (ξ₂ = 1) becomes a
    /// straight line through the origin inclined at `angle_deg`.
    pub fn oblique_halfplane(angle_deg: f64, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if !(angle_deg.abs() < 45.0) {
            return Err(Error::Geometry(format!(
                "oblique angle must satisfy |angle| < 45°, got {angle_deg}"
            )));
        }
        check_extents(2, lo, hi)?;
        let t = angle_deg.to_radians();
        let (s, c) = t.sin_cos();
        // R · (diag(hi−lo) ξ + lo)
        let w = [hi[0] - lo[0], hi[1] - lo[1]];
        let a = [
            [c * w[0], -s * w[1], 0.0],
            [s * w[0], c * w[1], 0.0],
            [0.0, 0.0, 1.0],
        ];
        let b = [c * lo[0] - s * lo[1], s * lo[0] + c * lo[1], 0.0];
        Mapping::affine(2, a, b)
    }

    /// Tensor-product map of the unit cube onto [lo, hi] with optional
    /// per-axis stretch functions.
    pub fn stretched_box(
        dim: usize,
        lo: &[f64],
        hi: &[f64],
        stretch: [Option<Stretch1D>; 3],
    ) -> Result<Self> {
        check_extents(dim, lo, hi)?;
        let mut l = [0.0; 3];
        let mut h = [1.0; 3];
        for k in 0..dim {
            l[k] = lo[k];
            h[k] = hi[k];
        }
        Ok(Mapping {
            dim,
            kind: MapKind::TensorStretch {
                lo: l,
                hi: h,
                stretch,
            },
        })
    }

    /// Unit-cube block whose top face follows the surface profile and whose
    /// bottom face is flat at `bottom`; the deformation decays to zero at
    /// the bottom. Horizontal axes map onto [lo, hi]. The surface must stay
    /// strictly above `bottom` (validated when metrics are computed).
    pub fn topography(
        dim: usize,
        lo: &[f64],
        hi: &[f64],
        bottom: f64,
        surface: SurfaceFn,
        vertical: Option<Stretch1D>,
    ) -> Result<Self> {
        let flat = SurfaceFn::flat(bottom, dim.max(1) - 1);
        Mapping::layer(dim, lo, hi, flat, surface, vertical)
    }

    /// Unit-cube block sandwiched between two elevation profiles: the bottom
    /// face follows `bottom`, the top face follows `top`, and the vertical
    /// coordinate blends linearly (optionally through a stretch) between
    /// them. Horizontal axes map onto [lo, hi]. The profiles must not touch
    /// or cross (validated when metrics are computed).
    pub fn layer(
        dim: usize,
        lo: &[f64],
        hi: &[f64],
        bottom: SurfaceFn,
        top: SurfaceFn,
        vertical: Option<Stretch1D>,
    ) -> Result<Self> {
        check_dim(dim)?;
        if dim < 2 {
            return Err(Error::Geometry("a surface layer needs dim ≥ 2".into()));
        }
        for (s, which) in [(&bottom, "bottom"), (&top, "top")] {
            if s.horizontal_dim != dim - 1 {
                return Err(Error::Geometry(format!(
                    "{which} surface has {} horizontal coordinates, mapping needs {}",
                    s.horizontal_dim,
                    dim - 1
                )));
            }
        }
        check_extents(dim - 1, lo, hi)?;
        let mut l = [0.0; 3];
        let mut h = [1.0; 3];
        for k in 0..dim - 1 {
            l[k] = lo[k];
            h[k] = hi[k];
        }
        Ok(Mapping {
            dim,
            kind: MapKind::Topography {
                lo: l,
                hi: h,
                bottom,
                top,
                vertical,
            },
        })
    }

    /// Forward map; unused components of `xi` are ignored and unused
    /// components of the result are zero.
    pub fn map(&self, xi: &[f64; 3]) -> [f64; 3] {
        let d = self.dim;
        let mut x = [0.0; 3];
        match &self.kind {
            MapKind::Affine { a, b } => {
                for i in 0..d {
                    let mut acc = b[i];
                    for j in 0..d {
                        acc += a[i][j] * xi[j];
                    }
                    x[i] = acc;
                }
            }
            MapKind::TensorStretch { lo, hi, stretch } => {
                for k in 0..d {
                    let s = match &stretch[k] {
                        Some(f) => f.eval(xi[k]),
                        None => xi[k],
                    };
                    x[k] = lo[k] + (hi[k] - lo[k]) * s;
                }
            }
            MapKind::Topography {
                lo,
                hi,
                bottom,
                top,
                vertical,
            } => {
                for k in 0..d - 1 {
                    x[k] = lo[k] + (hi[k] - lo[k]) * xi[k];
                }
                let s = match vertical {
                    Some(f) => f.eval(xi[d - 1]),
                    None => xi[d - 1],
                };
                let zb = bottom.eval(&x[..d - 1]);
                let zt = top.eval(&x[..d - 1]);
                x[d - 1] = zb * (1.0 - s) + zt * s;
            }
        }
        x
    }

    /// Analytic Jacobian ∂x/∂ξ (row i, column j), leading dim×dim block.
    pub fn jacobian(&self, xi: &[f64; 3]) -> [[f64; 3]; 3] {
        let d = self.dim;
        let mut jac = eye();
        match &self.kind {
            MapKind::Affine { a, .. } => {
                for i in 0..d {
                    for j in 0..d {
                        jac[i][j] = a[i][j];
                    }
                }
            }
            MapKind::TensorStretch { lo, hi, stretch } => {
                for k in 0..d {
                    let ds = match &stretch[k] {
                        Some(f) => f.derivative(xi[k]),
                        None => 1.0,
                    };
                    jac[k][k] = (hi[k] - lo[k]) * ds;
                }
            }
            MapKind::Topography {
                lo,
                hi,
                bottom,
                top,
                vertical,
            } => {
                let mut x = [0.0; 3];
                for k in 0..d - 1 {
                    x[k] = lo[k] + (hi[k] - lo[k]) * xi[k];
                    jac[k][k] = hi[k] - lo[k];
                    for j in 0..d {
                        if j != k {
                            jac[k][j] = 0.0;
                        }
                    }
                }
                let (s, ds) = match vertical {
                    Some(f) => (f.eval(xi[d - 1]), f.derivative(xi[d - 1])),
                    None => (xi[d - 1], 1.0),
                };
                let zb = bottom.eval(&x[..d - 1]);
                let zt = top.eval(&x[..d - 1]);
                let mut gb = [0.0; 2];
                let mut gt = [0.0; 2];
                bottom.gradient(&x[..d - 1], &mut gb);
                top.gradient(&x[..d - 1], &mut gt);
                for k in 0..d - 1 {
                    // ∂x_d/∂ξ_k = [(1−s)·∂z_bot/∂x_k + s·∂z_top/∂x_k]·∂x_k/∂ξ_k
                    jac[d - 1][k] = ((1.0 - s) * gb[k] + s * gt[k]) * (hi[k] - lo[k]);
                }
                jac[d - 1][d - 1] = (zt - zb) * ds;
            }
        }
        jac
    }
}

fn eye() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Geometry(format!("dimension must be 1..=3, got {dim}")));
    }
    Ok(())
}

fn check_extents(dim: usize, lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() < dim || hi.len() < dim {
        return Err(Error::Geometry(format!(
            "need {dim} extents, got {} and {}",
            lo.len(),
            hi.len()
        )));
    }
    for k in 0..dim {
        if !(hi[k] > lo[k]) {
            return Err(Error::Geometry(format!(
                "axis {k}: extent [{}, {}] is empty",
                lo[k], hi[k]
            )));
        }
    }
    Ok(())
}

fn det(a: &[[f64; 3]; 3], dim: usize) -> f64 {
    match dim {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
    }
}

fn invert(a: &[[f64; 3]; 3], dim: usize, d: f64) -> [[f64; 3]; 3] {
    let mut t = eye();
    match dim {
        1 => t[0][0] = 1.0 / d,
        2 => {
            t[0][0] = a[1][1] / d;
            t[0][1] = -a[0][1] / d;
            t[1][0] = -a[1][0] / d;
            t[1][1] = a[0][0] / d;
        }
        _ => {
            t[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / d;
            t[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / d;
            t[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / d;
            t[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / d;
            t[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / d;
            t[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / d;
            t[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / d;
            t[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / d;
            t[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / d;
        }
    }
    t
}

/// A structured grid for one block: per-axis operators, reference (ξ) node
/// coordinates, and physical (x) node coordinates. Nodes are stored with
/// axis 1 fastest: index = i₁ + N₁·(i₂ + N₂·i₃).
pub struct BlockGrid {
    pub dims: Vec<usize>,
    pub triplets: Vec<OperatorTriplet>,
    /// Per-axis reference coordinates (= the triplet node sets).
    pub xi_axes: Vec<Vec<f64>>,
    /// Physical coordinates, d values per node.
    pub x_nodes: Vec<f64>,
    dim: usize,
}

impl BlockGrid {
    /// Build a grid from per-axis operator triplets and a mapping; the
    /// triplets' node ranges define the reference block.
    pub fn new(triplets: Vec<OperatorTriplet>, mapping: &Mapping) -> Result<Self> {
        let dim = triplets.len();
        if dim != mapping.dim() {
            return Err(Error::Geometry(format!(
                "{dim} axis triplets for a {}-dimensional mapping",
                mapping.dim()
            )));
        }
        check_dim(dim)?;
        let dims: Vec<usize> = triplets.iter().map(|t| t.n_nodes()).collect();
        let xi_axes: Vec<Vec<f64>> = triplets.iter().map(|t| t.nodes.clone()).collect();
        let n: usize = dims.iter().product();
        let mut x_nodes = vec![0.0; n * dim];
        let mut idx = [0usize; 3];
        for flat in 0..n {
            split_index(flat, &dims, &mut idx);
            let mut xi = [0.0; 3];
            for k in 0..dim {
                xi[k] = xi_axes[k][idx[k]];
            }
            let x = mapping.map(&xi);
            x_nodes[flat * dim..flat * dim + dim].copy_from_slice(&x[..dim]);
        }
        Ok(BlockGrid {
            dims,
            triplets,
            xi_axes,
            x_nodes,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn x_of(&self, flat: usize) -> &[f64] {
        &self.x_nodes[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for k in (0..self.dim).rev() {
            flat = flat * self.dims[k] + idx[k];
        }
        flat
    }
}

/// Decompose a flat node index into per-axis indices (axis 1 fastest).
pub fn split_index(flat: usize, dims: &[usize], out: &mut [usize; 3]) {
    let mut rest = flat;
    for (k, &n) in dims.iter().enumerate() {
        out[k] = rest % n;
        rest /= n;
    }
    for k in dims.len()..3 {
        out[k] = 0;
    }
}

/// Per-node metric data of a mapped block.
pub struct MetricField {
    pub dim: usize,
    /// J = det ∂x/∂ξ per node, strictly positive.
    pub j: Vec<f64>,
    /// T_kj = ∂ξ_k/∂x_j, d×d per node, row-major.
    pub t: Vec<f64>,
    /// Euclidean norm of row k of T per node (unsigned; face signs are
    /// applied by `face_sign`).
    pub row_norm: Vec<f64>,
}

impl MetricField {
    pub fn t_at(&self, node: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.t[node * d2..(node + 1) * d2]
    }

    /// Sign of T_(k) on a face: −1 on the ξ_k-min face, +1 on the max face.
    pub fn face_sign(side_max: bool) -> f64 {
        if side_max {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed T_(k) at a node of the given face.
    pub fn face_t(&self, node: usize, axis: usize, side_max: bool) -> f64 {
        Self::face_sign(side_max) * self.row_norm[node * self.dim + axis]
    }

    /// Outward unit normal ν_j = T_kj / T_(k) at a face node.
    pub fn outward_normal(&self, node: usize, axis: usize, side_max: bool, out: &mut [f64]) {
        let d = self.dim;
        let t = self.t_at(node);
        let denom = self.face_t(node, axis, side_max);
        for j in 0..d {
            out[j] = t[axis * d + j] / denom;
        }
    }
}

/// Evaluate J and T per node from the mapping's analytic Jacobian.
pub fn metrics(mapping: &Mapping, grid: &BlockGrid) -> Result<MetricField> {
    let dim = grid.dim();
    if dim != mapping.dim() {
        return Err(Error::Geometry(format!(
            "mapping is {}-dimensional, grid is {dim}-dimensional",
            mapping.dim()
        )));
    }
    let n = grid.n_nodes();
    let mut j = vec![0.0; n];
    let mut t = vec![0.0; n * dim * dim];
    let mut row_norm = vec![0.0; n * dim];
    let mut idx = [0usize; 3];
    for flat in 0..n {
        split_index(flat, &grid.dims, &mut idx);
        let mut xi = [0.0; 3];
        for k in 0..dim {
            xi[k] = grid.xi_axes[k][idx[k]];
        }
        let a = mapping.jacobian(&xi);
        let d = det(&a, dim);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Geometry(format!(
                "degenerate mapping: det ∂x/∂ξ = {d} at node {flat} (ξ = {:?})",
                &xi[..dim]
            )));
        }
        j[flat] = d;
        let inv = invert(&a, dim, d);
        for r in 0..dim {
            let mut nrm = 0.0;
            for c in 0..dim {
                let v = inv[r][c];
                t[flat * dim * dim + r * dim + c] = v;
                nrm += v * v;
            }
            row_norm[flat * dim + r] = nrm.sqrt();
        }
    }
    Ok(MetricField {
        dim,
        j,
        t,
        row_norm,
    })
}
