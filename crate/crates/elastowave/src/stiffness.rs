//! Elastic stiffness in Voigt form: isotropic and tilted transversely
//! isotropic (Thomsen-parameterized) constructors, exact Voigt ↔ rank-4
//! tensor conversion, rotation, and the plane-strain restriction.
//!
//! Conventions: Voigt component order (11, 22, 33, 23, 13, 12) in 3D and
//! (11, 22, 12) in 2D; engineering shear strain, so stress is σ_I = C̃_IJ ε̃_J
//! with C̃ entries equal to the plain tensor components C_ijkl.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Voigt index pairs in storage order, 3D.
pub const VOIGT_3D: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
/// Voigt index pairs in storage order, 2D (plane strain).
pub const VOIGT_2D: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

/// Voigt index of the (i, j) component pair.
fn voigt_index(dim: usize, i: usize, j: usize) -> usize {
    let table: &[(usize, usize)] = if dim == 3 { &VOIGT_3D } else { &VOIGT_2D };
    table
        .iter()
        .position(|&(a, b)| (a, b) == (i, j) || (b, a) == (i, j))
        .expect("valid component pair")
}

/// A symmetric stiffness matrix in Voigt notation (6×6 in 3D, 3×3 in 2D).
#[derive(Clone, Debug, PartialEq)]
pub struct VoigtMatrix {
    dim: usize,
    /// Row-major m×m entries, m = dim·(dim+1)/2.
    c: Vec<f64>,
}

impl VoigtMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Voigt matrix side length: 6 in 3D, 3 in 2D.
    pub fn m(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.c[r * self.m() + c]
    }

    pub fn entries(&self) -> &[f64] {
        &self.c
    }

    /// Build from explicit Voigt entries; must be symmetric.
    pub fn from_entries(dim: usize, c: Vec<f64>) -> Result<Self> {
        let m = dim * (dim + 1) / 2;
        if !(dim == 2 || dim == 3) || c.len() != m * m {
            return Err(Error::Material(format!(
                "Voigt matrix needs {m}×{m} entries for dim {dim}"
            )));
        }
        for r in 0..m {
            for s in r + 1..m {
                let d = (c[r * m + s] - c[s * m + r]).abs();
                let scale = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                if d > 1e-12 * scale.max(1.0) {
                    return Err(Error::Material(format!(
                        "Voigt matrix not symmetric at ({r},{s}): {} vs {}",
                        c[r * m + s],
                        c[s * m + r]
                    )));
                }
            }
        }
        Ok(VoigtMatrix { dim, c })
    }

    /// Full rank-4 tensor component C_ijkl.
    pub fn tensor(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.entry(voigt_index(self.dim, i, j), voigt_index(self.dim, k, l))
    }

    /// Rebuild a Voigt matrix from a full-tensor component function; the
    /// conversion is the exact inverse of [`VoigtMatrix::tensor`].
    pub fn from_tensor(dim: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let table: &[(usize, usize)] = if dim == 3 { &VOIGT_3D } else { &VOIGT_2D };
        let m = table.len();
        let mut c = vec![0.0; m * m];
        for (r, &(i, j)) in table.iter().enumerate() {
            for (s, &(k, l)) in table.iter().enumerate() {
                c[r * m + s] = f(i, j, k, l);
            }
        }
        // symmetrize away rounding from the component function so that the
        // stored matrix is exactly symmetric
        let scale = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for r in 0..m {
            for s in r + 1..m {
                let (a, b) = (c[r * m + s], c[s * m + r]);
                if (a - b).abs() > 1e-10 * scale.max(1.0) {
                    return Err(Error::Material(format!(
                        "tensor components break major symmetry at ({r},{s}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                c[r * m + s] = avg;
                c[s * m + r] = avg;
            }
        }
        VoigtMatrix::from_entries(dim, c)
    }

    /// Smallest eigenvalue of the Voigt matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.m();
        let mat = DMatrix::from_fn(m, m, |r, c| self.entry(r, c));
        mat.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Rotate the stiffness: C'_ijkl = R_ia R_jb R_kc R_ld C_abcd (3D).
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Result<VoigtMatrix> {
        if self.dim != 3 {
            return Err(Error::Material("rotation applies to 3D stiffness".into()));
        }
        VoigtMatrix::from_tensor(3, |i, j, k, l| {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            acc += r[i][a] * r[j][b] * r[k][c] * r[l][d] * self.tensor(a, b, c, d);
                        }
                    }
                }
            }
            acc
        })
    }

    /// Plane-strain restriction of a 3D stiffness to the (x₁, x₂) plane.
    pub fn plane_strain(&self) -> Result<VoigtMatrix> {
        if self.dim != 3 {
            return Err(Error::Material(
                "plane-strain restriction applies to 3D stiffness".into(),
            ));
        }
        VoigtMatrix::from_tensor(2, |i, j, k, l| self.tensor(i, j, k, l))
    }

    /// The 9×9 matrix M[(3i+j),(3k+l)] = C_ijkl of the full-tensor
    /// quadratic form (diagnostics: its spectrum is rotation-invariant).
    pub fn full_tensor_form(&self) -> DMatrix<f64> {
        assert_eq!(self.dim, 3);
        DMatrix::from_fn(9, 9, |rc, cc| {
            self.tensor(rc / 3, rc % 3, cc / 3, cc % 3)
        })
    }
}

fn check_pd(c: VoigtMatrix, what: &str) -> Result<VoigtMatrix> {
    let min = c.min_eigenvalue();
    if !(min > 0.0) {
        return Err(Error::Material(format!(
            "{what} stiffness is not positive definite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(c)
}

/// Isotropic stiffness from wave speeds and density:
/// λ = ρ(vp² − 2vs²), μ = ρvs². Accepted exactly when the resulting Voigt
/// matrix is positive definite (μ > 0 and 3λ + 2μ > 0); λ may be negative.
pub fn isotropic_stiffness(dim: usize, vp: f64, vs: f64, rho: f64) -> Result<VoigtMatrix> {
    if !(vp > 0.0 && vs > 0.0 && rho > 0.0) {
        return Err(Error::Material(format!(
            "wave speeds and density must be positive: vp={vp}, vs={vs}, rho={rho}"
        )));
    }
    if !(dim == 2 || dim == 3) {
        return Err(Error::Material(format!("stiffness dim must be 2 or 3, got {dim}")));
    }
    let mu = rho * vs * vs;
    let lambda = rho * (vp * vp - 2.0 * vs * vs);
    let c3 = VoigtMatrix::from_tensor(3, |i, j, k, l| {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
    })?;
    let c = if dim == 2 { c3.plane_strain()? } else { c3 };
    check_pd(c, "isotropic")
}

/// Lamé parameters (λ, μ) from speeds and density.
pub fn lame_parameters(vp: f64, vs: f64, rho: f64) -> (f64, f64) {
    (rho * (vp * vp - 2.0 * vs * vs), rho * vs * vs)
}

/// Rotation R_z(azimuth)·R_y(tilt): tilts the symmetry axis away from x₃
/// by `tilt` (about x₂), then rotates it by `azimuth` about x₃. Angles in
/// degrees.
pub fn rotation_zy(tilt_deg: f64, azimuth_deg: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = tilt_deg.to_radians().sin_cos();
    let (sb, cb) = azimuth_deg.to_radians().sin_cos();
    // R_z(β) · R_y(α)
    [
        [cb * ca, -sb, cb * sa],
        [sb * ca, cb, sb * sa],
        [-sa, 0.0, ca],
    ]
}

/// Tilted transversely isotropic stiffness from vertical speeds, density,
/// Thomsen parameters, and the symmetry-axis orientation. The VTI matrix
/// uses C₃₃ = ρvp², C₄₄ = ρvs², C₁₁ = C₃₃(1+2ε), C₆₆ = C₄₄(1+2γ), and the
/// exact C₁₃ = −C₄₄ + √((C₃₃−C₄₄)(C₃₃−C₄₄+2δC₃₃)); the result is then
/// rotated and must stay positive definite.
#[allow(clippy::too_many_arguments)]
pub fn tti_stiffness(
    vp: f64,
    vs: f64,
    rho: f64,
    epsilon: f64,
    gamma: f64,
    delta: f64,
    tilt_deg: f64,
    azimuth_deg: f64,
) -> Result<VoigtMatrix> {
    if !(vp > 0.0 && vs > 0.0 && rho > 0.0) {
        return Err(Error::Material(format!(
            "wave speeds and density must be positive: vp={vp}, vs={vs}, rho={rho}"
        )));
    }
    let c33 = rho * vp * vp;
    let c44 = rho * vs * vs;
    let c11 = c33 * (1.0 + 2.0 * epsilon);
    let c66 = c44 * (1.0 + 2.0 * gamma);
    let radicand = (c33 - c44) * (c33 - c44 + 2.0 * delta * c33);
    if radicand < 0.0 {
        return Err(Error::Material(format!(
            "Thomsen δ = {delta} makes C₁₃ complex (radicand {radicand:.3e})"
        )));
    }
    let c13 = -c44 + radicand.sqrt();
    let c12 = c11 - 2.0 * c66;
    let mut c = vec![0.0; 36];
    let set = |c: &mut Vec<f64>, r: usize, s: usize, v: f64| {
        c[r * 6 + s] = v;
        c[s * 6 + r] = v;
    };
    set(&mut c, 0, 0, c11);
    set(&mut c, 1, 1, c11);
    set(&mut c, 2, 2, c33);
    set(&mut c, 3, 3, c44);
    set(&mut c, 4, 4, c44);
    set(&mut c, 5, 5, c66);
    set(&mut c, 0, 1, c12);
    set(&mut c, 0, 2, c13);
    set(&mut c, 1, 2, c13);
    let vti = check_pd(VoigtMatrix::from_entries(3, c)?, "transversely isotropic")?;
    let rotated = vti.rotated(&rotation_zy(tilt_deg, azimuth_deg))?;
    check_pd(rotated, "tilted transversely isotropic")
}
