//! Multiblock curvilinear summation-by-parts (SBP) finite differences for
//! time-domain wave propagation.
//!
//! The crate is organized around a small set of building blocks:
//!
//! * [`sbp`] — first-derivative operator triplets `(D⁺, D⁻, H)` satisfying the
//!   summation-by-parts identity `H D⁺ + (D⁻)ᵀ H = Q`, in three flavors:
//!   dual shifted stencils on uniform grids (suppress the saw-tooth mode of
//!   odd/even decoupling), classical symmetric-pair stencils, and
//!   Gauss–Lobatto–Legendre collocation blocks.
//! * [`timestep`] — the explicit central/leapfrog integrator for
//!   `G ü + B u̇ + A u = f` with diagonal `G`, nonnegative damping `B` and
//!   symmetric positive semidefinite `A`, plus spectral estimation for the
//!   stability limit and the discrete energy.
//! * [`wave1d`] — the variable-coefficient scalar wave equation on a 1D grid
//!   with Dirichlet, Robin and non-reflecting ends and two-block coupling.
//! * [`geometry`] — analytic curvilinear mappings (affine, rotated, stretched,
//!   topography between surfaces) with exact Jacobians and metric fields.
//! * [`stiffness`] — Voigt-form elastic stiffness: isotropic, tilted
//!   transversely isotropic via Thomsen parameters, and Bond rotations.
//! * [`elastic`] — the multiblock anisotropic elastic (Navier) wave solver on
//!   curvilinear blocks, including spectral-element assemblies of GLL cells.
//! * [`verify`] — materialization, manufactured solutions, Rayleigh speed,
//!   convergence-order measurement and the desk-scale experiment drivers.
//! * [`config`] / [`io`] — the sectioned key-value configuration format, trace
//!   and snapshot files, and run manifests.

pub mod config;
pub mod elastic;
pub mod geometry;
pub mod io;
pub mod sbp;
pub mod stiffness;
pub mod timestep;
pub mod verify;
pub mod wave1d;
pub mod wavelet;

/// Crate-wide error type. Construction errors report *all* offending items
/// where feasible (e.g. config parsing) rather than stopping at the first.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("operator construction: {0}")]
    Operator(String),
    #[error("time stepping: {0}")]
    Stepping(String),
    #[error("problem assembly: {0}")]
    Assembly(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("material model: {0}")]
    Material(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("verification: {0}")]
    Verify(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Number of worker threads requested via `ELASTOWAVE_THREADS` (default 1).
///
/// Returns an error for zero or unparsable values rather than guessing.
pub fn requested_threads() -> Result<usize> {
    match std::env::var("ELASTOWAVE_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(Error::Config(format!("ELASTOWAVE_THREADS: {e}"))),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "ELASTOWAVE_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}
