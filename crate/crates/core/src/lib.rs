//! Variable-step L1 finite-difference solver for the time-fractional
//! Swift-Hohenberg equation
//!
//! ```text
//! D_t^alpha u = -mu,   mu = (1 + Lap)^2 u + u^3 - g u^2 - eps u
//! ```
//!
//! on a doubly periodic square, with a Caputo derivative of order
//! `alpha in (0, 1)` discretized by the L1 formula on nonuniform meshes.
//!
//! Modules:
//!
//! - [`kernels`]: L1 and complementary (DCC) convolution kernels, and the
//!   sum-of-exponentials history accelerator in [`kernels::soe`].
//! - [`mesh`]: graded, two-part random and adaptive time meshes; the step
//!   bound that guarantees solvability and energy decay.
//! - [`grid`]: periodic grid functions, the five-point Laplacian, norms and
//!   the Fourier solver for the implicit linear operator.
//! - [`nonlinear`]: fixed-point solve of the implicit step.
//! - [`stepper`]: the time loop with original and modified energies.
//! - [`mms`]: manufactured-solution convergence studies.
//! - [`cli`]: configuration parsing and the subcommands behind the `tfsh`
//!   binary.
//!
//! See the crate `examples/` directory for one runnable program per
//! capability.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod mesh;
pub mod mms;
pub mod nonlinear;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{Field2D, Grid2D, SpectralSolver};
pub use kernels::{caputo_apply, dcc_row, l1_row, omega, DccKernelRow, L1KernelRow};
pub use mesh::TimeMesh;
pub use nonlinear::NonlinearParams;
pub use stepper::{run, EnergyRecord, Simulation, SolverState};
