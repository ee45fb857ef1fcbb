//! Spectral Galerkin simulation of a slow-fast stochastic Brinkman/diffusion
//! system and verification of its deterministic averaged limit.
//!
//! The slow variable is a velocity (or scalar concentration) field damped by a
//! friction coefficient that oscillates on a fine spatial scale and depends on
//! a fast Ornstein-Uhlenbeck field relaxing toward the slow variable. As the
//! scale parameter shrinks, the slow field approaches the solution of a
//! deterministic equation whose friction coefficient is averaged over the
//! periodic cell and over the Gaussian stationary law of the fast field.
//!
//! Module map:
//! - [`basis`]: orthonormal Galerkin bases (Dirichlet sine, divergence-free
//!   Fourier), grid quadrature, projection/evaluation.
//! - [`coefficient`]: the separable friction coefficient family, its cell
//!   averages and two-scale convergence tests.
//! - [`fastproc`]: exact-in-law integrator for the fast OU field, invariant
//!   marginals, contraction and moment checks.
//! - [`slowsolver`]: semi-implicit coupled time stepper and energy
//!   diagnostics.
//! - [`averaging`]: averaged coefficients, the averaged equation solver, the
//!   resolvent corrector diagnostic, and the cacheable coefficient table.
//! - [`harness`]: epsilon sweeps, path ensembles, S1/S3 decomposition
//!   diagnostics, validation suites, and report files.
//! - [`config`]: TOML configuration schema and runtime problem assembly.

// Plain index loops read better than zipped iterators in the mode/grid
// arithmetic below.
#![allow(clippy::needless_range_loop)]

pub mod averaging;
pub mod basis;
pub mod coefficient;
pub mod config;
pub mod error;
pub mod fastproc;
pub mod harness;
pub mod io;
pub mod quadrature;
pub mod seed;
pub mod slowsolver;

pub use basis::{build_basis, BasisKind, GalerkinBasis, Grid};
pub use coefficient::{CellFunction, CoeffTerm, CoefficientSpec, FastFunction};
pub use config::FileConfig;
pub use error::{Result, SimError};
pub use fastproc::{FastState, NoiseModel};
pub use harness::{SweepConfig, SweepReport};
pub use slowsolver::{Forcing, Problem, Trajectory};
