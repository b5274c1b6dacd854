//! Sampling conditional products of discrete log-concave measures under a
//! fixed particle number.
//!
//! The flagship model is the canonical Fermi statistics: `k` particles
//! among `m` energy levels with degeneracies `n_j` and energies `v_j`.
//! More generally any product of log-concave site weights conditioned on
//! `k_1 + ... + k_m = k` is supported. The crate provides
//!
//! - [`measures`]: potentials, the concavity parameter `delta`, model construction;
//! - [`kernel`]: the Metropolis-type conservative kernel, plain and skip-ahead steppers;
//! - [`exact`]: enumeration oracle, exact `d(t)` and mixing times;
//! - [`coupling`]: the colored and interval-splitting couplings;
//! - [`analysis`]: naive sampler, most probable configuration, rejection ratio;
//! - [`simulate`]: ensemble estimation of mixing curves and temperature sweeps.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the tolerances in the test-suite assume.

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod exact;
pub mod kernel;
pub mod measures;
pub mod model_file;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod sumtree;

pub use error::{Error, Result};
pub use kernel::Configuration;
pub use measures::{build_custom, build_custom_raw, build_fermi, dualize, ExtReal, FermiSpec};
pub use scalar::Real;

pub type Model = measures::ModelSpec<f64>;
pub type Model32 = measures::ModelSpec<f32>;
pub type ChainState = kernel::ChainState<f64>;
pub type ExactDist = exact::ExactDist<f64>;
pub type KernelMatrix = exact::KernelMatrix<f64>;
pub type ColoredPair = coupling::ColoredPair;
pub type DeltaPair = coupling::DeltaPair;
pub type SimPlan = simulate::SimPlan<f64>;
