//! Numerical laboratory for directed polymers in random environments.
//!
//! The crate computes exact transfer-matrix partition functions, replica and
//! overlap quantities, Monte Carlo free-energy estimators, and the
//! coarse-graining / change-of-measure statistics used to study the gap
//! between quenched and annealed free energies in two spatial dimensions.
//! Every dynamic-programming computation is paired with a brute-force oracle
//! at desk scale (see [`oracle`]).
//!
//! Numeric code is generic over the scalar type (see [`scalar::Scalar`]);
//! the type aliases at the crate root fix the common `f64` instantiations.

pub mod coarse;
pub mod disorder;
pub mod error;
pub mod kernel;
pub mod lattice;
pub mod montecarlo;
pub mod oracle;
pub mod partition;
pub mod replica;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CumulantsF64 = disorder::Cumulants<f64>;
pub type KernelTableF64 = kernel::KernelTable<f64>;
pub type KernelTableF32 = kernel::KernelTable<f32>;
pub type PolymerSliceF64 = partition::PolymerSlice<f64>;
pub type MarginalsF64 = partition::Marginals<f64>;
pub type DifferenceWalkF64 = replica::DifferenceWalk<f64>;
pub type XEvaluatorF64 = coarse::XEvaluator<f64>;
