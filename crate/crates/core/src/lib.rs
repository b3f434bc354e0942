//! Critical nearest-neighbour branching random walks on `Z^d`: exact field
//! recursions, occupancy-level Monte Carlo, size-biased and conditioned
//! constructions, and the statistics used to check occupation limit theorems.

pub mod conditioned;
pub mod error;
pub mod lattice;
pub mod offspring;
pub mod fields;
pub mod forward;
pub mod parallel;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod suites;

pub use error::{BrwError, Result};
pub use lattice::{ClampPolicy, Field, Site};
pub use offspring::OffspringDist;
