//! Hardware-free testbed for parallel VQE on the compressed two-site
//! Hubbard model.
//!
//! Two-qubit circuits are simulated with density matrices and tiled across
//! the disjoint qubit pairs of a modeled device. On top of that sit the two
//! optimizers (SPSA, model gradient descent), readout noise inversion and
//! TFLO error mitigation, and an affine wall-clock cost model used to
//! quantify the speedup from running pairs in parallel.

pub mod circuit;
pub mod device;
pub mod error;
pub mod executor;
pub mod harness;
pub mod hubbard;
pub mod linalg;
pub mod matching;
pub mod mitigation;
pub mod optimizers;
pub mod plot;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
