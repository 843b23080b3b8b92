//! Cut-cell agglomeration for extended discontinuous Galerkin discretizations.
//!
//! Level-set geometries are embedded in uniform Cartesian grids, the cut
//! cells are classified by volume fraction, and small or topologically
//! changing phase cells are merged into neighbors through a per-species
//! agglomeration forest. The forest is built on a set of logical ranks that
//! only exchange halo information, mirroring a distributed-memory run, and
//! then turned into an injection operator whose effect on mass-matrix
//! conditioning can be measured.

pub mod aggmap;
pub mod algebra;
pub mod cli;
pub mod cutcell;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod parallel;

pub use error::{Error, Result};
