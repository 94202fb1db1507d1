//! Random walk fragmentation of the discrete torus and its comparison with
//! random interlacements.
//!
//! The crate samples walk traces on `(Z/NZ)^d` and interlacement traces in
//! boxes of `Z^d`, computes capacities, equilibrium measures and
//! quasistationary distributions, labels vacant components, and runs the
//! statistical experiments that tie these together.

// Guards like `!(x >= 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod components;
pub mod error;
pub mod experiments;
pub mod interlace;
pub mod lattice;
pub mod potential;
pub mod quasistat;
pub mod rng;
pub mod rw;
pub mod voxel;

pub use error::{Error, Result};
pub use lattice::{SiteSet, TorusGeom, ZdBox, ZdPoint, ZdSet};
pub use rw::{VisitedMask, WalkConfig};
