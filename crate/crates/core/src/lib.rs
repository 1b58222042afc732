//! Rank-based interacting diffusions on the line.
//!
//! * [`coefficients`]: coefficient families, rank assignment and the system
//!   drift and diffusion.
//! * [`transform`]: the distortion map that removes the drift discontinuity
//!   of a two-particle system along the diagonal.
//! * [`scheme`]: naive and transformed Euler-Maruyama, with a counter-based
//!   Brownian stream.
//! * [`analysis`]: ensembles, strong convergence order and gap statistics.
//! * [`certify`]: numerical checks of a distortion map.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod certify;
pub mod coefficients;
pub mod error;
pub mod roots;
pub mod scheme;
pub mod transform;

pub use coefficients::{CoefficientFamily, FamilyKind, FamilySpec, RankAssignment, Role, SystemSpec, Variant};
pub use error::{Error, Result};
pub use scheme::{SchemeKind, SimConfig, Simulator, Status, Trajectory};
pub use transform::{Distortion, PlanarSpec, TransformParams};
