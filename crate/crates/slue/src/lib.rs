//! Ellipsoidal pose uncertainty bounds from high-probability keypoint
//! noise sets, via a sum-of-squares relaxation of the lossy S-lemma.

pub mod conformal;
pub mod constraints;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod pnp;
pub mod projection;
pub mod slue;
pub mod sos;

pub use error::{Result, SlueError};
