//! Sum-of-squares certificate machinery and the conic solver adapter.

pub mod basis;
pub mod lift;
pub mod sdp;
pub mod solve;

pub use solve::{
    assemble_certificate_problem, certificate_residual, solve_min_volume_ellipsoid,
    Certificate, EllipsoidBound, SosAssembly,
};
