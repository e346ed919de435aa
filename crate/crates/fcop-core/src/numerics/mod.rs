//! Scalar and matrix numerics: normal functions, adaptive quadrature,
//! monotone-CDF inversion, SPD linear algebra and monotone interpolation.
//!
//! Everything here is pure and reentrant; the types are immutable after
//! construction and safe to share across threads.

pub mod interp;
pub mod linalg;
pub mod math;
pub mod normal;
pub mod quad;
pub mod roots;

pub use interp::Pchip;
pub use linalg::{Matrix, SpdMatrix};
pub use quad::{integrate, QuadratureConfig, Support};
pub use roots::{invert_monotone_cdf, invert_monotone_cdf_with_pdf};
