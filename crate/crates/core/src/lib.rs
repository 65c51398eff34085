//! Construction and numerical verification of smooth extensions of compact manifolds with
//! strictly convex boundary to complete manifolds whose ends have constant negative curvature.
//!
//! The crate is organised bottom-up:
//!
//! * [`profiles`]: scalar building blocks (exponential warp, smooth step, mollifier, gluing).
//! * [`metrics`]: product metrics `dt² + g_t` and the piecewise and smoothed extension metrics.
//! * [`curvature`]: closed-form curvatures, a finite-difference oracle and band certificates.
//! * [`dynamics`]: geodesics, Jacobi fields, Riccati quantities and the sampled scans.
//! * [`extension`]: the parameter ledger, threshold searches and the end-to-end pipeline.
//! * [`lens`]: boundary scattering data of the compact core.

// `!(x > 0.0)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod dynamics;
pub mod error;
pub mod extension;
pub mod lens;
pub mod metrics;
pub mod profiles;
pub mod quadrature;

pub use error::{Error, Result};
pub use profiles::{Interval, Jet, ScalarProfile};
