//! Numerics for the synchronous sign-Langevin spin chain on a ring: exact and
//! sampled two-point kernels, the matrices representing the carre du champ
//! operator and its iterate, Bakry-Emery curvature, and Monte-Carlo checks of
//! the local Poincare inequality.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod acceptance;
pub mod curvature;
pub mod dynamics;
pub mod error;
pub mod gamma;
pub mod kernels;
pub mod mat4;
pub mod noise;
pub mod oracle;
pub mod verifier;
pub mod window;

pub use error::{Error, Result};
