//! Numerical laboratory for horospherical averages on convex cocompact
//! hyperbolic quotients.
//!
//! The crate is layered bottom-up:
//!
//! * [`lorentz`] — the matrix group, its distinguished subgroups and the
//!   P·U factorization;
//! * [`boundary`] — points, boundary points, frames, Busemann/visual
//!   geometry and the horospherical chart;
//! * [`schottky`] — ping-pong groups, word enumeration, limit sets, the
//!   critical exponent and convex-core surrogates;
//! * [`density`] — Patterson-type conformal densities, leaf measures on
//!   horospherical orbits and global (Bowen-Margulis-Sullivan /
//!   Burger-Roblin) samplers;
//! * [`lab`] — window averages, flow translates, correlation experiments,
//!   rate fitting and report assembly.
//!
//! Everything downstream of a seed is deterministic; see [`rng`].

pub mod boundary;
pub mod density;
pub mod error;
pub mod lab;
pub mod lorentz;
mod quad;
pub mod rng;
pub mod schottky;

pub use error::{Error, Result};
