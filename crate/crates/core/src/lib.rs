//! Simulation laboratory for the tail behaviour of vanilla and clipped SGD on
//! non-convex costs with bounded gradients.
//!
//! The crate is organised bottom-up:
//!
//! * [`costs`]: smooth test costs with certified constants `(L, G, f_star)`.
//! * [`oracles`]: stochastic first-order oracles and the noise families that
//!   drive them, plus the clipping-bias probe.
//! * [`optimizers`]: step-size and clipping schedules and the SGD / c-SGD
//!   trajectory kernel with running-minimum statistics.
//! * [`theory`]: closed-form rate functions, decay-rate sequences, the
//!   numerical Fenchel-Legendre transform and comparison curves.
//! * [`montecarlo`]: deterministic parallel ensembles, tail estimation with
//!   Wilson intervals, decay fitting and lemma verification drivers.

pub mod costs;
pub mod error;
pub mod montecarlo;
pub mod optimizers;
pub mod oracles;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod vector;

pub use error::{Error, Result};
