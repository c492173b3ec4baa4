//! Finite-volume constant-kernel coalescence: exact particle simulation,
//! hierarchy operators, the Smoluchowski limit and the chaos verification
//! harness built on top of them.

pub mod bbgky;
mod dd;
pub mod experiment;
pub mod error;
pub mod marcus_lushnikov;
pub mod model;
pub mod moments;
pub mod ode;
pub mod smoluchowski;

pub use error::{CoagError, Result};
