//! Simulation and verification toolkit for the needle problem in stochastic
//! streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`intervals`] — interval systems over `[1..t]` and their value.
//! * [`sampler`] — the recursive hypergeometric interval-system sampler, its
//!   exact output distribution, refinement to valid systems and the
//!   binomially composed system.
//! * [`streams`] — uniform and planted stream models, frequency moments and
//!   collision patterns.
//! * [`detectors`] — space-metered streaming distinguishers and advantage
//!   estimation.
//! * [`disjointness`] — promise instances for multi-party unique
//!   set-disjointness, a metered blackboard, protocols and the stream
//!   embedding.
//!
//! [`exact`], [`rng`] and [`stats`] hold the shared arithmetic, random
//! number and hypothesis-testing plumbing.

pub mod detectors;
pub mod disjointness;
pub mod error;
pub mod exact;
pub mod intervals;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod streams;

pub use error::{Error, Result};
pub use exact::ExactProb;
pub use intervals::{Interval, IntervalSystem};
pub use streams::{CollisionPattern, Stream, StreamMeta};
