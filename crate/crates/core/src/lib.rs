//! Delay-aware power and transmission-threshold control for slotted ALOHA
//! over finite-state Markov fading channels.
//!
//! The offline half builds threshold policies from common feedback, solves a
//! reduced-state average-cost MDP per user and calibrates the Lagrange
//! multiplier against an average power budget. The online half is a slot-level
//! simulator that executes the resulting tables.

pub mod channel;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod policy;
pub mod sim;
pub mod solver;

pub use channel::{FsmcChannel, Side, TransmissionEvent};
pub use dynamics::{Feedback, LocalState, Network, SystemParams};
pub use error::{Error, Result};
pub use policy::{PolicyMode, ThresholdPolicy};
