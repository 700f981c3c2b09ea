//! Beep-model simulation of distributed majority voting.
//!
//! Nodes of a connected graph share a slotted channel on which each node
//! either beeps or listens. Two protocols reach consensus on the initial
//! plurality value:
//!
//! - [`dvb1`] lets value levels take turns beeping, with random node deaths,
//!   so that large groups overwrite small neighbouring ones;
//! - [`dvb2`] encodes pairwise DMVR interactions in beeps.
//!
//! [`analysis`] predicts one-phase DVB1 success on complete graphs and
//! [`harness`] runs seeded parameter sweeps.

pub mod analysis;
pub mod dvb1;
pub mod dvb2;
pub mod engine;
pub mod error;
pub mod harness;
pub mod rng;
pub mod topology;

pub use engine::{
    BeeperSensing, Channel, Protocol, RunLimits, RunStatus, SlotAction, SlotObservation,
    TrialMetrics, TrialResult,
};
pub use error::{Error, Result};
pub use topology::{DiameterMode, Graph, Level, LevelAssignment, TopologyKind, TopologySpec};
