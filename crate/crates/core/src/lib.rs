//! Closed-loop analytics for a simulated 5G core.
//!
//! A simulated UPF exposes per-flow usage measurements through an event
//! exposure service; the NWDAF collects them, builds a communication graph and
//! classifies UEs with a provisioned random forest; a simulated SMF releases
//! the PDU sessions of UEs reported as abnormal.

pub mod config;
pub mod ees;
pub mod engine;
pub mod events;
pub mod http;
pub mod mlprov;
pub mod nwdaf;
pub mod smf;
pub mod upf;
