//! Trace-driven discrete-event simulator of a NIC/CPU co-designed server.
//!
//! The CPU side watches L2-missing loads, grows dependence chains back to
//! their roots in a small context instruction cache, and predicts the
//! register context those chains need. Ready chains are shipped to a
//! multi-core NIC, which re-executes them for every incoming packet and
//! fills the touched blocks into the destination core's L1 while the
//! request is still queued.

pub mod config;
pub mod cpu;
pub mod critical;
pub mod error;
pub mod golden;
pub mod memsys;
pub mod metrics;
pub mod nic;
pub mod regpred;
pub mod sim;
pub mod time;
pub mod trace;
pub mod workload;

pub mod cli;

pub use config::ExperimentConfig;
pub use error::{ConfigError, SimError, TraceError};
pub use sim::{RunResult, Simulator};
pub use trace::{OpClass, RegisterId, RequestMarker, Trace, TraceEvent, TraceRecord};
