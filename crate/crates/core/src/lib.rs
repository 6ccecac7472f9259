//! Performance model and dataflow planner for multi-head attention on
//! tile-based many-PE accelerators.
//!
//! - [`arch`]: accelerator configs and uncontended engine/HBM timing.
//! - [`noc`]: mesh routing and unicast/collective latency models.
//! - [`sim`]: deterministic discrete-event execution of task graphs.
//! - [`dataflow`]: FlashAttention-style and FlatAttention planners plus a
//!   functional executor that replays each schedule on real tensors.
//! - [`analytics`]: closed-form I/O models, report summaries and sweeps.

pub mod analytics;
pub mod arch;
pub mod dataflow;
pub mod error;
pub mod noc;
pub mod sim;

pub use error::{Error, Result};

/// Clock cycles (1 GHz clock assumed when converting to time).
pub type Cycles = u64;
