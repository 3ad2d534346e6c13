//! Trace-driven simulator of a near-memory-processing memory-cube network
//! with learned page and computation remapping.

pub mod agent;
pub mod harness;
pub mod memnet;
pub mod offload;
pub mod paging;
pub mod trace;
