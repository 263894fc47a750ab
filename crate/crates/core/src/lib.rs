//! Hierarchical GPU data-race detection.
//!
//! Each monitored address carries one 64-bit shadow word holding a 5-bit
//! state of a small finite-state machine, the last accessor's thread id, and
//! its barrier clocks. Detection runs inside a deterministic simulator of the
//! grid / block / warp hierarchy, and is checked against a brute-force
//! happens-before oracle.

pub mod bench;
pub mod config;
pub mod exec;
pub mod fsm;
pub mod oracle;
pub mod shadow;
