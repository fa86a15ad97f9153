//! Energy-efficient resource allocation for ultra-low-latency downlink traffic.
//!
//! The crate covers the full chain from a highway deployment to per-frame
//! power and bandwidth decisions:
//!
//! * [`scenario`]: physical constants, QoS budget split and topology.
//! * [`effective_bandwidth`]: QoS exponent and Poisson effective bandwidth.
//! * [`mdone`]: exact M/D/1 stationary distribution and delay CCDF.
//! * [`channel`]: block-fading MISO gains and the packet-rate equation.
//! * [`allocator`]: two-state service target and the power minimizers.
//! * [`queue_sim`]: frame-driven Monte-Carlo simulation of the queues.
//! * [`harness`]: experiment commands emitting CSV artifacts.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod channel;
pub mod config;
pub mod effective_bandwidth;
mod error;
pub mod harness;
pub mod mdone;
pub mod optim;
pub mod queue_sim;
pub mod scenario;

pub use error::{Error, Result};
