//! Token bucket filter (TBF) shaping and cooperative TBF rate sharing for a
//! shared access link, with a deterministic discrete-event simulator of the
//! link and its subscribers' web, FTP and video workloads.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, sweeps and the
//! command line live in the `ctbf-sim` crate.

#![no_std]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bucket;
pub mod controller;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod shaper;
pub mod sim;
pub mod switch;
pub mod traffic;

pub use bucket::{bucket_capacity, TokenBucket};
pub use controller::{Activity, Controller, DistributionOutcome, DistributionPolicy, PolicyKind, SubscriberProfile};
pub use error::{ConfigError, SimError};
pub use metrics::{MetricsReport, Summary};
pub use shaper::{FlowTag, Packet, SubscriberId, SubscriberShaper};
pub use sim::{run, RunOptions, RunOutput, SimulationConfig};
pub use switch::{AccessSwitch, ShapingPolicy, SwitchConfig};
pub use traffic::TrafficConfig;
