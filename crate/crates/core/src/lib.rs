//! Min-max latency optimization for IRS-aided cell-free mobile edge computing.
//!
//! Wireless devices (WDs) split a computing task between local execution and
//! offloading to an edge server reached through a cluster of multi-antenna base
//! stations, with intelligent reflecting surfaces (IRSs) reshaping the uplink.
//! The crate jointly chooses offload sizes, edge CPU shares, receive detectors
//! and IRS phase shifts to minimize the worst device latency.
//!
//! Layout:
//! - [`config`] and [`model`]: scenario parameters, SINR, rate and latency.
//! - [`channel`]: geometry-driven Rician channel synthesis.
//! - [`conic`]: a small primal-dual interior-point solver for LP/SOCP/SDP.
//! - [`compute_alloc`], [`mud`], [`reflect`]: the three block subproblems.
//! - [`orchestrator`]: inner alternation and the outer block-coordinate loop.
//! - [`single_wd`]: closed forms for one device.
//! - [`sweep`]: baselines and parameter sweeps with CSV output.

pub mod channel;
pub mod compute_alloc;
pub mod config;
pub mod conic;
pub mod error;
pub mod model;
pub mod mud;
pub mod orchestrator;
pub mod reflect;
pub mod single_wd;
pub mod sweep;

pub use channel::{CMat, CVec, ChannelSet, Dims, PhaseVector};
pub use compute_alloc::ComputePlan;
pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use model::{LatencyReport, LatencyRow};
pub use mud::MudMatrix;
pub use orchestrator::{RunTrace, Scheme};

pub use nalgebra::Complex;
pub type C64 = nalgebra::Complex<f64>;
