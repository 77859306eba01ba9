//! Coordinated spatial reuse (Co-SR) for multi-BSS Wi-Fi downlinks.
//!
//! The crate simulates four overlapping BSSs contending on one channel,
//! either with plain DCF or with Co-SR, where the contention winner shares
//! its TXOP with a precomputed group of compatible AP-STA pairs.
//!
//! - [`params`]: simulation constants and configuration.
//! - [`deployment`]: AP and STA placement.
//! - [`phy`]: path loss, SINR, MCS selection and airtime.
//! - [`traffic`]: Poisson and ON/OFF arrivals, load calibration.
//! - [`grouping`]: compatible-group enumeration and plan optimization.
//! - [`mac`]: the discrete-event CSMA/CA engine and its invariant checks.
//! - [`metrics`]: delay percentiles and throughput.
//! - [`experiment`]: batch orchestration and result files.

pub mod deployment;
pub mod error;
pub mod experiment;
pub mod grouping;
pub mod mac;
pub mod metrics;
pub mod params;
pub mod phy;
pub mod seed;
pub mod traffic;

pub use deployment::{generate_deployment, make_symmetric_deployment, Deployment, Point};
pub use grouping::{optimize_plan, GroupPlan, Policy, SrGroup};
pub use mac::{run_cosr, run_dcf, PacketRecord, RunOutput, Workload};
pub use params::{make_params, SimParams};
pub use traffic::{calibrate_load, TrafficModel, TrafficSpec};
