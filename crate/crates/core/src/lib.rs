//! Event-driven DRAM subsystem simulator with JEDEC power-down modes, a
//! staggered power-down controller policy and a current-based energy model.

pub mod cli;
pub mod controller;
pub mod device;
pub mod engine;
pub mod error;
pub mod power;
pub mod sim;
pub mod workload;

pub use device::{Command, DeviceConfig, PowerState, RankState};
pub use engine::{EventQueue, Rng, SimTime};
pub use error::{ConfigError, Error, InputError};
pub use controller::{ControllerConfig, PagePolicy, Request};
pub use sim::{simulate, RunResult, SimOptions, Workload};
