//! Simulation of population protocols on the complete graph under the
//! uniform random scheduler, with exact-majority, leader-election and
//! broadcast protocols, an exhaustive checker for tiny populations, and an
//! experiment harness.

pub mod broadcast;
pub mod engine;
pub mod fourstate;
pub mod harness;
pub mod leader;
pub mod majority;
pub mod oracle;
pub mod params;
pub mod protocol;
pub mod rng;

pub use engine::{run, Configuration, Outcome, RunResult};
pub use params::{ParamsError, ProtocolParams};
pub use protocol::{Protocol, Target};
