//! Deterministic synthetic world for end-to-end tests.

pub mod inject;
pub mod recovery;
pub mod scenario;
pub mod streams;
pub mod synthetic;

pub use inject::{inject_crashes, Injection};
pub use recovery::{recovery_experiment, RecoveryReport, RecoverySettings};
pub use scenario::{BetaScale, ScenarioConfig, ScenarioError};
pub use streams::generate_streams;
