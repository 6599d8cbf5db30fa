//! Task replication for vehicular edge computing: closed-form replica
//! planning, the LTRA online learner, vehicle mobility and channels, and a
//! discrete-event simulator that ties them together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod bandit;
pub mod harness;
pub mod simcore;
pub mod traffic;

pub use analytics::{NetworkConditions, ReplicaPlan};
pub use bandit::{ArmId, ArmState, LearnerConfig};
pub use harness::{ExperimentConfig, PolicyKind};
pub use simcore::{SevServer, TaskRecord};
pub use traffic::VehicleSnapshot;
