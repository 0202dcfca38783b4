//! Deterministic simulator for an edge node that hosts priority-ordered
//! edge servers on behalf of cloud managers.

pub mod autoscaler;
pub mod datastore;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod provisioning;
pub mod sim;
