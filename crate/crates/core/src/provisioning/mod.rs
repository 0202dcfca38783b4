//! Edge-manager provisioning: handshake, deployment and termination of
//! edge servers, plus the session-ordered message loop that drives them.

mod manager;
pub mod messages;
mod routing;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::datastore::{DatastoreError, KeyValueView};
use crate::model::{ModelError, ResourceVector, ServerId, ServerState, UserId};

pub use manager::{EdgeEvent, EdgeManager, Session};
pub use messages::{
    decode_line, decode_trace, encode_line, encode_trace, Envelope, ProvisionMessage, RejectReason, WireError,
};
pub use routing::{CloudSide, Route, RoutingTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermType {
    Single,
    Multiple,
}

/// Set by the owning cloud manager to force its server off the edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CloudTermFlag(pub bool);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerminationReason {
    NoResources,
    Idle,
    NoQoSImprovement,
    CloudOverride,
}

impl TerminationReason {
    pub fn label(self) -> &'static str {
        match self {
            TerminationReason::NoResources => "no_resources",
            TerminationReason::Idle => "idle",
            TerminationReason::NoQoSImprovement => "no_qos_improvement",
            TerminationReason::CloudOverride => "cloud_override",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminationReport {
    pub server_id: ServerId,
    pub migrated_snapshot: KeyValueView,
    pub released: ResourceVector,
    pub redirected_users: BTreeSet<UserId>,
    pub reason: TerminationReason,
}

/// Which handshake priority test to apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdmissionRule {
    /// Admit when the level is at least the lowest level already running.
    #[default]
    AtLeastMinimum,
    /// Admit only when the level is strictly above every running level.
    ExceedAll,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvisioningConfig {
    pub admission: AdmissionRule,
    pub handshake_s: f64,
    pub deploy_s: f64,
    pub terminate_s: f64,
    /// Extra fraction of each stage per container already on the node.
    pub surcharge_per_container: f64,
    /// Upper bound on the total surcharge fraction.
    pub surcharge_cap: f64,
    /// When set, `DeployPayload` only installs; `complete_launch` finishes it.
    pub deferred_launch: bool,
}

impl Default for ProvisioningConfig {
    fn default() -> Self {
        Self {
            admission: AdmissionRule::AtLeastMinimum,
            handshake_s: 9.0,
            deploy_s: 9.0,
            terminate_s: 5.0,
            surcharge_per_container: 0.0002,
            surcharge_cap: 0.03,
            deferred_launch: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvisionError {
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("server {server} is {state:?}")]
    WrongState { server: ServerId, state: ServerState },
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
}
