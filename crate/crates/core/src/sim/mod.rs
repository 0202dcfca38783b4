//! Discrete-event simulation of one edge node, its cloud managers and the
//! users they serve.

pub mod basic;
pub mod config;
pub mod engine;
pub mod network;
pub mod runner;
pub mod workload;

pub use basic::{BasicServiceTrace, Burst};
pub use config::{ConfigError, Mode, ScenarioConfig};
pub use engine::{Endpoint, EventPayload, EventQueue, SimEvent};
pub use network::{rtt, service_time, LinkModel, RateWindow};
pub use runner::{run, run_mode, AuditRow, LatencyRecord, RunOutput, SimError, TerminationRecord, TraceRow};
pub use workload::{fingerprint, gen_workload, BehaviorKind, BehaviorProfile, RequestEvent, RequestKind};
