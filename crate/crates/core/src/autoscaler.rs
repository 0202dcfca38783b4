//! Periodic auto-scaling over the priority-ordered server set.
//!
//! Every round walks the servers from the highest rank down. A server is
//! scaled up by one resource unit when its application latency misses the
//! objective and scaled down by one unit otherwise, never below one unit.
//! When the free pool cannot cover a unit the current server and everything
//! ranked below it are sent back to the cloud. Scale-up may evict
//! lower-ranked servers one at a time from the bottom of the list.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{AppId, EdgeServer, ResourceVector, ServerId, ServerState, UserId};
use crate::provisioning::{
    CloudSide, CloudTermFlag, EdgeManager, ProvisionError, TermType, TerminationReason, TerminationReport,
};

/// One monitoring observation. `network_ms` is `None` when the server has
/// no users to ping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencySample {
    pub network_ms: Option<f64>,
    pub compute_ms: f64,
}

impl LatencySample {
    pub fn new(network_ms: f64, compute_ms: f64) -> Self {
        Self { network_ms: Some(network_ms), compute_ms }
    }

    pub fn no_users(compute_ms: f64) -> Self {
        Self { network_ms: None, compute_ms }
    }

    /// Network plus compute latency; undefined without users.
    pub fn application_ms(&self) -> Option<f64> {
        self.network_ms.map(|n| n + self.compute_ms)
    }
}

/// Pings every user of `server` and combines the mean round trip with a
/// compute latency measurement.
pub fn monitor_sample(server: &EdgeServer, mut ping: impl FnMut(UserId) -> f64, compute_ms: f64) -> LatencySample {
    if server.users.is_empty() {
        return LatencySample::no_users(compute_ms);
    }
    let total: f64 = server.users.iter().map(|u| ping(*u)).sum();
    LatencySample::new(total / server.users.len() as f64, compute_ms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleDecision {
    ScaleUp,
    ScaleDown,
}

/// How much a scale-up that needed evictions receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GrantPolicy {
    /// One resource unit; any surplus stays in the free pool.
    #[default]
    OneUnit,
    /// Everything the evictions released.
    AllReleased,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleOutcome {
    pub server_id: ServerId,
    pub decision: ScaleDecision,
    pub granted: ResourceVector,
    /// Resources handed back by a scale-down.
    pub returned: ResourceVector,
    pub evicted: Vec<TerminationReport>,
    pub released_total: ResourceVector,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutoscaleError {
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("server {0} is not running")]
    NotRunning(ServerId),
    #[error("no headroom for {server} after evicting {} servers", evicted.len())]
    NoHeadroom { server: ServerId, evicted: Vec<TerminationReport> },
    #[error(transparent)]
    Provision(#[from] ProvisionError),
}

/// Applies one scaling step to a running server.
pub fn scale(
    edge: &mut EdgeManager,
    cloud: &mut CloudSide,
    id: ServerId,
    decision: ScaleDecision,
    grant: GrantPolicy,
) -> Result<ScaleOutcome, AutoscaleError> {
    let server = edge.node().server(id).ok_or(AutoscaleError::UnknownServer(id))?;
    if server.state() != ServerState::Running {
        return Err(AutoscaleError::NotRunning(id));
    }
    let unit = edge.unit().value();
    let mut outcome = ScaleOutcome {
        server_id: id,
        decision,
        granted: ResourceVector::ZERO,
        returned: ResourceVector::ZERO,
        evicted: Vec::new(),
        released_total: ResourceVector::ZERO,
    };
    match decision {
        ScaleDecision::ScaleDown => {
            let floor_ok = server.allocated.checked_sub(&unit).is_some_and(|rest| rest.covers(&unit));
            if floor_ok {
                edge.reclaim(id, unit)?;
                outcome.returned = unit;
            }
        }
        ScaleDecision::ScaleUp => {
            if edge.node().free().covers(&unit) {
                edge.grant(id, unit)?;
                outcome.granted = unit;
                return Ok(outcome);
            }
            let rank = edge.node().rank_of(id).expect("present");
            while !edge.node().free().covers(&unit) {
                let servers = edge.node().servers();
                if servers.len() <= rank + 1 {
                    break;
                }
                let lowest = servers[servers.len() - 1].id;
                let reports = edge.terminate(
                    cloud,
                    lowest,
                    TermType::Single,
                    CloudTermFlag(false),
                    TerminationReason::NoResources,
                )?;
                for report in reports {
                    outcome.released_total = outcome.released_total + report.released;
                    outcome.evicted.push(report);
                }
            }
            if !edge.node().free().covers(&unit) {
                return Err(AutoscaleError::NoHeadroom { server: id, evicted: outcome.evicted });
            }
            let amount = match grant {
                GrantPolicy::OneUnit => unit,
                GrantPolicy::AllReleased => {
                    let free = edge.node().free();
                    ResourceVector::new(
                        outcome.released_total.cpu_cores.min(free.cpu_cores).max(unit.cpu_cores),
                        outcome.released_total.memory_mb.min(free.memory_mb).max(unit.memory_mb),
                    )
                }
            };
            edge.grant(id, amount)?;
            outcome.granted = amount;
        }
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoscalePolicy {
    pub period_s: f64,
    /// Scale down only when application latency is at least this far below
    /// the objective. Inside the band the allocation is held.
    pub hysteresis_ms: f64,
    /// Rounds a user-less server survives before idle termination.
    pub idle_grace_rounds: u32,
    pub grant: GrantPolicy,
    pub round_base_s: f64,
    pub round_per_server_s: f64,
    pub round_per_user_s: f64,
}

impl Default for AutoscalePolicy {
    fn default() -> Self {
        Self {
            period_s: 300.0,
            hysteresis_ms: 0.0,
            idle_grace_rounds: 0,
            grant: GrantPolicy::OneUnit,
            round_base_s: 5.255,
            round_per_server_s: 0.045,
            round_per_user_s: 0.00002,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoundAction {
    Scaled(ScaleOutcome),
    Held,
    /// Scale-up found no headroom even after evicting everything below.
    NoHeadroom {
        evicted: Vec<TerminationReport>,
    },
    /// User-less server kept for another round.
    IdleGrace,
    Terminated {
        term_type: TermType,
        reports: Vec<TerminationReport>,
    },
    Failed(String),
}

impl RoundAction {
    pub fn label(&self) -> &'static str {
        match self {
            RoundAction::Scaled(o) if o.decision == ScaleDecision::ScaleUp => "scale_up",
            RoundAction::Scaled(_) => "scale_down",
            RoundAction::Held => "hold",
            RoundAction::NoHeadroom { .. } => "no_headroom",
            RoundAction::IdleGrace => "idle_grace",
            RoundAction::Terminated { term_type: TermType::Single, .. } => "terminate_single",
            RoundAction::Terminated { term_type: TermType::Multiple, .. } => "terminate_multiple",
            RoundAction::Failed(_) => "failed",
        }
    }

    /// Every server this action removed from the node.
    pub fn removed(&self) -> Vec<&TerminationReport> {
        match self {
            RoundAction::Scaled(o) => o.evicted.iter().collect(),
            RoundAction::NoHeadroom { evicted } => evicted.iter().collect(),
            RoundAction::Terminated { reports, .. } => reports.iter().collect(),
            _ => Vec::new(),
        }
    }
}

/// Audit record for one server within one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundEntry {
    pub server_id: ServerId,
    pub app_id: AppId,
    pub level: i32,
    pub users: usize,
    pub objective_ms: f64,
    pub allocated_before: ResourceVector,
    pub sample: LatencySample,
    pub action: RoundAction,
}

/// Elementary operation counts: one ping per user, one decision per server.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub pings: u64,
    pub decisions: u64,
}

impl OpCounter {
    pub fn total(&self) -> u64 {
        self.pings + self.decisions
    }
}

#[derive(Clone, Debug, Default)]
pub struct Autoscaler {
    pub policy: AutoscalePolicy,
    idle_rounds: BTreeMap<ServerId, u32>,
    pub ops: OpCounter,
}

impl Autoscaler {
    pub fn new(policy: AutoscalePolicy) -> Self {
        Self { policy, idle_rounds: BTreeMap::new(), ops: OpCounter::default() }
    }

    /// Simulated duration of a round over the current server set.
    pub fn round_overhead_s(&self, edge: &EdgeManager) -> f64 {
        let servers = edge.node().servers();
        let users: usize = servers.iter().map(|s| s.users.len()).sum();
        self.policy.round_base_s
            + self.policy.round_per_server_s * servers.len() as f64
            + self.policy.round_per_user_s * users as f64
    }

    /// One pass over the servers in rank order. The resource check for each
    /// server sees the free pool left by earlier actions in the same round.
    pub fn round(
        &mut self,
        edge: &mut EdgeManager,
        cloud: &mut CloudSide,
        mut sampler: impl FnMut(&EdgeServer) -> LatencySample,
    ) -> Vec<RoundEntry> {
        let overhead = self.round_overhead_s(edge);
        edge.overhead.autoscale_s += overhead;
        edge.overhead.autoscale_rounds += 1;

        let unit = edge.unit().value();
        let order: Vec<ServerId> = edge.node().servers().iter().map(|s| s.id).collect();
        let mut entries = Vec::new();
        for id in order {
            let Some(server) = edge.node().server(id) else { continue };
            if server.state() != ServerState::Running {
                continue;
            }
            let sample = sampler(server);
            self.ops.pings += server.users.len() as u64;
            self.ops.decisions += 1;
            let mut entry = RoundEntry {
                server_id: id,
                app_id: server.priority.app_id.clone(),
                level: server.priority.level,
                users: server.users.len(),
                objective_ms: server.latency_objective_ms,
                allocated_before: server.allocated,
                sample,
                action: RoundAction::Held,
            };
            let objective = server.latency_objective_ms;
            let needed = !server.users.is_empty() || sample.network_ms.is_some_and(|n| n < objective);

            if !edge.node().free().covers(&unit) {
                entry.action = self.terminate(edge, cloud, id, TermType::Multiple, TerminationReason::NoResources);
                entries.push(entry);
                break;
            }
            if !needed {
                let idle = self.idle_rounds.entry(id).or_insert(0);
                *idle += 1;
                entry.action = if *idle > self.policy.idle_grace_rounds {
                    self.terminate(edge, cloud, id, TermType::Single, TerminationReason::Idle)
                } else {
                    RoundAction::IdleGrace
                };
                entries.push(entry);
                continue;
            }
            self.idle_rounds.remove(&id);

            let application = sample.application_ms().unwrap_or(sample.compute_ms);
            let decision = if application > objective {
                Some(ScaleDecision::ScaleUp)
            } else if application <= objective - self.policy.hysteresis_ms {
                Some(ScaleDecision::ScaleDown)
            } else {
                None
            };
            entry.action = match decision {
                None => RoundAction::Held,
                Some(d) => match scale(edge, cloud, id, d, self.policy.grant) {
                    Ok(outcome) => RoundAction::Scaled(outcome),
                    Err(AutoscaleError::NoHeadroom { evicted, .. }) => RoundAction::NoHeadroom { evicted },
                    Err(e) => RoundAction::Failed(e.to_string()),
                },
            };
            for report in entry.action.removed() {
                self.idle_rounds.remove(&report.server_id);
            }
            entries.push(entry);
        }
        entries
    }

    fn terminate(
        &mut self,
        edge: &mut EdgeManager,
        cloud: &mut CloudSide,
        id: ServerId,
        term_type: TermType,
        reason: TerminationReason,
    ) -> RoundAction {
        match edge.terminate(cloud, id, term_type, CloudTermFlag(false), reason) {
            Ok(reports) => {
                let gone: BTreeSet<ServerId> = reports.iter().map(|r| r.server_id).collect();
                self.idle_rounds.retain(|k, _| !gone.contains(k));
                RoundAction::Terminated { term_type, reports }
            }
            Err(e) => RoundAction::Failed(e.to_string()),
        }
    }
}
