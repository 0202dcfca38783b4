use std::collections::BTreeMap;

use log::warn;

use crate::datastore::KeyValueView;
use crate::ledger::OverheadLedger;
use crate::model::{
    AppId, EdgeNodeState, EdgeServer, ModelError, PortAssignment, ResourceUnit, ResourceVector, ServerId, ServerState,
    ServiceRequest,
};

use super::messages::{Envelope, ProvisionMessage, RejectReason};
use super::routing::{CloudSide, Route};
use super::{
    AdmissionRule, CloudTermFlag, ProvisionError, ProvisioningConfig, TermType, TerminationReason, TerminationReport,
};

/// Per-application session progress as seen by the edge manager.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Session {
    Offered,
    Accepted(ServerId),
    Deploying(ServerId),
    Live(ServerId),
}

/// Side effects the edge manager performs on the host, kept as a log.
#[derive(Clone, Debug, PartialEq)]
pub enum EdgeEvent {
    ContainerInitialised { server: ServerId, allocated: ResourceVector },
    FirewallConfigured { server: ServerId, ports: PortAssignment },
    PackagesInstalled { server: ServerId, image: String },
    Launched { server: ServerId },
    Destroyed { server: ServerId, reason: TerminationReason },
}

#[derive(Clone, Debug)]
pub struct EdgeManager {
    node: EdgeNodeState,
    unit: ResourceUnit,
    config: ProvisioningConfig,
    local_views: BTreeMap<ServerId, KeyValueView>,
    sessions: BTreeMap<AppId, Session>,
    next_server: u64,
    next_arrival: u64,
    pub overhead: OverheadLedger,
    events: Vec<EdgeEvent>,
}

impl EdgeManager {
    pub fn new(node: EdgeNodeState, unit: ResourceUnit, config: ProvisioningConfig) -> Self {
        Self {
            node,
            unit,
            config,
            local_views: BTreeMap::new(),
            sessions: BTreeMap::new(),
            next_server: 1,
            next_arrival: 0,
            overhead: OverheadLedger::default(),
            events: Vec::new(),
        }
    }

    pub fn node(&self) -> &EdgeNodeState {
        &self.node
    }

    /// Direct node access for basic-service updates and tests.
    pub fn node_mut(&mut self) -> &mut EdgeNodeState {
        &mut self.node
    }

    pub fn unit(&self) -> ResourceUnit {
        self.unit
    }

    pub fn config(&self) -> &ProvisioningConfig {
        &self.config
    }

    pub fn local_view(&self, id: ServerId) -> Option<&KeyValueView> {
        self.local_views.get(&id)
    }

    pub fn local_view_mut(&mut self, id: ServerId) -> Option<&mut KeyValueView> {
        self.local_views.get_mut(&id)
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<EdgeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn session(&self, app: &AppId) -> Option<Session> {
        self.sessions.get(app).copied()
    }

    /// Duration of a provisioning stage given the containers already hosted.
    pub fn stage_duration(&self, base_s: f64) -> f64 {
        let load = self.config.surcharge_per_container * self.node.servers().len() as f64;
        base_s * (1.0 + load.min(self.config.surcharge_cap))
    }

    /// Priority half of the admission test.
    pub fn admits(&self, level: i32) -> bool {
        let levels = self.node.servers().iter().map(|s| s.priority.level);
        match self.config.admission {
            AdmissionRule::AtLeastMinimum => levels.min().is_none_or(|min| level >= min),
            AdmissionRule::ExceedAll => levels.max().is_none_or(|max| level > max),
        }
    }

    /// Admission plus container initialisation. A rejection leaves the node
    /// untouched.
    pub fn handshake(&mut self, request: &ServiceRequest) -> Result<(ServerId, PortAssignment), RejectReason> {
        if !self.node.service() {
            return Err(RejectReason::ServiceUnavailable);
        }
        if request.validate().is_err() {
            return Err(RejectReason::InvalidRequest);
        }
        let unit = self.unit.value();
        if !self.node.free().covers(&unit) {
            return Err(RejectReason::InsufficientResources);
        }
        if !self.admits(request.priority.level) {
            return Err(RejectReason::PriorityTooLow);
        }
        if self.node.plan_ports(&request.requested_ports).is_err() {
            return Err(RejectReason::PortsExhausted);
        }
        let duration = self.stage_duration(self.config.handshake_s);

        let ports = self.node.reserve_ports(&request.requested_ports).expect("planned above");
        self.node.allocate(unit).expect("checked above");
        let id = ServerId(self.next_server);
        self.next_server += 1;
        let mut request = request.clone();
        request.priority.arrival_seq = self.next_arrival;
        self.next_arrival += 1;
        let server = EdgeServer::new(id, &request, ports.clone(), unit);
        self.node.insert_ordered(server).expect("fresh id");

        self.events.push(EdgeEvent::ContainerInitialised { server: id, allocated: unit });
        self.events.push(EdgeEvent::FirewallConfigured { server: id, ports: ports.clone() });
        self.overhead.handshake_s += duration;
        self.overhead.handshakes += 1;
        Ok((id, ports))
    }

    /// Installs packages and loads the users' data into a new local view.
    pub fn begin_deploy(&mut self, id: ServerId, image: &str, snapshot: &KeyValueView) -> Result<(), ProvisionError> {
        let server = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?;
        if server.state() != ServerState::Initialising {
            return Err(ProvisionError::WrongState { server: id, state: server.state() });
        }
        let local = snapshot.extract_user_keys(&server.users)?;
        self.node.server_mut(id).expect("present").advance(ServerState::Deploying)?;
        self.local_views.insert(id, local);
        self.events.push(EdgeEvent::PackagesInstalled { server: id, image: image.to_owned() });
        Ok(())
    }

    /// Launches the server and points its users at it.
    pub fn complete_deploy(&mut self, cloud: &mut CloudSide, id: ServerId) -> Result<&EdgeServer, ProvisionError> {
        let server = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?;
        if server.state() != ServerState::Deploying {
            return Err(ProvisionError::WrongState { server: id, state: server.state() });
        }
        let users = server.users.clone();
        let duration = self.stage_duration(self.config.deploy_s);
        cloud.cloud_redirect(&users, Route::Edge(id))?;
        self.node.server_mut(id).expect("present").advance(ServerState::Running)?;
        self.events.push(EdgeEvent::Launched { server: id });
        self.overhead.deploy_s += duration;
        self.overhead.deployments += 1;
        Ok(self.node.server(id).expect("present"))
    }

    /// Full deployment in one step.
    pub fn deploy(
        &mut self,
        cloud: &mut CloudSide,
        id: ServerId,
        image: &str,
        snapshot: &KeyValueView,
    ) -> Result<EdgeServer, ProvisionError> {
        let server = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?;
        if let Some(ghost) = server.users.iter().find(|u| !cloud.routing.contains(**u)) {
            return Err(ProvisionError::UnknownUser(*ghost));
        }
        self.begin_deploy(id, image, snapshot)?;
        Ok(self.complete_deploy(cloud, id)?.clone())
    }

    /// Destroys one server, or it and every server ranked below it.
    ///
    /// Each destroyed server's local view is merged into the global view,
    /// its users are routed back to the cloud and its resources and ports
    /// return to the pools, all within this call. Reports come back in rank
    /// order.
    pub fn terminate(
        &mut self,
        cloud: &mut CloudSide,
        id: ServerId,
        term_type: TermType,
        cloud_override: CloudTermFlag,
        reason: TerminationReason,
    ) -> Result<Vec<TerminationReport>, ProvisionError> {
        let rank = self.node.rank_of(id).ok_or(ProvisionError::UnknownServer(id))?;
        let reason = if cloud_override.0 { TerminationReason::CloudOverride } else { reason };
        let targets: Vec<ServerId> = if cloud_override.0 || term_type == TermType::Single {
            vec![id]
        } else {
            self.node.servers()[rank..].iter().map(|s| s.id).collect()
        };
        let mut reports = Vec::with_capacity(targets.len());
        for target in targets {
            reports.push(self.destroy(cloud, target, reason)?);
        }
        Ok(reports)
    }

    fn destroy(
        &mut self,
        cloud: &mut CloudSide,
        id: ServerId,
        reason: TerminationReason,
    ) -> Result<TerminationReport, ProvisionError> {
        let duration = self.stage_duration(self.config.terminate_s);
        let mut server = self.node.remove_server(id)?;
        if server.state() == ServerState::Running {
            server.advance(ServerState::Terminating)?;
        }
        let snapshot = self.local_views.remove(&id).unwrap_or_default();
        cloud.global.merge_local(&snapshot);
        cloud.traffic.charge_migration(snapshot.payload_bytes());
        let redirected: std::collections::BTreeSet<_> =
            server.users.iter().copied().filter(|u| cloud.routing.contains(*u)).collect();
        cloud.cloud_redirect(&redirected, Route::Cloud)?;
        self.node.release(server.allocated)?;
        self.node.return_ports(&server.ports);
        self.sessions.remove(&server.priority.app_id);
        self.events.push(EdgeEvent::Destroyed { server: id, reason });
        self.overhead.terminate_s += duration;
        self.overhead.terminations += 1;
        Ok(TerminationReport {
            server_id: id,
            migrated_snapshot: snapshot,
            released: server.allocated,
            redirected_users: redirected,
            reason,
        })
    }

    /// Adds resources from the free pool to a server.
    pub fn grant(&mut self, id: ServerId, amount: ResourceVector) -> Result<(), ProvisionError> {
        let server = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?;
        let grown = server.allocated.checked_add(&amount).ok_or(ModelError::AccountingViolation { amount })?;
        self.node.allocate(amount)?;
        self.node.server_mut(id).expect("present").allocated = grown;
        Ok(())
    }

    /// Returns part of a server's allocation to the free pool.
    pub fn reclaim(&mut self, id: ServerId, amount: ResourceVector) -> Result<(), ProvisionError> {
        let server = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?;
        let shrunk = server.allocated.checked_sub(&amount).ok_or(ModelError::AccountingViolation { amount })?;
        let previous = server.allocated;
        self.node.server_mut(id).expect("present").allocated = shrunk;
        if let Err(e) = self.node.release(amount) {
            self.node.server_mut(id).expect("present").allocated = previous;
            return Err(e.into());
        }
        Ok(())
    }

    /// Terminates everything and stops accepting handshakes.
    pub fn withdraw_service(&mut self, cloud: &mut CloudSide) -> Result<Vec<TerminationReport>, ProvisionError> {
        let reports = match self.node.servers().first().map(|s| s.id) {
            Some(top) => {
                self.terminate(cloud, top, TermType::Multiple, CloudTermFlag(false), TerminationReason::NoResources)?
            }
            None => Vec::new(),
        };
        self.node.set_service(false)?;
        self.sessions.clear();
        Ok(reports)
    }

    /// Finishes an installation started by a deferred `DeployPayload`.
    pub fn complete_launch(&mut self, cloud: &mut CloudSide, id: ServerId) -> Result<Envelope, ProvisionError> {
        let app = self.node.server(id).ok_or(ProvisionError::UnknownServer(id))?.priority.app_id.clone();
        self.complete_deploy(cloud, id)?;
        self.sessions.insert(app.clone(), Session::Live(id));
        Ok(Envelope::new(app, ProvisionMessage::Ready))
    }

    fn drop_message(&self, env: &Envelope, why: &str) -> Vec<Envelope> {
        warn!("dropping {} from {}: {}", env.msg.tag(), env.app, why);
        Vec::new()
    }

    /// Processes one inbound message and returns the replies.
    pub fn handle(&mut self, cloud: &mut CloudSide, env: Envelope) -> Vec<Envelope> {
        let app = env.app.clone();
        let reply = |msg| vec![Envelope::new(app.clone(), msg)];
        let session = self.sessions.get(&app).copied();
        match (&env.msg, session) {
            (ProvisionMessage::ServiceQuery, _) if !self.node.service() => {
                reply(ProvisionMessage::Reject(RejectReason::ServiceUnavailable))
            }
            (ProvisionMessage::ServiceQuery, None) => {
                self.sessions.insert(app.clone(), Session::Offered);
                reply(ProvisionMessage::ServiceOffer)
            }
            (ProvisionMessage::SetupRequest(request), Some(Session::Offered)) => {
                if request.app_id != app || request.priority.app_id != app {
                    return self.drop_message(&env, "request names another application");
                }
                match self.handshake(request) {
                    Ok((container, ports)) => {
                        self.sessions.insert(app.clone(), Session::Accepted(container));
                        reply(ProvisionMessage::Accept { ports, container })
                    }
                    Err(reason) => {
                        self.sessions.remove(&app);
                        reply(ProvisionMessage::Reject(reason))
                    }
                }
            }
            (ProvisionMessage::DeployPayload { image, snapshot }, Some(Session::Accepted(id))) => {
                if let Err(e) = self.begin_deploy(id, image, snapshot) {
                    return self.drop_message(&env, &e.to_string());
                }
                self.sessions.insert(app.clone(), Session::Deploying(id));
                if self.config.deferred_launch {
                    return Vec::new();
                }
                match self.complete_launch(cloud, id) {
                    Ok(ready) => vec![ready],
                    Err(e) => self.drop_message(&env, &e.to_string()),
                }
            }
            (ProvisionMessage::TerminateOrder(id), _) => {
                let owned = self.node.server(*id).is_some_and(|s| s.priority.app_id == app);
                if !owned {
                    return self.drop_message(&env, "no such server for this application");
                }
                match self.terminate(
                    cloud,
                    *id,
                    TermType::Single,
                    CloudTermFlag(true),
                    TerminationReason::CloudOverride,
                ) {
                    Ok(reports) => reports
                        .into_iter()
                        .map(|r| Envelope::new(app.clone(), ProvisionMessage::TerminationReport(r)))
                        .collect(),
                    Err(e) => self.drop_message(&env, &e.to_string()),
                }
            }
            _ => self.drop_message(&env, "out of session order"),
        }
    }

    /// Runs `handle` over an inbox in arrival order.
    pub fn provision_loop(
        &mut self,
        cloud: &mut CloudSide,
        inbox: impl IntoIterator<Item = Envelope>,
    ) -> Vec<Envelope> {
        inbox.into_iter().flat_map(|env| self.handle(cloud, env)).collect()
    }
}
