//! Scenario execution.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ConfigError, Links, Mode, ScenarioConfig};
use super::engine::{Endpoint, EventPayload, EventQueue};
use super::network::{rtt, service_time, RateWindow};
use super::workload::{fingerprint, gen_workload, RequestEvent, RequestKind};
use crate::autoscaler::{Autoscaler, OpCounter, RoundAction, RoundEntry};
use crate::datastore::KeyValueView;
use crate::ledger::{OverheadLedger, RequestRoute, TrafficLedger};
use crate::model::{
    AppId, EdgeNodeState, Priority, ResourceUnit, ResourceVector, ServerId, ServerState, ServiceRequest, UserId,
};
use crate::provisioning::{
    encode_line, CloudSide, EdgeManager, Envelope, ProvisionMessage, RejectReason, Route, Session, TerminationReason,
    TerminationReport,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant breach at t={time:.6}: {detail}")]
    Invariant { time: f64, detail: String },
}

/// One serviced request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyRecord {
    pub time_s: f64,
    pub user: UserId,
    /// Edge server that handled the request, if any.
    pub server: Option<ServerId>,
    pub route: RequestRoute,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub round: u64,
    pub time_s: f64,
    pub entry: RoundEntry,
    pub allocated_after: ResourceVector,
    pub free_after: ResourceVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminationRecord {
    pub time_s: f64,
    pub server_id: ServerId,
    pub reason: TerminationReason,
    pub users: usize,
    pub migrated_bytes: u64,
    pub released: ResourceVector,
    pub eviction: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub seq: u64,
    pub time_s: f64,
    pub kind: &'static str,
    pub detail: String,
}

/// Everything a run produced, before aggregation.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub n_users: u32,
    pub duration_s: f64,
    pub workload_fingerprint: String,
    pub generated_requests: u64,
    pub latencies: Vec<LatencyRecord>,
    pub traffic: TrafficLedger,
    pub overhead: OverheadLedger,
    pub ops: OpCounter,
    pub audit: Vec<AuditRow>,
    pub terminations: Vec<TerminationRecord>,
    pub rejections: Vec<(AppId, RejectReason)>,
    pub peak_allocated: ResourceVector,
    pub trace: Vec<TraceRow>,
    pub events_processed: u64,
}

struct ManagerState {
    app: AppId,
    request: ServiceRequest,
    image: String,
    server: Option<ServerId>,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    links: Links,
    queue: EventQueue,
    edge: Option<EdgeManager>,
    cloud: CloudSide,
    autoscaler: Autoscaler,
    workload: Vec<RequestEvent>,
    managers: Vec<ManagerState>,
    manager_of: BTreeMap<AppId, usize>,
    rng: ChaCha8Rng,
    edge_windows: BTreeMap<ServerId, RateWindow>,
    cloud_window: RateWindow,
    edge_dirty: BTreeMap<ServerId, BTreeSet<(UserId, usize)>>,
    payload_pool: Bytes,
    attributes: Vec<String>,
    round: u64,
    out: RunOutput,
}

/// Runs a validated scenario to completion.
pub fn run(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, SimError> {
    run_mode(cfg, cfg.scenario.mode, seed)
}

/// Runs a scenario with the mode overridden.
pub fn run_mode(cfg: &ScenarioConfig, mode: Mode, seed: u64) -> Result<RunOutput, SimError> {
    let mut runner = Runner::new(cfg, mode, seed)?;
    runner.execute()?;
    Ok(runner.out)
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig, mode: Mode, seed: u64) -> Result<Self, SimError> {
        let w = &cfg.workload;
        let profile = cfg.profile();
        let workload = gen_workload(&profile, w.n_users, cfg.scenario.duration_s, seed);
        let workload_fingerprint = fingerprint(&workload, w.n_users, cfg.scenario.duration_s);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let attr_bytes = w.attribute_bytes as usize;
        let mut pool = vec![0u8; attr_bytes * 2];
        rng.fill_bytes(&mut pool);
        let payload_pool = Bytes::from(pool);
        let attributes: Vec<String> = (0..w.attributes).map(|i| format!("attr{i}")).collect();

        let mut global = KeyValueView::with_users((0..w.n_users).map(UserId));
        for u in 0..w.n_users {
            for (i, attr) in attributes.iter().enumerate() {
                let off = (u as usize * 31 + i * 7) % attr_bytes.max(1);
                global.write(UserId(u), attr, payload_pool.slice(off..off + attr_bytes)).expect("declared user");
            }
        }
        let cloud = CloudSide::new(global, w.config_message_bytes);

        let trace = cfg.basic_trace()?;
        let edge = match mode {
            Mode::CloudOnly => None,
            Mode::Fog => {
                let node =
                    EdgeNodeState::new(cfg.capacity(), trace.demand(0.0), cfg.node.port_start..cfg.node.port_end)
                        .map_err(|e| ConfigError::Field { path: "basic_service".into(), message: e.to_string() })?;
                let unit = ResourceUnit::new(cfg.unit())
                    .map_err(|e| ConfigError::Field { path: "node.unit_cpu".into(), message: e.to_string() })?;
                Some(EdgeManager::new(node, unit, cfg.provisioning_config()))
            }
        };

        let ranges = cfg.user_ranges();
        let managers: Vec<ManagerState> = cfg
            .cloud_managers
            .iter()
            .zip(ranges)
            .map(|(m, users)| ManagerState {
                app: AppId(m.app_id.clone()),
                request: ServiceRequest {
                    app_id: AppId(m.app_id.clone()),
                    priority: Priority::new(m.level, m.app_id.clone(), 0),
                    requested_ports: m.ports.iter().copied().collect(),
                    latency_objective_ms: m.objective_ms,
                    users: users.map(UserId).collect(),
                },
                image: m.image.clone(),
                server: None,
            })
            .collect();
        let manager_of = managers.iter().enumerate().map(|(i, m)| (m.app.clone(), i)).collect();

        let mut queue = EventQueue::new();
        let start = cfg.scenario.workload_start_s;
        let end = start + cfg.scenario.duration_s;
        if edge.is_some() {
            for (i, m) in cfg.cloud_managers.iter().enumerate() {
                let env = Envelope::new(managers[i].app.clone(), ProvisionMessage::ServiceQuery);
                queue.schedule(m.request_at_s, EventPayload::ProvisionMsg { to: Endpoint::Edge, envelope: env });
                if let Some(t) = m.terminate_at_s {
                    queue.schedule(t, EventPayload::CloudOverride { manager: i });
                }
            }
            for &(t, demand) in trace.steps().iter().skip(1) {
                queue.schedule(t, EventPayload::BasicLoadChange(demand));
            }
            if cfg.autoscaler.enabled {
                queue.schedule(cfg.autoscaler.period_s, EventPayload::MonitorTick);
            }
            queue.schedule(w.sync_period_s, EventPayload::SyncTick);
        }
        for (i, req) in workload.iter().enumerate() {
            queue.schedule(start + req.time_s, EventPayload::UserRequest(i));
        }
        queue.schedule(end, EventPayload::ScenarioEnd);

        let out = RunOutput {
            scenario: cfg.scenario.name.clone(),
            mode,
            seed,
            n_users: w.n_users,
            duration_s: cfg.scenario.duration_s,
            workload_fingerprint,
            generated_requests: workload.len() as u64,
            latencies: Vec::with_capacity(workload.len()),
            traffic: TrafficLedger::default(),
            overhead: OverheadLedger::default(),
            ops: OpCounter::default(),
            audit: Vec::new(),
            terminations: Vec::new(),
            rejections: Vec::new(),
            peak_allocated: ResourceVector::ZERO,
            trace: Vec::new(),
            events_processed: 0,
        };

        let mut net_rng = ChaCha8Rng::seed_from_u64(seed);
        net_rng.set_stream(u64::MAX);
        Ok(Self {
            cfg,
            links: cfg.links(),
            queue,
            edge,
            cloud,
            autoscaler: Autoscaler::new(cfg.autoscale_policy()),
            workload,
            managers,
            manager_of,
            rng: net_rng,
            edge_windows: BTreeMap::new(),
            cloud_window: RateWindow::new(w.rate_window_s),
            edge_dirty: BTreeMap::new(),
            payload_pool,
            attributes,
            round: 0,
            out,
        })
    }

    fn execute(&mut self) -> Result<(), SimError> {
        while let Some(event) = self.queue.pop() {
            self.out.events_processed += 1;
            let now = event.time;
            let kind = event.payload.kind();
            let detail = match event.payload {
                EventPayload::ScenarioEnd => {
                    self.trace(event.seq, now, kind, String::new());
                    break;
                }
                EventPayload::UserRequest(i) => self.on_request(now, i),
                EventPayload::MonitorTick => {
                    self.queue.schedule(now + self.cfg.autoscaler.period_s, EventPayload::MonitorTick);
                    self.autoscale(now)
                }
                EventPayload::ProvisionMsg { to: Endpoint::Edge, envelope } => self.on_edge_msg(now, envelope),
                EventPayload::ProvisionMsg { to: Endpoint::Cloud(m), envelope } => self.on_cloud_msg(now, m, envelope),
                EventPayload::DeployComplete { manager, server } => self.on_deploy_complete(now, manager, server),
                EventPayload::CloudOverride { manager } => self.on_override(now, manager),
                EventPayload::BasicLoadChange(demand) => {
                    if let Some(edge) = self.edge.as_mut() {
                        edge.node_mut()
                            .set_basic_demand(demand)
                            .map_err(|e| SimError::Invariant { time: now, detail: e.to_string() })?;
                    }
                    format!("cpu={} mb={}", demand.cpu_cores, demand.memory_mb)
                }
                EventPayload::SyncTick => {
                    self.queue.schedule(now + self.cfg.workload.sync_period_s, EventPayload::SyncTick);
                    self.sync()
                }
            };
            self.trace(event.seq, now, kind, detail);
            self.check(now)?;
        }
        self.out.traffic = self.cloud.traffic.clone();
        if let Some(edge) = &self.edge {
            self.out.overhead = edge.overhead.clone();
        }
        self.out.ops = self.autoscaler.ops;
        Ok(())
    }

    fn trace(&mut self, seq: u64, time_s: f64, kind: &'static str, detail: String) {
        if self.cfg.scenario.record_trace {
            self.out.trace.push(TraceRow { seq, time_s, kind, detail });
        }
    }

    fn check(&mut self, now: f64) -> Result<(), SimError> {
        let Some(edge) = &self.edge else { return Ok(()) };
        edge.node().check_invariants().map_err(|detail| SimError::Invariant { time: now, detail })?;
        for (user, route) in self.cloud.routing.iter() {
            if let Route::Edge(id) = route {
                let ok = edge
                    .node()
                    .server(id)
                    .is_some_and(|s| s.state() == ServerState::Running && s.users.contains(&user));
                if !ok {
                    return Err(SimError::Invariant { time: now, detail: format!("{user} routed to absent {id}") });
                }
            }
        }
        let alloc = edge.node().allocated_total();
        let peak = &mut self.out.peak_allocated;
        peak.cpu_cores = peak.cpu_cores.max(alloc.cpu_cores);
        peak.memory_mb = peak.memory_mb.max(alloc.memory_mb);
        Ok(())
    }

    fn control_delay_s(&self) -> f64 {
        self.links.edge_cloud.base_rtt_ms / 2000.0
    }

    fn cloud_compute_ms(&mut self, now: f64) -> f64 {
        self.cloud_window.record(now);
        service_time(self.cfg.cloud.work_ms, self.cfg.cloud.cores, self.cloud_window.rate(now))
    }

    fn on_request(&mut self, now: f64, idx: usize) -> String {
        let req = self.workload[idx];
        let bytes = (req.size_kb * 1024.0).round() as u64;
        let route = match self.edge {
            Some(_) => self.cloud.routing.route(req.user_id).unwrap_or(Route::Cloud),
            None => Route::Cloud,
        };
        let attr = idx % self.attributes.len();
        let (record_route, server, latency) = match (route, req.kind) {
            (Route::Edge(id), RequestKind::LocalView) => {
                let value = self.value_for(idx);
                let edge = self.edge.as_mut().expect("edge route implies fog mode");
                let cores = edge.node().server(id).map_or(1, |s| s.allocated.cpu_cores);
                let window =
                    self.edge_windows.entry(id).or_insert_with(|| RateWindow::new(self.cfg.workload.rate_window_s));
                window.record(now);
                let compute = service_time(self.cfg.node.edge_work_ms, cores, window.rate(now));
                let latency = rtt(&self.links.user_edge, req.size_kb, &mut self.rng) + compute;
                if let Some(view) = edge.local_view_mut(id) {
                    if view.write(req.user_id, &self.attributes[attr], value).is_ok() {
                        self.edge_dirty.entry(id).or_default().insert((req.user_id, attr));
                    }
                }
                (RequestRoute::EdgeServiced, Some(id), latency)
            }
            (Route::Edge(id), RequestKind::Global) => {
                let network = rtt(&self.links.user_edge, req.size_kb, &mut self.rng)
                    + rtt(&self.links.edge_cloud, req.size_kb, &mut self.rng);
                (RequestRoute::EdgeForwarded, Some(id), network + self.cloud_compute_ms(now))
            }
            (Route::Cloud, kind) => {
                let network = rtt(&self.links.user_cloud, req.size_kb, &mut self.rng);
                let latency = network + self.cloud_compute_ms(now);
                if kind == RequestKind::LocalView {
                    let value = self.value_for(idx);
                    let _ = self.cloud.global.write(req.user_id, &self.attributes[attr], value);
                }
                (RequestRoute::CloudServiced, None, latency)
            }
        };
        self.cloud.traffic.record_request(record_route, bytes);
        self.out.latencies.push(LatencyRecord {
            time_s: now,
            user: req.user_id,
            server,
            route: record_route,
            latency_ms: latency,
        });
        if !self.cfg.scenario.record_trace {
            return String::new();
        }
        let at = match route {
            Route::Cloud => "cloud".to_owned(),
            Route::Edge(id) => id.to_string(),
        };
        let kind = match req.kind {
            RequestKind::LocalView => "local",
            RequestKind::Global => "global",
        };
        format!("{} {kind} {:.3}KB via {at} {:.6}ms", req.user_id, req.size_kb, latency)
    }

    fn value_for(&self, idx: usize) -> Bytes {
        let len = self.cfg.workload.attribute_bytes as usize;
        let off = (idx * 61) % len.max(1);
        self.payload_pool.slice(off..off + len)
    }

    fn sync(&mut self) -> String {
        let mut keys = 0u64;
        for dirty in self.edge_dirty.values_mut() {
            keys += dirty.len() as u64;
            dirty.clear();
        }
        if keys > 0 {
            self.cloud.traffic.charge_sync(keys * self.cfg.workload.sync_key_bytes);
        }
        format!("keys={keys}")
    }

    fn send(&mut self, at: f64, to: Endpoint, envelope: Envelope) {
        self.queue.schedule(at, EventPayload::ProvisionMsg { to, envelope });
    }

    fn describe(envelope: &Envelope) -> String {
        match &envelope.msg {
            ProvisionMessage::DeployPayload { image, snapshot } => {
                format!(
                    "{}\tDEPLOY\timage={image}\tkeys={}\tbytes={}",
                    envelope.app,
                    snapshot.len(),
                    snapshot.payload_bytes()
                )
            }
            ProvisionMessage::TerminationReport(r) => format!(
                "{}\tREPORT\tserver={}\treason={}\tusers={}\tbytes={}",
                envelope.app,
                r.server_id,
                r.reason.label(),
                r.redirected_users.len(),
                r.migrated_snapshot.payload_bytes()
            ),
            _ => encode_line(envelope),
        }
    }

    fn on_edge_msg(&mut self, now: f64, envelope: Envelope) -> String {
        let detail = format!("to=edge {}", Self::describe(&envelope));
        let Some(manager) = self.manager_of.get(&envelope.app).copied() else { return detail };
        let edge = self.edge.as_mut().expect("provisioning only runs in fog mode");
        // Stage lengths depend on the containers present before the message.
        let handshake = edge.stage_duration(edge.config().handshake_s);
        let deploy = edge.stage_duration(edge.config().deploy_s);
        let terminate = edge.stage_duration(edge.config().terminate_s);
        let control = self.links.edge_cloud.base_rtt_ms / 2000.0;
        let replies = edge.handle(&mut self.cloud, envelope.clone());
        let delay = match &envelope.msg {
            ProvisionMessage::SetupRequest(_) => handshake,
            ProvisionMessage::TerminateOrder(_) => terminate,
            _ => control,
        };
        if let ProvisionMessage::DeployPayload { .. } = envelope.msg {
            if let Some(Session::Deploying(server)) = edge.session(&envelope.app) {
                self.queue.schedule(now + deploy, EventPayload::DeployComplete { manager, server });
            }
        }
        for reply in replies {
            if let ProvisionMessage::TerminationReport(report) = &reply.msg {
                self.record_termination(now, report, false);
            }
            self.send(now + delay, Endpoint::Cloud(manager), reply);
        }
        detail
    }

    fn on_cloud_msg(&mut self, now: f64, manager: usize, envelope: Envelope) -> String {
        let detail = format!("to=cloud {}", Self::describe(&envelope));
        let control = self.control_delay_s();
        let app = self.managers[manager].app.clone();
        match envelope.msg {
            ProvisionMessage::ServiceOffer => {
                let setup = ProvisionMessage::SetupRequest(self.managers[manager].request.clone());
                self.send(now + control, Endpoint::Edge, Envelope::new(app, setup));
            }
            ProvisionMessage::Accept { container, .. } => {
                self.managers[manager].server = Some(container);
                let users = &self.managers[manager].request.users;
                let snapshot = self.cloud.global.extract_user_keys(users).expect("manager users are global users");
                self.cloud.traffic.charge_migration(snapshot.payload_bytes());
                let image = self.managers[manager].image.clone();
                self.send(
                    now + control,
                    Endpoint::Edge,
                    Envelope::new(app, ProvisionMessage::DeployPayload { image, snapshot }),
                );
            }
            ProvisionMessage::Reject(reason) => self.out.rejections.push((app, reason)),
            ProvisionMessage::TerminationReport(report) if self.managers[manager].server == Some(report.server_id) => {
                self.managers[manager].server = None;
            }
            _ => {}
        }
        detail
    }

    fn on_deploy_complete(&mut self, now: f64, manager: usize, server: ServerId) -> String {
        let edge = self.edge.as_mut().expect("fog mode");
        match edge.complete_launch(&mut self.cloud, server) {
            Ok(ready) => {
                self.edge_windows.insert(server, RateWindow::new(self.cfg.workload.rate_window_s));
                let control = self.control_delay_s();
                self.send(now + control, Endpoint::Cloud(manager), ready);
                let mut detail = format!("{server} running");
                if self.cfg.autoscaler.enabled && self.cfg.autoscaler.on_ready {
                    detail.push_str("; ");
                    detail.push_str(&self.autoscale(now));
                }
                detail
            }
            // The server may have been evicted while installing.
            Err(e) => format!("{server} not launched: {e}"),
        }
    }

    fn on_override(&mut self, now: f64, manager: usize) -> String {
        let app = self.managers[manager].app.clone();
        match self.managers[manager].server {
            Some(server) if self.edge.as_ref().is_some_and(|e| e.node().server(server).is_some()) => {
                let control = self.control_delay_s();
                self.send(
                    now + control,
                    Endpoint::Edge,
                    Envelope::new(app.clone(), ProvisionMessage::TerminateOrder(server)),
                );
                format!("{app} orders {server} off the edge")
            }
            _ => format!("{app} has nothing to terminate"),
        }
    }

    fn record_termination(&mut self, now: f64, report: &TerminationReport, eviction: bool) {
        self.edge_windows.remove(&report.server_id);
        self.edge_dirty.remove(&report.server_id);
        self.out.terminations.push(TerminationRecord {
            time_s: now,
            server_id: report.server_id,
            reason: report.reason,
            users: report.redirected_users.len(),
            migrated_bytes: report.migrated_snapshot.payload_bytes(),
            released: report.released,
            eviction,
        });
    }

    fn autoscale(&mut self, now: f64) -> String {
        let Some(edge) = self.edge.as_mut() else { return String::new() };
        self.round += 1;
        let rng = &mut self.rng;
        let windows = &mut self.edge_windows;
        let link = self.links.user_edge;
        let work = self.cfg.node.edge_work_ms;
        let width = self.cfg.workload.rate_window_s;
        let entries = self.autoscaler.round(edge, &mut self.cloud, |server| {
            let rate = windows.entry(server.id).or_insert_with(|| RateWindow::new(width)).rate(now);
            let compute = service_time(work, server.allocated.cpu_cores, rate);
            crate::autoscaler::monitor_sample(server, |_| rtt(&link, 0.0, rng), compute)
        });
        let mut removed = Vec::new();
        for entry in &entries {
            let eviction = matches!(entry.action, RoundAction::Scaled(_) | RoundAction::NoHeadroom { .. });
            for report in entry.action.removed() {
                removed.push((report.clone(), eviction));
            }
        }
        let edge = self.edge.as_ref().expect("checked above");
        let free_after = edge.node().free();
        let rows: Vec<AuditRow> = entries
            .into_iter()
            .map(|entry| AuditRow {
                round: self.round,
                time_s: now,
                allocated_after: edge.node().server(entry.server_id).map_or(ResourceVector::ZERO, |s| s.allocated),
                free_after,
                entry,
            })
            .collect();
        let summary =
            rows.iter().map(|r| format!("{}:{}", r.entry.server_id, r.entry.action.label())).collect::<Vec<_>>();
        self.out.audit.extend(rows);
        for (report, eviction) in removed {
            self.record_termination(now, &report, eviction);
            for m in &mut self.managers {
                if m.server == Some(report.server_id) {
                    m.server = None;
                }
            }
        }
        format!("round={} [{}]", self.round, summary.join(" "))
    }
}
