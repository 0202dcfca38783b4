//! Domain types and resource/port arithmetic for a single edge node.
//!
//! The node keeps the accounting identity
//! `free - deficit + basic_demand + Σ allocated = capacity` after every
//! completed operation. `deficit` is non-zero only while a basic-service
//! burst has overcommitted the node; `free` is then reported as zero.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// CPU cores plus memory in megabytes. Both components are whole numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu_cores: u32,
    pub memory_mb: u32,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu_cores: 0, memory_mb: 0 };

    pub const fn new(cpu_cores: u32, memory_mb: u32) -> Self {
        Self { cpu_cores, memory_mb }
    }

    /// Component-wise `self >= other`.
    pub fn covers(&self, other: &ResourceVector) -> bool {
        self.cpu_cores >= other.cpu_cores && self.memory_mb >= other.memory_mb
    }

    pub fn is_zero(&self) -> bool {
        self.cpu_cores == 0 && self.memory_mb == 0
    }

    /// Subtraction that fails instead of saturating when either component
    /// would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu_cores: self.cpu_cores.checked_sub(other.cpu_cores)?,
            memory_mb: self.memory_mb.checked_sub(other.memory_mb)?,
        })
    }

    pub fn checked_add(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu_cores: self.cpu_cores.checked_add(other.cpu_cores)?,
            memory_mb: self.memory_mb.checked_add(other.memory_mb)?,
        })
    }

    pub fn scaled(&self, factor: u32) -> ResourceVector {
        ResourceVector::new(self.cpu_cores * factor, self.memory_mb * factor)
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(self.cpu_cores + rhs.cpu_cores, self.memory_mb + rhs.memory_mb)
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, |acc, r| acc + r)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} cores, {} MB)", self.cpu_cores, self.memory_mb)
    }
}

/// The atomic allocation increment. Defaults to one core and 200 MB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResourceUnit(ResourceVector);

impl ResourceUnit {
    pub fn new(value: ResourceVector) -> Result<Self, ModelError> {
        if value.cpu_cores == 0 || value.memory_mb == 0 {
            return Err(ModelError::InvalidUnit(value));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> ResourceVector {
        self.0
    }
}

impl Default for ResourceUnit {
    fn default() -> Self {
        Self(ResourceVector::new(1, 200))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AppId(pub String);

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub u64);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Static application priority.
///
/// `Ord` is the rank order: `a > b` means `a` ranks ahead of `b`. Higher
/// level wins; on equal levels the earlier arrival wins.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Priority {
    pub level: i32,
    pub app_id: AppId,
    pub arrival_seq: u64,
}

impl Priority {
    pub fn new(level: i32, app_id: impl Into<String>, arrival_seq: u64) -> Self {
        Self { level, app_id: AppId(app_id.into()), arrival_seq }
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .cmp(&other.level)
            .then_with(|| other.arrival_seq.cmp(&self.arrival_seq))
            .then_with(|| other.app_id.cmp(&self.app_id))
    }
}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortAssignment {
    pub service_ports: BTreeSet<u16>,
    pub access_port: u16,
}

impl PortAssignment {
    pub fn all_ports(&self) -> impl Iterator<Item = u16> + '_ {
        self.service_ports.iter().copied().chain(std::iter::once(self.access_port))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceRequest {
    pub app_id: AppId,
    pub priority: Priority,
    pub requested_ports: BTreeSet<u16>,
    pub latency_objective_ms: f64,
    pub users: BTreeSet<UserId>,
}

impl ServiceRequest {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.latency_objective_ms.is_finite() || self.latency_objective_ms <= 0.0 {
            return Err(ModelError::InvalidRequest("latency objective must be positive"));
        }
        if self.requested_ports.is_empty() {
            return Err(ModelError::InvalidRequest("at least one port must be requested"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServerState {
    Initialising,
    Deploying,
    Running,
    Terminating,
}

impl ServerState {
    fn successor(self) -> Option<ServerState> {
        match self {
            ServerState::Initialising => Some(ServerState::Deploying),
            ServerState::Deploying => Some(ServerState::Running),
            ServerState::Running => Some(ServerState::Terminating),
            ServerState::Terminating => None,
        }
    }
}

/// One offloaded application server hosted in a container on the node.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeServer {
    pub id: ServerId,
    pub priority: Priority,
    pub ports: PortAssignment,
    pub allocated: ResourceVector,
    pub users: BTreeSet<UserId>,
    pub latency_objective_ms: f64,
    state: ServerState,
}

impl EdgeServer {
    pub fn new(id: ServerId, request: &ServiceRequest, ports: PortAssignment, allocated: ResourceVector) -> Self {
        Self {
            id,
            priority: request.priority.clone(),
            ports,
            allocated,
            users: request.users.clone(),
            latency_objective_ms: request.latency_objective_ms,
            state: ServerState::Initialising,
        }
    }

    pub fn state(&self) -> ServerState {
        self.state
    }

    /// Moves one step along Initialising → Deploying → Running → Terminating.
    pub fn advance(&mut self, to: ServerState) -> Result<(), ModelError> {
        if self.state.successor() == Some(to) {
            self.state = to;
            Ok(())
        } else {
            Err(ModelError::IllegalTransition { server: self.id, from: self.state, to })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("insufficient resources: requested {requested}, free {free}")]
    InsufficientResources { requested: ResourceVector, free: ResourceVector },
    #[error("accounting violation: releasing {amount} would exceed capacity")]
    AccountingViolation { amount: ResourceVector },
    #[error("ports exhausted: need {needed}, {available} free")]
    PortsExhausted { needed: usize, available: usize },
    #[error("server {0} already present")]
    DuplicateServer(ServerId),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("edge services unavailable on this node")]
    ServiceUnavailable,
    #[error("illegal state transition for {server}: {from:?} -> {to:?}")]
    IllegalTransition { server: ServerId, from: ServerState, to: ServerState },
    #[error("resource unit must be positive in both components, got {0}")]
    InvalidUnit(ResourceVector),
    #[error("invalid service request: {0}")]
    InvalidRequest(&'static str),
    #[error("basic demand {basic} exceeds node capacity {capacity}")]
    BasicExceedsCapacity { basic: ResourceVector, capacity: ResourceVector },
}

/// Signed per-component balance used while renormalising free/deficit.
fn balance(free: ResourceVector, deficit: ResourceVector) -> (i64, i64) {
    (free.cpu_cores as i64 - deficit.cpu_cores as i64, free.memory_mb as i64 - deficit.memory_mb as i64)
}

fn split_balance((cpu, mem): (i64, i64)) -> (ResourceVector, ResourceVector) {
    let pos = |v: i64| v.max(0) as u32;
    let neg = |v: i64| (-v).max(0) as u32;
    (ResourceVector::new(pos(cpu), pos(mem)), ResourceVector::new(neg(cpu), neg(mem)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeNodeState {
    pub capacity: ResourceVector,
    basic_demand: ResourceVector,
    free: ResourceVector,
    deficit: ResourceVector,
    servers: Vec<EdgeServer>,
    port_pool: BTreeSet<u16>,
    service: bool,
}

impl EdgeNodeState {
    pub fn new(
        capacity: ResourceVector,
        basic_demand: ResourceVector,
        ports: impl IntoIterator<Item = u16>,
    ) -> Result<Self, ModelError> {
        let free = capacity
            .checked_sub(&basic_demand)
            .ok_or(ModelError::BasicExceedsCapacity { basic: basic_demand, capacity })?;
        Ok(Self {
            capacity,
            basic_demand,
            free,
            deficit: ResourceVector::ZERO,
            servers: Vec::new(),
            port_pool: ports.into_iter().collect(),
            service: true,
        })
    }

    /// Free resources available to edge servers (R). Zero while in deficit.
    pub fn free(&self) -> ResourceVector {
        self.free
    }

    /// Amount by which basic demand plus allocations exceed capacity.
    pub fn deficit(&self) -> ResourceVector {
        self.deficit
    }

    pub fn in_deficit(&self) -> bool {
        !self.deficit.is_zero()
    }

    pub fn basic_demand(&self) -> ResourceVector {
        self.basic_demand
    }

    pub fn servers(&self) -> &[EdgeServer] {
        &self.servers
    }

    pub fn server(&self, id: ServerId) -> Option<&EdgeServer> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn server_mut(&mut self, id: ServerId) -> Option<&mut EdgeServer> {
        self.servers.iter_mut().find(|s| s.id == id)
    }

    pub fn rank_of(&self, id: ServerId) -> Option<usize> {
        self.servers.iter().position(|s| s.id == id)
    }

    pub fn port_pool(&self) -> &BTreeSet<u16> {
        &self.port_pool
    }

    pub fn service(&self) -> bool {
        self.service
    }

    /// Withdraws edge services. Only legal once every server is gone.
    pub fn set_service(&mut self, on: bool) -> Result<(), ModelError> {
        if !on && !self.servers.is_empty() {
            return Err(ModelError::InvalidRequest("servers must be terminated before withdrawing service"));
        }
        self.service = on;
        Ok(())
    }

    pub fn allocated_total(&self) -> ResourceVector {
        self.servers.iter().map(|s| s.allocated).sum()
    }

    /// Debits the free pool. The caller credits the amount to a server.
    pub fn allocate(&mut self, amount: ResourceVector) -> Result<(), ModelError> {
        match self.free.checked_sub(&amount) {
            Some(rest) => {
                self.free = rest;
                Ok(())
            }
            None => Err(ModelError::InsufficientResources { requested: amount, free: self.free }),
        }
    }

    /// Credits the free pool with resources a server no longer holds.
    pub fn release(&mut self, amount: ResourceVector) -> Result<(), ModelError> {
        let (cpu, mem) = balance(self.free, self.deficit);
        let next = (cpu + amount.cpu_cores as i64, mem + amount.memory_mb as i64);
        let committed = self.basic_demand + self.allocated_total();
        if next.0 + committed.cpu_cores as i64 > self.capacity.cpu_cores as i64
            || next.1 + committed.memory_mb as i64 > self.capacity.memory_mb as i64
        {
            return Err(ModelError::AccountingViolation { amount });
        }
        (self.free, self.deficit) = split_balance(next);
        Ok(())
    }

    /// Replaces the basic-service demand, moving the node into or out of
    /// deficit as needed.
    pub fn set_basic_demand(&mut self, demand: ResourceVector) -> Result<(), ModelError> {
        if !self.capacity.covers(&demand) {
            return Err(ModelError::BasicExceedsCapacity { basic: demand, capacity: self.capacity });
        }
        let (cpu, mem) = balance(self.free, self.deficit);
        let next = (
            cpu - demand.cpu_cores as i64 + self.basic_demand.cpu_cores as i64,
            mem - demand.memory_mb as i64 + self.basic_demand.memory_mb as i64,
        );
        (self.free, self.deficit) = split_balance(next);
        self.basic_demand = demand;
        Ok(())
    }

    /// Reserves service and access ports for a new server.
    ///
    /// Requested ports are honoured when every one of them is free;
    /// otherwise the lowest-numbered free ports stand in. The access port
    /// is always the lowest free port left after the service ports.
    pub fn reserve_ports(&mut self, requested: &BTreeSet<u16>) -> Result<PortAssignment, ModelError> {
        if !self.service {
            return Err(ModelError::ServiceUnavailable);
        }
        let assignment = self.plan_ports(requested)?;
        for port in assignment.all_ports() {
            self.port_pool.remove(&port);
        }
        Ok(assignment)
    }

    /// Computes what `reserve_ports` would return without mutating.
    pub fn plan_ports(&self, requested: &BTreeSet<u16>) -> Result<PortAssignment, ModelError> {
        let needed = requested.len() + 1;
        if self.port_pool.len() < needed {
            return Err(ModelError::PortsExhausted { needed, available: self.port_pool.len() });
        }
        let service_ports: BTreeSet<u16> = if requested.iter().all(|p| self.port_pool.contains(p)) {
            requested.clone()
        } else {
            self.port_pool.iter().copied().take(requested.len()).collect()
        };
        let access_port = self
            .port_pool
            .iter()
            .copied()
            .find(|p| !service_ports.contains(p))
            .ok_or(ModelError::PortsExhausted { needed, available: self.port_pool.len() })?;
        Ok(PortAssignment { service_ports, access_port })
    }

    pub fn return_ports(&mut self, ports: &PortAssignment) {
        self.port_pool.extend(ports.all_ports());
    }

    /// Inserts keeping the rank order; equal levels keep arrival order.
    pub fn insert_ordered(&mut self, server: EdgeServer) -> Result<(), ModelError> {
        if self.servers.iter().any(|s| s.id == server.id) {
            return Err(ModelError::DuplicateServer(server.id));
        }
        let at = self.servers.partition_point(|s| s.priority > server.priority);
        self.servers.insert(at, server);
        Ok(())
    }

    /// Detaches a server without touching the resource pool.
    pub fn remove_server(&mut self, id: ServerId) -> Result<EdgeServer, ModelError> {
        let rank = self.rank_of(id).ok_or(ModelError::UnknownServer(id))?;
        Ok(self.servers.remove(rank))
    }

    /// Checks the accounting identity, port uniqueness and rank order.
    pub fn check_invariants(&self) -> Result<(), String> {
        let committed = self.basic_demand + self.allocated_total();
        let (cpu, mem) = balance(self.free, self.deficit);
        if cpu + committed.cpu_cores as i64 != self.capacity.cpu_cores as i64
            || mem + committed.memory_mb as i64 != self.capacity.memory_mb as i64
        {
            return Err(format!(
                "conservation: free {} deficit {} basic {} allocated {} capacity {}",
                self.free,
                self.deficit,
                self.basic_demand,
                self.allocated_total(),
                self.capacity
            ));
        }
        // One component may be in deficit while the other is free, never both on the same one.
        if (self.free.cpu_cores > 0 && self.deficit.cpu_cores > 0)
            || (self.free.memory_mb > 0 && self.deficit.memory_mb > 0)
        {
            return Err("free and deficit overlap".into());
        }
        let mut seen = BTreeSet::new();
        for server in &self.servers {
            for port in server.ports.all_ports() {
                if self.port_pool.contains(&port) || !seen.insert(port) {
                    return Err(format!("port {port} held twice"));
                }
            }
        }
        if self.servers.windows(2).any(|w| w[0].priority < w[1].priority) {
            return Err("server list out of rank order".into());
        }
        if !self.service && !self.servers.is_empty() {
            return Err("service withdrawn while servers remain".into());
        }
        Ok(())
    }
}
