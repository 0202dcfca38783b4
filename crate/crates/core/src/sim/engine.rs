//! Event queue with a monotone simulated clock.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::{ResourceVector, ServerId};
use crate::provisioning::Envelope;

/// Which side of the edge/cloud link a control message is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Edge,
    /// Index into the scenario's cloud managers.
    Cloud(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventPayload {
    /// Index into the generated workload.
    UserRequest(usize),
    MonitorTick,
    ProvisionMsg {
        to: Endpoint,
        envelope: Envelope,
    },
    /// A deferred launch finishing after the deploy stage.
    DeployComplete {
        manager: usize,
        server: ServerId,
    },
    /// A cloud manager's scheduled termination override.
    CloudOverride {
        manager: usize,
    },
    BasicLoadChange(ResourceVector),
    SyncTick,
    ScenarioEnd,
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::UserRequest(_) => "user_request",
            EventPayload::MonitorTick => "monitor_tick",
            EventPayload::ProvisionMsg { .. } => "provision_msg",
            EventPayload::DeployComplete { .. } => "deploy_complete",
            EventPayload::CloudOverride { .. } => "cloud_override",
            EventPayload::BasicLoadChange(_) => "basic_load_change",
            EventPayload::SyncTick => "sync_tick",
            EventPayload::ScenarioEnd => "scenario_end",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub payload: EventPayload,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    /// Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` at absolute time `time`. Times in the past are
    /// moved up to the current clock.
    pub fn schedule(&mut self, time: f64, payload: EventPayload) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time: time.max(self.now), seq, payload });
        seq
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let event = self.heap.pop()?;
        assert!(event.time >= self.now, "clock moved backwards: {} < {}", event.time, self.now);
        self.now = event.time;
        Some(event)
    }
}
