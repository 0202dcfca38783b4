//! Cloud/edge manager messages and their line-delimited wire form.
//!
//! Each message is one line of tab-separated fields. The first field is
//! the application id the session belongs to, the second a tag, then
//! `key=value` fields in the fixed order listed below:
//!
//! | tag         | fields                                                           |
//! |-------------|------------------------------------------------------------------|
//! | `QUERY`     |                                                                  |
//! | `OFFER`     |                                                                  |
//! | `SETUP`     | `level` `seq` `ports` `objective_ms` `users`                      |
//! | `ACCEPT`    | `service` `access` `container`                                   |
//! | `REJECT`    | `reason`                                                         |
//! | `DEPLOY`    | `image` `snapshot_users` `snapshot`                              |
//! | `READY`     |                                                                  |
//! | `TERMINATE` | `server`                                                         |
//! | `REPORT`    | `server` `reason` `released` `redirected` `snapshot_users` `snapshot` |
//!
//! Lists are comma separated. `released` is `cores,mb`. A snapshot entry
//! is `user:attribute:version:hex`. Free text (`app id`, `image`) escapes
//! backslash, tab and newline as `\\`, `\t`, `\n`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::datastore::KeyValueView;
use crate::model::{AppId, PortAssignment, Priority, ResourceVector, ServerId, ServiceRequest, UserId};

use super::{TerminationReason, TerminationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RejectReason {
    InsufficientResources,
    PriorityTooLow,
    PortsExhausted,
    ServiceUnavailable,
    InvalidRequest,
}

impl RejectReason {
    fn as_str(self) -> &'static str {
        match self {
            RejectReason::InsufficientResources => "insufficient_resources",
            RejectReason::PriorityTooLow => "priority_too_low",
            RejectReason::PortsExhausted => "ports_exhausted",
            RejectReason::ServiceUnavailable => "service_unavailable",
            RejectReason::InvalidRequest => "invalid_request",
        }
    }
}

impl FromStr for RejectReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "insufficient_resources" => RejectReason::InsufficientResources,
            "priority_too_low" => RejectReason::PriorityTooLow,
            "ports_exhausted" => RejectReason::PortsExhausted,
            "service_unavailable" => RejectReason::ServiceUnavailable,
            "invalid_request" => RejectReason::InvalidRequest,
            _ => return Err(()),
        })
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProvisionMessage {
    ServiceQuery,
    ServiceOffer,
    SetupRequest(ServiceRequest),
    Accept { ports: PortAssignment, container: ServerId },
    Reject(RejectReason),
    DeployPayload { image: String, snapshot: KeyValueView },
    Ready,
    TerminateOrder(ServerId),
    TerminationReport(TerminationReport),
}

impl ProvisionMessage {
    pub fn tag(&self) -> &'static str {
        match self {
            ProvisionMessage::ServiceQuery => "QUERY",
            ProvisionMessage::ServiceOffer => "OFFER",
            ProvisionMessage::SetupRequest(_) => "SETUP",
            ProvisionMessage::Accept { .. } => "ACCEPT",
            ProvisionMessage::Reject(_) => "REJECT",
            ProvisionMessage::DeployPayload { .. } => "DEPLOY",
            ProvisionMessage::Ready => "READY",
            ProvisionMessage::TerminateOrder(_) => "TERMINATE",
            ProvisionMessage::TerminationReport(_) => "REPORT",
        }
    }
}

/// A message tagged with the application session it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub app: AppId,
    pub msg: ProvisionMessage,
}

impl Envelope {
    pub fn new(app: AppId, msg: ProvisionMessage) -> Self {
        Self { app, msg }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("empty line")]
    Empty,
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("bad value for field {0}")]
    BadField(&'static str),
    #[error("unexpected trailing fields")]
    Trailing,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                't' => out.push('\t'),
                'n' => out.push('\n'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn snapshot_fields(view: &KeyValueView) -> (String, String) {
    let users = join(view.users().iter().map(|u| u.0));
    let entries =
        join(view.entries().map(|(u, a, e)| format!("{}:{}:{}:{}", u.0, a, e.version, hex::encode(&e.value))));
    (users, entries)
}

fn parse_reason(s: &str) -> Option<TerminationReason> {
    Some(match s {
        "no_resources" => TerminationReason::NoResources,
        "idle" => TerminationReason::Idle,
        "no_qos_improvement" => TerminationReason::NoQoSImprovement,
        "cloud_override" => TerminationReason::CloudOverride,
        _ => return None,
    })
}

/// Serialises one envelope as a single line without the trailing newline.
pub fn encode_line(env: &Envelope) -> String {
    let mut line = escape(&env.app.0);
    line.push('\t');
    line.push_str(env.msg.tag());
    let mut field = |k: &str, v: &str| {
        let _ = write!(line, "\t{k}={v}");
    };
    match &env.msg {
        ProvisionMessage::ServiceQuery | ProvisionMessage::ServiceOffer | ProvisionMessage::Ready => {}
        ProvisionMessage::SetupRequest(req) => {
            field("level", &req.priority.level.to_string());
            field("seq", &req.priority.arrival_seq.to_string());
            field("ports", &join(&req.requested_ports));
            field("objective_ms", &req.latency_objective_ms.to_string());
            field("users", &join(req.users.iter().map(|u| u.0)));
        }
        ProvisionMessage::Accept { ports, container } => {
            field("service", &join(&ports.service_ports));
            field("access", &ports.access_port.to_string());
            field("container", &container.0.to_string());
        }
        ProvisionMessage::Reject(reason) => field("reason", reason.as_str()),
        ProvisionMessage::DeployPayload { image, snapshot } => {
            let (users, entries) = snapshot_fields(snapshot);
            field("image", &escape(image));
            field("snapshot_users", &users);
            field("snapshot", &entries);
        }
        ProvisionMessage::TerminateOrder(server) => field("server", &server.0.to_string()),
        ProvisionMessage::TerminationReport(report) => {
            let (users, entries) = snapshot_fields(&report.migrated_snapshot);
            field("server", &report.server_id.0.to_string());
            field("reason", report.reason.label());
            field("released", &format!("{},{}", report.released.cpu_cores, report.released.memory_mb));
            field("redirected", &join(report.redirected_users.iter().map(|u| u.0)));
            field("snapshot_users", &users);
            field("snapshot", &entries);
        }
    }
    line
}

struct Fields<'a> {
    iter: std::str::Split<'a, char>,
}

impl<'a> Fields<'a> {
    fn next(&mut self, key: &'static str) -> Result<&'a str, WireError> {
        let raw = self.iter.next().ok_or(WireError::MissingField(key))?;
        raw.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or(WireError::MissingField(key))
    }

    fn parse<T: FromStr>(&mut self, key: &'static str) -> Result<T, WireError> {
        self.next(key)?.parse().map_err(|_| WireError::BadField(key))
    }

    fn list<T: FromStr + Ord>(&mut self, key: &'static str) -> Result<BTreeSet<T>, WireError> {
        let raw = self.next(key)?;
        raw.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().map_err(|_| WireError::BadField(key))).collect()
    }

    fn snapshot(&mut self) -> Result<KeyValueView, WireError> {
        let users: BTreeSet<u32> = self.list("snapshot_users")?;
        let raw = self.next("snapshot")?;
        let mut text = String::from("users\t");
        text.push_str(&join(&users));
        text.push('\n');
        for entry in raw.split(',').filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = entry.split(':').collect();
            if parts.len() != 4 {
                return Err(WireError::BadField("snapshot"));
            }
            text.push_str(&parts.join("\t"));
            text.push('\n');
        }
        KeyValueView::from_text(&text).map_err(|_| WireError::BadField("snapshot"))
    }

    fn finish(mut self) -> Result<(), WireError> {
        match self.iter.next() {
            None => Ok(()),
            Some(_) => Err(WireError::Trailing),
        }
    }
}

pub fn decode_line(line: &str) -> Result<Envelope, WireError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    if line.is_empty() {
        return Err(WireError::Empty);
    }
    let mut iter = line.split('\t');
    let app = AppId(unescape(iter.next().ok_or(WireError::Empty)?).ok_or(WireError::BadField("app"))?);
    let tag = iter.next().ok_or(WireError::MissingField("tag"))?;
    let mut f = Fields { iter };
    let msg = match tag {
        "QUERY" => ProvisionMessage::ServiceQuery,
        "OFFER" => ProvisionMessage::ServiceOffer,
        "READY" => ProvisionMessage::Ready,
        "SETUP" => {
            let level = f.parse("level")?;
            let seq = f.parse("seq")?;
            let requested_ports = f.list("ports")?;
            let latency_objective_ms = f.parse("objective_ms")?;
            let users = f.list::<u32>("users")?.into_iter().map(UserId).collect();
            ProvisionMessage::SetupRequest(ServiceRequest {
                app_id: app.clone(),
                priority: Priority { level, app_id: app.clone(), arrival_seq: seq },
                requested_ports,
                latency_objective_ms,
                users,
            })
        }
        "ACCEPT" => {
            let service_ports = f.list("service")?;
            let access_port = f.parse("access")?;
            let container = ServerId(f.parse("container")?);
            ProvisionMessage::Accept { ports: PortAssignment { service_ports, access_port }, container }
        }
        "REJECT" => ProvisionMessage::Reject(f.parse("reason")?),
        "DEPLOY" => {
            let image = unescape(f.next("image")?).ok_or(WireError::BadField("image"))?;
            let snapshot = f.snapshot()?;
            ProvisionMessage::DeployPayload { image, snapshot }
        }
        "TERMINATE" => ProvisionMessage::TerminateOrder(ServerId(f.parse("server")?)),
        "REPORT" => {
            let server_id = ServerId(f.parse("server")?);
            let reason = parse_reason(f.next("reason")?).ok_or(WireError::BadField("reason"))?;
            let released = f.next("released")?;
            let (cpu, mem) = released.split_once(',').ok_or(WireError::BadField("released"))?;
            let released = ResourceVector::new(
                cpu.parse().map_err(|_| WireError::BadField("released"))?,
                mem.parse().map_err(|_| WireError::BadField("released"))?,
            );
            let redirected_users = f.list::<u32>("redirected")?.into_iter().map(UserId).collect();
            let migrated_snapshot = f.snapshot()?;
            ProvisionMessage::TerminationReport(TerminationReport {
                server_id,
                migrated_snapshot,
                released,
                redirected_users,
                reason,
            })
        }
        other => return Err(WireError::UnknownTag(other.to_owned())),
    };
    f.finish()?;
    Ok(Envelope { app, msg })
}

/// Renders a whole trace, one envelope per line.
pub fn encode_trace<'a>(envs: impl IntoIterator<Item = &'a Envelope>) -> String {
    let mut out = String::new();
    for env in envs {
        out.push_str(&encode_line(env));
        out.push('\n');
    }
    out
}

pub fn decode_trace(text: &str) -> Result<Vec<Envelope>, (usize, WireError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| decode_line(l).map_err(|e| (i + 1, e)))
        .collect()
}
