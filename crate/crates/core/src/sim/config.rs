//! Scenario configuration.
//!
//! Scenarios are TOML documents. Every section and field is optional and
//! falls back to the defaults below; unknown fields are rejected with their
//! full path.
//!
//! ```toml
//! [scenario]
//! name = "example"
//! duration_s = 300.0        # length of the workload window
//! workload_start_s = 30.0   # workload begins after provisioning settles
//! mode = "fog"              # or "cloud_only"
//! record_trace = true
//!
//! [node]
//! cpu_cores = 8
//! memory_mb = 2048
//! port_start = 9000         # half-open port range offered to containers
//! port_end = 9100
//! unit_cpu = 1              # resource unit
//! unit_mb = 200
//! edge_work_ms = 6.6        # single-core work per request
//!
//! [cloud]
//! cores = 2
//! work_ms = 4.0
//!
//! [links]
//! edge_rtt_ms = 15.0
//! cloud_rtt_ms = 40.0
//! jitter_fraction = 0.2     # uniform half-width as a share of the base
//! per_kb_ms = 0.0
//!
//! [workload]
//! behavior = "mixed"        # or "aggressive"
//! n_users = 128
//! intensive_kb = [8.0, 24.0]
//! regular_kb = [0.5, 1.5]
//! pause_mean_s = 2.0
//! uplink_kb_per_s = 146.6
//! global_fraction = 0.10    # default 0.10 mixed, 0.05 aggressive
//! attributes = 3            # keys per user in the global view
//! attribute_bytes = 4096
//! rate_window_s = 10.0
//! sync_period_s = 60.0
//! sync_key_bytes = 256
//! config_message_bytes = 512
//!
//! [basic_service]
//! cpu_cores = 2
//! memory_mb = 400
//! bursts = [{ start_s = 60.0, end_s = 90.0, cpu_cores = 3, memory_mb = 600 }]
//! # csv = "basic.csv"       # replaces the above; relative to this file
//!
//! [autoscaler]
//! enabled = true
//! period_s = 300.0
//! on_ready = true           # also run a round whenever a server launches
//! hysteresis_ms = 0.0
//! idle_grace_rounds = 0
//! grant = "one_unit"        # or "all_released"
//! round_base_s = 5.255
//! round_per_server_s = 0.045
//! round_per_user_s = 0.00002
//!
//! [provisioning]
//! admission = "at_least_minimum"   # or "exceed_all"
//! handshake_s = 9.0
//! deploy_s = 9.0
//! terminate_s = 5.0
//! surcharge_per_container = 0.0002
//! surcharge_cap = 0.03
//!
//! [[cloud_managers]]
//! app_id = "game"
//! level = 5
//! users = 32                # omitted: an even share of the unassigned users
//! request_at_s = 0.0
//! objective_ms = 100.0
//! ports = [9001]
//! image = "app-server"
//! # terminate_at_s = 200.0  # cloud-side override
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use super::basic::{BasicServiceTrace, Burst};
use super::network::LinkModel;
use super::workload::{BehaviorKind, BehaviorProfile};
use crate::autoscaler::{AutoscalePolicy, GrantPolicy};
use crate::model::{ResourceUnit, ResourceVector};
use crate::provisioning::{AdmissionRule, ProvisioningConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}: {reason}")]
    Io { file: PathBuf, reason: String },
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

impl ConfigError {
    fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { path: path.into(), message: message.into() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fog,
    CloudOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fog => "fog",
            Mode::CloudOnly => "cloud_only",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fog" => Ok(Mode::Fog),
            "cloud_only" | "cloud-only" | "cloud" => Ok(Mode::CloudOnly),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub name: String,
    pub duration_s: f64,
    pub workload_start_s: f64,
    pub mode: Mode,
    pub record_trace: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { name: "scenario".into(), duration_s: 300.0, workload_start_s: 30.0, mode: Mode::Fog, record_trace: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSection {
    pub cpu_cores: u32,
    pub memory_mb: u32,
    pub port_start: u16,
    pub port_end: u16,
    pub unit_cpu: u32,
    pub unit_mb: u32,
    pub edge_work_ms: f64,
}

impl Default for NodeSection {
    fn default() -> Self {
        Self {
            cpu_cores: 8,
            memory_mb: 2048,
            port_start: 9000,
            port_end: 9100,
            unit_cpu: 1,
            unit_mb: 200,
            edge_work_ms: 6.6,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSection {
    pub cores: u32,
    pub work_ms: f64,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self { cores: 2, work_ms: 4.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinksSection {
    pub edge_rtt_ms: f64,
    pub cloud_rtt_ms: f64,
    pub jitter_fraction: f64,
    pub per_kb_ms: f64,
}

impl Default for LinksSection {
    fn default() -> Self {
        Self { edge_rtt_ms: 15.0, cloud_rtt_ms: 40.0, jitter_fraction: 0.2, per_kb_ms: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorName {
    Aggressive,
    #[default]
    Mixed,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    pub behavior: BehaviorName,
    pub n_users: u32,
    pub intensive_kb: [f64; 2],
    pub regular_kb: [f64; 2],
    pub pause_mean_s: f64,
    pub uplink_kb_per_s: f64,
    pub global_fraction: Option<f64>,
    pub attributes: u32,
    pub attribute_bytes: u32,
    pub rate_window_s: f64,
    pub sync_period_s: f64,
    pub sync_key_bytes: u64,
    pub config_message_bytes: u64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        let mixed = BehaviorProfile::mixed();
        Self {
            behavior: BehaviorName::Mixed,
            n_users: 128,
            intensive_kb: [mixed.intensive_kb.0, mixed.intensive_kb.1],
            regular_kb: [mixed.regular_kb.0, mixed.regular_kb.1],
            pause_mean_s: mixed.pause_mean_s,
            uplink_kb_per_s: mixed.uplink_kb_per_s,
            global_fraction: None,
            attributes: 3,
            attribute_bytes: 4096,
            rate_window_s: 10.0,
            sync_period_s: 60.0,
            sync_key_bytes: 256,
            config_message_bytes: 512,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSection {
    pub start_s: f64,
    pub end_s: f64,
    pub cpu_cores: u32,
    pub memory_mb: u32,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasicServiceSection {
    pub cpu_cores: u32,
    pub memory_mb: u32,
    pub bursts: Vec<BurstSection>,
    pub csv: Option<PathBuf>,
}

impl Default for BasicServiceSection {
    fn default() -> Self {
        Self { cpu_cores: 2, memory_mb: 400, bursts: Vec::new(), csv: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantName {
    #[default]
    OneUnit,
    AllReleased,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoscalerSection {
    pub enabled: bool,
    pub period_s: f64,
    pub on_ready: bool,
    pub hysteresis_ms: f64,
    pub idle_grace_rounds: u32,
    pub grant: GrantName,
    pub round_base_s: f64,
    pub round_per_server_s: f64,
    pub round_per_user_s: f64,
}

impl Default for AutoscalerSection {
    fn default() -> Self {
        let p = AutoscalePolicy::default();
        Self {
            enabled: true,
            period_s: p.period_s,
            on_ready: true,
            hysteresis_ms: p.hysteresis_ms,
            idle_grace_rounds: p.idle_grace_rounds,
            grant: GrantName::OneUnit,
            round_base_s: p.round_base_s,
            round_per_server_s: p.round_per_server_s,
            round_per_user_s: p.round_per_user_s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionName {
    #[default]
    AtLeastMinimum,
    ExceedAll,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProvisioningSection {
    pub admission: AdmissionName,
    pub handshake_s: f64,
    pub deploy_s: f64,
    pub terminate_s: f64,
    pub surcharge_per_container: f64,
    pub surcharge_cap: f64,
}

impl Default for ProvisioningSection {
    fn default() -> Self {
        let p = ProvisioningConfig::default();
        Self {
            admission: AdmissionName::AtLeastMinimum,
            handshake_s: p.handshake_s,
            deploy_s: p.deploy_s,
            terminate_s: p.terminate_s,
            surcharge_per_container: p.surcharge_per_container,
            surcharge_cap: p.surcharge_cap,
        }
    }
}

fn default_objective() -> f64 {
    100.0
}

fn default_ports() -> Vec<u16> {
    vec![9001]
}

fn default_image() -> String {
    "app-server".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudManagerSection {
    pub app_id: String,
    pub level: i32,
    #[serde(default)]
    pub users: Option<u32>,
    #[serde(default)]
    pub request_at_s: f64,
    #[serde(default = "default_objective")]
    pub objective_ms: f64,
    #[serde(default = "default_ports")]
    pub ports: Vec<u16>,
    #[serde(default = "default_image")]
    pub image: String,
    #[serde(default)]
    pub terminate_at_s: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub node: NodeSection,
    pub cloud: CloudSection,
    pub links: LinksSection,
    pub workload: WorkloadSection,
    pub basic_service: BasicServiceSection,
    pub autoscaler: AutoscalerSection,
    pub provisioning: ProvisioningSection,
    pub cloud_managers: Vec<CloudManagerSection>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Network links derived from the link section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Links {
    pub user_edge: LinkModel,
    pub user_cloud: LinkModel,
    /// Edge to cloud: the part of the cloud round trip beyond the edge.
    pub edge_cloud: LinkModel,
}

/// Parses a document into a tree that `set_path` can edit.
pub fn parse_tree(text: &str) -> Result<toml::Value, ConfigError> {
    text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| ConfigError::Syntax(e.to_string()))
}

/// Overwrites the value at a dotted path such as `workload.n_users` or
/// `cloud_managers.0.level`. Numeric-looking values become numbers.
pub fn set_path(tree: &mut toml::Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let value = if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_owned())
    };
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::field(path, "empty path segment"));
    }
    let mut node = tree;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            toml::Value::Table(table) => {
                if last {
                    table.insert((*seg).to_owned(), value);
                    return Ok(());
                }
                table.entry((*seg).to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| ConfigError::field(path, "array index expected"))?;
                let slot = items.get_mut(idx).ok_or_else(|| ConfigError::field(path, "index out of range"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::field(path, "not a table")),
        };
    }
    unreachable!("loop returns on the last segment")
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { file: path.to_owned(), reason: e.to_string() })?;
        let mut cfg = Self::from_tree(parse_tree(&text)?)?;
        cfg.base_dir = path.parent().map(Path::to_owned);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::from_tree(parse_tree(text)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deserializes without validation; callers run `validate` afterwards.
    pub fn from_tree(tree: toml::Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            let first = message.lines().next().unwrap_or_default().trim().to_owned();
            ConfigError::field(path, first)
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, path: &str, msg: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::field(path, msg))
            }
        }
        fn non_negative(v: f64, path: &str) -> Result<(), ConfigError> {
            check(v.is_finite() && v >= 0.0, path, "must be a finite non-negative number")
        }
        fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
            check(v.is_finite() && v > 0.0, path, "must be a finite positive number")
        }
        fn range(v: [f64; 2], path: &str) -> Result<(), ConfigError> {
            check(v[0].is_finite() && v[0] > 0.0 && v[1] >= v[0], path, "must be [low, high] with 0 < low <= high")
        }

        positive(self.scenario.duration_s, "scenario.duration_s")?;
        non_negative(self.scenario.workload_start_s, "scenario.workload_start_s")?;

        let n = &self.node;
        check(n.cpu_cores > 0 && n.memory_mb > 0, "node.cpu_cores", "node capacity must be non-zero")?;
        check(n.port_start < n.port_end, "node.port_end", "must exceed node.port_start")?;
        ResourceUnit::new(self.unit()).map_err(|e| ConfigError::field("node.unit_cpu", e.to_string()))?;
        positive(n.edge_work_ms, "node.edge_work_ms")?;

        check(self.cloud.cores > 0, "cloud.cores", "must be at least 1")?;
        positive(self.cloud.work_ms, "cloud.work_ms")?;

        let l = &self.links;
        non_negative(l.edge_rtt_ms, "links.edge_rtt_ms")?;
        non_negative(l.cloud_rtt_ms, "links.cloud_rtt_ms")?;
        non_negative(l.per_kb_ms, "links.per_kb_ms")?;
        check((0.0..=1.0).contains(&l.jitter_fraction), "links.jitter_fraction", "must lie in [0, 1]")?;

        let w = &self.workload;
        range(w.intensive_kb, "workload.intensive_kb")?;
        range(w.regular_kb, "workload.regular_kb")?;
        non_negative(w.pause_mean_s, "workload.pause_mean_s")?;
        positive(w.uplink_kb_per_s, "workload.uplink_kb_per_s")?;
        if let Some(f) = w.global_fraction {
            check((0.0..=1.0).contains(&f), "workload.global_fraction", "must lie in [0, 1]")?;
        }
        check(w.attributes > 0, "workload.attributes", "must be at least 1")?;
        positive(w.rate_window_s, "workload.rate_window_s")?;
        positive(w.sync_period_s, "workload.sync_period_s")?;

        let a = &self.autoscaler;
        positive(a.period_s, "autoscaler.period_s")?;
        non_negative(a.hysteresis_ms, "autoscaler.hysteresis_ms")?;

        let p = &self.provisioning;
        for (v, path) in [
            (p.handshake_s, "provisioning.handshake_s"),
            (p.deploy_s, "provisioning.deploy_s"),
            (p.terminate_s, "provisioning.terminate_s"),
            (p.surcharge_per_container, "provisioning.surcharge_per_container"),
            (p.surcharge_cap, "provisioning.surcharge_cap"),
        ] {
            non_negative(v, path)?;
        }

        for (i, b) in self.basic_service.bursts.iter().enumerate() {
            check(
                b.start_s >= 0.0 && b.end_s > b.start_s,
                &format!("basic_service.bursts[{i}]"),
                "needs 0 <= start_s < end_s",
            )?;
        }
        let peak = self.basic_trace()?.peak();
        check(
            ResourceVector::new(n.cpu_cores, n.memory_mb).covers(&peak),
            "basic_service",
            "demand exceeds node capacity",
        )?;

        let mut ids = BTreeSet::new();
        let mut assigned = 0u64;
        for (i, m) in self.cloud_managers.iter().enumerate() {
            let at = |f: &str| format!("cloud_managers[{i}].{f}");
            check(
                !m.app_id.is_empty() && ids.insert(m.app_id.as_str()),
                &at("app_id"),
                "must be non-empty and unique",
            )?;
            check(!m.ports.is_empty(), &at("ports"), "must list at least one port")?;
            positive(m.objective_ms, &at("objective_ms"))?;
            non_negative(m.request_at_s, &at("request_at_s"))?;
            if let Some(t) = m.terminate_at_s {
                non_negative(t, &at("terminate_at_s"))?;
            }
            assigned += u64::from(m.users.unwrap_or(0));
            check(assigned <= u64::from(w.n_users), &at("users"), "more users assigned than workload.n_users")?;
        }
        Ok(())
    }

    pub fn unit(&self) -> ResourceVector {
        ResourceVector::new(self.node.unit_cpu, self.node.unit_mb)
    }

    pub fn capacity(&self) -> ResourceVector {
        ResourceVector::new(self.node.cpu_cores, self.node.memory_mb)
    }

    pub fn profile(&self) -> BehaviorProfile {
        let w = &self.workload;
        let (kind, default_fraction) = match w.behavior {
            BehaviorName::Aggressive => (BehaviorKind::Aggressive, BehaviorProfile::aggressive().global_fraction),
            BehaviorName::Mixed => (BehaviorKind::Mixed, BehaviorProfile::mixed().global_fraction),
        };
        BehaviorProfile {
            kind,
            intensive_kb: (w.intensive_kb[0], w.intensive_kb[1]),
            regular_kb: (w.regular_kb[0], w.regular_kb[1]),
            pause_mean_s: if kind == BehaviorKind::Aggressive { 0.0 } else { w.pause_mean_s },
            uplink_kb_per_s: w.uplink_kb_per_s,
            global_fraction: w.global_fraction.unwrap_or(default_fraction),
        }
    }

    pub fn links(&self) -> Links {
        let l = &self.links;
        let hop = (l.cloud_rtt_ms - l.edge_rtt_ms).max(0.0);
        Links {
            user_edge: LinkModel::with_jitter_fraction(l.edge_rtt_ms, l.jitter_fraction, l.per_kb_ms),
            user_cloud: LinkModel::with_jitter_fraction(l.cloud_rtt_ms, l.jitter_fraction, l.per_kb_ms),
            edge_cloud: LinkModel::with_jitter_fraction(hop, l.jitter_fraction, l.per_kb_ms),
        }
    }

    pub fn basic_trace(&self) -> Result<BasicServiceTrace, ConfigError> {
        let b = &self.basic_service;
        if let Some(csv) = &b.csv {
            let path = match &self.base_dir {
                Some(dir) if csv.is_relative() => dir.join(csv),
                _ => csv.clone(),
            };
            let file = std::fs::File::open(&path)
                .map_err(|e| ConfigError::field("basic_service.csv", format!("{}: {e}", path.display())))?;
            return BasicServiceTrace::from_csv(file)
                .map_err(|e| ConfigError::field("basic_service.csv", e.to_string()));
        }
        let bursts: Vec<Burst> = b
            .bursts
            .iter()
            .map(|x| Burst {
                start_s: x.start_s,
                end_s: x.end_s,
                demand: ResourceVector::new(x.cpu_cores, x.memory_mb),
            })
            .collect();
        Ok(BasicServiceTrace::bursty(ResourceVector::new(b.cpu_cores, b.memory_mb), &bursts))
    }

    pub fn autoscale_policy(&self) -> AutoscalePolicy {
        let a = &self.autoscaler;
        AutoscalePolicy {
            period_s: a.period_s,
            hysteresis_ms: a.hysteresis_ms,
            idle_grace_rounds: a.idle_grace_rounds,
            grant: match a.grant {
                GrantName::OneUnit => GrantPolicy::OneUnit,
                GrantName::AllReleased => GrantPolicy::AllReleased,
            },
            round_base_s: a.round_base_s,
            round_per_server_s: a.round_per_server_s,
            round_per_user_s: a.round_per_user_s,
        }
    }

    /// Provisioning settings for the simulated edge manager, which always
    /// finishes launches through a separate deploy-complete event.
    pub fn provisioning_config(&self) -> ProvisioningConfig {
        let p = &self.provisioning;
        ProvisioningConfig {
            admission: match p.admission {
                AdmissionName::AtLeastMinimum => AdmissionRule::AtLeastMinimum,
                AdmissionName::ExceedAll => AdmissionRule::ExceedAll,
            },
            handshake_s: p.handshake_s,
            deploy_s: p.deploy_s,
            terminate_s: p.terminate_s,
            surcharge_per_container: p.surcharge_per_container,
            surcharge_cap: p.surcharge_cap,
            deferred_launch: true,
        }
    }

    /// Contiguous user-id ranges per cloud manager. Managers without an
    /// explicit count split the users left over by those with one.
    pub fn user_ranges(&self) -> Vec<std::ops::Range<u32>> {
        let explicit: u32 = self.cloud_managers.iter().filter_map(|m| m.users).sum();
        let implicit = self.cloud_managers.iter().filter(|m| m.users.is_none()).count() as u32;
        let spare = self.workload.n_users.saturating_sub(explicit);
        let (share, extra) = spare.checked_div(implicit).map_or((0, 0), |s| (s, spare % implicit));
        let mut next = 0;
        let mut implicit_seen = 0;
        self.cloud_managers
            .iter()
            .map(|m| {
                let count = m.users.unwrap_or_else(|| {
                    implicit_seen += 1;
                    share + u32::from(implicit_seen <= extra)
                });
                let r = next..next + count;
                next += count;
                r
            })
            .collect()
    }
}
