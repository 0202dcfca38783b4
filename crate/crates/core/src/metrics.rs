//! Aggregation of run outputs, CSV export and fog-versus-cloud comparison.
//!
//! A run directory holds:
//!
//! | file               | columns                                                        |
//! |--------------------|----------------------------------------------------------------|
//! | `report.csv`       | `metric,value`                                                 |
//! | `latency.csv`      | `bucket,count,mean_ms,p50_ms,p95_ms,p99_ms`                    |
//! | `audit.csv`        | see [`AUDIT_HEADER`]                                           |
//! | `terminations.csv` | see [`TERMINATIONS_HEADER`]                                    |
//! | `trace.csv`        | `seq,time_s,event,detail`                                      |
//! | `summary.txt`      | human-readable digest                                          |
//!
//! A sweep writes `sweep.csv` with [`SWEEP_HEADER`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::autoscaler::OpCounter;
use crate::ledger::{OverheadLedger, RequestRoute, TrafficLedger};
use crate::model::ResourceVector;
use crate::provisioning::TerminationReason;
use crate::sim::config::{parse_tree, set_path};
use crate::sim::{run_mode, ConfigError, Mode, RunOutput, ScenarioConfig, SimError};

pub const REPORT_HEADER: [&str; 2] = ["metric", "value"];
pub const LATENCY_HEADER: [&str; 6] = ["bucket", "count", "mean_ms", "p50_ms", "p95_ms", "p99_ms"];
pub const AUDIT_HEADER: [&str; 18] = [
    "round",
    "time_s",
    "server",
    "app",
    "level",
    "users",
    "objective_ms",
    "network_ms",
    "compute_ms",
    "application_ms",
    "action",
    "cpu_before",
    "mb_before",
    "cpu_after",
    "mb_after",
    "free_cpu_after",
    "free_mb_after",
    "removed",
];
pub const TERMINATIONS_HEADER: [&str; 8] =
    ["time_s", "server", "reason", "eviction", "users", "migrated_bytes", "released_cpu", "released_mb"];
pub const TRACE_HEADER: [&str; 4] = ["seq", "time_s", "event", "detail"];
pub const SWEEP_HEADER: [&str; 11] = [
    "value",
    "fog_latency_mean_ms",
    "cloud_latency_mean_ms",
    "latency_reduction_pct",
    "data_reduction_pct",
    "frequency_reduction_pct",
    "fog_cloud_bound_bytes",
    "cloud_bytes",
    "fog_cloud_bound_requests",
    "cloud_requests",
    "fog_terminations",
];

const REASONS: [TerminationReason; 4] = [
    TerminationReason::NoResources,
    TerminationReason::Idle,
    TerminationReason::NoQoSImprovement,
    TerminationReason::CloudOverride,
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invariant(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}: missing or malformed metric {metric}")]
    Metric { path: PathBuf, metric: String },
    #[error("reports come from different workloads ({fog} vs {cloud})")]
    MismatchedScenarios { fog: String, cloud: String },
}

impl From<SimError> for MetricsError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => MetricsError::Config(c),
            other => MetricsError::Invariant(other.to_string()),
        }
    }
}

impl MetricsError {
    /// Process exit status: 2 for configuration problems, 3 for invariant
    /// breaches, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            MetricsError::Config(_) => 2,
            MetricsError::Invariant(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MetricsError {
    MetricsError::Io { path: path.to_owned(), reason: e.to_string() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Self {
            count: samples.len() as u64,
            mean_ms: mean,
            p50_ms: percentile(&samples, 50.0),
            p95_ms: percentile(&samples, 95.0),
            p99_ms: percentile(&samples, 99.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub n_users: u32,
    pub duration_s: f64,
    pub workload_fingerprint: String,
    pub generated_requests: u64,
    pub latency: LatencyStats,
    /// Keyed by edge server id, plus `cloud` for requests served there.
    pub latency_by_server: BTreeMap<String, LatencyStats>,
    pub traffic: TrafficLedger,
    pub overhead: OverheadLedger,
    pub ops: OpCounter,
    pub terminations_by_reason: BTreeMap<&'static str, u64>,
    pub evictions: u64,
    pub rejections: u64,
    pub peak_allocated: ResourceVector,
}

impl MetricsReport {
    pub fn from_run(run: &RunOutput) -> Self {
        let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &run.latencies {
            let key = match (r.route, r.server) {
                (RequestRoute::EdgeServiced, Some(id)) => id.to_string(),
                (RequestRoute::EdgeForwarded, Some(id)) => format!("{id}_forwarded"),
                _ => "cloud".to_owned(),
            };
            buckets.entry(key).or_default().push(r.latency_ms);
        }
        let mut terminations_by_reason: BTreeMap<&'static str, u64> = REASONS.iter().map(|r| (r.label(), 0)).collect();
        for t in &run.terminations {
            *terminations_by_reason.entry(t.reason.label()).or_default() += 1;
        }
        Self {
            scenario: run.scenario.clone(),
            mode: run.mode,
            seed: run.seed,
            n_users: run.n_users,
            duration_s: run.duration_s,
            workload_fingerprint: run.workload_fingerprint.clone(),
            generated_requests: run.generated_requests,
            latency: LatencyStats::from_samples(run.latencies.iter().map(|r| r.latency_ms).collect()),
            latency_by_server: buckets.into_iter().map(|(k, v)| (k, LatencyStats::from_samples(v))).collect(),
            traffic: run.traffic.clone(),
            overhead: run.overhead.clone(),
            ops: run.ops,
            terminations_by_reason,
            evictions: run.terminations.iter().filter(|t| t.eviction).count() as u64,
            rejections: run.rejections.len() as u64,
            peak_allocated: run.peak_allocated,
        }
    }

    /// Rows of `report.csv` in their fixed order.
    pub fn rows(&self) -> Vec<(String, String)> {
        let t = &self.traffic;
        let o = &self.overhead;
        let f = |v: f64| format!("{v:.6}");
        let mut rows: Vec<(String, String)> = vec![
            ("scenario".into(), self.scenario.clone()),
            ("mode".into(), self.mode.as_str().into()),
            ("seed".into(), self.seed.to_string()),
            ("n_users".into(), self.n_users.to_string()),
            ("duration_s".into(), f(self.duration_s)),
            ("workload_fingerprint".into(), self.workload_fingerprint.clone()),
            ("requests_generated".into(), self.generated_requests.to_string()),
            ("requests_total".into(), t.total_requests().to_string()),
            ("requests_edge_serviced".into(), t.edge_serviced.to_string()),
            ("requests_edge_forwarded".into(), t.edge_forwarded.to_string()),
            ("requests_cloud_serviced".into(), t.cloud_serviced.to_string()),
            ("requests_cloud_bound".into(), t.cloud_bound_requests().to_string()),
            ("bytes_user_edge".into(), t.user_edge_bytes.to_string()),
            ("bytes_edge_cloud".into(), t.edge_cloud_bytes.to_string()),
            ("bytes_user_cloud".into(), t.user_cloud_bytes.to_string()),
            ("bytes_migration".into(), t.migration_bytes.to_string()),
            ("bytes_config".into(), t.config_bytes.to_string()),
            ("bytes_sync".into(), t.sync_bytes.to_string()),
            ("bytes_cloud_bound".into(), t.cloud_bound_bytes().to_string()),
            ("latency_mean_ms".into(), f(self.latency.mean_ms)),
            ("latency_p50_ms".into(), f(self.latency.p50_ms)),
            ("latency_p95_ms".into(), f(self.latency.p95_ms)),
            ("latency_p99_ms".into(), f(self.latency.p99_ms)),
            ("overhead_handshake_s".into(), f(o.handshake_s)),
            ("overhead_deploy_s".into(), f(o.deploy_s)),
            ("overhead_terminate_s".into(), f(o.terminate_s)),
            ("overhead_autoscale_s".into(), f(o.autoscale_s)),
            ("handshakes".into(), o.handshakes.to_string()),
            ("deployments".into(), o.deployments.to_string()),
            ("terminations".into(), o.terminations.to_string()),
            ("autoscale_rounds".into(), o.autoscale_rounds.to_string()),
            ("autoscale_pings".into(), self.ops.pings.to_string()),
            ("autoscale_decisions".into(), self.ops.decisions.to_string()),
            ("evictions".into(), self.evictions.to_string()),
            ("rejections".into(), self.rejections.to_string()),
            ("peak_allocated_cpu".into(), self.peak_allocated.cpu_cores.to_string()),
            ("peak_allocated_mb".into(), self.peak_allocated.memory_mb.to_string()),
        ];
        for (reason, count) in &self.terminations_by_reason {
            rows.push((format!("terminations_{reason}"), count.to_string()));
        }
        rows
    }

    pub fn comparable(&self) -> Comparable {
        Comparable {
            workload_fingerprint: self.workload_fingerprint.clone(),
            latency_mean_ms: self.latency.mean_ms,
            cloud_bound_bytes: self.traffic.cloud_bound_bytes(),
            cloud_bound_requests: self.traffic.cloud_bound_requests(),
        }
    }
}

/// The quantities a comparison needs, from a live report or a CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparable {
    pub workload_fingerprint: String,
    pub latency_mean_ms: f64,
    pub cloud_bound_bytes: u64,
    pub cloud_bound_requests: u64,
}

impl Comparable {
    pub fn from_report_csv(path: &Path) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
        let mut map = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| io_err(path, e))?;
            if let (Some(k), Some(v)) = (rec.get(0), rec.get(1)) {
                map.insert(k.to_owned(), v.to_owned());
            }
        }
        let get = |k: &str| map.get(k).ok_or_else(|| MetricsError::Metric { path: path.to_owned(), metric: k.into() });
        let num = |k: &str| -> Result<f64, MetricsError> {
            get(k)?.parse().map_err(|_| MetricsError::Metric { path: path.to_owned(), metric: k.into() })
        };
        let int = |k: &str| -> Result<u64, MetricsError> {
            get(k)?.parse().map_err(|_| MetricsError::Metric { path: path.to_owned(), metric: k.into() })
        };
        Ok(Self {
            workload_fingerprint: get("workload_fingerprint")?.clone(),
            latency_mean_ms: num("latency_mean_ms")?,
            cloud_bound_bytes: int("bytes_cloud_bound")?,
            cloud_bound_requests: int("requests_cloud_bound")?,
        })
    }
}

/// Percent reductions of the fog run relative to the cloud-only run.
/// `None` where the cloud-only quantity is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReductionSummary {
    pub latency_reduction_pct: Option<f64>,
    pub data_reduction_pct: Option<f64>,
    pub frequency_reduction_pct: Option<f64>,
}

pub fn reduction_pct(cloud: f64, fog: f64) -> Option<f64> {
    (cloud > 0.0).then(|| (cloud - fog) / cloud * 100.0)
}

pub fn compare(fog: &Comparable, cloud: &Comparable) -> Result<ReductionSummary, MetricsError> {
    if fog.workload_fingerprint != cloud.workload_fingerprint {
        return Err(MetricsError::MismatchedScenarios {
            fog: fog.workload_fingerprint.clone(),
            cloud: cloud.workload_fingerprint.clone(),
        });
    }
    Ok(ReductionSummary {
        latency_reduction_pct: reduction_pct(cloud.latency_mean_ms, fog.latency_mean_ms),
        data_reduction_pct: reduction_pct(cloud.cloud_bound_bytes as f64, fog.cloud_bound_bytes as f64),
        frequency_reduction_pct: reduction_pct(cloud.cloud_bound_requests as f64, fog.cloud_bound_requests as f64),
    })
}

pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |p| format!("{p:.6}"))
}

impl ReductionSummary {
    pub fn render(&self) -> String {
        format!(
            "latency_reduction_pct,{}\ndata_reduction_pct,{}\nfrequency_reduction_pct,{}\n",
            fmt_pct(self.latency_reduction_pct),
            fmt_pct(self.data_reduction_pct),
            fmt_pct(self.frequency_reduction_pct)
        )
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), MetricsError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes every output file of a run into `dir`.
pub fn write_run(dir: &Path, run: &RunOutput, report: &MetricsReport) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    write_csv(&dir.join("report.csv"), &REPORT_HEADER, report.rows().into_iter().map(|(k, v)| [k, v]))?;

    let stat_row = |name: &str, s: &LatencyStats| {
        [
            name.to_owned(),
            s.count.to_string(),
            format!("{:.6}", s.mean_ms),
            format!("{:.6}", s.p50_ms),
            format!("{:.6}", s.p95_ms),
            format!("{:.6}", s.p99_ms),
        ]
    };
    let latency_rows = std::iter::once(stat_row("overall", &report.latency))
        .chain(report.latency_by_server.iter().map(|(k, s)| stat_row(k, s)));
    write_csv(&dir.join("latency.csv"), &LATENCY_HEADER, latency_rows)?;

    let audit_rows = run.audit.iter().map(|row| {
        let e = &row.entry;
        let removed: Vec<String> = e.action.removed().iter().map(|r| r.server_id.to_string()).collect();
        vec![
            row.round.to_string(),
            format!("{:.6}", row.time_s),
            e.server_id.to_string(),
            e.app_id.to_string(),
            e.level.to_string(),
            e.users.to_string(),
            format!("{:.6}", e.objective_ms),
            opt(e.sample.network_ms),
            format!("{:.6}", e.sample.compute_ms),
            opt(e.sample.application_ms()),
            e.action.label().to_owned(),
            e.allocated_before.cpu_cores.to_string(),
            e.allocated_before.memory_mb.to_string(),
            row.allocated_after.cpu_cores.to_string(),
            row.allocated_after.memory_mb.to_string(),
            row.free_after.cpu_cores.to_string(),
            row.free_after.memory_mb.to_string(),
            removed.join(" "),
        ]
    });
    write_csv(&dir.join("audit.csv"), &AUDIT_HEADER, audit_rows)?;

    let term_rows = run.terminations.iter().map(|t| {
        [
            format!("{:.6}", t.time_s),
            t.server_id.to_string(),
            t.reason.label().to_owned(),
            t.eviction.to_string(),
            t.users.to_string(),
            t.migrated_bytes.to_string(),
            t.released.cpu_cores.to_string(),
            t.released.memory_mb.to_string(),
        ]
    });
    write_csv(&dir.join("terminations.csv"), &TERMINATIONS_HEADER, term_rows)?;

    let trace_rows =
        run.trace.iter().map(|r| [r.seq.to_string(), format!("{:.6}", r.time_s), r.kind.to_owned(), r.detail.clone()]);
    write_csv(&dir.join("trace.csv"), &TRACE_HEADER, trace_rows)?;

    let summary = dir.join("summary.txt");
    std::fs::write(&summary, render_summary(report)).map_err(|e| io_err(&summary, e))
}

pub fn render_summary(r: &MetricsReport) -> String {
    let t = &r.traffic;
    let mut s = String::new();
    let _ = writeln!(s, "scenario {} ({} mode, seed {})", r.scenario, r.mode.as_str(), r.seed);
    let _ = writeln!(
        s,
        "users {}, workload {:.1} s, fingerprint {}",
        r.n_users,
        r.duration_s,
        &r.workload_fingerprint[..16]
    );
    let _ = writeln!(
        s,
        "requests {} = {} edge + {} forwarded + {} cloud",
        t.total_requests(),
        t.edge_serviced,
        t.edge_forwarded,
        t.cloud_serviced
    );
    let _ = writeln!(
        s,
        "latency mean {:.3} ms, p50 {:.3}, p95 {:.3}, p99 {:.3}",
        r.latency.mean_ms, r.latency.p50_ms, r.latency.p95_ms, r.latency.p99_ms
    );
    let _ = writeln!(
        s,
        "bytes user-edge {}, edge-cloud {} (migration {}, config {}, sync {}), user-cloud {}",
        t.user_edge_bytes, t.edge_cloud_bytes, t.migration_bytes, t.config_bytes, t.sync_bytes, t.user_cloud_bytes
    );
    let o = &r.overhead;
    let _ = writeln!(
        s,
        "overhead handshake {:.3} s, deploy {:.3} s, terminate {:.3} s, autoscale {:.3} s over {} rounds",
        o.handshake_s, o.deploy_s, o.terminate_s, o.autoscale_s, o.autoscale_rounds
    );
    let reasons: Vec<String> = r.terminations_by_reason.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(
        s,
        "terminations {} ({}), evictions {}, rejections {}",
        o.terminations,
        reasons.join(", "),
        r.evictions,
        r.rejections
    );
    s
}

/// Loads a scenario, runs it and writes its outputs.
pub fn run_scenario(
    config_path: &Path,
    seed: u64,
    out_dir: &Path,
    mode: Option<Mode>,
) -> Result<MetricsReport, MetricsError> {
    let cfg = ScenarioConfig::from_file(config_path)?;
    let mode = mode.unwrap_or(cfg.scenario.mode);
    let run = run_mode(&cfg, mode, seed)?;
    let report = MetricsReport::from_run(&run);
    write_run(out_dir, &run, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub fog: MetricsReport,
    pub cloud: MetricsReport,
    pub reduction: ReductionSummary,
}

/// Sweeps keep only aggregates, so the per-event trace is skipped.
fn without_trace(mut cfg: ScenarioConfig) -> ScenarioConfig {
    cfg.scenario.record_trace = false;
    cfg
}

/// Runs fog and cloud-only once per value of `param`, in parallel. Rows
/// come back in the order of `values`.
pub fn sweep(config_path: &Path, param: &str, values: &[String], seed: u64) -> Result<Vec<SweepRow>, MetricsError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| MetricsError::Config(ConfigError::Io { file: config_path.to_owned(), reason: e.to_string() }))?;
    let tree = parse_tree(&text)?;
    let base_dir = config_path.parent().map(Path::to_owned);
    let configs: Vec<ScenarioConfig> = values
        .iter()
        .map(|v| {
            let mut t = tree.clone();
            set_path(&mut t, param, v)?;
            let mut cfg = ScenarioConfig::from_tree(t)?;
            cfg.base_dir = base_dir.clone();
            cfg.validate()?;
            Ok(without_trace(cfg))
        })
        .collect::<Result<_, ConfigError>>()?;
    configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(cfg, value)| {
            let fog = MetricsReport::from_run(&run_mode(cfg, Mode::Fog, seed)?);
            let cloud = MetricsReport::from_run(&run_mode(cfg, Mode::CloudOnly, seed)?);
            let reduction = compare(&fog.comparable(), &cloud.comparable())?;
            Ok(SweepRow { value: value.clone(), fog, cloud, reduction })
        })
        .collect()
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), MetricsError> {
    let records = rows.iter().map(|r| {
        [
            r.value.clone(),
            format!("{:.6}", r.fog.latency.mean_ms),
            format!("{:.6}", r.cloud.latency.mean_ms),
            fmt_pct(r.reduction.latency_reduction_pct),
            fmt_pct(r.reduction.data_reduction_pct),
            fmt_pct(r.reduction.frequency_reduction_pct),
            r.fog.traffic.cloud_bound_bytes().to_string(),
            r.cloud.traffic.cloud_bound_bytes().to_string(),
            r.fog.traffic.cloud_bound_requests().to_string(),
            r.cloud.traffic.cloud_bound_requests().to_string(),
            r.fog.overhead.terminations.to_string(),
        ]
    });
    write_csv(path, &SWEEP_HEADER, records)
}
