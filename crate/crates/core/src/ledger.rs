//! Traffic and overhead accounting.

/// Where a user request was finally serviced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RequestRoute {
    /// Serviced by an edge server from its local view.
    EdgeServiced,
    /// Sent to the edge and forwarded to the cloud.
    EdgeForwarded,
    /// Sent straight to the cloud.
    CloudServiced,
}

/// Byte and request counters on each network segment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    pub user_edge_bytes: u64,
    pub edge_cloud_bytes: u64,
    pub user_cloud_bytes: u64,
    /// Share of `edge_cloud_bytes` spent on deploy/terminate snapshots.
    pub migration_bytes: u64,
    /// Share of `edge_cloud_bytes` spent on redirect configuration updates.
    pub config_bytes: u64,
    /// Share of `edge_cloud_bytes` spent on periodic local-view sync.
    pub sync_bytes: u64,
    pub edge_serviced: u64,
    pub edge_forwarded: u64,
    pub cloud_serviced: u64,
}

impl TrafficLedger {
    pub fn record_request(&mut self, route: RequestRoute, bytes: u64) {
        match route {
            RequestRoute::EdgeServiced => {
                self.edge_serviced += 1;
                self.user_edge_bytes += bytes;
            }
            RequestRoute::EdgeForwarded => {
                self.edge_forwarded += 1;
                self.user_edge_bytes += bytes;
                self.edge_cloud_bytes += bytes;
            }
            RequestRoute::CloudServiced => {
                self.cloud_serviced += 1;
                self.user_cloud_bytes += bytes;
            }
        }
    }

    pub fn charge_migration(&mut self, bytes: u64) {
        self.migration_bytes += bytes;
        self.edge_cloud_bytes += bytes;
    }

    pub fn charge_config(&mut self, bytes: u64) {
        self.config_bytes += bytes;
        self.edge_cloud_bytes += bytes;
    }

    pub fn charge_sync(&mut self, bytes: u64) {
        self.sync_bytes += bytes;
        self.edge_cloud_bytes += bytes;
    }

    pub fn total_requests(&self) -> u64 {
        self.edge_serviced + self.edge_forwarded + self.cloud_serviced
    }

    /// Requests that reached the cloud, either directly or via the edge.
    pub fn cloud_bound_requests(&self) -> u64 {
        self.edge_forwarded + self.cloud_serviced
    }

    /// Bytes that crossed beyond the edge node towards the cloud.
    pub fn cloud_bound_bytes(&self) -> u64 {
        self.edge_cloud_bytes + self.user_cloud_bytes
    }
}

/// Simulated time spent in provisioning and auto-scaling, in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverheadLedger {
    pub handshake_s: f64,
    pub deploy_s: f64,
    pub terminate_s: f64,
    pub autoscale_s: f64,
    pub handshakes: u64,
    pub deployments: u64,
    pub terminations: u64,
    pub autoscale_rounds: u64,
}

impl OverheadLedger {
    pub fn provisioning_s(&self) -> f64 {
        self.handshake_s + self.deploy_s + self.terminate_s
    }
}
