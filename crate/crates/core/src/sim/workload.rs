//! Synthetic user request streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};

use crate::model::UserId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestKind {
    /// Served from the user's local view wherever it lives.
    LocalView,
    /// Needs the global view, so it always ends at the cloud.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RequestEvent {
    pub user_id: UserId,
    /// Emission time relative to the workload start.
    pub time_s: f64,
    pub size_kb: f64,
    pub kind: RequestKind,
    pub think_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BehaviorKind {
    /// Back-to-back data-intensive requests.
    Aggressive,
    /// Data-intensive requests followed by a pause, alternating with
    /// small regular ones.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorProfile {
    pub kind: BehaviorKind,
    pub intensive_kb: (f64, f64),
    pub regular_kb: (f64, f64),
    pub pause_mean_s: f64,
    /// Upload bandwidth; a request occupies the user for `size / uplink`.
    pub uplink_kb_per_s: f64,
    pub global_fraction: f64,
}

impl BehaviorProfile {
    pub fn aggressive() -> Self {
        Self {
            kind: BehaviorKind::Aggressive,
            intensive_kb: (8.0, 24.0),
            regular_kb: (0.5, 1.5),
            pause_mean_s: 0.0,
            uplink_kb_per_s: 146.6,
            global_fraction: 0.05,
        }
    }

    pub fn mixed() -> Self {
        Self {
            kind: BehaviorKind::Mixed,
            intensive_kb: (8.0, 24.0),
            regular_kb: (0.5, 1.5),
            pause_mean_s: 2.0,
            uplink_kb_per_s: 146.6,
            global_fraction: 0.10,
        }
    }

    /// Long-run requests per second for one user.
    pub fn expected_rate_hz(&self) -> f64 {
        let mean = |(lo, hi): (f64, f64)| (lo + hi) / 2.0;
        match self.kind {
            BehaviorKind::Aggressive => self.uplink_kb_per_s / mean(self.intensive_kb),
            BehaviorKind::Mixed => {
                let cycle =
                    (mean(self.intensive_kb) + mean(self.regular_kb)) / self.uplink_kb_per_s + self.pause_mean_s;
                2.0 / cycle
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generates every request of `n_users` over `duration_s`, ordered by time
/// and then user. Each user draws from its own ChaCha stream, so adding a
/// user never changes the requests of the others.
pub fn gen_workload(profile: &BehaviorProfile, n_users: u32, duration_s: f64, seed: u64) -> Vec<RequestEvent> {
    let pause = (profile.pause_mean_s > 0.0).then(|| Exp::new(1.0 / profile.pause_mean_s).expect("positive rate"));
    let mut events = Vec::new();
    for user in 0..n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(user) + 1);
        let mut intensive = match profile.kind {
            BehaviorKind::Aggressive => true,
            BehaviorKind::Mixed => rng.gen_bool(0.5),
        };
        let mut t = rng.gen_range(0.0..1.0) / profile.expected_rate_hz().max(1e-9);
        while t < duration_s {
            let size_kb = uniform(&mut rng, if intensive { profile.intensive_kb } else { profile.regular_kb });
            let kind = if rng.gen_bool(profile.global_fraction) { RequestKind::Global } else { RequestKind::LocalView };
            let think_time_s = match (profile.kind, intensive, &pause) {
                (BehaviorKind::Mixed, true, Some(exp)) => exp.sample(&mut rng),
                _ => 0.0,
            };
            events.push(RequestEvent { user_id: UserId(user), time_s: t, size_kb, kind, think_time_s });
            t += size_kb / profile.uplink_kb_per_s + think_time_s;
            if profile.kind == BehaviorKind::Mixed {
                intensive = !intensive;
            }
        }
    }
    events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.user_id.cmp(&b.user_id)));
    events
}

/// Stable digest identifying a generated workload.
pub fn fingerprint(events: &[RequestEvent], n_users: u32, duration_s: f64) -> String {
    let mut h = Sha256::new();
    h.update(n_users.to_le_bytes());
    h.update(duration_s.to_bits().to_le_bytes());
    for e in events {
        h.update(e.user_id.0.to_le_bytes());
        h.update(e.time_s.to_bits().to_le_bytes());
        h.update(e.size_kb.to_bits().to_le_bytes());
        h.update([matches!(e.kind, RequestKind::Global) as u8]);
        h.update(e.think_time_s.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}
