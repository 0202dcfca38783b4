#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use fogsim::datastore::KeyValueView;
use fogsim::model::{AppId, EdgeNodeState, Priority, ResourceUnit, ResourceVector, ServerId, ServiceRequest, UserId};
use fogsim::provisioning::{CloudSide, EdgeManager, ProvisioningConfig};

pub const UNIT: ResourceVector = ResourceVector::new(1, 200);

#[derive(Clone, Copy, Debug)]
pub struct ServerSpec {
    pub level: i32,
    pub alloc: ResourceVector,
    pub users: u32,
}

/// Running servers on one node, with ids in rank order.
pub struct Fixture {
    pub edge: EdgeManager,
    pub cloud: CloudSide,
    pub ids: Vec<ServerId>,
}

/// Builds `servers` (listed in rank order, levels strictly descending) on a
/// node whose pool balance `free - deficit` ends at `balance`.
pub fn build(servers: &[ServerSpec], balance: (i64, i64)) -> Fixture {
    let allocated: ResourceVector = servers.iter().map(|s| s.alloc).sum();
    let basic = ResourceVector::new((-balance.0).max(0) as u32, (-balance.1).max(0) as u32);
    let capacity = ResourceVector::new(
        (i64::from(basic.cpu_cores) + i64::from(allocated.cpu_cores) + balance.0) as u32,
        (i64::from(basic.memory_mb) + i64::from(allocated.memory_mb) + balance.1) as u32,
    );
    let ports = 1000..(1000 + 2 * servers.len() as u16 + 2);
    let node = EdgeNodeState::new(capacity, ResourceVector::ZERO, ports).unwrap();
    let mut edge = EdgeManager::new(node, ResourceUnit::default(), ProvisioningConfig::default());
    let total_users: u32 = servers.iter().map(|s| s.users).sum();
    let mut cloud = CloudSide::new(KeyValueView::with_users((0..total_users).map(UserId)), 512);

    let mut first = Vec::with_capacity(servers.len());
    let mut next = 0;
    for s in servers {
        first.push(next);
        next += s.users;
    }
    let mut ids = vec![ServerId(0); servers.len()];
    // Lowest rank first, so every arrival passes the priority test.
    for i in (0..servers.len()).rev() {
        let s = servers[i];
        let app = format!("app{i}");
        let req = ServiceRequest {
            app_id: AppId(app.clone()),
            priority: Priority::new(s.level, app, 0),
            requested_ports: [1000].into_iter().collect(),
            latency_objective_ms: 100.0,
            users: (first[i]..first[i] + s.users).map(UserId).collect::<BTreeSet<_>>(),
        };
        let (id, _) = edge.handshake(&req).expect("fixture admission");
        let snapshot = cloud.global.clone();
        edge.deploy(&mut cloud, id, "img", &snapshot).unwrap();
        let extra = s.alloc.checked_sub(&UNIT).expect("allocation covers a unit");
        if !extra.is_zero() {
            edge.grant(id, extra).unwrap();
        }
        ids[i] = id;
    }
    edge.node_mut().set_basic_demand(basic).unwrap();
    let order: Vec<_> = edge.node().servers().iter().map(|s| s.id).collect();
    assert_eq!(order, ids, "fixture rank order");
    edge.node().check_invariants().unwrap();
    Fixture { edge, cloud, ids }
}

/// A deficit can never exceed what the servers hold, since basic demand is
/// bounded by capacity.
pub fn reachable(allocs: &[ResourceVector], balance: (i64, i64)) -> bool {
    let total: ResourceVector = allocs.iter().copied().sum();
    -balance.0 <= i64::from(total.cpu_cores) && -balance.1 <= i64::from(total.memory_mb)
}

/// Signed pool balance `free - deficit` per component.
pub fn balance_of(edge: &EdgeManager) -> (i64, i64) {
    let f = edge.node().free();
    let d = edge.node().deficit();
    (i64::from(f.cpu_cores) - i64::from(d.cpu_cores), i64::from(f.memory_mb) - i64::from(d.memory_mb))
}

/// Brute-force eviction oracle. Enumerates every suffix `S[k..]` with
/// `k > i`, keeps those whose release lifts the balance to a full unit, and
/// returns the shortest. When none does, every server below `i` goes and
/// the scale-up has no headroom.
pub fn eviction_oracle(allocs: &[ResourceVector], i: usize, balance: (i64, i64)) -> (Vec<usize>, bool) {
    let n = allocs.len();
    let covers = |k: usize| {
        let (c, m) =
            allocs[k..].iter().fold(balance, |(c, m), a| (c + i64::from(a.cpu_cores), m + i64::from(a.memory_mb)));
        c >= i64::from(UNIT.cpu_cores) && m >= i64::from(UNIT.memory_mb)
    };
    let mut best: Option<usize> = None;
    for k in (i + 1)..=n {
        if covers(k) && best.is_none_or(|b| k > b) {
            best = Some(k);
        }
    }
    match best {
        Some(k) => ((k..n).collect(), true),
        None => (((i + 1)..n).collect(), false),
    }
}

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

use fogsim::autoscaler::{scale, AutoscalePolicy, Autoscaler, GrantPolicy, LatencySample, ScaleDecision};
use fogsim::model::ServerState;
use fogsim::provisioning::{CloudTermFlag, Route, TermType, TerminationReason};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recomputes the node's accounting from its public parts, independently
/// of `check_invariants`.
pub fn audit(edge: &EdgeManager, cloud: &CloudSide) -> Result<(), String> {
    let node = edge.node();
    let alloc: ResourceVector = node.servers().iter().map(|s| s.allocated).sum();
    let (f, d, b, c) = (node.free(), node.deficit(), node.basic_demand(), node.capacity);
    let cpu = i64::from(f.cpu_cores) - i64::from(d.cpu_cores) + i64::from(b.cpu_cores) + i64::from(alloc.cpu_cores);
    let mb = i64::from(f.memory_mb) - i64::from(d.memory_mb) + i64::from(b.memory_mb) + i64::from(alloc.memory_mb);
    if cpu != i64::from(c.cpu_cores) || mb != i64::from(c.memory_mb) {
        return Err(format!("conservation: ({cpu},{mb}) vs capacity {c}"));
    }
    let mut held = BTreeSet::new();
    for s in node.servers() {
        for p in s.ports.all_ports() {
            if !held.insert(p) || node.port_pool().contains(&p) {
                return Err(format!("port {p} held twice"));
            }
        }
        if !s.allocated.covers(&UNIT) {
            return Err(format!("{} below one unit", s.id));
        }
    }
    for w in node.servers().windows(2) {
        if w[0].priority <= w[1].priority {
            return Err(format!("{} and {} out of rank order", w[0].id, w[1].id));
        }
    }
    for (user, route) in cloud.routing.iter() {
        if let Route::Edge(id) = route {
            let ok = node.server(id).is_some_and(|s| s.state() == ServerState::Running && s.users.contains(&user));
            if !ok {
                return Err(format!("{user} routed to {id} which does not serve it"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct OpStats {
    pub steps: usize,
    pub accepted: usize,
    pub deployed: usize,
    pub terminated: usize,
    pub rounds: usize,
    pub evicted: usize,
}

/// Applies `steps` random operations, auditing after each one.
pub fn random_ops(seed: u64, steps: usize) -> Result<OpStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node = EdgeNodeState::new(ResourceVector::new(12, 2400), ResourceVector::new(1, 200), 2000..2024).unwrap();
    let mut edge = EdgeManager::new(node, ResourceUnit::default(), ProvisioningConfig::default());
    let user_cap = steps as u32 / 2 + 8;
    let mut cloud = CloudSide::new(KeyValueView::with_users((0..user_cap).map(UserId)), 512);
    let mut autoscaler = Autoscaler::new(AutoscalePolicy::default());
    let mut next_user = 0u32;
    let mut next_app = 0u32;
    let mut stats = OpStats::default();
    let pick = |edge: &EdgeManager, rng: &mut ChaCha8Rng| {
        let ids: Vec<ServerId> = edge.node().servers().iter().map(|s| s.id).collect();
        ids.choose(rng).copied()
    };
    for step in 0..steps {
        match rng.gen_range(0..8) {
            0 | 1 => {
                let n_users = rng.gen_range(0..=3u32).min(user_cap - next_user);
                let users: BTreeSet<UserId> = (next_user..next_user + n_users).map(UserId).collect();
                next_user += n_users;
                let app = format!("a{next_app}");
                next_app += 1;
                let ports: BTreeSet<u16> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2000..2006)).collect();
                let req = ServiceRequest {
                    app_id: AppId(app.clone()),
                    priority: Priority::new(rng.gen_range(1..=10), app, 0),
                    requested_ports: ports,
                    latency_objective_ms: 100.0,
                    users,
                };
                if edge.handshake(&req).is_ok() {
                    stats.accepted += 1;
                }
            }
            2 => {
                let waiting: Vec<ServerId> = edge
                    .node()
                    .servers()
                    .iter()
                    .filter(|s| s.state() == ServerState::Initialising)
                    .map(|s| s.id)
                    .collect();
                if let Some(&id) = waiting.choose(&mut rng) {
                    let users = edge.node().server(id).unwrap().users.clone();
                    let snapshot = cloud.global.extract_user_keys(&users).map_err(|e| e.to_string())?;
                    edge.deploy(&mut cloud, id, "img", &snapshot).map_err(|e| format!("deploy: {e}"))?;
                    stats.deployed += 1;
                }
            }
            3 => {
                if let Some(id) = pick(&edge, &mut rng) {
                    let amount = ResourceVector::new(rng.gen_range(0..=2), rng.gen_range(0..=400));
                    if rng.gen_bool(0.5) {
                        let _ = edge.grant(id, amount);
                    } else {
                        // Never below the one-unit floor the autoscaler keeps.
                        let spare = edge.node().server(id).unwrap().allocated.checked_sub(&UNIT).unwrap();
                        let amount = ResourceVector::new(
                            amount.cpu_cores.min(spare.cpu_cores),
                            amount.memory_mb.min(spare.memory_mb),
                        );
                        edge.reclaim(id, amount).map_err(|e| format!("reclaim: {e}"))?;
                    }
                }
            }
            4 => {
                if let Some(id) = pick(&edge, &mut rng) {
                    let term = if rng.gen_bool(0.5) { TermType::Single } else { TermType::Multiple };
                    let flag = CloudTermFlag(rng.gen_bool(0.2));
                    let reports = edge
                        .terminate(&mut cloud, id, term, flag, TerminationReason::NoResources)
                        .map_err(|e| format!("terminate: {e}"))?;
                    stats.terminated += reports.len();
                }
            }
            5 => {
                let demand = ResourceVector::new(rng.gen_range(0..=8), rng.gen_range(0..=1600));
                edge.node_mut().set_basic_demand(demand).map_err(|e| format!("basic: {e}"))?;
            }
            6 => {
                let mut samples = ChaCha8Rng::seed_from_u64(rng.gen());
                let entries = autoscaler.round(&mut edge, &mut cloud, |s| {
                    if s.users.is_empty() {
                        LatencySample::no_users(samples.gen_range(0.0..50.0))
                    } else {
                        LatencySample::new(samples.gen_range(0.0..150.0), samples.gen_range(0.0..50.0))
                    }
                });
                if let Some(e) = entries.iter().find(|e| matches!(e.action, fogsim::autoscaler::RoundAction::Failed(_)))
                {
                    return Err(format!("round failed: {:?}", e.action));
                }
                stats.rounds += 1;
                stats.terminated += entries.iter().map(|e| e.action.removed().len()).sum::<usize>();
            }
            _ => {
                let running: Vec<ServerId> =
                    edge.node().servers().iter().filter(|s| s.state() == ServerState::Running).map(|s| s.id).collect();
                if let Some(&id) = running.choose(&mut rng) {
                    let decision = if rng.gen_bool(0.7) { ScaleDecision::ScaleUp } else { ScaleDecision::ScaleDown };
                    let grant = if rng.gen_bool(0.5) { GrantPolicy::OneUnit } else { GrantPolicy::AllReleased };
                    match scale(&mut edge, &mut cloud, id, decision, grant) {
                        Ok(o) => stats.evicted += o.evicted.len(),
                        Err(fogsim::autoscaler::AutoscaleError::NoHeadroom { evicted, .. }) => {
                            stats.evicted += evicted.len()
                        }
                        Err(e) => return Err(format!("scale: {e}")),
                    }
                }
            }
        }
        stats.steps += 1;
        edge.node().check_invariants().map_err(|e| format!("step {step}: {e}"))?;
        audit(&edge, &cloud).map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok(stats)
}
