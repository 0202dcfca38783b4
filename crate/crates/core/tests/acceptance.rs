//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use bytes::Bytes;
use common::{balance_of, build, eviction_oracle, random_ops, reachable, scenarios_dir, Fixture, ServerSpec, UNIT};
use fogsim::autoscaler::{
    scale, AutoscaleError, AutoscalePolicy, Autoscaler, GrantPolicy, LatencySample, RoundAction, ScaleDecision,
};
use fogsim::datastore::KeyValueView;
use fogsim::metrics::{compare, run_scenario, MetricsReport, ReductionSummary};
use fogsim::model::{ResourceVector, ServerId, UserId};
use fogsim::provisioning::{TermType, TerminationReason};
use fogsim::sim::{run_mode, Mode, ScenarioConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LATENCY_BAND_PCT: (f64, f64) = (20.0, 85.0);
const FORWARDED_BAND_PCT: (f64, f64) = (8.0, 12.0);
const MIN_DATA_REDUCTION_PCT: f64 = 85.0;
const MAX_RUNTIME: Duration = Duration::from_secs(30);
const PER_USER_PAYLOAD: u64 = 3 * 4096;
const MIGRATION_SLACK_BYTES: u64 = 1024;
const AGGREGATE_RATE_8_USERS: f64 = 73.3;
const RATE_TOLERANCE: f64 = 0.5;
const MIN_R_SQUARED: f64 = 0.99;
const RANDOM_CASES: usize = 10_000;
const CONSERVATION_STEPS: usize = 10_000;
const CONSERVATION_SEEDS: u64 = 8;
const ROUND_OVERHEAD_1_S: f64 = 5.3;
const ROUND_OVERHEAD_128_S: f64 = 11.0;
const ROUND_OVERHEAD_TOLERANCE_S: f64 = 0.1;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::from_file(&scenarios_dir().join(name)).expect("bundled scenario loads")
}

struct Pair {
    fog: MetricsReport,
    cloud: MetricsReport,
    reduction: ReductionSummary,
    slowest: Duration,
}

fn fog_vs_cloud(cfg: &ScenarioConfig, seed: u64) -> Pair {
    let t = Instant::now();
    let fog = MetricsReport::from_run(&run_mode(cfg, Mode::Fog, seed).expect("fog run"));
    let fog_time = t.elapsed();
    let t = Instant::now();
    let cloud = MetricsReport::from_run(&run_mode(cfg, Mode::CloudOnly, seed).expect("cloud run"));
    let cloud_time = t.elapsed();
    let reduction = compare(&fog.comparable(), &cloud.comparable()).expect("same workload");
    Pair { fog, cloud, reduction, slowest: fog_time.max(cloud_time) }
}

fn latency_band() -> Outcome {
    let mut worst = Duration::ZERO;
    let mut seen = Vec::new();
    for cloud_rtt in [40.0, 110.0] {
        for seed in 1..=3 {
            let mut cfg = scenario("mixed_128users.cfg");
            cfg.links.cloud_rtt_ms = cloud_rtt;
            let pair = fog_vs_cloud(&cfg, seed);
            let r = pair.reduction.latency_reduction_pct.ok_or("undefined latency reduction")?;
            check(r >= LATENCY_BAND_PCT.0 && r <= LATENCY_BAND_PCT.1, || {
                format!("cloud {cloud_rtt} ms seed {seed}: reduction {r:.1}% outside {LATENCY_BAND_PCT:?}")
            })?;
            worst = worst.max(pair.slowest);
            seen.push(r);
        }
    }
    check(worst < MAX_RUNTIME, || format!("slowest run {worst:?}"))?;
    let (lo, hi) = seen.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(format!("reduction {lo:.1}%..{hi:.1}% over 40/110 ms x 3 seeds, slowest run {:.2}s", worst.as_secs_f64()))
}

fn traffic_reduction() -> Outcome {
    let mut worst = Duration::ZERO;
    let mut detail = Vec::new();
    for seed in 1..=3 {
        let cfg = scenario("mixed_128users.cfg");
        check(cfg.profile().global_fraction == 0.10, || "scenario global fraction is not 0.10".into())?;
        let pair = fog_vs_cloud(&cfg, seed);
        let t = &pair.fog.traffic;
        let forwarded = t.cloud_bound_requests() as f64 / t.total_requests() as f64 * 100.0;
        check(forwarded >= FORWARDED_BAND_PCT.0 && forwarded <= FORWARDED_BAND_PCT.1, || {
            format!("seed {seed}: forwarded {forwarded:.2}% outside {FORWARDED_BAND_PCT:?}")
        })?;
        let data = pair.reduction.data_reduction_pct.ok_or("undefined data reduction")?;
        check(data >= MIN_DATA_REDUCTION_PCT, || format!("seed {seed}: data reduction {data:.2}%"))?;
        check(pair.cloud.traffic.total_requests() == t.total_requests(), || "request counts differ".into())?;
        worst = worst.max(pair.slowest);
        detail.push(format!("forwarded {forwarded:.1}% data -{data:.1}%"));
    }
    check(worst < MAX_RUNTIME, || format!("slowest run {worst:?}"))?;
    Ok(detail.join("; "))
}

fn migration_payload() -> Outcome {
    let mut detail = Vec::new();
    for users in [1u32, 8, 32, 128] {
        let text = format!(
            "[scenario]\nname = \"migration\"\nduration_s = 60.0\n\
             [workload]\nn_users = {users}\n\
             [autoscaler]\nenabled = false\n\
             [[cloud_managers]]\napp_id = \"m\"\nlevel = 5\nterminate_at_s = 70.0\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
        let out = run_mode(&cfg, Mode::Fog, 1).map_err(|e| e.to_string())?;
        let [term] = &out.terminations[..] else {
            return Err(format!("{users} users: expected one termination, got {}", out.terminations.len()));
        };
        check(term.reason == TerminationReason::CloudOverride && term.users == users as usize, || {
            format!("{users} users: unexpected termination {term:?}")
        })?;
        let expected = u64::from(users) * PER_USER_PAYLOAD;
        check(term.migrated_bytes.abs_diff(expected) <= MIGRATION_SLACK_BYTES, || {
            format!("{users} users: migrated {} B, expected {expected} B", term.migrated_bytes)
        })?;
        detail.push(format!("{users}u={}B", term.migrated_bytes));
    }
    Ok(detail.join(" "))
}

fn aggressive_crossover() -> Outcome {
    let base = scenario("aggressive_8users.cfg");
    let aggregate = base.profile().expected_rate_hz() * 8.0;
    check((aggregate - AGGREGATE_RATE_8_USERS).abs() <= RATE_TOLERANCE, || {
        format!("aggregate rate at 8 users {aggregate:.2} req/s")
    })?;
    let mut detail = vec![format!("{aggregate:.1} req/s at 8 users")];
    for users in [1u32, 2, 4, 8, 16, 32] {
        let mut cfg = base.clone();
        cfg.workload.n_users = users;
        let pair = fog_vs_cloud(&cfg, 1);
        let (fog, cloud) = (pair.fog.latency.mean_ms, pair.cloud.latency.mean_ms);
        if users <= 8 {
            check(fog < cloud, || format!("{users} users: fog {fog:.1} ms not below cloud {cloud:.1} ms"))?;
        } else {
            check(fog >= cloud, || format!("{users} users: fog {fog:.1} ms below cloud {cloud:.1} ms"))?;
        }
        detail.push(format!("{users}u {fog:.1}/{cloud:.1}"));
    }
    Ok(detail.join(", "))
}

fn specs(allocs: &[ResourceVector]) -> Vec<ServerSpec> {
    let n = allocs.len() as i32;
    allocs.iter().enumerate().map(|(k, a)| ServerSpec { level: 10 * (n - k as i32), alloc: *a, users: 1 }).collect()
}

/// Scales up rank `i` and compares the evicted set with the oracle.
fn eviction_case(fx: &Fixture, allocs: &[ResourceVector], i: usize, balance: (i64, i64)) -> Result<(), String> {
    check(balance_of(&fx.edge) == balance, || format!("fixture balance {:?}", balance_of(&fx.edge)))?;
    let (want_ranks, want_ok) = eviction_oracle(allocs, i, balance);
    let want: BTreeSet<ServerId> = want_ranks.iter().map(|r| fx.ids[*r]).collect();
    let mut edge = fx.edge.clone();
    let mut cloud = fx.cloud.clone();
    let (got, ok) = match scale(&mut edge, &mut cloud, fx.ids[i], ScaleDecision::ScaleUp, GrantPolicy::OneUnit) {
        Ok(o) => (o.evicted.iter().map(|r| r.server_id).collect::<BTreeSet<_>>(), true),
        Err(AutoscaleError::NoHeadroom { evicted, .. }) => (evicted.iter().map(|r| r.server_id).collect(), false),
        Err(e) => return Err(format!("unexpected error {e}")),
    };
    if got != want || ok != want_ok {
        return Err(format!(
            "allocs {allocs:?} balance {balance:?} rank {i}: evicted {got:?}/{ok}, oracle {want:?}/{want_ok}"
        ));
    }
    edge.node().check_invariants()
}

fn eviction_oracle_equivalence() -> Outcome {
    let balances = [(0, 0), (1, 0), (0, 199), (1, 100), (-1, 0), (-2, -300)];
    let mut exhaustive = 0usize;
    for n in 1..=6usize {
        let mut units = vec![1u32; n];
        loop {
            let allocs: Vec<ResourceVector> = units.iter().map(|u| UNIT.scaled(*u)).collect();
            for &balance in balances.iter().filter(|b| reachable(&allocs, **b)) {
                let fx = build(&specs(&allocs), balance);
                for i in 0..n {
                    eviction_case(&fx, &allocs, i, balance)?;
                    exhaustive += 1;
                }
            }
            // Odometer over 1..=6 per position.
            let mut pos = 0;
            while pos < n && units[pos] == 6 {
                units[pos] = 1;
                pos += 1;
            }
            if pos == n {
                break;
            }
            units[pos] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..RANDOM_CASES {
        let n = rng.gen_range(1..=6);
        let allocs: Vec<ResourceVector> =
            (0..n).map(|_| ResourceVector::new(rng.gen_range(1..=6), rng.gen_range(200..=1200))).collect();
        let balance = loop {
            let b = (rng.gen_range(-3..=3), rng.gen_range(-600..=600));
            if (b.0 < 1 || b.1 < 200) && reachable(&allocs, b) {
                break b;
            }
        };
        let fx = build(&specs(&allocs), balance);
        eviction_case(&fx, &allocs, rng.gen_range(0..n), balance)?;
    }
    Ok(format!("{exhaustive} exhaustive + {RANDOM_CASES} randomized cases, 0 mismatches"))
}

fn conservation() -> Outcome {
    let mut totals = common::OpStats::default();
    for seed in 0..CONSERVATION_SEEDS {
        let s = random_ops(seed, CONSERVATION_STEPS).map_err(|e| format!("seed {seed}: {e}"))?;
        totals.steps += s.steps;
        totals.accepted += s.accepted;
        totals.deployed += s.deployed;
        totals.terminated += s.terminated;
        totals.rounds += s.rounds;
        totals.evicted += s.evicted;
    }
    check(totals.deployed > 0 && totals.terminated > 0 && totals.evicted > 0, || format!("weak coverage {totals:?}"))?;
    Ok(format!(
        "{} steps over {CONSERVATION_SEEDS} seeds: {} admitted, {} deployed, {} removed, {} evicted, {} rounds",
        totals.steps, totals.accepted, totals.deployed, totals.terminated, totals.evicted, totals.rounds
    ))
}

fn cascade_termination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cascades = 0usize;
    for case in 0..RANDOM_CASES {
        let n = rng.gen_range(1..=8);
        let allocs: Vec<ResourceVector> =
            (0..n).map(|_| ResourceVector::new(rng.gen_range(1..=3), 200 * rng.gen_range(1..=3))).collect();
        let balance = (rng.gen_range(-1..=2), 200 * rng.gen_range(-1..=2));
        if !reachable(&allocs, balance) {
            continue;
        }
        let specs: Vec<ServerSpec> =
            specs(&allocs).into_iter().map(|s| ServerSpec { users: rng.gen_range(1..=4), ..s }).collect();
        let mut fx = build(&specs, balance);
        let before = fx.ids.clone();
        let mut autoscaler = Autoscaler::new(AutoscalePolicy::default());
        let mut samples = ChaCha8Rng::seed_from_u64(rng.gen());
        let entries = autoscaler.round(&mut fx.edge, &mut fx.cloud, |_| {
            LatencySample::new(samples.gen_range(0.0..120.0), samples.gen_range(0.0..40.0))
        });
        let after: Vec<ServerId> = fx.edge.node().servers().iter().map(|s| s.id).collect();
        let failed_at = entries.iter().find_map(|e| match &e.action {
            RoundAction::Terminated { term_type: TermType::Multiple, .. } => Some(e.server_id),
            _ => None,
        });
        if let Some(id) = failed_at {
            let i = before.iter().position(|s| *s == id).expect("from the fixture");
            check(after == before[..i], || {
                format!("case {case}: check failed at rank {i}, before {before:?}, after {after:?}")
            })?;
            cascades += 1;
        }
        fx.edge.node().check_invariants().map_err(|e| format!("case {case}: {e}"))?;
    }
    check(cascades >= RANDOM_CASES / 10, || format!("only {cascades} rounds hit a failed check"))?;
    Ok(format!("{cascades} of {RANDOM_CASES} rounds cascaded, all left exactly the higher-ranked servers"))
}

const ATTRS: [&str; 3] = ["pos", "score", "inv"];

fn random_view(rng: &mut ChaCha8Rng) -> KeyValueView {
    let users: Vec<UserId> = (0..16).filter(|_| rng.gen_bool(0.5)).map(UserId).collect();
    let mut view = KeyValueView::with_users(users.iter().copied());
    for _ in 0..rng.gen_range(0..24) {
        if let Some(u) = users.choose(rng) {
            let len = rng.gen_range(0..8);
            let value: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            view.write(*u, ATTRS.choose(rng).unwrap(), Bytes::from(value)).unwrap();
        }
    }
    view
}

fn scribble(view: &mut KeyValueView, rng: &mut ChaCha8Rng) {
    let users: Vec<UserId> = view.users().iter().copied().collect();
    for _ in 0..rng.gen_range(0..6) {
        if let Some(u) = users.choose(rng) {
            view.write(*u, ATTRS.choose(rng).unwrap(), Bytes::from(vec![rng.gen::<u8>()])).unwrap();
        }
    }
}

fn datastore_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..RANDOM_CASES {
        let global = random_view(&mut rng);
        let users: Vec<UserId> = global.users().iter().copied().collect();
        let (mut a, mut b) = (BTreeSet::new(), BTreeSet::new());
        for u in &users {
            match rng.gen_range(0..3) {
                0 => a.insert(*u),
                1 => b.insert(*u),
                _ => false,
            };
        }

        let mut merged = global.clone();
        merged.merge_local(&global.extract_user_keys(&a).unwrap());
        check(merged == global, || format!("case {case}: merge of unmodified extract changed the view"))?;

        let mut la = global.extract_user_keys(&a).unwrap();
        let mut lb = global.extract_user_keys(&b).unwrap();
        scribble(&mut la, &mut rng);
        scribble(&mut lb, &mut rng);
        let mut ab = global.clone();
        ab.merge_local(&la);
        ab.merge_local(&lb);
        let mut ba = global.clone();
        ba.merge_local(&lb);
        ba.merge_local(&la);
        check(ab == ba, || format!("case {case}: disjoint merges do not commute"))?;

        for (user, attr, entry) in global.entries() {
            let now = ab.get(user, attr).expect("keys never disappear");
            check(now.version >= entry.version, || format!("case {case}: version of {user}/{attr} went down"))?;
            if !a.contains(&user) && !b.contains(&user) {
                check(now == entry, || format!("case {case}: {user}/{attr} touched by an unrelated merge"))?;
            }
        }
        for (user, attr, entry) in la.entries().chain(lb.entries()) {
            check(ab.get(user, attr) == Some(entry), || format!("case {case}: local write to {user}/{attr} lost"))?;
        }
        check(KeyValueView::from_text(&ab.to_text()).as_ref() == Ok(&ab), || format!("case {case}: text round trip"))?;
    }
    Ok(format!("{RANDOM_CASES} cases: identity, commutativity, non-interference, monotone versions"))
}

fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Operation count and simulated duration of one round over `servers`
/// servers holding `users` users each.
fn round_cost(servers: usize, users: u32) -> (u64, f64) {
    let spec: Vec<ServerSpec> =
        (0..servers).map(|k| ServerSpec { level: (servers - k) as i32, alloc: UNIT, users }).collect();
    let mut fx = build(&spec, (4, 800));
    let mut autoscaler = Autoscaler::new(AutoscalePolicy::default());
    let overhead = autoscaler.round_overhead_s(&fx.edge);
    autoscaler.round(&mut fx.edge, &mut fx.cloud, |_| LatencySample::new(20.0, 10.0));
    (autoscaler.ops.total(), overhead)
}

fn linear_round_cost() -> Outcome {
    let sizes = [1usize, 2, 4, 8, 16, 32, 64, 128];
    let by_servers: Vec<(f64, f64)> = sizes.iter().map(|&n| (n as f64, round_cost(n, 1).0 as f64)).collect();
    let by_users: Vec<(f64, f64)> = sizes.iter().map(|&u| ((8 * u) as f64, round_cost(8, u as u32).0 as f64)).collect();
    let (r_s, r_u) = (r_squared(&by_servers), r_squared(&by_users));
    check(r_s >= MIN_R_SQUARED, || format!("R² over |S| {r_s:.4}"))?;
    check(r_u >= MIN_R_SQUARED, || format!("R² over users {r_u:.4}"))?;
    let (_, one) = round_cost(1, 1);
    let (_, many) = round_cost(128, 1);
    check((one - ROUND_OVERHEAD_1_S).abs() <= ROUND_OVERHEAD_TOLERANCE_S, || format!("1 server round {one:.3}s"))?;
    check((many - ROUND_OVERHEAD_128_S).abs() <= ROUND_OVERHEAD_TOLERANCE_S, || {
        format!("128 server round {many:.3}s")
    })?;
    Ok(format!("R² {r_s:.4} over |S|, {r_u:.4} over users; round {one:.2}s at 1 server, {many:.2}s at 128"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let path = e.expect("entry").path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).expect("readable"))
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let mut checked = 0;
    let mut names: Vec<_> = std::fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    names.sort();
    for path in &names {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_scenario(path, 1, a.path(), None).map_err(|e| e.to_string())?;
        run_scenario(path, 1, b.path(), None).map_err(|e| e.to_string())?;
        let (fa, fb) = (files_in(a.path()), files_in(b.path()));
        check(!fa.is_empty() && fa == fb, || format!("{} differs between runs", path.display()))?;
        checked += fa.len();
    }
    check(names.len() >= 3, || "bundled scenarios missing".into())?;
    Ok(format!("{} scenarios, {checked} files byte-identical", names.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("latency reduction band", latency_band),
        ("traffic and frequency reduction", traffic_reduction),
        ("migration payload proportionality", migration_payload),
        ("aggressive crossover", aggressive_crossover),
        ("eviction oracle equivalence", eviction_oracle_equivalence),
        ("conservation", conservation),
        ("cascade termination", cascade_termination),
        ("datastore properties", datastore_properties),
        ("linear round cost", linear_round_cost),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate().map(|(k, c)| (k + 1, c)) {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}) [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail}) [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
