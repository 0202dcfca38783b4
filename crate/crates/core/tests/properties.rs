mod common;

use std::collections::BTreeSet;

use bytes::Bytes;
use common::{balance_of, build, eviction_oracle, random_ops, reachable, ServerSpec, UNIT};
use fogsim::autoscaler::{scale, AutoscaleError, GrantPolicy, ScaleDecision};
use fogsim::datastore::KeyValueView;
use fogsim::model::{AppId, PortAssignment, Priority, ResourceVector, ServerId, ServiceRequest, UserId};
use fogsim::provisioning::{
    decode_line, decode_trace, encode_line, encode_trace, Envelope, ProvisionMessage, RejectReason, TerminationReason,
    TerminationReport,
};
use proptest::prelude::*;

fn view_strategy() -> impl Strategy<Value = KeyValueView> {
    let users = prop::collection::btree_set(0u32..32, 0..8);
    users.prop_flat_map(|users| {
        let ids: Vec<u32> = users.iter().copied().collect();
        let writes = if ids.is_empty() {
            Just(Vec::new()).boxed()
        } else {
            prop::collection::vec(
                (prop::sample::select(ids), "[a-z][a-z0-9_.-]{0,6}", prop::collection::vec(any::<u8>(), 0..12)),
                0..16,
            )
            .boxed()
        };
        (Just(users), writes).prop_map(|(users, writes)| {
            let mut view = KeyValueView::with_users(users.into_iter().map(UserId));
            for (u, attr, value) in writes {
                view.write(UserId(u), &attr, Bytes::from(value)).unwrap();
            }
            view
        })
    })
}

fn app_strategy() -> impl Strategy<Value = String> {
    "[a-z\\\\\t\n ]{1,8}"
}

fn request_strategy() -> impl Strategy<Value = ServiceRequest> {
    (
        app_strategy(),
        -5i32..20,
        0u64..1000,
        prop::collection::btree_set(1u16..u16::MAX, 1..4),
        1.0f64..500.0,
        prop::collection::btree_set(0u32..1000, 0..6),
    )
        .prop_map(|(app, level, seq, ports, objective, users)| ServiceRequest {
            app_id: AppId(app.clone()),
            priority: Priority::new(level, app, seq),
            requested_ports: ports,
            latency_objective_ms: objective,
            users: users.into_iter().map(UserId).collect(),
        })
}

fn message_strategy() -> impl Strategy<Value = ProvisionMessage> {
    let reason = prop::sample::select(vec![
        RejectReason::InsufficientResources,
        RejectReason::PriorityTooLow,
        RejectReason::PortsExhausted,
        RejectReason::ServiceUnavailable,
        RejectReason::InvalidRequest,
    ]);
    let term = prop::sample::select(vec![
        TerminationReason::NoResources,
        TerminationReason::Idle,
        TerminationReason::NoQoSImprovement,
        TerminationReason::CloudOverride,
    ]);
    prop_oneof![
        Just(ProvisionMessage::ServiceQuery),
        Just(ProvisionMessage::ServiceOffer),
        Just(ProvisionMessage::Ready),
        request_strategy().prop_map(ProvisionMessage::SetupRequest),
        (prop::collection::btree_set(1u16..60000, 0..4), 1u16..60000, any::<u64>()).prop_map(|(service, access, c)| {
            ProvisionMessage::Accept {
                ports: PortAssignment { service_ports: service, access_port: access },
                container: ServerId(c),
            }
        }),
        reason.prop_map(ProvisionMessage::Reject),
        (app_strategy(), view_strategy())
            .prop_map(|(image, snapshot)| ProvisionMessage::DeployPayload { image, snapshot }),
        any::<u64>().prop_map(|s| ProvisionMessage::TerminateOrder(ServerId(s))),
        (any::<u64>(), term, any::<u32>(), any::<u32>(), view_strategy()).prop_map(|(s, reason, c, m, snapshot)| {
            let redirected_users = snapshot.users().clone();
            ProvisionMessage::TerminationReport(TerminationReport {
                server_id: ServerId(s),
                migrated_snapshot: snapshot,
                released: ResourceVector::new(c, m),
                redirected_users,
                reason,
            })
        }),
    ]
}

fn envelope_strategy() -> impl Strategy<Value = Envelope> {
    // A setup request always belongs to the session it travels in.
    (app_strategy(), message_strategy()).prop_map(|(app, mut msg)| {
        if let ProvisionMessage::SetupRequest(r) = &mut msg {
            r.app_id = AppId(app.clone());
            r.priority.app_id = AppId(app.clone());
        }
        Envelope::new(AppId(app), msg)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_operations_conserve_resources(seed in any::<u64>()) {
        let stats = random_ops(seed, 400);
        prop_assert!(stats.is_ok(), "{}", stats.unwrap_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn eviction_matches_oracle(
        allocs in prop::collection::vec((1u32..=6, 200u32..=1200), 1..=6),
        i_seed in any::<prop::sample::Index>(),
        balance in (-3i64..=3, -600i64..=600),
    ) {
        let allocs: Vec<ResourceVector> = allocs.into_iter().map(|(c, m)| ResourceVector::new(c, m)).collect();
        prop_assume!(reachable(&allocs, balance));
        prop_assume!(balance.0 < 1 || balance.1 < 200);
        let n = allocs.len();
        let i = i_seed.index(n);
        let specs: Vec<ServerSpec> = allocs
            .iter()
            .enumerate()
            .map(|(k, a)| ServerSpec { level: (n - k) as i32, alloc: *a, users: 1 })
            .collect();
        let mut fx = build(&specs, balance);
        prop_assert_eq!(balance_of(&fx.edge), balance);
        let (ranks, ok) = eviction_oracle(&allocs, i, balance);
        let want: BTreeSet<ServerId> = ranks.iter().map(|r| fx.ids[*r]).collect();
        let result = scale(&mut fx.edge, &mut fx.cloud, fx.ids[i], ScaleDecision::ScaleUp, GrantPolicy::OneUnit);
        let (got, got_ok): (BTreeSet<ServerId>, bool) = match result {
            Ok(o) => (o.evicted.iter().map(|r| r.server_id).collect(), true),
            Err(AutoscaleError::NoHeadroom { evicted, .. }) => (evicted.iter().map(|r| r.server_id).collect(), false),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(got, want);
        prop_assert_eq!(got_ok, ok);
        if ok {
            let grown = fx.edge.node().server(fx.ids[i]).unwrap().allocated;
            prop_assert_eq!(grown, allocs[i] + UNIT);
        }
    }

    #[test]
    fn view_text_round_trips(view in view_strategy()) {
        prop_assert_eq!(KeyValueView::from_text(&view.to_text()).unwrap(), view);
    }

    #[test]
    fn extract_keeps_exactly_the_requested_users(view in view_strategy(), mask in any::<u32>()) {
        let subset: BTreeSet<UserId> = view.users().iter().copied().filter(|u| mask & (1 << (u.0 % 32)) != 0).collect();
        let local = view.extract_user_keys(&subset).unwrap();
        prop_assert_eq!(local.users(), &subset);
        for (user, attr, entry) in view.entries() {
            prop_assert_eq!(local.get(user, attr), subset.contains(&user).then_some(entry));
        }
        let mut merged = view.clone();
        merged.merge_local(&local);
        prop_assert_eq!(merged, view);
    }

    #[test]
    fn wire_line_round_trips(env in envelope_strategy()) {
        let line = encode_line(&env);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode_line(&line).unwrap(), env);
    }

    #[test]
    fn wire_trace_round_trips(envs in prop::collection::vec(envelope_strategy(), 0..6)) {
        prop_assert_eq!(decode_trace(&encode_trace(&envs)).unwrap(), envs);
    }
}
