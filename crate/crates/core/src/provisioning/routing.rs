use std::collections::{BTreeMap, BTreeSet};

use crate::datastore::KeyValueView;
use crate::ledger::TrafficLedger;
use crate::model::{ServerId, UserId};

use super::ProvisionError;

/// Where a user's LocalView requests are sent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Route {
    Cloud,
    Edge(ServerId),
}

/// The cloud manager's per-user configuration file, one entry per user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoutingTable {
    routes: BTreeMap<UserId, Route>,
}

impl RoutingTable {
    /// Every user starts on the cloud.
    pub fn new(users: impl IntoIterator<Item = UserId>) -> Self {
        Self { routes: users.into_iter().map(|u| (u, Route::Cloud)).collect() }
    }

    pub fn route(&self, user: UserId) -> Option<Route> {
        self.routes.get(&user).copied()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.routes.contains_key(&user)
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, Route)> + '_ {
        self.routes.iter().map(|(u, r)| (*u, *r))
    }

    /// Points every listed user at `target`. Either all users are known and
    /// the table is updated, or nothing changes.
    ///
    /// One configuration-update message of `message_bytes` is charged when
    /// at least one route actually changes. Returns the number of changed
    /// routes.
    pub fn redirect(
        &mut self,
        users: &BTreeSet<UserId>,
        target: Route,
        ledger: &mut TrafficLedger,
        message_bytes: u64,
    ) -> Result<usize, ProvisionError> {
        if let Some(ghost) = users.iter().find(|u| !self.routes.contains_key(u)) {
            return Err(ProvisionError::UnknownUser(*ghost));
        }
        let mut changed = 0;
        for user in users {
            let route = self.routes.get_mut(user).expect("checked above");
            if *route != target {
                *route = target;
                changed += 1;
            }
        }
        if changed > 0 {
            ledger.charge_config(message_bytes);
        }
        Ok(changed)
    }
}

/// Everything on the cloud side that edge operations touch: the global
/// view, the routing configuration and the traffic ledger.
#[derive(Clone, Debug, Default)]
pub struct CloudSide {
    pub global: KeyValueView,
    pub routing: RoutingTable,
    pub traffic: TrafficLedger,
    pub config_message_bytes: u64,
}

impl CloudSide {
    pub fn new(global: KeyValueView, config_message_bytes: u64) -> Self {
        let routing = RoutingTable::new(global.users().iter().copied());
        Self { global, routing, traffic: TrafficLedger::default(), config_message_bytes }
    }

    pub fn cloud_redirect(&mut self, users: &BTreeSet<UserId>, target: Route) -> Result<usize, ProvisionError> {
        self.routing.redirect(users, target, &mut self.traffic, self.config_message_bytes)
    }
}
