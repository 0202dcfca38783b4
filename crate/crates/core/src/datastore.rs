//! User-keyed local and global data views.
//!
//! A view maps `(user, attribute)` to a versioned opaque value. The cloud
//! holds the global view; each edge server holds a local view extracted
//! for its users at deploy time and merged back at termination with
//! last-writer-wins by version.
//!
//! Text format, one record per line, tab separated:
//!
//! ```text
//! users<TAB><comma separated user ids>
//! <user id><TAB><attribute><TAB><version><TAB><value as lowercase hex>
//! ```
//!
//! Entry lines are sorted by user id then attribute.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;

use bytes::Bytes;
use thiserror::Error;

use crate::model::UserId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub value: Bytes,
    pub version: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatastoreError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("invalid attribute name {0:?}")]
    InvalidAttribute(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValueView {
    users: BTreeSet<UserId>,
    entries: BTreeMap<(UserId, String), Entry>,
}

/// What a merge changed in the target view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub inserted: usize,
    pub overwritten: usize,
    pub kept: usize,
    pub new_users: usize,
}

fn valid_attribute(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl KeyValueView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_users(users: impl IntoIterator<Item = UserId>) -> Self {
        Self { users: users.into_iter().collect(), entries: BTreeMap::new() }
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn add_user(&mut self, user: UserId) {
        self.users.insert(user);
    }

    pub fn contains_user(&self, user: UserId) -> bool {
        self.users.contains(&user)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user: UserId, attribute: &str) -> Option<&Entry> {
        self.entries.get(&(user, attribute.to_owned()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (UserId, &str, &Entry)> {
        self.entries.iter().map(|((u, a), e)| (*u, a.as_str(), e))
    }

    fn user_range(&self, user: UserId) -> impl Iterator<Item = (&(UserId, String), &Entry)> {
        let lo = Bound::Included((user, String::new()));
        let hi = match user.0.checked_add(1) {
            Some(next) => Bound::Excluded((UserId(next), String::new())),
            None => Bound::Unbounded,
        };
        self.entries.range((lo, hi))
    }

    /// Writes a value, bumping the key's version. Returns the new version.
    pub fn write(&mut self, user: UserId, attribute: &str, value: Bytes) -> Result<u64, DatastoreError> {
        if !self.users.contains(&user) {
            return Err(DatastoreError::UnknownUser(user));
        }
        if !valid_attribute(attribute) {
            return Err(DatastoreError::InvalidAttribute(attribute.to_owned()));
        }
        let entry =
            self.entries.entry((user, attribute.to_owned())).or_insert(Entry { value: Bytes::new(), version: 0 });
        entry.version += 1;
        entry.value = value;
        Ok(entry.version)
    }

    /// Copies out exactly the keys of `users`. The source is unchanged.
    pub fn extract_user_keys(&self, users: &BTreeSet<UserId>) -> Result<KeyValueView, DatastoreError> {
        if let Some(missing) = users.iter().find(|u| !self.users.contains(u)) {
            return Err(DatastoreError::UnknownUser(*missing));
        }
        let mut view = KeyValueView::with_users(users.iter().copied());
        for &user in users {
            view.entries.extend(self.user_range(user).map(|(k, e)| (k.clone(), e.clone())));
        }
        Ok(view)
    }

    /// Folds a local view back in. A local entry replaces the stored one
    /// only when its version is strictly higher.
    pub fn merge_local(&mut self, local: &KeyValueView) -> MergeStats {
        let mut stats = MergeStats::default();
        for user in &local.users {
            if self.users.insert(*user) {
                stats.new_users += 1;
            }
        }
        for (key, entry) in &local.entries {
            match self.entries.get_mut(key) {
                None => {
                    self.entries.insert(key.clone(), entry.clone());
                    stats.inserted += 1;
                }
                Some(current) if entry.version > current.version => {
                    *current = entry.clone();
                    stats.overwritten += 1;
                }
                Some(_) => stats.kept += 1,
            }
        }
        stats
    }

    /// Sum of value sizes; what a migration of this view ships.
    pub fn payload_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.value.len() as u64).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("users\t");
        let ids: Vec<String> = self.users.iter().map(|u| u.0.to_string()).collect();
        out.push_str(&ids.join(","));
        out.push('\n');
        for ((user, attr), entry) in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", user.0, attr, entry.version, hex::encode(&entry.value)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<KeyValueView, DatastoreError> {
        let err = |line: usize, reason: &str| DatastoreError::Parse { line, reason: reason.to_owned() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing users header"))?;
        let ids = header.strip_prefix("users\t").ok_or_else(|| err(1, "missing users header"))?;
        let mut view = KeyValueView::new();
        for id in ids.split(',').filter(|s| !s.is_empty()) {
            let id = id.parse().map_err(|_| err(1, "bad user id"))?;
            view.users.insert(UserId(id));
        }
        for (idx, line) in lines {
            let n = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [user, attr, version, value] = fields[..] else {
                return Err(err(n, "expected 4 fields"));
            };
            let user = UserId(user.parse().map_err(|_| err(n, "bad user id"))?);
            if !view.users.contains(&user) {
                return Err(err(n, "entry for undeclared user"));
            }
            if !valid_attribute(attr) {
                return Err(err(n, "bad attribute"));
            }
            let version = version.parse().map_err(|_| err(n, "bad version"))?;
            let value = hex::decode(value).map_err(|_| err(n, "bad hex value"))?;
            view.entries.insert((user, attr.to_owned()), Entry { value: Bytes::from(value), version });
        }
        Ok(view)
    }
}
