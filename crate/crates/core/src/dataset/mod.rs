//! Interaction ingestion and the session preprocessing protocol.
//!
//! Raw logs are sessionized by an inactivity gap, filtered (short sessions
//! first, then light users), split chronologically per user into
//! train/valid/test and finally expanded into `(prefix, next item)`
//! instances.

mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(test)]
pub(crate) use io::parse_tsv;
pub use io::{load_interactions, read_splits, write_splits, InputFormat, SplitCounts, SplitManifest};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input contains no interactions")]
    EmptyInput,
    #[error("no sessions survive filtering")]
    EmptyDataset,
    #[error("sessionization gap must be positive")]
    InvalidGap,
    #[error("filter thresholds must be at least 1")]
    InvalidThreshold,
    #[error("invalid split fractions valid={valid}, test={test}: each must lie in (0, 1) and sum below 1")]
    InvalidFractions { valid: f64, test: f64 },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Bidirectional map between opaque string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
    /// Explicit session id for pre-sessionized input.
    pub session: Option<usize>,
}

/// Parsed interaction records, sorted by `(user, timestamp)`.
///
/// User indices follow the lexicographic order of the raw user ids, so the
/// index order and the sort order coincide. Ties in timestamp keep input order.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    pub items: Vocab,
    pub users: Vocab,
    pub sessions: Option<Vocab>,
}

impl InteractionLog {
    /// Builds a log from raw `(user, item, timestamp)` triples.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, i64)>,
    {
        Self::from_rows(triples.into_iter().map(|(u, i, t)| (u, None, i, t)))
    }

    pub(crate) fn from_rows<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, Option<&'a str>, &'a str, i64)>,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        let mut user_ids: Vec<&str> = rows.iter().map(|r| r.0).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let users = Vocab::from_ids(user_ids.into_iter().map(str::to_owned).collect());
        let mut items = Vocab::default();
        let mut sessions = rows.iter().any(|r| r.1.is_some()).then(Vocab::default);
        let mut records: Vec<Interaction> = rows
            .iter()
            .map(|&(u, s, i, t)| Interaction {
                user: users.get(u).expect("user interned above"),
                item: items.intern(i),
                timestamp: t,
                session: match (&mut sessions, s) {
                    (Some(v), Some(s)) => Some(v.intern(&format!("{u}\u{1f}{s}"))),
                    _ => None,
                },
            })
            .collect();
        records.sort_by_key(|r| (r.user, r.timestamp));
        Self { records, items, users, sessions }
    }

    pub fn is_presessionized(&self) -> bool {
        self.sessions.is_some()
    }
}

/// One user's chronologically ordered interactions within a single session.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub user: usize,
    pub items: Vec<usize>,
    /// Position in the user's chronological session sequence, from 0.
    pub ordinal: usize,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A training/evaluation example: predict `label` after `prefix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub prefix: Vec<usize>,
    pub label: usize,
    pub user: usize,
    pub session_ordinal: usize,
}

/// Groups each user's records into sessions: a gap strictly greater than
/// `gap_seconds` between consecutive records starts a new session.
pub fn sessionize(log: &InteractionLog, gap_seconds: i64) -> Result<Vec<Session>, DatasetError> {
    if gap_seconds <= 0 {
        return Err(DatasetError::InvalidGap);
    }
    let mut sessions: Vec<Session> = Vec::new();
    let mut last: Option<(usize, i64)> = None;
    for r in &log.records {
        let continues = matches!(last, Some((u, t)) if u == r.user && r.timestamp - t <= gap_seconds);
        if continues {
            sessions.last_mut().expect("open session").items.push(r.item);
        } else {
            let ordinal = match (last, sessions.last()) {
                (Some((u, _)), Some(prev)) if u == r.user => prev.ordinal + 1,
                _ => 0,
            };
            sessions.push(Session { user: r.user, items: vec![r.item], ordinal });
        }
        last = Some((r.user, r.timestamp));
    }
    Ok(sessions)
}

/// Groups records by their explicit session id. Sessions are ordered per user
/// by their first timestamp.
pub fn sessions_from_ids(log: &InteractionLog) -> Vec<Session> {
    let mut by_key: BTreeMap<(usize, usize), (i64, Vec<usize>)> = BTreeMap::new();
    for r in &log.records {
        let sid = r.session.unwrap_or(usize::MAX);
        by_key.entry((r.user, sid)).or_insert_with(|| (r.timestamp, Vec::new())).1.push(r.item);
    }
    let mut grouped: Vec<(usize, i64, usize, Vec<usize>)> =
        by_key.into_iter().map(|((u, s), (t, items))| (u, t, s, items)).collect();
    grouped.sort_by_key(|g| (g.0, g.1, g.2));
    let mut sessions = Vec::with_capacity(grouped.len());
    let mut prev_user = None;
    let mut ordinal = 0;
    for (user, _, _, items) in grouped {
        ordinal = if prev_user == Some(user) { ordinal + 1 } else { 0 };
        prev_user = Some(user);
        sessions.push(Session { user, items, ordinal });
    }
    sessions
}

/// Sessions after filtering, densely re-indexed.
#[derive(Debug, Clone)]
pub struct FilteredSessions {
    pub sessions: Vec<Session>,
    /// New item index → item index in the input sessions.
    pub item_map: Vec<usize>,
    /// New user index → user index in the input sessions.
    pub user_map: Vec<usize>,
}

/// Drops sessions shorter than `min_session_len`, then drops users left
/// with fewer than `min_user_sessions` sessions.
///
/// Surviving items and users are re-indexed densely in order of first
/// appearance and session ordinals are renumbered per user.
pub fn filter_dataset(
    sessions: &[Session],
    min_session_len: usize,
    min_user_sessions: usize,
) -> Result<FilteredSessions, DatasetError> {
    if min_session_len == 0 || min_user_sessions == 0 {
        return Err(DatasetError::InvalidThreshold);
    }
    let mut ordered: Vec<&Session> = sessions.iter().filter(|s| s.len() >= min_session_len).collect();
    ordered.sort_by_key(|s| (s.user, s.ordinal));
    let mut per_user: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &ordered {
        *per_user.entry(s.user).or_default() += 1;
    }
    ordered.retain(|s| per_user[&s.user] >= min_user_sessions);
    if ordered.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }

    let mut item_index: HashMap<usize, usize> = HashMap::new();
    let mut item_map = Vec::new();
    let mut user_map: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(ordered.len());
    let mut ordinal = 0;
    for s in ordered {
        if user_map.last() != Some(&s.user) {
            user_map.push(s.user);
            ordinal = 0;
        } else {
            ordinal += 1;
        }
        let items = s
            .items
            .iter()
            .map(|&i| {
                *item_index.entry(i).or_insert_with(|| {
                    item_map.push(i);
                    item_map.len() - 1
                })
            })
            .collect();
        out.push(Session { user: user_map.len() - 1, items, ordinal });
    }
    Ok(FilteredSessions { sessions: out, item_map, user_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, valid or test)")),
        }
    }
}

/// Chronological per-user train/valid/test split.
///
/// Items are re-indexed so that every item occurring in `train` has an index
/// below `num_seen_items`; items that only occur in valid/test follow.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    pub num_items: usize,
    pub num_users: usize,
    pub num_seen_items: usize,
    /// New item index → item index in the sessions handed to [`split_dataset`].
    pub item_order: Vec<usize>,
}

impl SessionDataset {
    pub fn split(&self, split: Split) -> &[Session] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn is_seen(&self, item: usize) -> bool {
        item < self.num_seen_items
    }

    pub fn instances(&self, split: Split) -> Vec<Instance> {
        self.split(split).iter().flat_map(sequence_split).collect()
    }
}

/// Number of sessions allotted to `(train, valid, test)` for a user with
/// `n` sessions.
///
/// Test and valid take the ceiling of their fraction. When a user is too
/// small for all three, valid shrinks first, then test, so at least one
/// session always stays in train.
pub fn split_counts(n: usize, valid_frac: f64, test_frac: f64) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    // guard against 0.1 * 30 = 3.0000000000000004
    let ceil = |x: f64| (x - 1e-9).ceil().max(0.0) as usize;
    let test = ceil(test_frac * n as f64).min(n - 1);
    let valid = ceil(valid_frac * n as f64).min(n - 1 - test);
    (n - test - valid, valid, test)
}

pub fn split_dataset(sessions: &[Session], valid_frac: f64, test_frac: f64) -> Result<SessionDataset, DatasetError> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(valid_frac) || !ok(test_frac) || valid_frac + test_frac >= 1.0 {
        return Err(DatasetError::InvalidFractions { valid: valid_frac, test: test_frac });
    }
    if sessions.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut by_user: BTreeMap<usize, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        by_user.entry(s.user).or_default().push(s);
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for user_sessions in by_user.values_mut() {
        user_sessions.sort_by_key(|s| s.ordinal);
        let (n_train, n_valid, _) = split_counts(user_sessions.len(), valid_frac, test_frac);
        for (pos, s) in user_sessions.iter().enumerate() {
            let target = if pos < n_train {
                &mut train
            } else if pos < n_train + n_valid {
                &mut valid
            } else {
                &mut test
            };
            target.push((*s).clone());
        }
    }

    let mut new_index: HashMap<usize, usize> = HashMap::new();
    let mut item_order = Vec::new();
    fn visit(split: &[Session], new_index: &mut HashMap<usize, usize>, item_order: &mut Vec<usize>) {
        for s in split {
            for &i in &s.items {
                new_index.entry(i).or_insert_with(|| {
                    item_order.push(i);
                    item_order.len() - 1
                });
            }
        }
    }
    visit(&train, &mut new_index, &mut item_order);
    let num_seen_items = item_order.len();
    visit(&valid, &mut new_index, &mut item_order);
    visit(&test, &mut new_index, &mut item_order);
    for split in [&mut train, &mut valid, &mut test] {
        for s in split.iter_mut() {
            s.items.iter_mut().for_each(|i| *i = new_index[i]);
        }
    }
    let num_users = by_user.keys().next_back().map_or(0, |u| u + 1);
    Ok(SessionDataset { train, valid, test, num_items: item_order.len(), num_users, num_seen_items, item_order })
}

/// Expands a session into its `L - 1` next-item instances.
pub fn sequence_split(session: &Session) -> Vec<Instance> {
    (1..session.items.len())
        .map(|end| Instance {
            prefix: session.items[..end].to_vec(),
            label: session.items[end],
            user: session.user,
            session_ordinal: session.ordinal,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(user: usize, ordinal: usize, items: &[usize]) -> Session {
        Session { user, items: items.to_vec(), ordinal }
    }

    #[test]
    fn sessionize_splits_on_gap() {
        let log = InteractionLog::from_triples([("u", "a", 0), ("u", "b", 100), ("u", "c", 50_000)]);
        let s = sessionize(&log, 3600).unwrap();
        assert_eq!(s, vec![session(0, 0, &[0, 1]), session(0, 1, &[2])]);
    }

    #[test]
    fn sessionize_gap_boundary_is_inclusive() {
        let log = InteractionLog::from_triples([("u", "a", 0), ("u", "b", 10), ("u", "c", 21)]);
        let s = sessionize(&log, 10).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].items, vec![0, 1]);
    }

    #[test]
    fn sessionize_single_record_and_empty() {
        let log = InteractionLog::from_triples([("u", "a", 5)]);
        assert_eq!(sessionize(&log, 60).unwrap(), vec![session(0, 0, &[0])]);
        assert!(sessionize(&InteractionLog::default(), 60).unwrap().is_empty());
        assert!(matches!(sessionize(&log, 0), Err(DatasetError::InvalidGap)));
    }

    #[test]
    fn sessionize_never_mixes_users() {
        let log = InteractionLog::from_triples([("u1", "a", 0), ("u2", "b", 1), ("u1", "c", 2), ("u2", "d", 3)]);
        let s = sessionize(&log, 3600).unwrap();
        assert_eq!(s.len(), 2);
        for sess in &s {
            let users: Vec<usize> =
                log.records.iter().filter(|r| sess.items.contains(&r.item)).map(|r| r.user).collect();
            assert!(users.iter().all(|&u| u == sess.user));
        }
    }

    #[test]
    fn records_sorted_and_ties_keep_input_order() {
        let log = InteractionLog::from_triples([("u", "x", 10), ("u", "y", 5), ("u", "z", 5)]);
        let order: Vec<&str> = log.records.iter().map(|r| log.items.id(r.item)).collect();
        assert_eq!(order, vec!["y", "z", "x"]);
    }

    #[test]
    fn presessionized_groups_by_session_id() {
        let log = InteractionLog::from_rows([
            ("u", Some("s2"), "c", 100),
            ("u", Some("s1"), "a", 0),
            ("u", Some("s1"), "b", 1),
        ]);
        let s = sessions_from_ids(&log);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].ordinal, 0);
        assert_eq!(s[0].items.len(), 2);
        assert_eq!(s[1].items.len(), 1);
    }

    #[test]
    fn filter_drops_short_sessions_then_light_users() {
        let sessions = vec![session(0, 0, &[1, 2]), session(0, 1, &[1, 2, 3]), session(0, 2, &[4, 5, 6, 7, 8])];
        let f = filter_dataset(&sessions, 3, 1).unwrap();
        let lens: Vec<usize> = f.sessions.iter().map(Session::len).collect();
        assert_eq!(lens, vec![3, 5]);
        assert_eq!(f.sessions[1].ordinal, 1);
        assert_eq!(f.item_map, vec![1, 2, 3, 4, 5, 6, 7, 8]);

        let four: Vec<Session> = (0..4).map(|o| session(0, o, &[1, 2, 3])).collect();
        assert!(matches!(filter_dataset(&four, 3, 5), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn filter_identity_when_all_pass() {
        let sessions: Vec<Session> = (0..5).map(|o| session(0, o, &[0, 1, 2])).collect();
        let f = filter_dataset(&sessions, 3, 5).unwrap();
        assert_eq!(f.sessions, sessions);
    }

    #[test]
    fn split_counts_use_ceiling() {
        assert_eq!(split_counts(10, 0.1, 0.1), (8, 1, 1));
        assert_eq!(split_counts(20, 0.1, 0.1), (16, 2, 2));
        assert_eq!(split_counts(30, 0.1, 0.1), (24, 3, 3));
        assert_eq!(split_counts(5, 0.1, 0.1), (3, 1, 1));
        // valid shrinks before train
        assert_eq!(split_counts(2, 0.1, 0.1), (1, 0, 1));
        assert_eq!(split_counts(1, 0.1, 0.1), (1, 0, 0));
    }

    #[test]
    fn split_is_chronological_and_reindexes_seen_first() {
        let sessions: Vec<Session> = (0..10).map(|o| session(0, o, &[o, o + 100, o + 200])).collect();
        let ds = split_dataset(&sessions, 0.1, 0.1).unwrap();
        assert_eq!((ds.train.len(), ds.valid.len(), ds.test.len()), (8, 1, 1));
        assert_eq!(ds.test[0].ordinal, 9);
        assert_eq!(ds.valid[0].ordinal, 8);
        assert_eq!(ds.num_seen_items, 24);
        assert!(ds.train.iter().flat_map(|s| &s.items).all(|&i| ds.is_seen(i)));
        assert!(ds.test[0].items.iter().all(|&i| !ds.is_seen(i)));
        assert_eq!(ds.item_order[ds.test[0].items[0]], 9);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let s = vec![session(0, 0, &[1, 2, 3])];
        assert!(split_dataset(&s, 0.0, 0.0).is_err());
        assert!(split_dataset(&s, 0.5, 0.5).is_err());
    }

    #[test]
    fn sequence_split_expands_prefixes() {
        let inst = sequence_split(&session(3, 7, &[10, 20, 30]));
        assert_eq!(inst.len(), 2);
        assert_eq!((inst[0].prefix.clone(), inst[0].label), (vec![10], 20));
        assert_eq!((inst[1].prefix.clone(), inst[1].label), (vec![10, 20], 30));
        assert_eq!((inst[1].user, inst[1].session_ordinal), (3, 7));
        assert_eq!(sequence_split(&session(0, 0, &[1, 2])).len(), 1);
        assert!(sequence_split(&session(0, 0, &[1])).is_empty());
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<Session>> {
        prop::collection::vec((0usize..6, prop::collection::vec(0usize..30, 1..8)), 1..60).prop_map(|raw| {
            let mut next = [0usize; 6];
            raw.into_iter()
                .map(|(u, items)| {
                    let o = next[u];
                    next[u] += 1;
                    Session { user: u, items, ordinal: o }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sequence_split_reconstructs_session(items in prop::collection::vec(0usize..50, 2..20)) {
            let s = Session { user: 0, items: items.clone(), ordinal: 0 };
            let inst = sequence_split(&s);
            prop_assert_eq!(inst.len(), items.len() - 1);
            let mut rebuilt = vec![inst[0].prefix[0]];
            rebuilt.extend(inst.iter().map(|i| i.label));
            prop_assert_eq!(rebuilt, items.clone());
            for i in &inst {
                let mut full = i.prefix.clone();
                full.push(i.label);
                prop_assert_eq!(&full[..], &items[..full.len()]);
            }
        }

        #[test]
        fn filter_postconditions_hold(sessions in arb_sessions()) {
            if let Ok(f) = filter_dataset(&sessions, 3, 2) {
                let mut counts = BTreeMap::new();
                for s in &f.sessions {
                    prop_assert!(s.len() >= 3);
                    *counts.entry(s.user).or_insert(0) += 1;
                }
                prop_assert!(counts.values().all(|&c| c >= 2));
                let max_item = f.sessions.iter().flat_map(|s| &s.items).max().copied().unwrap();
                prop_assert_eq!(max_item + 1, f.item_map.len());
            }
        }

        #[test]
        fn split_partitions_sessions_exactly(sessions in arb_sessions()) {
            let ds = split_dataset(&sessions, 0.1, 0.1).unwrap();
            let mut keys: Vec<(usize, usize)> = ds.train.iter().chain(&ds.valid).chain(&ds.test)
                .map(|s| (s.user, s.ordinal)).collect();
            keys.sort_unstable();
            let mut expected: Vec<(usize, usize)> = sessions.iter().map(|s| (s.user, s.ordinal)).collect();
            expected.sort_unstable();
            prop_assert_eq!(keys, expected);
            // item content survives re-indexing
            for s in ds.train.iter().chain(&ds.valid).chain(&ds.test) {
                let orig = sessions.iter().find(|o| o.user == s.user && o.ordinal == s.ordinal).unwrap();
                let mapped: Vec<usize> = s.items.iter().map(|&i| ds.item_order[i]).collect();
                prop_assert_eq!(&mapped, &orig.items);
            }
            // every user keeps a train session
            let users: std::collections::BTreeSet<usize> = sessions.iter().map(|s| s.user).collect();
            for u in users {
                prop_assert!(ds.train.iter().any(|s| s.user == u));
            }
        }

        #[test]
        fn resessionizing_is_idempotent(gaps in prop::collection::vec(1i64..10_000, 1..40)) {
            let mut t = 0;
            let stamps: Vec<i64> = gaps.iter().map(|g| { t += g; t }).collect();
            let ids: Vec<String> = (0..gaps.len()).map(|k| format!("i{k}")).collect();
            let log = InteractionLog::from_triples(ids.iter().zip(&stamps).map(|(i, &t)| ("u", i.as_str(), t)));
            let first = sessionize(&log, 3600).unwrap();
            // concatenate the sessions back into one record stream, then re-sessionize
            let concatenated: Vec<(&str, &str, i64)> = first
                .iter()
                .flat_map(|s| s.items.iter().map(|&i| ("u", log.items.id(i), stamps[i])))
                .collect();
            let relog = InteractionLog::from_triples(concatenated);
            let again = sessionize(&relog, 3600).unwrap();
            prop_assert_eq!(&first, &again);
        }
    }
}
