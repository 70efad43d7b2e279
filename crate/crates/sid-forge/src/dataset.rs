//! Dataset ingestion: generic TSV interactions, iterative k-core filtering,
//! and leave-one-out splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{InteractionLog, ItemId};

/// One raw interaction row: `user<TAB>item<TAB>timestamp`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

pub fn read_interactions_tsv(r: impl Read) -> Result<Vec<RawInteraction>> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (user, item, ts) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(t)) => (u, i, t),
            _ => {
                return Err(Error::Format(format!(
                    "line {}: expected user<TAB>item<TAB>timestamp",
                    lineno + 1
                )))
            }
        };
        let timestamp: i64 = ts
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad timestamp '{ts}'", lineno + 1)))?;
        rows.push(RawInteraction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    Ok(rows)
}

pub fn write_interactions_tsv(w: &mut impl Write, rows: &[RawInteraction]) -> Result<()> {
    for row in rows {
        writeln!(w, "{}\t{}\t{}", row.user, row.item, row.timestamp)?;
    }
    Ok(())
}

pub fn read_interactions_path(path: impl AsRef<Path>) -> Result<Vec<RawInteraction>> {
    read_interactions_tsv(File::open(path)?)
}

pub fn write_interactions_path(path: impl AsRef<Path>, rows: &[RawInteraction]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_interactions_tsv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// k-core-filtered dataset with a leave-one-out split: per user, the last
/// interaction is the test item, the second-to-last the validation item,
/// and everything earlier is training history.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: InteractionLog,
    pub validation: BTreeMap<u32, ItemId>,
    pub test: BTreeMap<u32, ItemId>,
    /// Dense user id -> original id, sorted by original id.
    pub user_ids: Vec<String>,
    /// Dense item id -> original id, sorted by original id.
    pub item_ids: Vec<String>,
    /// Surviving raw rows in user-major chronological order; feeding these
    /// back through [`preprocess`] reproduces the same splits.
    pub kept: Vec<RawInteraction>,
}

/// Iteratively drop users and items with fewer than `k_core` interactions
/// until a fixed point, then split each user's chronological sequence.
/// Timestamp ties keep input order. Users need three interactions for the
/// split, so the user-side threshold is floored at 3.
pub fn preprocess(rows: &[RawInteraction], k_core: usize) -> Result<SplitDataset> {
    let user_min = k_core.max(3);
    let item_min = k_core.max(1);

    let mut alive: Vec<bool> = vec![true; rows.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (row, &live) in rows.iter().zip(&alive) {
            if live {
                *user_deg.entry(&row.user).or_default() += 1;
                *item_deg.entry(&row.item).or_default() += 1;
            }
        }
        let mut dropped = false;
        for (row, live) in rows.iter().zip(alive.iter_mut()) {
            if *live
                && (user_deg[row.user.as_str()] < user_min
                    || item_deg[row.item.as_str()] < item_min)
            {
                *live = false;
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }
    if !alive.iter().any(|&l| l) {
        return Err(Error::AllFiltered { k: k_core });
    }

    let survivors: Vec<(usize, &RawInteraction)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| alive[*i])
        .collect();

    let user_set: BTreeSet<&str> = survivors.iter().map(|(_, r)| r.user.as_str()).collect();
    let item_set: BTreeSet<&str> = survivors.iter().map(|(_, r)| r.item.as_str()).collect();
    let user_ids: Vec<String> = user_set.iter().map(|s| s.to_string()).collect();
    let item_ids: Vec<String> = item_set.iter().map(|s| s.to_string()).collect();
    let user_dense: HashMap<&str, u32> = user_set
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as u32))
        .collect();
    let item_dense: HashMap<&str, u32> = item_set
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as u32))
        .collect();

    // Per-user rows in (timestamp, input order).
    let mut per_user: BTreeMap<u32, Vec<(i64, usize)>> = BTreeMap::new();
    for &(seq, row) in &survivors {
        per_user
            .entry(user_dense[row.user.as_str()])
            .or_default()
            .push((row.timestamp, seq));
    }

    let mut train = InteractionLog::new(item_ids.len());
    let mut validation = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut kept = Vec::with_capacity(survivors.len());
    for (user, entries) in &mut per_user {
        entries.sort_unstable(); // by timestamp, then input order
        let items: Vec<ItemId> = entries
            .iter()
            .map(|&(_, seq)| ItemId(item_dense[rows[seq].item.as_str()]))
            .collect();
        kept.extend(entries.iter().map(|&(_, seq)| rows[seq].clone()));
        let n = items.len();
        test.insert(*user, items[n - 1]);
        validation.insert(*user, items[n - 2]);
        train.push_sequence(*user, items[..n - 2].to_vec())?;
    }

    Ok(SplitDataset {
        train,
        validation,
        test,
        user_ids,
        item_ids,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(user: &str, item: &str, ts: i64) -> RawInteraction {
        RawInteraction {
            user: user.into(),
            item: item.into(),
            timestamp: ts,
        }
    }

    #[test]
    fn singleton_items_drag_the_whole_dataset_down() {
        // One user, five interactions, five distinct items: every item has
        // degree 1 and fails the 5-core, which then starves the user.
        let rows: Vec<RawInteraction> =
            (0..5).map(|i| row("u", &format!("i{i}"), i)).collect();
        assert!(matches!(
            preprocess(&rows, 5),
            Err(Error::AllFiltered { k: 5 })
        ));
    }

    #[test]
    fn dense_block_survives_and_splits() {
        // Six users, each interacting with the same six items.
        let mut rows = Vec::new();
        for u in 0..6 {
            for (t, i) in (0..6).enumerate() {
                rows.push(row(&format!("u{u}"), &format!("i{i}"), t as i64));
            }
        }
        let split = preprocess(&rows, 5).unwrap();
        assert_eq!(split.user_ids.len(), 6);
        assert_eq!(split.item_ids.len(), 6);
        for (user, seq) in split.train.iter() {
            assert_eq!(seq.len(), 4); // 6 - validation - test
            assert!(split.validation.contains_key(&user));
            assert!(split.test.contains_key(&user));
        }
        // Chronological order: last item is the test item.
        let last = split.item_ids.iter().position(|s| s == "i5").unwrap();
        assert!(split.test.values().all(|t| t.index() == last));
    }

    #[test]
    fn fixed_point_means_all_degrees_reach_the_core() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        for _ in 0..600 {
            rows.push(row(
                &format!("u{}", rng.random_range(0..40)),
                &format!("i{}", rng.random_range(0..50)),
                rng.random_range(0..100_000),
            ));
        }
        match preprocess(&rows, 5) {
            Ok(split) => {
                let mut user_deg: HashMap<&str, usize> = HashMap::new();
                let mut item_deg: HashMap<&str, usize> = HashMap::new();
                for r in &split.kept {
                    *user_deg.entry(r.user.as_str()).or_default() += 1;
                    *item_deg.entry(r.item.as_str()).or_default() += 1;
                }
                assert!(user_deg.values().all(|&d| d >= 5));
                assert!(item_deg.values().all(|&d| d >= 5));
            }
            Err(Error::AllFiltered { .. }) => {} // legal outcome for sparse draws
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let mut rows = Vec::new();
        for u in 0..5 {
            // All timestamps equal; order of appearance decides.
            for i in 0..5 {
                rows.push(row(&format!("u{u}"), &format!("i{i}"), 7));
            }
        }
        let split = preprocess(&rows, 5).unwrap();
        let i4 = split.item_ids.iter().position(|s| s == "i4").unwrap();
        let i3 = split.item_ids.iter().position(|s| s == "i3").unwrap();
        assert!(split.test.values().all(|t| t.index() == i4));
        assert!(split.validation.values().all(|t| t.index() == i3));
    }

    #[test]
    fn preprocess_is_idempotent_on_its_own_output() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut rows = Vec::new();
        for _ in 0..800 {
            rows.push(row(
                &format!("u{}", rng.random_range(0..20)),
                &format!("i{}", rng.random_range(0..15)),
                rng.random_range(0..1000),
            ));
        }
        let first = preprocess(&rows, 5).unwrap();
        let second = preprocess(&first.kept, 5).unwrap();
        assert_eq!(first.kept, second.kept);
        assert_eq!(first.user_ids, second.user_ids);
        assert_eq!(first.item_ids, second.item_ids);
        assert_eq!(first.test, second.test);
        assert_eq!(first.validation, second.validation);
    }

    #[test]
    fn tsv_round_trips() {
        let rows = vec![row("alice", "book", 100), row("bob", "pen", 200)];
        let mut buf = Vec::new();
        write_interactions_tsv(&mut buf, &rows).unwrap();
        let back = read_interactions_tsv(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }
}
