//! Property tests for the structural invariants of the index, the
//! evaluator, and prefix grouping.

use proptest::prelude::*;

use sid_forge::cce::{item_hit, item_ndcg, match_target, sid_metrics, BeamRecord};
use sid_forge::collision::prefix_groups;
use sid_forge::index::{build_sid_index, ItemId, SidIndex, SidSequence};

fn arb_index() -> impl Strategy<Value = SidIndex> {
    (1usize..40, 1usize..4, 2u32..8).prop_flat_map(|(n, l, v)| {
        proptest::collection::vec(proptest::collection::vec(0..v, l), n).prop_map(
            move |sids| {
                let assignments = sids
                    .into_iter()
                    .enumerate()
                    .map(|(i, codes)| (ItemId(i as u32), SidSequence::new(codes)))
                    .collect();
                build_sid_index(assignments, l, v).unwrap()
            },
        )
    })
}

proptest! {
    /// Writing and re-reading the text format is the identity on the
    /// forward mapping, and a second write is byte-identical.
    #[test]
    fn index_text_round_trip(index in arb_index()) {
        let mut bytes = Vec::new();
        index.write_to(&mut bytes).unwrap();
        let back = SidIndex::read_from(&bytes[..]).unwrap();
        for (item, sid) in index.assignments() {
            prop_assert_eq!(back.sid_of(item).unwrap(), sid);
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }

    /// Inverse groups partition the items: sizes sum to N and every item
    /// appears in the group of its own SID.
    #[test]
    fn inverse_is_a_partition(index in arb_index()) {
        let total: usize = index.groups().map(|(_, g)| g.len()).sum();
        prop_assert_eq!(total, index.n_items());
        for (item, sid) in index.assignments() {
            prop_assert!(index.collision_group(sid).contains(&item));
        }
    }

    /// Item-level metrics never decrease as the cutoff grows, and hit-level
    /// dominance holds at every cutoff.
    #[test]
    fn item_metrics_monotone_in_k(
        index in arb_index(),
        beam_picks in proptest::collection::vec(0usize..1000, 1..12),
        target_pick in 0usize..1000,
    ) {
        let n = index.n_items();
        let target = ItemId((target_pick % n) as u32);
        let beams: Vec<SidSequence> = beam_picks
            .iter()
            .map(|&p| index.sid_of(ItemId((p % n) as u32)).unwrap().clone())
            .collect();
        let record = BeamRecord::new(0, target, beams);
        let target_sid = index.sid_of(target).unwrap();
        let mut prev = (0.0f64, 0.0f64);
        for k in 1..=12 {
            let m = match_target(record.beams(), &index, target, k).unwrap();
            let s = sid_metrics(record.beams(), target_sid, k);
            let cur = (item_hit(&m), item_ndcg(&m));
            prop_assert!(cur.0 >= prev.0 - 1e-15);
            prop_assert!(cur.1 >= prev.1 - 1e-15);
            prop_assert!(cur.0 <= s.hit + 1e-15);
            prev = cur;
        }
    }

    /// A prefix group needs no changes exactly when its last codes are
    /// already distinct, and groups partition the items.
    #[test]
    fn rho_zero_iff_distinct(index in arb_index()) {
        prop_assume!(index.sid_len() >= 2);
        let table = prefix_groups(&index).unwrap();
        let mut covered = 0usize;
        for group in &table.groups {
            covered += group.items.len();
            let mut last: Vec<u32> = group
                .items
                .iter()
                .map(|&i| index.sid_of(i).unwrap().last_code())
                .collect();
            last.sort_unstable();
            last.dedup();
            prop_assert_eq!(group.rho == 0, last.len() == group.items.len());
        }
        prop_assert_eq!(covered, index.n_items());
    }
}
