mod common;

use std::collections::BTreeMap;

use bytes::Bytes;
use coded_rebalance::addition::split_and_relabel;
use coded_rebalance::exchange::{run_exchange, ExchangeGroup};
use coded_rebalance::scenario::{run_scenario, Scenario};
use coded_rebalance::snapshot::Snapshot;
use coded_rebalance::verify::canonicalize;
use coded_rebalance::{init_database, BroadcastChannel, FileSpec, MemoryChannel, NodeId, Subfile};
use common::{minimal_bytes, simulate_exchange};
use proptest::prelude::*;

fn exchange(participants: &[NodeId], files: &[Vec<u8>]) -> (BTreeMap<NodeId, Bytes>, u64) {
    let group = ExchangeGroup::new(participants.to_vec(), files.iter().cloned().map(Bytes::from).collect(), 7).unwrap();
    let mut bus = MemoryChannel::new();
    bus.begin_operation(1, &participants.iter().copied().collect()).unwrap();
    let outcome = run_exchange(&group, &mut bus).unwrap();
    bus.finish_operation().unwrap();
    assert_eq!(outcome.bytes_transmitted, bus.meter());
    (outcome.delivered.into_iter().collect(), outcome.bytes_transmitted)
}

fn group_input() -> impl Strategy<Value = (Vec<NodeId>, Vec<Vec<u8>>)> {
    (2usize..8, 1usize..9).prop_flat_map(|(r, part)| {
        (
            proptest::sample::subsequence((1u64..=19).collect::<Vec<_>>(), r).prop_shuffle(),
            proptest::collection::vec(proptest::collection::vec(any::<u8>(), part * (r - 1)), r),
        )
            .prop_map(|(ids, files)| (ids.into_iter().map(NodeId).collect(), files))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exchange_decodes_everything((participants, files) in group_input()) {
        let r = participants.len() as u64;
        let len = files[0].len() as u64;
        let (delivered, cost) = exchange(&participants, &files);
        prop_assert_eq!(cost * (r - 1), len * r);
        for (node, file) in participants.iter().zip(&files) {
            prop_assert_eq!(delivered[node].as_ref(), file.as_slice());
        }
        let mut order: Vec<usize> = (0..files.len()).collect();
        order.sort_by_key(|n| participants[*n]);
        let sorted: Vec<Vec<u8>> = order.iter().map(|n| files[*n].clone()).collect();
        let (reference, reference_cost) = simulate_exchange(&sorted);
        prop_assert_eq!(reference_cost as u64, cost);
        prop_assert_eq!(reference, sorted);
    }

    #[test]
    fn exchange_ignores_listing_order((participants, files) in group_input(), rotate in 0usize..8) {
        let k = rotate % participants.len();
        let mut p2 = participants.clone();
        let mut f2 = files.clone();
        p2.rotate_left(k);
        f2.rotate_left(k);
        prop_assert_eq!(exchange(&participants, &files), exchange(&p2, &f2));
    }

    #[test]
    fn canonical_layout_ignores_node_names(k in 3usize..7, r_off in 0usize..3, gap in 1u64..5) {
        let r = 2 + r_off % (k - 2);
        let db = init_database(k, r, FileSpec::new(minimal_bytes(k as u64, r as u64), 1).unwrap()).unwrap();
        let rename = |id: NodeId| NodeId(id.0 * gap + 3);
        let mut snap = Snapshot::capture(&db);
        snap.next_id = rename(NodeId(k as u64)).0 + 1;
        for node in &mut snap.nodes {
            node.id = rename(node.id);
            for s in &mut node.subfiles {
                s.index = s.index.map_ids(rename);
            }
        }
        let renamed = snap.restore().unwrap();
        prop_assert_eq!(canonicalize(&renamed), canonicalize(&db));
    }

    #[test]
    fn split_then_concat(k in 3usize..7, r_off in 0usize..3, which in 0usize..1000, seed in any::<u64>()) {
        let r = 2 + r_off % (k - 2);
        let db = init_database(k, r, FileSpec::new(minimal_bytes(k as u64, r as u64), seed).unwrap()).unwrap();
        let all: Vec<&Subfile> = db.distinct_subfiles().into_values().collect();
        let original = all[which % all.len()];
        let split = split_and_relabel(original, &db, db.next_id()).unwrap();
        prop_assert_eq!(split.parts.len(), k + 1);
        prop_assert_eq!(&Subfile::concat(original.index().clone(), &split.parts), original);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_walks_stay_invariant(r in 2usize..4, seed in any::<u64>(), steps in 1usize..9) {
        let scenario = Scenario::random_walk(r + 2, r, r + 4, seed, steps).unwrap();
        let outcome = run_scenario(&scenario).unwrap();
        prop_assert!(outcome.report.pass, "{}", outcome.report.to_json());
        prop_assert_eq!(outcome.report.operations.len(), steps);
        prop_assert_eq!(outcome.database.reconstruct_file().unwrap(), FileSpec::new(scenario.file_bytes, seed).unwrap().content());
    }
}
