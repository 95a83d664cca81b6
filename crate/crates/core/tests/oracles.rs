//! Library results against reference computations from `common`.

mod common;

use std::collections::BTreeSet;

use bytes::Bytes;
use coded_rebalance::addition::execute_addition;
use coded_rebalance::exchange::{run_exchange, ExchangeGroup};
use coded_rebalance::model::byte_coverage;
use coded_rebalance::removal::{converse_check, execute_removal, merge_map};
use coded_rebalance::{
    enumerate_ordered_indices, falling_factorial, init_database, BroadcastChannel, FileSpec, MemoryChannel, NodeId,
};
use common::{fresh_coverage, minimal_bytes, ordered_count, ordered_tuples, simulate_exchange};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(n: u64) -> BTreeSet<NodeId> {
    (1..=n).map(NodeId).collect()
}

#[test]
fn enumeration_matches_permutations() {
    for n in 1..=7u64 {
        for l in 0..=n as usize {
            let ours: Vec<Vec<u64>> = enumerate_ordered_indices(&ids(n), l)
                .unwrap()
                .iter()
                .map(|i| i.components().iter().map(|c| c.0).collect())
                .collect();
            assert_eq!(ours, ordered_tuples(n, l), "n={n} l={l}");
            assert_eq!(falling_factorial(n, l as u64).unwrap(), ordered_count(n, l as u64));
        }
    }
}

#[test]
fn fresh_coverage_matches_placement_rule() {
    for (k, r) in [(4, 2), (5, 3), (6, 4)] {
        let n = minimal_bytes(k, r);
        let db = init_database(k as usize, r as usize, FileSpec::new(n, 1).unwrap()).unwrap();
        let all: Vec<u64> = (1..=k).collect();
        let subsets = [all.clone(), all[..k as usize - 1].to_vec(), vec![1, 3]];
        for subset in subsets {
            let set: BTreeSet<NodeId> = subset.iter().copied().map(NodeId).collect();
            assert_eq!(byte_coverage(&db, &set).unwrap(), fresh_coverage(k, r, n, &subset));
        }
    }
}

#[test]
fn exchange_among_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let files: Vec<Vec<u8>> = (0..5)
        .map(|_| {
            let mut f = vec![0u8; 20];
            rng.fill_bytes(&mut f);
            f
        })
        .collect();
    let (decoded, cost) = simulate_exchange(&files);
    assert_eq!(cost, 25);

    let participants: Vec<NodeId> = [2, 4, 6, 8, 10].map(NodeId).to_vec();
    let group = ExchangeGroup::new(participants.clone(), files.iter().cloned().map(Bytes::from).collect(), 0).unwrap();
    let mut bus = MemoryChannel::new();
    bus.begin_operation(1, &participants.iter().copied().collect()).unwrap();
    let outcome = run_exchange(&group, &mut bus).unwrap();
    bus.finish_operation().unwrap();
    assert_eq!(outcome.bytes_transmitted, 25);
    assert_eq!(bus.meter(), 25);
    for (n, (node, payload)) in outcome.delivered.iter().enumerate() {
        assert_eq!(*node, participants[n]);
        assert_eq!(payload.as_ref(), files[n].as_slice());
        assert_eq!(payload.as_ref(), decoded[n].as_slice());
    }
}

#[test]
fn removal_bytes_six_three() {
    let n = minimal_bytes(6, 3);
    let db = init_database(6, 3, FileSpec::new(n, 2).unwrap()).unwrap();
    for k in 1..=6 {
        let (_, _, log) = execute_removal(&db, NodeId(k), &mut MemoryChannel::new()).unwrap();
        // lambda N / (r - 1)
        assert_eq!(log.total_bytes(), n * 3 / 6 / 2);
    }
}

#[test]
fn merge_sizes() {
    for (k, r) in [(4u64, 2u64), (5, 3), (6, 3), (7, 5)] {
        let mut survivors = ids(k);
        survivors.remove(&NodeId(2));
        let map = merge_map(&survivors, NodeId(2), r as usize).unwrap();
        assert_eq!(map.entries.len() as u64, ordered_count(k - 1, k - 1 - r));
        for parts in map.entries.values() {
            // r holders prefixed plus K - r insertions of the removed id
            assert_eq!(parts.len() as u64, k);
            assert_eq!(parts.iter().collect::<BTreeSet<_>>().len() as u64, k);
        }
        let covered: BTreeSet<_> = map.entries.values().flatten().collect();
        assert_eq!(covered.len() as u64, ordered_count(k, k - r));
    }
}

#[test]
fn addition_part_sizes() {
    let n = minimal_bytes(5, 3);
    let db = init_database(5, 3, FileSpec::new(n, 3).unwrap()).unwrap();
    let (after, report, log) = execute_addition(&db, &mut MemoryChannel::new()).unwrap();
    assert_eq!(after.uniform_subfile_len(), Some(n / ordered_count(6, 3)));
    // every old subfile ships r of its K+1 parts
    assert_eq!(log.total_bytes(), ordered_count(5, 2) * 3 * (n / ordered_count(6, 3)));
    assert_eq!(report.bytes_transmitted, after.node_bytes(NodeId(6)).unwrap());
}

#[test]
fn converse_counts() {
    for (k, r) in [(4u64, 2u64), (5, 3), (6, 4), (7, 3)] {
        let n = minimal_bytes(k, r);
        let db = init_database(k as usize, r as usize, FileSpec::new(n, 4).unwrap()).unwrap();
        let lost = n * r / k;
        let (_, _, log) = execute_removal(&db, NodeId(1), &mut MemoryChannel::new()).unwrap();
        let report = converse_check(&db, NodeId(1), log.total_bytes()).unwrap();
        // a fresh placement leaves every lost byte at exactly r-1 survivors
        let coverage = fresh_coverage(k, r, n, &(2..=k).collect::<Vec<_>>());
        let on_removed = fresh_coverage(k, r, n, &[1]);
        let at_r_minus_1 = coverage.iter().zip(&on_removed).filter(|(c, h)| **h == 1 && **c as u64 == r - 1).count();
        assert_eq!(at_r_minus_1 as u64, lost);
        assert_eq!(report.lost_bytes, lost);
        assert_eq!(report.count_sum, lost);
        assert_eq!(report.weighted_sum, (r - 1) * lost);
        assert_eq!(report.measured_bytes * (r - 1), lost);
        assert!(report.passed(r as usize));
    }
}
