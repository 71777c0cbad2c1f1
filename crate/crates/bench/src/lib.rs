//! Shared fixtures for the benchmarks.

use cbdc_core::authlog::HistoryTree;

/// Distinct records of roughly header size.
pub fn records(n: u64) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| [i.to_be_bytes().as_slice(), &[0xA5; 88]].concat())
        .collect()
}

pub fn tree(records: &[Vec<u8>]) -> HistoryTree {
    let mut t = HistoryTree::new();
    for r in records {
        t.add(r);
    }
    t
}
