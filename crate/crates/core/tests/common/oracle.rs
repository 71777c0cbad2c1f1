//! Reference computations written from the definitions, sharing no code
//! with the library.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use sha2::{Digest as _, Sha256};

use cbdc_core::time::YEAR;

const LEAF: u8 = 0x10;
const NODE: u8 = 0x11;

pub fn leaf_hash(record: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([LEAF]);
    h.update(record);
    h.finalize().into()
}

pub fn node_hash(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([NODE]);
    h.update(l);
    h.update(r);
    h.finalize().into()
}

/// Largest power of two strictly below `n` (n ≥ 2).
fn split(n: usize) -> usize {
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    k
}

/// Root of the left-balanced tree over `leaves` (non-empty), by recursion.
pub fn tree_root(leaves: &[[u8; 32]]) -> [u8; 32] {
    match leaves.len() {
        0 => panic!("empty tree has no root"),
        1 => leaves[0],
        n => {
            let k = split(n);
            node_hash(&tree_root(&leaves[..k]), &tree_root(&leaves[k..]))
        }
    }
}

/// Root of the first `version` records, rebuilt from scratch.
pub fn history_root(records: &[Vec<u8>], version: usize) -> [u8; 32] {
    let leaves: Vec<[u8; 32]> = records[..version].iter().map(|r| leaf_hash(r)).collect();
    tree_root(&leaves)
}

/// Cap on issued tokens: t_i0 · (1 + num/den)^(full years elapsed + 1) in
/// exact rationals, floored.
pub fn cap_oracle(t_i0: u64, num: u64, den: u64, elapsed: u64) -> u64 {
    let rate = BigRational::new(BigInt::from(num), BigInt::from(den));
    let growth = BigRational::one() + rate;
    let mut cap = BigRational::from_integer(BigInt::from(t_i0));
    for _ in 0..=(elapsed / YEAR) {
        cap *= &growth;
    }
    cap.floor().to_integer().to_u64().unwrap_or(u64::MAX)
}
