//! Authenticated logs: a plain Merkle tree for per-block transaction and
//! receipt sets, an append-only history tree over block headers, and the
//! frozen-hash cache the enclave uses to track the history-tree root in
//! logarithmic space.

mod frozen;
mod history;
mod merkle;

pub use frozen::FrozenHashCache;
pub use history::{
    history_leaf_hash, history_node_hash, inc_verify, mem_verify, reduce_root, Commitment,
    HistoryTree, IncrementalProof, MembershipProof,
};
pub use merkle::{empty_root, mk_proof, mk_root, mk_root_or_empty, mk_verify, MerkleProof, Side};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("cannot build a Merkle root over an empty list")]
    EmptyList,
    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("commitment for version {0} was not produced by this tree")]
    UnknownCommitment(u64),
    #[error("invalid version range {from}..{to}")]
    InvalidRange { from: u64, to: u64 },
    #[error("malformed proof")]
    MalformedProof,
    #[error("frozen-hash update expected id {expected}, got {got}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("frozen-hash cache is empty")]
    EmptyCache,
}

/// Largest power of two strictly below `n` (`n >= 2`).
pub(crate) fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}
