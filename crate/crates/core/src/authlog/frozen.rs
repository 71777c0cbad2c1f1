use crate::crypto::Digest;
use crate::impl_codec;

use super::{history_node_hash, LogError};

/// Roots of the complete subtrees of the current history tree, left to right.
///
/// After `count` appends there is exactly one entry per set bit of `count`,
/// and folding the entries from the right gives the history-tree root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrozenHashCache {
    entries: Vec<Digest>,
    count: u64,
}
impl_codec!(FrozenHashCache { entries, count });

impl FrozenHashCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Digest] {
        &self.entries
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Appends the leaf hash of record number `id` (1-based) and merges the
    /// trailing entries once for every power of two dividing `id`.
    pub fn update(&mut self, leaf: Digest, id: u64) -> Result<(), LogError> {
        if id != self.count + 1 {
            return Err(LogError::IdMismatch {
                expected: self.count + 1,
                got: id,
            });
        }
        self.entries.push(leaf);
        let l = 63 - id.leading_zeros();
        let mut i: u64 = 2;
        while i <= 1u64 << l {
            if id.is_multiple_of(i) {
                let right = self.entries.pop().expect("merge needs two entries");
                let left = self.entries.pop().expect("merge needs two entries");
                self.entries.push(history_node_hash(&left, &right));
            }
            i <<= 1;
        }
        self.count = id;
        Ok(())
    }

    pub fn reduce(&self) -> Result<Digest, LogError> {
        let (last, rest) = self.entries.split_last().ok_or(LogError::EmptyCache)?;
        Ok(rest
            .iter()
            .rev()
            .fold(*last, |acc, e| history_node_hash(e, &acc)))
    }
}
