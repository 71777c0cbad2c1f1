//! Append-only history tree with membership and incremental proofs.
//!
//! The layout is the left-balanced binary tree of RFC 6962/9162: the root of
//! version `n` splits at the largest power of two below `n`. Complete
//! (frozen) subtrees are cached per level, so any past root and any proof
//! node is available without rehashing the log.
//!
//! A version is the number of records appended so far; record indices are
//! zero-based, so version `j` fixes records `0..j`.

use serde::Serialize;

use crate::crypto::{hash, Digest};
use crate::impl_codec;

use super::{split_point, LogError};

const LEAF_TAG: u8 = 0x10;
const NODE_TAG: u8 = 0x11;

pub fn history_leaf_hash(record: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(1 + record.len());
    buf.push(LEAF_TAG);
    buf.extend_from_slice(record);
    hash(&buf)
}

pub fn history_node_hash(l: &Digest, r: &Digest) -> Digest {
    let mut buf = [0u8; 65];
    buf[0] = NODE_TAG;
    buf[1..33].copy_from_slice(&l.0);
    buf[33..].copy_from_slice(&r.0);
    hash(&buf)
}

/// A version of the log together with its root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Commitment {
    pub version: u64,
    pub root: Digest,
}
impl_codec!(Commitment { version, root });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipProof {
    pub index: u64,
    pub version: u64,
    pub path: Vec<Digest>,
}
impl_codec!(MembershipProof {
    index,
    version,
    path
});

/// Consistency proof between two versions. The first node is always the
/// seed subtree, so the proof alone reduces to both roots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementalProof {
    pub from_version: u64,
    pub to_version: u64,
    pub node_hashes: Vec<Digest>,
}
impl_codec!(IncrementalProof {
    from_version,
    to_version,
    node_hashes
});

#[derive(Debug, Clone, Default)]
pub struct HistoryTree {
    /// `levels[k][i]` is the root of the complete subtree covering records
    /// `i * 2^k .. (i + 1) * 2^k`.
    levels: Vec<Vec<Digest>>,
}

impl HistoryTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.len() as u64)
    }

    pub fn add(&mut self, record: &[u8]) -> Commitment {
        self.add_leaf_hash(history_leaf_hash(record))
    }

    pub fn add_leaf_hash(&mut self, leaf: Digest) -> Commitment {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf);
        let mut k = 0;
        while self.levels[k].len().is_multiple_of(2) {
            let n = self.levels[k].len();
            let parent = history_node_hash(&self.levels[k][n - 2], &self.levels[k][n - 1]);
            if self.levels.len() == k + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[k + 1].push(parent);
            k += 1;
        }
        self.commitment()
    }

    pub fn leaf(&self, index: u64) -> Option<Digest> {
        self.levels.first()?.get(index as usize).copied()
    }

    pub fn commitment(&self) -> Commitment {
        let v = self.version();
        Commitment {
            version: v,
            root: self.root_at(v).unwrap_or(Digest::ZERO),
        }
    }

    pub fn root_at(&self, version: u64) -> Option<Digest> {
        (version >= 1 && version <= self.version()).then(|| self.subtree(0, version))
    }

    pub fn commitment_at(&self, version: u64) -> Option<Commitment> {
        Some(Commitment {
            version,
            root: self.root_at(version)?,
        })
    }

    fn subtree(&self, lo: u64, hi: u64) -> Digest {
        let n = hi - lo;
        if n.is_power_of_two() && lo.is_multiple_of(n) {
            let k = n.trailing_zeros() as usize;
            return self.levels[k][(lo >> k) as usize];
        }
        let k = split_point(n);
        history_node_hash(&self.subtree(lo, lo + k), &self.subtree(lo + k, hi))
    }

    fn check_known(&self, c: &Commitment) -> Result<(), LogError> {
        match self.root_at(c.version) {
            Some(r) if r == c.root => Ok(()),
            _ => Err(LogError::UnknownCommitment(c.version)),
        }
    }

    pub fn inc_proof(
        &self,
        from: &Commitment,
        to: &Commitment,
    ) -> Result<IncrementalProof, LogError> {
        if from.version > to.version || from.version == 0 {
            return Err(LogError::InvalidRange {
                from: from.version,
                to: to.version,
            });
        }
        self.check_known(from)?;
        self.check_known(to)?;
        let (m, n) = (from.version, to.version);
        let mut nodes = Vec::new();
        if m == n {
            nodes.push(to.root);
        } else {
            if m.is_power_of_two() {
                nodes.push(self.subtree(0, m));
            }
            self.subproof(m, 0, n, true, &mut nodes);
        }
        Ok(IncrementalProof {
            from_version: m,
            to_version: n,
            node_hashes: nodes,
        })
    }

    fn subproof(&self, m: u64, lo: u64, hi: u64, complete: bool, out: &mut Vec<Digest>) {
        let n = hi - lo;
        if m == n {
            if !complete {
                out.push(self.subtree(lo, hi));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, lo, lo + k, complete, out);
            out.push(self.subtree(lo + k, hi));
        } else {
            self.subproof(m - k, lo + k, hi, false, out);
            out.push(self.subtree(lo, lo + k));
        }
    }

    pub fn mem_proof(&self, index: u64, at: &Commitment) -> Result<MembershipProof, LogError> {
        self.check_known(at)?;
        if index >= at.version {
            return Err(LogError::IndexOutOfRange {
                index,
                len: at.version,
            });
        }
        let mut path = Vec::new();
        self.path(index, 0, at.version, &mut path);
        Ok(MembershipProof {
            index,
            version: at.version,
            path,
        })
    }

    fn path(&self, m: u64, lo: u64, hi: u64, out: &mut Vec<Digest>) {
        let n = hi - lo;
        if n == 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.path(m, lo, lo + k, out);
            out.push(self.subtree(lo + k, hi));
        } else {
            self.path(m - k, lo + k, hi, out);
            out.push(self.subtree(lo, lo + k));
        }
    }
}

/// Recomputes (old root, new root) from a consistency proof.
fn consistency_roots(p: &IncrementalProof) -> Option<(Digest, Digest)> {
    let (m, n) = (p.from_version, p.to_version);
    if m == 0 || m > n {
        return None;
    }
    if m == n {
        return match p.node_hashes.as_slice() {
            [r] => Some((*r, *r)),
            _ => None,
        };
    }
    let mut it = p.node_hashes.iter();
    let seed = it.next()?;
    let (mut fnode, mut snode) = (m - 1, n - 1);
    while fnode & 1 == 1 {
        fnode >>= 1;
        snode >>= 1;
    }
    let (mut fr, mut sr) = (*seed, *seed);
    for c in it {
        if snode == 0 {
            return None;
        }
        if fnode & 1 == 1 || fnode == snode {
            fr = history_node_hash(c, &fr);
            sr = history_node_hash(c, &sr);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            sr = history_node_hash(&sr, c);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    (snode == 0).then_some((fr, sr))
}

pub fn inc_verify(p: &IncrementalProof, from: &Commitment, to: &Commitment) -> bool {
    p.from_version == from.version
        && p.to_version == to.version
        && consistency_roots(p) == Some((from.root, to.root))
}

/// The to-commitment a proof was generated for.
pub fn reduce_root(p: &IncrementalProof) -> Result<Commitment, LogError> {
    let (_, root) = consistency_roots(p).ok_or(LogError::MalformedProof)?;
    Ok(Commitment {
        version: p.to_version,
        root,
    })
}

pub fn mem_verify(p: &MembershipProof, index: u64, record: &[u8], at: &Commitment) -> bool {
    if p.index != index || p.version != at.version || index >= at.version {
        return false;
    }
    let (mut fnode, mut snode) = (index, at.version - 1);
    let mut r = history_leaf_hash(record);
    for h in &p.path {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            r = history_node_hash(h, &r);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            r = history_node_hash(&r, h);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && r == at.root
}
