//! Ledger state as a compressed sparse Merkle map.
//!
//! Keys are hashed to 256-bit paths. A subtree holding no entry hashes to
//! zero, a subtree holding exactly one entry hashes to that entry's leaf
//! hash at any depth, and every other subtree is `H(node ‖ left ‖ right)`.
//! The layout depends only on the set of entries, never on insertion order.
//!
//! A [`PartialState`] carries the entries a batch touches plus a pruned copy
//! of the tree in which every untouched subtree is replaced by its hash. That
//! is enough to check the entries against the old root and to recompute the
//! new root after the batch has written to them.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader};
use crate::crypto::{hash_tagged, Digest};
use crate::ids::Address;
use crate::{impl_codec, impl_codec_enum};

use super::types::{Account, LockedTransferIn, LockedTransferOut};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum StateKey {
    Account { address: Address },
    OutTransfer { id: u64 },
    InTransfer { id: u64 },
    OutCount {},
    InCount {},
}
impl_codec_enum!(StateKey, "state key" {
    0 => Account { address },
    1 => OutTransfer { id },
    2 => InTransfer { id },
    3 => OutCount {},
    4 => InCount {},
});

impl StateKey {
    pub fn account(address: Address) -> Self {
        StateKey::Account { address }
    }

    pub fn path(&self) -> Digest {
        hash_tagged(b"state/key", &[&self.encode()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateValue {
    Account { account: Account },
    Out { transfer: LockedTransferOut },
    In { transfer: LockedTransferIn },
    Counter { value: u64 },
}
impl_codec_enum!(StateValue, "state value" {
    0 => Account { account },
    1 => Out { transfer },
    2 => In { transfer },
    3 => Counter { value },
});

impl StateValue {
    pub fn value_hash(&self) -> Digest {
        hash_tagged(b"state/value", &[&self.encode()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("witness does not hash to the claimed root")]
    RootMismatch,
    #[error("entry {0:?} is not covered by the witness")]
    NotCovered(StateKey),
    #[error("entry value disagrees with the witness for {0:?}")]
    ValueMismatch(StateKey),
    #[error("entry stored under a path that is not its key's path")]
    PathMismatch,
    #[error("witness nests deeper than the key length")]
    TooDeep,
}

const MAX_DEPTH: usize = 256;

fn leaf_hash(path: &Digest, value_hash: &Digest) -> Digest {
    hash_tagged(b"state/leaf", &[&path.0, &value_hash.0])
}

fn node_hash(l: &Digest, r: &Digest) -> Digest {
    hash_tagged(b"state/node", &[&l.0, &r.0])
}

/// Root over `(path, value_hash)` pairs sorted by path, all sharing the
/// first `depth` bits.
fn subtree_root(entries: &[(Digest, Digest)], depth: usize) -> Digest {
    match entries {
        [] => Digest::ZERO,
        [(p, v)] => leaf_hash(p, v),
        _ => {
            let split = entries.partition_point(|(p, _)| !p.bit(depth));
            node_hash(
                &subtree_root(&entries[..split], depth + 1),
                &subtree_root(&entries[split..], depth + 1),
            )
        }
    }
}

/// Pruned sparse-Merkle tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    Empty {},
    Leaf {
        path: Digest,
        value_hash: Digest,
    },
    /// Hash of a subtree that holds no touched entry.
    Pruned {
        hash: Digest,
    },
    Branch {
        left: Box<Witness>,
        right: Box<Witness>,
    },
}

impl Encode for Witness {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Witness::Empty {} => out.push(0),
            Witness::Leaf { path, value_hash } => {
                out.push(1);
                path.encode_to(out);
                value_hash.encode_to(out);
            }
            Witness::Pruned { hash } => {
                out.push(2);
                hash.encode_to(out);
            }
            Witness::Branch { left, right } => {
                out.push(3);
                left.encode_to(out);
                right.encode_to(out);
            }
        }
    }
}

impl Witness {
    fn decode_at(r: &mut Reader<'_>, depth: usize) -> Result<Self, CodecError> {
        match u8::decode_from(r)? {
            0 => Ok(Witness::Empty {}),
            1 => Ok(Witness::Leaf {
                path: Digest::decode_from(r)?,
                value_hash: Digest::decode_from(r)?,
            }),
            2 => Ok(Witness::Pruned {
                hash: Digest::decode_from(r)?,
            }),
            3 if depth < MAX_DEPTH => Ok(Witness::Branch {
                left: Box::new(Self::decode_at(r, depth + 1)?),
                right: Box::new(Self::decode_at(r, depth + 1)?),
            }),
            3 => Err(CodecError::Invalid("witness deeper than key length")),
            tag => Err(CodecError::InvalidTag {
                what: "witness",
                tag,
            }),
        }
    }

    fn hash(&self) -> Digest {
        match self {
            Witness::Empty {} => Digest::ZERO,
            Witness::Leaf { path, value_hash } => leaf_hash(path, value_hash),
            Witness::Pruned { hash } => *hash,
            Witness::Branch { left, right } => node_hash(&left.hash(), &right.hash()),
        }
    }

    /// Value hash stored at `path`, `None` if the path is provably absent.
    fn lookup(&self, path: &Digest, depth: usize) -> Result<Option<Digest>, ()> {
        match self {
            Witness::Empty {} => Ok(None),
            Witness::Leaf {
                path: p,
                value_hash,
            } => Ok((p == path).then_some(*value_hash)),
            Witness::Pruned { .. } => Err(()),
            Witness::Branch { left, right } => {
                if depth >= MAX_DEPTH {
                    return Err(());
                }
                if path.bit(depth) {
                    right.lookup(path, depth + 1)
                } else {
                    left.lookup(path, depth + 1)
                }
            }
        }
    }

    fn insert(&mut self, path: Digest, value_hash: Digest, depth: usize) -> Result<(), ()> {
        match self {
            Witness::Empty {} => {
                *self = Witness::Leaf { path, value_hash };
                Ok(())
            }
            Witness::Leaf {
                path: p,
                value_hash: v,
            } if *p == path => {
                *v = value_hash;
                Ok(())
            }
            Witness::Leaf {
                path: p,
                value_hash: v,
            } => {
                let existing = (*p, *v);
                *self = split(existing, (path, value_hash), depth)?;
                Ok(())
            }
            Witness::Pruned { .. } => Err(()),
            Witness::Branch { left, right } => {
                if depth >= MAX_DEPTH {
                    return Err(());
                }
                if path.bit(depth) {
                    right.insert(path, value_hash, depth + 1)
                } else {
                    left.insert(path, value_hash, depth + 1)
                }
            }
        }
    }
}

impl Decode for Witness {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Self::decode_at(r, 0)
    }
}

fn split(a: (Digest, Digest), b: (Digest, Digest), depth: usize) -> Result<Witness, ()> {
    if depth >= MAX_DEPTH {
        return Err(());
    }
    let leaf = |(path, value_hash)| Box::new(Witness::Leaf { path, value_hash });
    let empty = || Box::new(Witness::Empty {});
    Ok(match (a.0.bit(depth), b.0.bit(depth)) {
        (false, true) => Witness::Branch {
            left: leaf(a),
            right: leaf(b),
        },
        (true, false) => Witness::Branch {
            left: leaf(b),
            right: leaf(a),
        },
        (false, false) => Witness::Branch {
            left: Box::new(split(a, b, depth + 1)?),
            right: empty(),
        },
        (true, true) => Witness::Branch {
            left: empty(),
            right: Box::new(split(a, b, depth + 1)?),
        },
    })
}

/// The touched slice of the state, authenticated against `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialState {
    pub root: Digest,
    /// Every touched key with its current value, `None` if absent.
    pub entries: BTreeMap<StateKey, Option<StateValue>>,
    pub witness: Witness,
}
impl_codec!(PartialState {
    root,
    entries,
    witness
});

impl PartialState {
    /// Checks the witness against `root` and every entry against the witness.
    pub fn verify(&self) -> Result<(), StateError> {
        if self.witness.hash() != self.root {
            return Err(StateError::RootMismatch);
        }
        for (key, value) in &self.entries {
            let found = self
                .witness
                .lookup(&key.path(), 0)
                .map_err(|_| StateError::NotCovered(key.clone()))?;
            if found != value.as_ref().map(StateValue::value_hash) {
                return Err(StateError::ValueMismatch(key.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &StateKey) -> Option<&Option<StateValue>> {
        self.entries.get(key)
    }

    /// Applies `writes` (all of which must be covered) and returns the
    /// resulting partial state with its new root.
    pub fn apply(
        &self,
        writes: &BTreeMap<StateKey, StateValue>,
    ) -> Result<PartialState, StateError> {
        let mut witness = self.witness.clone();
        let mut entries = self.entries.clone();
        for (key, value) in writes {
            if !entries.contains_key(key) {
                return Err(StateError::NotCovered(key.clone()));
            }
            witness
                .insert(key.path(), value.value_hash(), 0)
                .map_err(|_| StateError::NotCovered(key.clone()))?;
            entries.insert(key.clone(), Some(value.clone()));
        }
        Ok(PartialState {
            root: witness.hash(),
            entries,
            witness,
        })
    }
}

/// The complete state, held by the operator outside the enclave.
#[derive(Debug, Clone, Default)]
pub struct State {
    entries: BTreeMap<Digest, (StateKey, StateValue, Digest)>,
}

impl State {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &StateKey) -> Option<&StateValue> {
        self.entries.get(&key.path()).map(|(_, v, _)| v)
    }

    pub fn set(&mut self, key: StateKey, value: StateValue) {
        let vh = value.value_hash();
        self.entries.insert(key.path(), (key, value, vh));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &StateValue)> {
        self.entries.values().map(|(k, v, _)| (k, v))
    }

    pub fn account(&self, address: &Address) -> Account {
        match self.get(&StateKey::account(*address)) {
            Some(StateValue::Account { account }) => *account,
            _ => Account::default(),
        }
    }

    /// Sum of all account balances, including the contracts' escrow.
    pub fn total_balance(&self) -> u128 {
        self.iter()
            .filter_map(|(_, v)| match v {
                StateValue::Account { account } => Some(account.balance as u128),
                _ => None,
            })
            .sum()
    }

    fn leaves(&self) -> Vec<(Digest, Digest)> {
        self.entries
            .iter()
            .map(|(p, (_, _, vh))| (*p, *vh))
            .collect()
    }

    pub fn root(&self) -> Digest {
        subtree_root(&self.leaves(), 0)
    }

    /// Builds the partial state covering `keys`.
    pub fn partial(&self, keys: &BTreeSet<StateKey>) -> PartialState {
        let leaves = self.leaves();
        let mut touched: Vec<Digest> = keys.iter().map(StateKey::path).collect();
        touched.sort();
        touched.dedup();
        let witness = prune(&leaves, &touched, 0);
        PartialState {
            root: witness.hash(),
            entries: keys
                .iter()
                .map(|k| (k.clone(), self.get(k).cloned()))
                .collect(),
            witness,
        }
    }

    /// Installs the entries of a partial state produced by the enclave.
    pub fn absorb(&mut self, partial: &PartialState) {
        for (key, value) in &partial.entries {
            if let Some(v) = value {
                self.set(key.clone(), v.clone());
            }
        }
    }
}

fn prune(leaves: &[(Digest, Digest)], touched: &[Digest], depth: usize) -> Witness {
    if touched.is_empty() {
        return match leaves {
            [] => Witness::Empty {},
            _ => Witness::Pruned {
                hash: subtree_root(leaves, depth),
            },
        };
    }
    match leaves {
        [] => Witness::Empty {},
        [(path, value_hash)] => Witness::Leaf {
            path: *path,
            value_hash: *value_hash,
        },
        _ => {
            let ls = leaves.partition_point(|(p, _)| !p.bit(depth));
            let ts = touched.partition_point(|p| !p.bit(depth));
            Witness::Branch {
                left: Box::new(prune(&leaves[..ls], &touched[..ts], depth + 1)),
                right: Box::new(prune(&leaves[ls..], &touched[ts..], depth + 1)),
            }
        }
    }
}
