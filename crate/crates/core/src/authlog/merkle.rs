//! Binary Merkle tree over a list of byte strings.
//!
//! Leaves are `H(0x00 || x)`, inner nodes `H(0x01 || left || right)`. A level
//! with an odd number of nodes pairs its last node with itself.

use crate::crypto::{hash, hash_tagged, Digest};
use crate::impl_codec;

use super::LogError;

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

fn leaf_hash(x: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(1 + x.len());
    buf.push(LEAF_TAG);
    buf.extend_from_slice(x);
    hash(&buf)
}

fn node_hash(l: &Digest, r: &Digest) -> Digest {
    let mut buf = [0u8; 65];
    buf[0] = NODE_TAG;
    buf[1..33].copy_from_slice(&l.0);
    buf[33..].copy_from_slice(&r.0);
    hash(&buf)
}

/// Sentinel root for an empty list, used by headers of empty batches.
pub fn empty_root() -> Digest {
    hash_tagged(b"merkle/empty", &[])
}

/// Which side of the running hash a sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}
crate::impl_codec_unit_enum!(Side, "side" { Left = 0, Right = 1 });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<(Digest, Side)>,
}
impl_codec!(MerkleProof {
    leaf_index,
    siblings
});

fn levels<T: AsRef<[u8]>>(items: &[T]) -> Vec<Vec<Digest>> {
    let mut levels = vec![items
        .iter()
        .map(|x| leaf_hash(x.as_ref()))
        .collect::<Vec<_>>()];
    while levels.last().map_or(0, Vec::len) > 1 {
        let cur = levels.last().expect("non-empty");
        let next = cur
            .chunks(2)
            .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
        levels.push(next);
    }
    levels
}

pub fn mk_root<T: AsRef<[u8]>>(items: &[T]) -> Result<Digest, LogError> {
    if items.is_empty() {
        return Err(LogError::EmptyList);
    }
    Ok(levels(items).last().expect("non-empty")[0])
}

pub fn mk_root_or_empty<T: AsRef<[u8]>>(items: &[T]) -> Digest {
    mk_root(items).unwrap_or_else(|_| empty_root())
}

pub fn mk_proof<T: AsRef<[u8]>>(i: usize, items: &[T]) -> Result<MerkleProof, LogError> {
    if i >= items.len() {
        return Err(LogError::IndexOutOfRange {
            index: i as u64,
            len: items.len() as u64,
        });
    }
    let levels = levels(items);
    let mut idx = i;
    let mut siblings = Vec::with_capacity(levels.len() - 1);
    for level in &levels[..levels.len() - 1] {
        let (sib, side) = if idx.is_multiple_of(2) {
            (*level.get(idx + 1).unwrap_or(&level[idx]), Side::Right)
        } else {
            (level[idx - 1], Side::Left)
        };
        siblings.push((sib, side));
        idx /= 2;
    }
    Ok(MerkleProof {
        leaf_index: i as u64,
        siblings,
    })
}

/// Checks that `x` is the element at `proof.leaf_index` under `root`. The
/// sibling sides must agree with the bits of the index.
pub fn mk_verify(proof: &MerkleProof, x: &[u8], root: &Digest) -> bool {
    let depth = proof.siblings.len();
    if depth < 64 && proof.leaf_index >> depth != 0 {
        return false;
    }
    let mut acc = leaf_hash(x);
    for (k, (sib, side)) in proof.siblings.iter().enumerate() {
        let expect = if (proof.leaf_index >> k) & 1 == 0 {
            Side::Right
        } else {
            Side::Left
        };
        if *side != expect {
            return false;
        }
        acc = match side {
            Side::Right => node_hash(&acc, sib),
            Side::Left => node_hash(sib, &acc),
        };
    }
    acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference: recursive construction over explicit node lists.
    fn naive_root(items: &[Vec<u8>]) -> Digest {
        fn go(nodes: Vec<Digest>) -> Digest {
            if nodes.len() == 1 {
                return nodes[0];
            }
            let mut next = Vec::new();
            let mut i = 0;
            while i < nodes.len() {
                let l = nodes[i];
                let r = if i + 1 < nodes.len() {
                    nodes[i + 1]
                } else {
                    nodes[i]
                };
                let mut b = vec![1u8];
                b.extend_from_slice(&l.0);
                b.extend_from_slice(&r.0);
                next.push(hash(&b));
                i += 2;
            }
            go(next)
        }
        go(items
            .iter()
            .map(|x| {
                let mut b = vec![0u8];
                b.extend_from_slice(x);
                hash(&b)
            })
            .collect())
    }

    fn items(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| format!("item-{i}").into_bytes()).collect()
    }

    #[test]
    fn single_and_pair() {
        let x = b"x".to_vec();
        let y = b"y".to_vec();
        assert_eq!(mk_root(std::slice::from_ref(&x)).unwrap(), leaf_hash(b"x"));
        assert_eq!(
            mk_root(&[x, y]).unwrap(),
            node_hash(&leaf_hash(b"x"), &leaf_hash(b"y"))
        );
    }

    #[test]
    fn seven_leaves_match_reference() {
        let it = items(7);
        assert_eq!(mk_root(&it).unwrap(), naive_root(&it));
    }

    #[test]
    fn empty_is_error_and_sentinel_distinct() {
        assert_eq!(mk_root::<Vec<u8>>(&[]), Err(LogError::EmptyList));
        assert_ne!(
            mk_root_or_empty::<Vec<u8>>(&[]),
            mk_root(&[vec![]]).unwrap()
        );
    }

    #[test]
    fn exhaustive_round_trip() {
        for n in 1..=32 {
            let it = items(n);
            let root = mk_root(&it).unwrap();
            assert_eq!(root, naive_root(&it));
            let expected_len = if n == 1 {
                0
            } else {
                (n as f64).log2().ceil() as usize
            };
            for i in 0..n {
                let p = mk_proof(i, &it).unwrap();
                assert_eq!(p.siblings.len(), expected_len, "n={n}");
                assert!(mk_verify(&p, &it[i], &root));
                let j = (i + 1) % n;
                if it[j] != it[i] && n > 1 {
                    assert!(!mk_verify(&p, &it[j], &root));
                }
            }
        }
    }

    #[test]
    fn wrong_root_and_index() {
        let it = items(5);
        let root = mk_root(&it).unwrap();
        let p = mk_proof(2, &it).unwrap();
        assert!(!mk_verify(&p, &it[2], &mk_root(&items(6)).unwrap()));
        let mut bad = p.clone();
        bad.leaf_index = 3;
        assert!(!mk_verify(&bad, &it[2], &root));
        bad.leaf_index = 2 + 8;
        assert!(!mk_verify(&bad, &it[2], &root));
        assert!(mk_proof(5, &it).is_err());
    }
}
