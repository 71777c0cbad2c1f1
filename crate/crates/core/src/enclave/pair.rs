//! Statements the enclave signs under its public-chain key.

use serde::Serialize;

use crate::authlog::Commitment;
use crate::codec::Encode;
use crate::crypto::{hash, Digest, KeyPair, PublicKey, SealedBox, Signature, Tagged};
use crate::{impl_codec, impl_codec_unit_enum};

/// Signed claim that the ledger moved from `root_from` to `root_to` with the
/// given supply counters. `root_from` is `None` before the first snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionTransitionPair {
    pub root_from: Option<Commitment>,
    pub root_to: Commitment,
    pub t_i: u64,
    pub t_s: u64,
    pub sig: Signature,
}
impl_codec!(VersionTransitionPair {
    root_from,
    root_to,
    t_i,
    t_s,
    sig
});

#[derive(Debug, Clone, PartialEq, Eq)]
struct PairBody {
    root_from: Option<Commitment>,
    root_to: Commitment,
    t_i: u64,
    t_s: u64,
}
impl_codec!(PairBody {
    root_from,
    root_to,
    t_i,
    t_s
});
impl Tagged for PairBody {
    const TAG: &'static str = "transition-pair";
}

impl VersionTransitionPair {
    pub fn sign(
        key: &KeyPair,
        root_from: Option<Commitment>,
        root_to: Commitment,
        t_i: u64,
        t_s: u64,
    ) -> Self {
        let body = PairBody {
            root_from,
            root_to,
            t_i,
            t_s,
        };
        VersionTransitionPair {
            sig: key.sign(&body.signing_bytes()),
            root_from,
            root_to,
            t_i,
            t_s,
        }
    }

    pub fn verifies_under(&self, pk_pb: &PublicKey) -> bool {
        let body = PairBody {
            root_from: self.root_from,
            root_to: self.root_to,
            t_i: self.t_i,
            t_s: self.t_s,
        };
        pk_pb.verifies(&body.signing_bytes(), &self.sig)
    }
}

/// Outcome of a request a client escalated to the public contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CensStatus {
    /// The transaction executed with an OK receipt.
    Executed,
    /// The transaction executed and reverted.
    Reverted,
    /// The transaction failed admission (signature, nonce, unknown sender).
    Rejected,
    /// The request did not decrypt or parse.
    Malformed,
    /// The query was answered; the reply is in the encrypted data.
    Answered,
    /// The enclave could not verify any answer to the query.
    Unanswerable,
}
impl_codec_unit_enum!(CensStatus, "censorship status" {
    Executed = 0,
    Reverted = 1,
    Rejected = 2,
    Malformed = 3,
    Answered = 4,
    Unanswerable = 5,
});

/// Hash under which a sealed request or reply is referenced on chain.
pub fn sealed_hash(sealed: &SealedBox) -> Digest {
    hash(&sealed.encode())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TxResolutionBody {
    etx_hash: Digest,
    status: CensStatus,
}
impl_codec!(TxResolutionBody { etx_hash, status });
impl Tagged for TxResolutionBody {
    const TAG: &'static str = "cens-tx-resolution";
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct QueryResolutionBody {
    equery_hash: Digest,
    status: CensStatus,
    edata_hash: Digest,
}
impl_codec!(QueryResolutionBody {
    equery_hash,
    status,
    edata_hash
});
impl Tagged for QueryResolutionBody {
    const TAG: &'static str = "cens-query-resolution";
}

/// Enclave-signed status for an escalated transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxResolution {
    pub etx_hash: Digest,
    pub status: CensStatus,
    pub sig: Signature,
}
impl_codec!(TxResolution {
    etx_hash,
    status,
    sig
});

impl TxResolution {
    pub fn sign(key: &KeyPair, etx_hash: Digest, status: CensStatus) -> Self {
        let body = TxResolutionBody { etx_hash, status };
        TxResolution {
            sig: key.sign(&body.signing_bytes()),
            etx_hash,
            status,
        }
    }

    pub fn verifies(
        pk_pb: &PublicKey,
        etx_hash: Digest,
        status: CensStatus,
        sig: &Signature,
    ) -> bool {
        let body = TxResolutionBody { etx_hash, status };
        pk_pb.verifies(&body.signing_bytes(), sig)
    }
}

/// Enclave-signed answer to an escalated query. `edata` is readable only by
/// the client holding the request's session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResolution {
    pub equery_hash: Digest,
    pub status: CensStatus,
    pub edata: Vec<u8>,
    pub sig: Signature,
}
impl_codec!(QueryResolution {
    equery_hash,
    status,
    edata,
    sig
});

impl QueryResolution {
    pub fn sign(key: &KeyPair, equery_hash: Digest, status: CensStatus, edata: Vec<u8>) -> Self {
        let body = QueryResolutionBody {
            equery_hash,
            status,
            edata_hash: hash(&edata),
        };
        QueryResolution {
            sig: key.sign(&body.signing_bytes()),
            equery_hash,
            status,
            edata,
        }
    }

    pub fn verifies(
        pk_pb: &PublicKey,
        equery_hash: Digest,
        status: CensStatus,
        edata: &[u8],
        sig: &Signature,
    ) -> bool {
        let body = QueryResolutionBody {
            equery_hash,
            status,
            edata_hash: hash(edata),
        };
        pk_pb.verifies(&body.signing_bytes(), sig)
    }
}
