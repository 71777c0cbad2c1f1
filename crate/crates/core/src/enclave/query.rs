//! Read queries a client may escalate through the public contract.

use crate::authlog::{Commitment, IncrementalProof};
use crate::crypto::Digest;
use crate::impl_codec_enum;
use crate::ledger::TxEvidence;

/// Answers are always relative to the instance's latest snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryRequest {
    /// Consistency of `from` with the latest snapshot.
    IncProof { from: Commitment },
    /// Inclusion of a transaction and its receipt under the latest snapshot.
    TxEvidence { tx_hash: Digest },
}
impl_codec_enum!(QueryRequest, "query request" {
    0 => IncProof { from },
    1 => TxEvidence { tx_hash },
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryAnswer {
    IncProof {
        proof: IncrementalProof,
        to: Commitment,
    },
    TxEvidence {
        evidence: Box<TxEvidence>,
    },
    Unavailable {},
}
impl_codec_enum!(QueryAnswer, "query answer" {
    0 => IncProof { proof, to },
    1 => TxEvidence { evidence },
    2 => Unavailable {},
});
