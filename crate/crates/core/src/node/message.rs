//! Client-to-operator messages and the operator's responses.

use crate::authlog::{Commitment, IncrementalProof, MembershipProof};
use crate::crypto::{Digest, KeyPair, PublicKey, Signature, Tagged};
use crate::ids::Address;
use crate::ledger::{AccessTicket, Account, Header, MicroTx, Receipt, TxEvidence};
use crate::{impl_codec, impl_codec_enum};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    SubmitTx {
        tx: MicroTx,
    },
    RegisterClient {},
    QueryIomcAddrs {},
    /// Receipt with proofs under the operator's latest snapshot.
    QueryReceipt {
        tx_hash: Digest,
    },
    /// Consistency of `from` with the latest snapshot.
    QueryIncProof {
        from: Commitment,
    },
    /// Header `index` (zero-based) under the latest snapshot.
    QueryMemProof {
        index: u64,
    },
    QueryAccount {},
}
impl_codec_enum!(Request, "request" {
    0 => SubmitTx { tx },
    1 => RegisterClient {},
    2 => QueryIomcAddrs {},
    3 => QueryReceipt { tx_hash },
    4 => QueryIncProof { from },
    5 => QueryMemProof { index },
    6 => QueryAccount {},
});

#[derive(Debug, Clone, PartialEq, Eq)]
struct MessageBody {
    sender: PublicKey,
    phase: u8,
    ticket: Option<AccessTicket>,
    request: Request,
}
impl_codec!(MessageBody {
    sender,
    phase,
    ticket,
    request
});
impl Tagged for MessageBody {
    const TAG: &'static str = "client-message";
}

/// A signed request. `phase` is the transfer phase the request serves, or
/// zero; `ticket` authenticates clients registered at another instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientMessage {
    pub sender: PublicKey,
    pub phase: u8,
    pub ticket: Option<AccessTicket>,
    pub request: Request,
    pub sig: Signature,
}
impl_codec!(ClientMessage {
    sender,
    phase,
    ticket,
    request,
    sig
});

impl ClientMessage {
    pub fn sign(key: &KeyPair, phase: u8, ticket: Option<AccessTicket>, request: Request) -> Self {
        let body = MessageBody {
            sender: key.public(),
            phase,
            ticket,
            request,
        };
        ClientMessage {
            sig: key.sign(&body.signing_bytes()),
            sender: body.sender,
            phase: body.phase,
            ticket: body.ticket,
            request: body.request,
        }
    }

    pub fn signature_valid(&self) -> bool {
        let body = MessageBody {
            sender: self.sender,
            phase: self.phase,
            ticket: self.ticket.clone(),
            request: self.request.clone(),
        };
        self.sender.verifies(&body.signing_bytes(), &self.sig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Accepted {
        tx_hash: Digest,
    },
    Registered {
        receipt: Receipt,
        ticket: AccessTicket,
    },
    IomcAddrs {
        send: Address,
        recv: Address,
    },
    Evidence {
        evidence: Box<TxEvidence>,
    },
    /// Queued or executed but not yet under a snapshot.
    NotSnapshotted {},
    Unknown {},
    TxRejected {
        reason: String,
    },
    IncProof {
        proof: IncrementalProof,
        to: Commitment,
    },
    MemProof {
        header: Header,
        proof: MembershipProof,
        at: Commitment,
    },
    Account {
        account: Account,
    },
    Error {
        reason: String,
    },
}
impl_codec_enum!(Response, "response" {
    0 => Accepted { tx_hash },
    1 => Registered { receipt, ticket },
    2 => IomcAddrs { send, recv },
    3 => Evidence { evidence },
    4 => NotSnapshotted {},
    5 => Unknown {},
    6 => TxRejected { reason },
    7 => IncProof { proof, to },
    8 => MemProof { header, proof, at },
    9 => Account { account },
    10 => Error { reason },
});

impl Response {
    pub fn error(reason: &str) -> Self {
        Response::Error {
            reason: reason.to_string(),
        }
    }
}
