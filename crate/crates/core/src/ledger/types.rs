use serde::Serialize;

use crate::authlog::{
    mem_verify, mk_verify, Commitment, IncrementalProof, MembershipProof, MerkleProof,
};
use crate::codec::Encode;
use crate::crypto::{hash, Digest, KeyPair, PublicKey, Signature, Tagged};
use crate::ids::{Address, ClientId, ContractId};
use crate::time::Timestamp;
use crate::{impl_codec, impl_codec_enum, impl_codec_unit_enum};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Account {
    pub balance: u64,
    pub nonce: u64,
}
impl_codec!(Account { balance, nonce });

/// Outgoing hash-time-locked transfer held by the sending contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockedTransferOut {
    pub sender: PublicKey,
    pub receiver: ClientId,
    pub amount: u64,
    pub hashlock: Digest,
    pub timelock: Timestamp,
    pub is_completed: bool,
    pub is_reverted: bool,
}
impl_codec!(LockedTransferOut {
    sender,
    receiver,
    amount,
    hashlock,
    timelock,
    is_completed,
    is_reverted
});

/// Incoming hash-locked transfer held by the receiving contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockedTransferIn {
    pub sender: ClientId,
    pub receiver: PublicKey,
    pub amount: u64,
    pub hashlock: Digest,
    pub is_completed: bool,
}
impl_codec!(LockedTransferIn {
    sender,
    receiver,
    amount,
    hashlock,
    is_completed
});

/// Enclave-signed capability letting a client post censorship-resolution
/// requests to the issuing instance's contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTicket {
    pub client_pk: PublicKey,
    pub issuing_ipsc: ContractId,
    pub expires_at: Timestamp,
    pub sig: Signature,
}
impl_codec!(AccessTicket {
    client_pk,
    issuing_ipsc,
    expires_at,
    sig
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TicketBody {
    pub client_pk: PublicKey,
    pub issuing_ipsc: ContractId,
    pub expires_at: Timestamp,
}
impl_codec!(TicketBody {
    client_pk,
    issuing_ipsc,
    expires_at
});
impl Tagged for TicketBody {
    const TAG: &'static str = "access-ticket";
}

impl AccessTicket {
    pub fn sign(
        key: &KeyPair,
        client_pk: PublicKey,
        issuing_ipsc: ContractId,
        expires_at: Timestamp,
    ) -> Self {
        let body = TicketBody {
            client_pk,
            issuing_ipsc,
            expires_at,
        };
        AccessTicket {
            client_pk,
            issuing_ipsc,
            expires_at,
            sig: key.sign(&body.signing_bytes()),
        }
    }

    pub fn verifies_under(&self, pk_tee: &PublicKey) -> bool {
        let body = TicketBody {
            client_pk: self.client_pk,
            issuing_ipsc: self.issuing_ipsc,
            expires_at: self.expires_at,
        };
        pk_tee.verifies(&body.signing_bytes(), &self.sig)
    }
}

/// Calls into the two interoperability contracts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IomcCall {
    SendInit {
        receiver: ClientId,
        hashlock: Digest,
    },
    SendCommit {
        transfer_id: u64,
        secret: Vec<u8>,
        ext_transfer_id: u64,
        evidence: Box<ForeignEvidence>,
    },
    SendRevert {
        transfer_id: u64,
    },
    ReceiveInit {
        sender: ClientId,
        hashlock: Digest,
        amount: u64,
    },
    /// Also known as the receive claim.
    ReceiveCommit {
        transfer_id: u64,
        secret: Vec<u8>,
        evidence: Option<Box<ForeignEvidence>>,
    },
    /// Test faucet: moves the attached value into the receiving contract.
    Fund {},
}
impl_codec_enum!(IomcCall, "iomc call" {
    0 => SendInit { receiver, hashlock },
    1 => SendCommit { transfer_id, secret, ext_transfer_id, evidence },
    2 => SendRevert { transfer_id },
    3 => ReceiveInit { sender, hashlock, amount },
    4 => ReceiveCommit { transfer_id, secret, evidence },
    5 => Fund {},
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IomcContract {
    Send,
    Receive,
}

impl IomcCall {
    pub fn contract(&self) -> IomcContract {
        match self {
            IomcCall::SendInit { .. }
            | IomcCall::SendCommit { .. }
            | IomcCall::SendRevert { .. } => IomcContract::Send,
            _ => IomcContract::Receive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    Transfer {
        to: Address,
        amount: u64,
    },
    Iomc {
        call: IomcCall,
    },
    /// Issuance by the operator of an issuing instance.
    Issue {
        beneficiary: Address,
        amount: u64,
    },
}
impl_codec_enum!(Call, "call" {
    0 => Transfer { to, amount },
    1 => Iomc { call },
    2 => Issue { beneficiary, amount },
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxBody {
    pub sender: PublicKey,
    pub nonce: u64,
    pub call: Call,
    pub value: u64,
}
impl_codec!(TxBody {
    sender,
    nonce,
    call,
    value
});
impl Tagged for TxBody {
    const TAG: &'static str = "micro-tx";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroTx {
    pub body: TxBody,
    pub sig: Signature,
}
impl_codec!(MicroTx { body, sig });
impl Tagged for MicroTx {
    const TAG: &'static str = "micro-tx/signed";
}

impl MicroTx {
    pub fn sign(key: &KeyPair, nonce: u64, call: Call, value: u64) -> Self {
        let body = TxBody {
            sender: key.public(),
            nonce,
            call,
            value,
        };
        MicroTx {
            sig: key.sign(&body.signing_bytes()),
            body,
        }
    }

    pub fn hash(&self) -> Digest {
        self.digest()
    }

    pub fn signature_valid(&self) -> bool {
        self.body
            .sender
            .verifies(&self.body.signing_bytes(), &self.sig)
    }

    pub fn iomc(&self) -> Option<&IomcCall> {
        match &self.body.call {
            Call::Iomc { call } => Some(call),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Header {
    pub id: u64,
    pub txs_root: Digest,
    pub rcp_root: Digest,
    pub st_root: Digest,
}
impl_codec!(Header {
    id,
    txs_root,
    rcp_root,
    st_root
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RcptStatus {
    Ok,
    Reverted,
}
impl_codec_unit_enum!(RcptStatus, "receipt status" { Ok = 0, Reverted = 1 });

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    SendInitialized {
        transfer_id: u64,
        sender: PublicKey,
        receiver: ClientId,
        amount: u64,
        hashlock: Digest,
        timelock: Timestamp,
    },
    SendCommitted {
        transfer_id: u64,
        ext_transfer_id: u64,
        receiver: ClientId,
        amount: u64,
    },
    SendReverted {
        transfer_id: u64,
    },
    ReceiveInitialized {
        transfer_id: u64,
        sender: ClientId,
        receiver: PublicKey,
        amount: u64,
        hashlock: Digest,
    },
    ReceiveCommitted {
        transfer_id: u64,
    },
    Transferred {
        from: Address,
        to: Address,
        amount: u64,
    },
    Issued {
        beneficiary: Address,
        amount: u64,
    },
    Funded {
        amount: u64,
    },
    TicketIssued {
        ticket: AccessTicket,
    },
    Reverted {
        reason: String,
    },
}
impl_codec_enum!(Event, "event" {
    0 => SendInitialized { transfer_id, sender, receiver, amount, hashlock, timelock },
    1 => SendCommitted { transfer_id, ext_transfer_id, receiver, amount },
    2 => SendReverted { transfer_id },
    3 => ReceiveInitialized { transfer_id, sender, receiver, amount, hashlock },
    4 => ReceiveCommitted { transfer_id },
    5 => Transferred { from, to, amount },
    6 => Issued { beneficiary, amount },
    7 => Funded { amount },
    8 => TicketIssued { ticket },
    9 => Reverted { reason },
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_hash: Digest,
    pub status: RcptStatus,
    pub events: Vec<Event>,
    /// Gas is not metered; always zero.
    pub gas: u64,
}
impl_codec!(Receipt {
    tx_hash,
    status,
    events,
    gas
});

impl Receipt {
    pub fn ok(&self) -> bool {
        self.status == RcptStatus::Ok
    }

    pub fn revert_reason(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            Event::Reverted { reason } => Some(reason.as_str()),
            _ => None,
        })
    }

    pub fn ticket(&self) -> Option<&AccessTicket> {
        self.events.iter().find_map(|e| match e {
            Event::TicketIssued { ticket } => Some(ticket),
            _ => None,
        })
    }
}

/// A transaction, its receipt, and proofs placing the receipt in a ledger
/// version: receipt under `header.rcp_root`, header under `lroot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxEvidence {
    pub mu_tx: MicroTx,
    pub receipt: Receipt,
    pub header: Header,
    pub mk_proof: MerkleProof,
    pub mem_proof: MembershipProof,
    pub lroot: Commitment,
}
impl_codec!(TxEvidence {
    mu_tx,
    receipt,
    header,
    mk_proof,
    mem_proof,
    lroot
});

impl TxEvidence {
    /// Checks every proof in the package and that the receipt is successful.
    pub fn verify(&self) -> bool {
        self.verify_inclusion() && self.receipt.ok()
    }

    /// Checks every proof in the package, whatever the receipt status.
    pub fn verify_inclusion(&self) -> bool {
        self.header.id >= 1
            && mem_verify(
                &self.mem_proof,
                self.header.id - 1,
                &self.header.encode(),
                &self.lroot,
            )
            && mk_verify(
                &self.mk_proof,
                &self.receipt.encode(),
                &self.header.rcp_root,
            )
            && self.receipt.tx_hash == self.mu_tx.hash()
            && self.mu_tx.signature_valid()
    }
}

/// Evidence about a transaction on another instance, anchored at a root that
/// instance has snapshotted to its public contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignEvidence {
    pub foreign_ipsc: ContractId,
    pub inclusion: TxEvidence,
    pub inc_proof: IncrementalProof,
    pub lroot_pb: Commitment,
}
impl_codec!(ForeignEvidence {
    foreign_ipsc,
    inclusion,
    inc_proof,
    lroot_pb
});

pub fn hashlock_of(secret: &[u8]) -> Digest {
    hash(secret)
}
