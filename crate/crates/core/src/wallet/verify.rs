//! Checks a client runs on the evidence packages its counterparty sends.

use crate::chain::ChainState;
use crate::crypto::Digest;
use crate::ids::{ClientId, ContractId};
use crate::ledger::{hashlock_of, AccessTicket, Event, IomcCall, TxEvidence};
use crate::node::ticket_valid;
use crate::time::Timestamp;

/// What the receiver learns from a verified phase-1 package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendInfo {
    pub transfer_id: u64,
    pub sender: ClientId,
    pub amount: u64,
    pub hashlock: Digest,
    pub timelock: Timestamp,
    /// Lets the receiver query and escalate at the sending instance.
    pub ticket: AccessTicket,
}

pub fn check_phase1(
    e: &TxEvidence,
    me: &ClientId,
    chain: &ChainState,
    imsc: &ContractId,
    now: Timestamp,
) -> Result<SendInfo, String> {
    if !e.verify() {
        return Err("phase-1 evidence does not verify".into());
    }
    let Some(IomcCall::SendInit { receiver, hashlock }) = e.mu_tx.iomc() else {
        return Err("phase-1 transaction is not a send initialisation".into());
    };
    if receiver != me {
        return Err("transfer names another receiver".into());
    }
    let ticket = e
        .receipt
        .ticket()
        .ok_or("phase-1 receipt carries no ticket")?;
    let origin = ticket.issuing_ipsc;
    if !chain.is_approved(imsc, &origin) {
        return Err("sending instance is not admitted".into());
    }
    let ipsc = chain
        .ipsc(&origin)
        .ok_or("sending instance has no contract")?;
    if !ticket_valid(ticket, &me.pk, &origin, now, ipsc.latest_pk_tee()) {
        return Err("access ticket does not verify".into());
    }
    let sender = ClientId {
        pk: e.mu_tx.body.sender,
        ipsc: origin,
    };
    e.receipt
        .events
        .iter()
        .find_map(|ev| match ev {
            Event::SendInitialized {
                transfer_id,
                sender: s,
                receiver: r,
                amount,
                hashlock: h,
                timelock,
            } if *s == sender.pk && r == me && h == hashlock => Some(SendInfo {
                transfer_id: *transfer_id,
                sender,
                amount: *amount,
                hashlock: *h,
                timelock: *timelock,
                ticket: ticket.clone(),
            }),
            _ => None,
        })
        .ok_or_else(|| "phase-1 receipt lacks the initialisation event".into())
}

/// Returns the receive-side record id and the ticket for the receiving
/// instance.
pub fn check_phase2(
    e: &TxEvidence,
    me: &ClientId,
    peer: &ClientId,
    hashlock: &Digest,
    amount: u64,
) -> Result<(u64, AccessTicket), String> {
    if !e.verify() {
        return Err("phase-2 evidence does not verify".into());
    }
    if e.mu_tx.body.sender != peer.pk {
        return Err("phase-2 transaction is not from the receiver".into());
    }
    let call_ok = matches!(e.mu_tx.iomc(),
        Some(IomcCall::ReceiveInit { sender, hashlock: h, amount: a })
            if sender == me && h == hashlock && *a == amount);
    if !call_ok {
        return Err("phase-2 transaction does not match the transfer".into());
    }
    let id = e
        .receipt
        .events
        .iter()
        .find_map(|ev| match ev {
            Event::ReceiveInitialized {
                transfer_id,
                sender,
                amount: a,
                hashlock: h,
                ..
            } if sender == me && *a == amount && h == hashlock => Some(*transfer_id),
            _ => None,
        })
        .ok_or("phase-2 receipt lacks the initialisation event")?;
    let ticket = e
        .receipt
        .ticket()
        .ok_or("phase-2 receipt carries no ticket")?;
    if ticket.client_pk != me.pk || ticket.issuing_ipsc != peer.ipsc {
        return Err("phase-2 ticket is for someone else".into());
    }
    Ok((id, ticket.clone()))
}

/// Returns the secret the sender revealed to its enclave.
pub fn check_phase3(
    e: &TxEvidence,
    me: &ClientId,
    info: &SendInfo,
    local_id: u64,
) -> Result<Vec<u8>, String> {
    if !e.verify() {
        return Err("phase-3 evidence does not verify".into());
    }
    if e.mu_tx.body.sender != info.sender.pk {
        return Err("phase-3 transaction is not from the sender".into());
    }
    let Some(IomcCall::SendCommit {
        transfer_id,
        secret,
        ext_transfer_id,
        ..
    }) = e.mu_tx.iomc()
    else {
        return Err("phase-3 transaction is not a commit".into());
    };
    if *transfer_id != info.transfer_id || *ext_transfer_id != local_id {
        return Err("phase-3 commit is for another transfer".into());
    }
    if hashlock_of(secret) != info.hashlock {
        return Err("phase-3 secret does not open the hashlock".into());
    }
    let burned = e.receipt.events.iter().any(|ev| {
        matches!(ev, Event::SendCommitted { ext_transfer_id: x, receiver, amount, .. }
            if *x == local_id && receiver == me && *amount == info.amount)
    });
    if !burned {
        return Err("phase-3 receipt lacks the burn event".into());
    }
    Ok(secret.clone())
}
